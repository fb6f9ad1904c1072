//! Quadrature rules in barycentric coordinates.

/// A point in barycentric coordinates (last entry unused on intervals) and its
/// weight relative to the cell measure. Weights sum to one.
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub bary: [f64; 3],
    pub weight: f64,
}

/// Three-point Gauss-Legendre rule on an interval, exact to degree 5.
pub fn interval_rule() -> Vec<QuadPoint> {
    let d = 0.5 * (0.6f64).sqrt();
    [(0.5 - d, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + d, 5.0 / 18.0)]
        .into_iter()
        .map(|(s, w)| QuadPoint {
            bary: [1.0 - s, s, 0.0],
            weight: w,
        })
        .collect()
}

/// Seven-point Dunavant rule on a triangle, exact to degree 5.
pub fn triangle_rule() -> Vec<QuadPoint> {
    let mut pts = vec![QuadPoint {
        bary: [1.0 / 3.0; 3],
        weight: 0.225,
    }];
    for (a, b, w) in [
        (0.059_715_871_789_769_8, 0.470_142_064_105_115_1, 0.132_394_152_788_506_2),
        (0.797_426_985_353_087_3, 0.101_286_507_323_456_3, 0.125_939_180_544_827_1),
    ] {
        for bary in [[a, b, b], [b, a, b], [b, b, a]] {
            pts.push(QuadPoint { bary, weight: w });
        }
    }
    pts
}

pub fn rule(dim: usize) -> Vec<QuadPoint> {
    if dim == 1 {
        interval_rule()
    } else {
        triangle_rule()
    }
}

/// `∫_K λ_0^a0 λ_1^a1 (λ_2^a2) dx / |K|` for a simplex of dimension `dim`.
pub fn barycentric_moment(dim: usize, exponents: &[u32]) -> f64 {
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let total: u32 = exponents.iter().sum();
    let num: f64 = exponents.iter().map(|&a| fact(a)).product();
    fact(dim as u32) * num / fact(total + dim as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_monomials_exactly() {
        for (dim, rule) in [(1, interval_rule()), (2, triangle_rule())] {
            let wsum: f64 = rule.iter().map(|q| q.weight).sum();
            assert!((wsum - 1.0).abs() < 1e-15);
            for a in 0..=3u32 {
                for b in 0..=(5 - a) {
                    let c = if dim == 2 { (5 - a - b).min(2) } else { 0 };
                    if a + b + c > 5 {
                        continue;
                    }
                    let q: f64 = rule
                        .iter()
                        .map(|p| p.weight * p.bary[0].powi(a as i32) * p.bary[1].powi(b as i32) * p.bary[2].powi(c as i32))
                        .sum();
                    let exps: Vec<u32> = if dim == 2 { vec![a, b, c] } else { vec![a, b] };
                    let exact = barycentric_moment(dim, &exps);
                    assert!((q - exact).abs() < 1e-14, "dim {dim} exps {exps:?}: {q} vs {exact}");
                }
            }
        }
    }
}
