//! Smooth cut-off functions for the control region and their nodal
//! interpolants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::barycentric_gradients;
use crate::mesh::{Domain, Mesh};
use crate::quadrature;

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`, `f(t) / (f(t) + f(1-t))`
/// with `f(t) = exp(-1/t)` in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        1.0 / (1.0 + (1.0 / t - 1.0 / (1.0 - t)).exp())
    }
}

pub fn smooth_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let s = smooth_step(t);
    if s == 0.0 || s == 1.0 {
        return 0.0;
    }
    s * (1.0 - s) * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)))
}

/// Region for a cut-off supported away from the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Ball { center: [f64; 2], radius: f64 },
    Box { min: [f64; 2], max: [f64; 2] },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffKind {
    /// `ω = {x : dist(x, ∂Ω) < width}`
    BoundaryCollar { width: f64 },
    InteriorBump { region: Region },
    /// `χ ≡ 1`, control on the whole domain.
    WholeDomain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    #[serde(flatten)]
    pub kind: CutoffKind,
    #[serde(default)]
    pub delta: f64,
}

impl CutoffSpec {
    pub fn collar(width: f64, delta: f64) -> Self {
        Self {
            kind: CutoffKind::BoundaryCollar { width },
            delta,
        }
    }

    pub fn whole_domain() -> Self {
        Self {
            kind: CutoffKind::WholeDomain,
            delta: 0.0,
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let delta = self.delta;
        match self.kind {
            CutoffKind::WholeDomain => Ok(()),
            CutoffKind::BoundaryCollar { width } => {
                if !(delta > 0.0 && delta < width && width < domain.inradius()) {
                    return Err(Error::Config(format!(
                        "collar needs 0 < delta < width < {}, got delta = {delta}, width = {width}",
                        domain.inradius()
                    )));
                }
                Ok(())
            }
            CutoffKind::InteriorBump { region } => {
                if !(delta > 0.0) {
                    return Err(Error::Config(format!("delta must be positive, got {delta}")));
                }
                let inside = match region {
                    Region::Ball { center, radius } => {
                        if radius <= delta {
                            return Err(Error::Config("ball radius must exceed delta".into()));
                        }
                        domain.contains(center) && domain.boundary_distance(center) > radius
                    }
                    Region::Box { min, max } => {
                        let dims = domain.dim();
                        if (0..dims).any(|i| max[i] - min[i] <= 2.0 * delta) {
                            return Err(Error::Config("box must be wider than 2 delta".into()));
                        }
                        let corners = if dims == 1 {
                            vec![[min[0], 0.0], [max[0], 0.0]]
                        } else {
                            vec![min, max, [min[0], max[1]], [max[0], min[1]]]
                        };
                        corners.iter().all(|&c| domain.contains(c) && domain.boundary_distance(c) > 0.0)
                    }
                };
                if !inside {
                    return Err(Error::Config("interior region must lie strictly inside the domain".into()));
                }
                Ok(())
            }
        }
    }
}

/// Analytic cut-off `χ_ω` with its gradient.
#[derive(Clone, Copy, Debug)]
pub struct CutoffFn {
    spec: CutoffSpec,
    domain: Domain,
}

pub fn build_cutoff(spec: CutoffSpec, domain: Domain) -> Result<CutoffFn> {
    spec.validate(&domain)?;
    Ok(CutoffFn { spec, domain })
}

impl CutoffFn {
    pub fn spec(&self) -> &CutoffSpec {
        &self.spec
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.eval_with_gradient(x).0
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        self.eval_with_gradient(x).1
    }

    pub fn eval_with_gradient(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let delta = self.spec.delta;
        match self.spec.kind {
            CutoffKind::WholeDomain => (1.0, [0.0, 0.0]),
            CutoffKind::BoundaryCollar { width } => match self.domain {
                Domain::UnitInterval => {
                    let (c, dc) = collar_1d(x[0], width, delta);
                    (c, [dc, 0.0])
                }
                // product form keeps the collar smooth across the diagonals
                Domain::UnitSquare => {
                    let (cx, dcx) = collar_1d(x[0], width, delta);
                    let (cy, dcy) = collar_1d(x[1], width, delta);
                    (1.0 - (1.0 - cx) * (1.0 - cy), [dcx * (1.0 - cy), dcy * (1.0 - cx)])
                }
                Domain::Disk { radius, center } => {
                    let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                    let rho = (dx * dx + dy * dy).sqrt();
                    let t = (width - (radius - rho)) / delta;
                    let s = smooth_step(t);
                    let ds = smooth_step_derivative(t) / delta;
                    if rho == 0.0 || ds == 0.0 {
                        (s, [0.0, 0.0])
                    } else {
                        (s, [ds * dx / rho, ds * dy / rho])
                    }
                }
            },
            CutoffKind::InteriorBump { region } => match region {
                Region::Ball { center, radius } => {
                    let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                    let rho = (dx * dx + dy * dy).sqrt();
                    let t = (radius - rho) / delta;
                    let s = smooth_step(t);
                    let ds = -smooth_step_derivative(t) / delta;
                    if rho == 0.0 || ds == 0.0 {
                        (s, [0.0, 0.0])
                    } else {
                        (s, [ds * dx / rho, ds * dy / rho])
                    }
                }
                Region::Box { min, max } => {
                    let dims = self.domain.dim();
                    let mut val = [1.0; 2];
                    let mut der = [0.0; 2];
                    for i in 0..dims {
                        let (lo, hi) = (x[i] - min[i], max[i] - x[i]);
                        let (t, sign) = if lo < hi { (lo / delta, 1.0) } else { (hi / delta, -1.0) };
                        val[i] = smooth_step(t);
                        der[i] = sign * smooth_step_derivative(t) / delta;
                    }
                    (val[0] * val[1], [der[0] * val[1], der[1] * val[0]])
                }
            },
        }
    }
}

/// Collar in one variable on `[0, 1]`, value and derivative.
fn collar_1d(t: f64, width: f64, delta: f64) -> (f64, f64) {
    let (d, sign) = if t < 1.0 - t { (t, 1.0) } else { (1.0 - t, -1.0) };
    let s = (width - d) / delta;
    (smooth_step(s), -sign * smooth_step_derivative(s) / delta)
}

/// Nodal interpolant `χ_h` on every mesh vertex.
pub fn discretize_cutoff(chi: &CutoffFn, mesh: &Mesh) -> Vec<f64> {
    mesh.points().iter().map(|&p| chi.eval(p)).collect()
}

/// Sampled `‖χ - χ_h‖_{L∞}` and `‖∇(χ - χ_h)‖_{L∞}` over the quadrature
/// points of every cell.
pub fn cutoff_discrepancy(chi: &CutoffFn, mesh: &Mesh, chi_h: &[f64]) -> (f64, f64) {
    let rule = quadrature::rule(mesh.dim());
    let mut linf: f64 = 0.0;
    let mut w1inf: f64 = 0.0;
    for c in 0..mesh.n_cells() {
        let v = mesh.cell(c);
        let g = barycentric_gradients(mesh, c);
        let mut gh = [0.0, 0.0];
        for (k, &vk) in v.iter().enumerate() {
            gh[0] += chi_h[vk] * g[k][0];
            gh[1] += chi_h[vk] * g[k][1];
        }
        for q in &rule {
            let mut x = [0.0, 0.0];
            let mut val = 0.0;
            for (k, &vk) in v.iter().enumerate() {
                let p = mesh.point(vk);
                x[0] += q.bary[k] * p[0];
                x[1] += q.bary[k] * p[1];
                val += q.bary[k] * chi_h[vk];
            }
            let (e, de) = chi.eval_with_gradient(x);
            linf = linf.max((e - val).abs());
            w1inf = w1inf.max(((de[0] - gh[0]).powi(2) + (de[1] - gh[1]).powi(2)).sqrt());
        }
    }
    (linf, w1inf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{disk_mesh, square_mesh};

    fn square_collar() -> CutoffFn {
        build_cutoff(CutoffSpec::collar(0.3, 0.1), Domain::UnitSquare).unwrap()
    }

    #[test]
    fn smooth_step_symmetry() {
        assert_eq!(smooth_step(0.5), 0.5);
        for k in 1..100 {
            let t = k as f64 / 100.0;
            assert!((smooth_step(t) + smooth_step(1.0 - t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn smooth_step_derivative_matches_differences() {
        for k in 1..50 {
            let t = k as f64 / 50.0;
            let fd = (smooth_step(t + 1e-6) - smooth_step(t - 1e-6)) / 2e-6;
            assert!((fd - smooth_step_derivative(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn collar_values() {
        let chi = square_collar();
        assert_eq!(chi.eval([0.0, 0.5]), 1.0);
        assert_eq!(chi.eval([0.5, 0.5]), 0.0);
        assert_eq!(chi.eval([0.35, 0.6]), 0.0);
        assert!((chi.eval([0.25, 0.5]) - 0.5).abs() < 1e-15);
        assert_eq!(chi.eval([0.15, 0.7]), 1.0);
        let disk = build_cutoff(CutoffSpec::collar(0.3, 0.1), Domain::Disk { radius: 1.0, center: [0.0, 0.0] }).unwrap();
        assert!((disk.eval([0.75, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(disk.eval([0.0, 0.0]), 0.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_cutoff(CutoffSpec::collar(0.3, 0.4), Domain::UnitSquare).is_err());
        assert!(build_cutoff(CutoffSpec::collar(0.6, 0.1), Domain::UnitSquare).is_err());
        let bump = CutoffSpec {
            kind: CutoffKind::InteriorBump {
                region: Region::Ball { center: [0.5, 0.5], radius: 0.05 },
            },
            delta: 0.1,
        };
        assert!(build_cutoff(bump, Domain::UnitSquare).is_err());
    }

    #[test]
    fn properties_on_dense_grid() {
        let specs = [
            (CutoffSpec::collar(0.3, 0.1), Domain::UnitSquare),
            (CutoffSpec::collar(0.2, 0.05), Domain::UnitInterval),
            (
                CutoffSpec {
                    kind: CutoffKind::InteriorBump { region: Region::Box { min: [0.2, 0.3], max: [0.7, 0.8] } },
                    delta: 0.1,
                },
                Domain::UnitSquare,
            ),
            (
                CutoffSpec {
                    kind: CutoffKind::InteriorBump { region: Region::Ball { center: [0.5, 0.4], radius: 0.3 } },
                    delta: 0.1,
                },
                Domain::UnitSquare,
            ),
        ];
        for (spec, domain) in specs {
            let chi = build_cutoff(spec, domain).unwrap();
            let n = 200;
            for i in 0..=n {
                for j in 0..=n {
                    let x = [i as f64 / n as f64, if domain.dim() == 1 { 0.0 } else { j as f64 / n as f64 }];
                    let (v, g) = chi.eval_with_gradient(x);
                    assert!((0.0..=1.0).contains(&v));
                    let e = 1e-6;
                    let fdx = (chi.eval([x[0] + e, x[1]]) - chi.eval([x[0] - e, x[1]])) / (2.0 * e);
                    assert!((fdx - g[0]).abs() < 1e-4 * (1.0 + g[0].abs()), "{x:?}");
                    if domain.dim() == 2 {
                        let fdy = (chi.eval([x[0], x[1] + e]) - chi.eval([x[0], x[1] - e])) / (2.0 * e);
                        assert!((fdy - g[1]).abs() < 1e-4 * (1.0 + g[1].abs()), "{x:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn collar_normal_derivatives_vanish_on_boundary() {
        let chi = square_collar();
        let e = 1e-3;
        for k in 0..100 {
            let s = (k as f64 + 0.5) / 100.0;
            for (p, nrm) in [([s, 0.0], [0.0, -1.0]), ([1.0, s], [1.0, 0.0]), ([s, 1.0], [0.0, 1.0]), ([0.0, s], [-1.0, 0.0])] {
                let inner = |t: f64| chi.eval([p[0] - t * nrm[0], p[1] - t * nrm[1]]);
                let d1 = (inner(0.0) - inner(e)) / e;
                let d2 = (inner(0.0) - 2.0 * inner(e) + inner(2.0 * e)) / (e * e);
                assert!(d1.abs() <= 1e-8 && d2.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn interpolant_is_nonnegative_and_converges() {
        let chi = square_collar();
        let mut mesh = square_mesh(64);
        let mut errs = Vec::new();
        for _ in 0..3 {
            let chi_h = discretize_cutoff(&chi, &mesh);
            assert!(chi_h.iter().all(|&v| v >= 0.0));
            errs.push(cutoff_discrepancy(&chi, &mesh, &chi_h));
            mesh = mesh.refine();
        }
        for w in errs.windows(2) {
            assert!((w[0].0 / w[1].0).log2() >= 1.8, "{errs:?}");
            assert!((w[0].1 / w[1].1).log2() >= 0.8, "{errs:?}");
        }
        let one = build_cutoff(CutoffSpec::whole_domain(), Domain::UnitSquare).unwrap();
        assert!(discretize_cutoff(&one, &disk_mesh(1.0, [0.0, 0.0], 2)).iter().all(|&v| v == 1.0));
    }
}
