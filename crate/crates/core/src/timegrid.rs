//! Uniform time partition and the discrete time-difference operators.
//!
//! All operators act on [`SpaceTimeField`]s, which carry their own index
//! range so that reading a level outside of it is an error instead of an
//! implicit zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition `t_k = k * tau`, `k = 0..=N`, of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
    tau: f64,
}

impl TimeGrid {
    pub const MIN_STEPS: usize = 4;

    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::Config(format!("final time must be positive, got {t_final}")));
        }
        if steps < Self::MIN_STEPS {
            return Err(Error::Config(format!(
                "need at least {} time steps, got {steps}",
                Self::MIN_STEPS
            )));
        }
        Ok(Self {
            t_final,
            steps,
            tau: t_final / steps as f64,
        })
    }

    /// Smallest grid with `tau <= rho * h`.
    pub fn with_ratio(t_final: f64, h: f64, rho: f64) -> Result<Self> {
        if !(h > 0.0 && rho > 0.0) {
            return Err(Error::Config("mesh size and tau/h ratio must be positive".into()));
        }
        let steps = (t_final / (rho * h) - 1e-9).ceil().max(Self::MIN_STEPS as f64) as usize;
        Self::new(t_final, steps)
    }

    /// The grid with twice as many steps.
    pub fn doubled(&self) -> Self {
        Self::new(self.t_final, 2 * self.steps).expect("doubling keeps a valid grid")
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }
}

/// A sequence of nodal coefficient vectors on the levels `first..=last`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    n_dofs: usize,
    first: usize,
    last: usize,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(n_dofs: usize, first: usize, last: usize) -> Self {
        assert!(first <= last, "empty time range {first}..={last}");
        Self {
            n_dofs,
            first,
            last,
            data: vec![0.0; n_dofs * (last - first + 1)],
        }
    }

    pub fn from_levels(n_dofs: usize, first: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Shape("a space-time field needs at least one level".into()));
        }
        let last = first + levels.len() - 1;
        let mut data = Vec::with_capacity(n_dofs * levels.len());
        for (k, level) in levels.into_iter().enumerate() {
            if level.len() != n_dofs {
                return Err(Error::Shape(format!(
                    "level {} has {} coefficients, expected {n_dofs}",
                    first + k,
                    level.len()
                )));
            }
            data.extend(level);
        }
        Ok(Self { n_dofs, first, last, data })
    }

    /// Wraps a flat time-major buffer.
    pub fn from_flat(n_dofs: usize, first: usize, last: usize, data: Vec<f64>) -> Result<Self> {
        if first > last || data.len() != n_dofs * (last - first + 1) {
            return Err(Error::Shape(format!(
                "buffer of length {} does not fit {n_dofs} dofs on levels {first}..={last}",
                data.len()
            )));
        }
        Ok(Self { n_dofs, first, last, data })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn last(&self) -> usize {
        self.last
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.first..=self.last).contains(&n)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.contains(n) {
            Ok(())
        } else {
            Err(Error::Range {
                index: n,
                first: self.first,
                last: self.last,
            })
        }
    }

    pub fn level(&self, n: usize) -> Result<&[f64]> {
        self.check(n)?;
        let k = n - self.first;
        Ok(&self.data[k * self.n_dofs..(k + 1) * self.n_dofs])
    }

    pub fn level_mut(&mut self, n: usize) -> Result<&mut [f64]> {
        self.check(n)?;
        let k = n - self.first;
        Ok(&mut self.data[k * self.n_dofs..(k + 1) * self.n_dofs])
    }

    /// Level `n`, or zero when `n` is outside the stored range.
    ///
    /// Only for the conventions `z^0 = z^1 = 0` and `Z^{N-1} = Z^N = 0`.
    pub fn level_or_zero(&self, n: usize) -> std::borrow::Cow<'_, [f64]> {
        match self.level(n) {
            Ok(v) => std::borrow::Cow::Borrowed(v),
            Err(_) => std::borrow::Cow::Owned(vec![0.0; self.n_dofs]),
        }
    }

    /// `g^m = f^{N-m}` on the mirrored range.
    pub fn time_reversed(&self, steps: usize) -> Self {
        assert!(self.last <= steps);
        let n = self.n_dofs;
        let mut data = Vec::with_capacity(self.data.len());
        for m in (steps - self.last)..=(steps - self.first) {
            let src = steps - m - self.first;
            data.extend_from_slice(&self.data[src * n..(src + 1) * n]);
        }
        Self {
            n_dofs: n,
            first: steps - self.last,
            last: steps - self.first,
            data,
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

fn combine(f: &SpaceTimeField, terms: &[(usize, f64)]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.n_dofs()];
    for &(n, c) in terms {
        for (o, v) in out.iter_mut().zip(f.level(n)?) {
            *o += c * v;
        }
    }
    Ok(out)
}

fn shifted(n: usize, back: usize) -> Result<usize> {
    n.checked_sub(back).ok_or(Error::Range {
        index: n,
        first: back,
        last: usize::MAX,
    })
}

/// `(f^n - f^{n-1}) / tau`
pub fn backward_diff(grid: &TimeGrid, f: &SpaceTimeField, n: usize) -> Result<Vec<f64>> {
    let r = 1.0 / grid.tau();
    combine(f, &[(n, r), (shifted(n, 1)?, -r)])
}

/// `(f^n - f^{n+1}) / tau`
pub fn forward_diff(grid: &TimeGrid, f: &SpaceTimeField, n: usize) -> Result<Vec<f64>> {
    let r = 1.0 / grid.tau();
    combine(f, &[(n, r), (n + 1, -r)])
}

/// `(f^n - 2 f^{n-1} + f^{n-2}) / tau^2`
pub fn backward_diff2(grid: &TimeGrid, f: &SpaceTimeField, n: usize) -> Result<Vec<f64>> {
    let r = 1.0 / (grid.tau() * grid.tau());
    combine(f, &[(n, r), (shifted(n, 1)?, -2.0 * r), (shifted(n, 2)?, r)])
}

/// `(f^n - 2 f^{n+1} + f^{n+2}) / tau^2`
pub fn forward_diff2(grid: &TimeGrid, f: &SpaceTimeField, n: usize) -> Result<Vec<f64>> {
    let r = 1.0 / (grid.tau() * grid.tau());
    combine(f, &[(n, r), (n + 1, -2.0 * r), (n + 2, r)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_field(first: usize, vals: &[f64]) -> SpaceTimeField {
        SpaceTimeField::from_levels(1, first, vals.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        assert!(((g.tau() * 7.0) - 3.0).abs() <= 1e-14 * 3.0);
        assert!(TimeGrid::new(1.0, 3).is_err());
        assert!(TimeGrid::new(-1.0, 8).is_err());
        let g = TimeGrid::with_ratio(3.0, 0.125, 1.0).unwrap();
        assert_eq!(g.steps(), 24);
        assert_eq!(g.doubled().steps(), 48);
    }

    #[test]
    fn backward_diff_examples() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        let c = scalar_field(0, &[3.0; 5]);
        assert_eq!(backward_diff(&g, &c, 2).unwrap(), vec![0.0]);
        let lin: Vec<f64> = (0..5).map(|n| n as f64 * g.tau() * 1.5).collect();
        let lin = scalar_field(0, &lin);
        assert!((backward_diff(&g, &lin, 3).unwrap()[0] - 1.5).abs() < 1e-14);
        let quad: Vec<f64> = (0..5).map(|n| (n as f64 * g.tau()).powi(2)).collect();
        let quad = scalar_field(0, &quad);
        assert!((backward_diff(&g, &quad, 3).unwrap()[0] - 2.5).abs() < 1e-14);
        assert!((backward_diff2(&g, &quad, 3).unwrap()[0] - 2.0).abs() < 1e-13);
        assert!((forward_diff2(&g, &quad, 1).unwrap()[0] - 2.0).abs() < 1e-13);
        assert!(backward_diff2(&g, &lin, 4).unwrap()[0].abs() < 1e-13);
        assert!(forward_diff2(&g, &c, 0).unwrap()[0].abs() < 1e-13);
    }

    #[test]
    fn out_of_range_is_an_error() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let z = SpaceTimeField::zeros(2, 2, 4);
        assert!(matches!(backward_diff(&g, &z, 2), Err(Error::Range { .. })));
        assert!(matches!(forward_diff(&g, &z, 4), Err(Error::Range { .. })));
        assert!(matches!(backward_diff(&g, &z, 0), Err(Error::Range { .. })));
        assert!(backward_diff(&g, &z, 3).is_ok());
    }

    proptest! {
        #[test]
        fn forward_is_reversed_backward(
            steps in 4usize..=16,
            seed in proptest::collection::vec(-10.0f64..10.0, 17 * 2),
        ) {
            let g = TimeGrid::new(1.3, steps).unwrap();
            let levels: Vec<Vec<f64>> = (0..=steps).map(|n| seed[2 * n..2 * n + 2].to_vec()).collect();
            let f = SpaceTimeField::from_levels(2, 0, levels).unwrap();
            let r = f.time_reversed(steps);
            for n in 0..steps {
                prop_assert_eq!(forward_diff(&g, &f, n).unwrap(), backward_diff(&g, &r, steps - n).unwrap());
            }
            for n in 0..steps - 1 {
                prop_assert_eq!(forward_diff2(&g, &f, n).unwrap(), backward_diff2(&g, &r, steps - n).unwrap());
            }
        }

        #[test]
        fn second_difference_composes(
            steps in 4usize..=16,
            seed in proptest::collection::vec(-10.0f64..10.0, 17),
        ) {
            let g = TimeGrid::new(0.7, steps).unwrap();
            let f = scalar_field(0, &seed[..=steps]);
            let d1: Vec<Vec<f64>> = (1..=steps).map(|n| backward_diff(&g, &f, n).unwrap()).collect();
            let d1 = SpaceTimeField::from_levels(1, 1, d1).unwrap();
            for n in 2..=steps {
                let a = backward_diff2(&g, &f, n).unwrap()[0];
                let b = backward_diff(&g, &d1, n).unwrap()[0];
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
