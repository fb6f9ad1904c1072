//! Verification tools: discrete norms, the inf-sup test functions and
//! check, independent wave solvers, the discrete `H^{-1}` norm and the
//! convergence study.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cutoff::{build_cutoff, discretize_cutoff, CutoffSpec};
use crate::error::{Error, Result};
use crate::fem::{FemSpace, NestedTransfer};
use crate::linalg::{dot, SparseOperator, SpdSolver};
use crate::mesh::{build_mesh, interval_mesh, square_mesh, DomainSpec};
use crate::solver::{solve, Method, SolveOptions};
use crate::system::{kernel_check, Block, Discretization, InitialData, KernelReport, ProblemData, SaddleSystem, Scales, StateVector};
use crate::timegrid::{backward_diff, backward_diff2, forward_diff, forward_diff2, SpaceTimeField, TimeGrid};

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default)]
struct Accum {
    sum: f64,
    comp: f64,
}

impl Accum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `ℐz^n = τ Σ_{m=0}^n (1 + mτ) z^m` for `n = 0..=N`, with `z⁰ = z¹ = 0`.
pub fn integrator_i(grid: &TimeGrid, z: &SpaceTimeField) -> SpaceTimeField {
    let n_steps = grid.steps();
    let tau = grid.tau();
    let nh = z.n_dofs();
    let mut out = SpaceTimeField::zeros(nh, 0, n_steps);
    let mut run = vec![0.0; nh];
    for n in 0..=n_steps {
        if z.contains(n) {
            let w = tau * (1.0 + n as f64 * tau);
            for (r, v) in run.iter_mut().zip(z.level(n).unwrap()) {
                *r += w * v;
            }
        }
        out.level_mut(n).unwrap().copy_from_slice(&run);
    }
    out
}

/// `ĨZ^n = τ Σ_{m=n}^N (1 + (N-m)τ) Z^m` for `n = 0..=N`, with `Z^{N-1} = Z^N = 0`.
pub fn integrator_itilde(grid: &TimeGrid, cap_z: &SpaceTimeField) -> SpaceTimeField {
    let n_steps = grid.steps();
    let tau = grid.tau();
    let nh = cap_z.n_dofs();
    let mut out = SpaceTimeField::zeros(nh, 0, n_steps);
    let mut run = vec![0.0; nh];
    for n in (0..=n_steps).rev() {
        if cap_z.contains(n) {
            let w = tau * (1.0 + (n_steps - n) as f64 * tau);
            for (r, v) in run.iter_mut().zip(cap_z.level(n).unwrap()) {
                *r += w * v;
            }
        }
        out.level_mut(n).unwrap().copy_from_slice(&run);
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct NormReport {
    pub R: f64,
    pub F: f64,
    pub Fprime: f64,
    pub D: f64,
    pub Dprime: f64,
    pub C: f64,
    pub S: f64,
}

/// Squared norms, kept separate so that callers can combine them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SquaredNorms {
    pub r: f64,
    pub f: f64,
    pub fprime: f64,
    pub d: f64,
    pub dprime: f64,
    pub c: f64,
    pub s: f64,
    /// `τ Σ_{n=2}^N ‖√χ_h U^n‖²`
    pub chi_u: f64,
}

impl SquaredNorms {
    pub fn report(&self) -> NormReport {
        NormReport {
            R: self.r.sqrt(),
            F: self.f.sqrt(),
            Fprime: self.fprime.sqrt(),
            D: self.d.sqrt(),
            Dprime: self.dprime.sqrt(),
            C: self.c.sqrt(),
            S: self.s.sqrt(),
        }
    }

    /// The five-term lower bound `R² + h²F² + h²F'² + D² + D'²`.
    pub fn coercivity_bound(&self, h: f64) -> f64 {
        self.r + h * h * (self.f + self.fprime) + self.d + self.dprime
    }
}

pub fn squared_norms(d: &Discretization, x: &StateVector) -> Result<SquaredNorms> {
    let grid = &d.grid;
    let n_steps = d.steps();
    let tau = d.tau();
    let h2 = d.h * d.h;
    let (m, k) = (&d.mass, &d.stiffness);
    let (u, cap_u, z, cap_z) = (x.u(), x.cap_u(), x.z(), x.cap_z());
    let bd = |f: &SpaceTimeField, n: usize| backward_diff(grid, f, n);

    let mut r = Accum::default();
    let un = u.level(n_steps)?;
    r.add(k.quadratic(un));
    r.add(m.quadratic(&bd(&u, n_steps)?));
    r.add(k.quadratic(u.level(0)?));
    r.add(m.quadratic(&bd(&u, 1)?));
    let mut stab = Accum::default();
    for n in 1..=n_steps {
        stab.add(tau * k.quadratic(&bd(&cap_u, n)?));
    }
    stab.add(k.quadratic(&bd(&cap_u, n_steps)?));
    stab.add(k.quadratic(&bd(&cap_u, 1)?));
    stab.add(k.quadratic(cap_u.level(n_steps)?));
    r.add(h2 * stab.value());

    let mut f = Accum::default();
    for n in 1..=n_steps {
        f.add(tau * (m.quadratic(&bd(&u, n)?) + k.quadratic(u.level(n)?)));
    }

    let mut fp = Accum::default();
    for n in 2..=n_steps {
        let du = bd(&cap_u, n)?;
        fp.add(
            tau * (m.quadratic(&backward_diff2(grid, &cap_u, n)?)
                + k.quadratic(&du)
                + m.quadratic(&du)
                + k.quadratic(cap_u.level(n)?)),
        );
    }
    fp.add(m.quadratic(&bd(&cap_u, 1)?));
    fp.add(k.quadratic(cap_u.level(1)?));

    let iz = integrator_i(grid, &z);
    let mut dd = Accum::default();
    let mut z_l2 = Accum::default();
    for n in 2..=n_steps {
        let zn = z.level(n)?;
        z_l2.add(tau * m.quadratic(zn));
        dd.add(tau * k.quadratic(iz.level(n)?));
    }
    dd.add(z_l2.value());
    dd.add(k.quadratic(iz.level(n_steps)?));
    dd.add(m.quadratic(z.level(n_steps)?));

    let itz = integrator_itilde(grid, &cap_z);
    let mut ddp = Accum::default();
    let mut cz_l2 = Accum::default();
    for n in 0..=n_steps - 2 {
        cz_l2.add(tau * m.quadratic(cap_z.level(n)?));
        ddp.add(tau * k.quadratic(itz.level(n)?));
    }
    ddp.add(cz_l2.value());
    ddp.add(k.quadratic(itz.level(0)?));
    ddp.add(m.quadratic(cap_z.level(0)?));

    let mut chi_u = Accum::default();
    for n in 2..=n_steps {
        chi_u.add(tau * d.chi_mass.quadratic(cap_u.level(n)?));
    }

    let (r, f, fp, dd, ddp, chi_u) = (r.value(), f.value(), fp.value(), dd.value(), ddp.value(), chi_u.value());
    Ok(SquaredNorms {
        r,
        f,
        fprime: fp,
        d: dd,
        dprime: ddp,
        c: r + z_l2.value() + cz_l2.value(),
        s: chi_u + r + h2 * (f + fp) + dd + ddp,
        chi_u,
    })
}

pub fn compute_norms(d: &Discretization, x: &StateVector) -> Result<NormReport> {
    Ok(squared_norms(d, x)?.report())
}

/// The three pieces of the refined test function:
/// `ŷ = y0 + γ y_γ + α y_α` with `y0 = (u, U, -z, -Z)`,
/// `y_γ = (ℐz, 0, 0, h²W)` and `y_α = (0, ĨZ, h²w, 0)`.
pub fn infsup_test_parts(d: &Discretization, x: &StateVector) -> Result<[StateVector; 3]> {
    let grid = &d.grid;
    let n_steps = d.steps();
    let tau = d.tau();
    let t2 = 2.0 * grid.t_final();
    let h2 = d.h * d.h;
    let layout = x.layout();
    let (u, cap_u) = (x.u(), x.cap_u());

    let mut y0 = x.clone();
    for b in [Block::StateMultiplier, Block::AdjointMultiplier] {
        y0.as_mut_slice()[layout.block_range(b)].iter_mut().for_each(|v| *v = -*v);
    }

    let mut yg = StateVector::zeros(layout);
    let iz = integrator_i(grid, &x.z());
    yg.as_mut_slice()[layout.block_range(Block::State)].copy_from_slice(iz.as_flat());
    for n in 0..=n_steps - 2 {
        let c = t2 - (n_steps - n) as f64 * tau;
        let d2 = forward_diff2(grid, &cap_u, n)?;
        let d1 = forward_diff(grid, &cap_u, n)?;
        for ((o, a), b) in yg.level_mut(Block::AdjointMultiplier, n).iter_mut().zip(&d2).zip(&d1) {
            *o = h2 * (a + c * b);
        }
    }

    let mut ya = StateVector::zeros(layout);
    let itz = integrator_itilde(grid, &x.cap_z());
    ya.as_mut_slice()[layout.block_range(Block::Adjoint)].copy_from_slice(itz.as_flat());
    for n in 2..=n_steps {
        let c = t2 - n as f64 * tau;
        let d1 = backward_diff(grid, &u, n)?;
        for (o, a) in ya.level_mut(Block::StateMultiplier, n).iter_mut().zip(&d1) {
            *o = h2 * c * a;
        }
    }
    Ok([y0, yg, ya])
}

/// `ŷ = (u + γℐz, U + αĨZ, -z + αh²w, -Z + γh²W)`.
pub fn build_infsup_test(d: &Discretization, x: &StateVector, gamma: f64, alpha: f64) -> Result<StateVector> {
    let [mut y, yg, ya] = infsup_test_parts(d, x)?;
    for ((o, g), a) in y.as_mut_slice().iter_mut().zip(yg.as_slice()).zip(ya.as_slice()) {
        *o += gamma * g + alpha * a;
    }
    Ok(y)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfSupOptions {
    pub trials: usize,
    pub seed: u64,
    pub gammas: Vec<f64>,
    pub alpha0s: Vec<f64>,
}

impl Default for InfSupOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 0,
            gammas: (0..=24).map(|i| 10f64.powf(-4.0 + 0.25 * i as f64)).collect(),
            alpha0s: (1..=19).map(|i| 0.05 * i as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InfSupReport {
    pub gamma: f64,
    pub alpha0: f64,
    pub c_emp: f64,
    pub trials: usize,
    pub seed: u64,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub n_dofs: usize,
    /// Largest relative defect of `𝒜(x; (u, U, -z, -Z)) = ‖(u, U)‖_R²` over the trials.
    pub identity_defect: f64,
    pub pass: bool,
}

/// Random states, standard normal per entry, scaled to unit `‖·‖_C`.
pub fn random_unit_states(d: &Discretization, count: usize, seed: u64) -> Result<Vec<StateVector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = d.layout();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let data: Vec<f64> = (0..layout.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut x = StateVector::from_flat(layout, data)?;
        let c = squared_norms(d, &x)?.c.sqrt();
        x.as_mut_slice().iter_mut().for_each(|v| *v /= c);
        out.push(x);
    }
    Ok(out)
}

/// Empirical inf-sup constant over random states and a `(γ, α₀)` sweep.
pub fn infsup_check(d: &Discretization, a: &SparseOperator, opts: &InfSupOptions) -> Result<InfSupReport> {
    if opts.trials < 100 {
        return Err(Error::Config(format!("the inf-sup check needs at least 100 trials, got {}", opts.trials)));
    }
    if opts.gammas.is_empty() || opts.alpha0s.is_empty() || opts.alpha0s.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(Error::Config("need gammas and alpha0 values in (0, 1)".into()));
    }
    let states = random_unit_states(d, opts.trials, opts.seed)?;
    let mut samples = Vec::with_capacity(states.len());
    let mut identity_defect: f64 = 0.0;
    for x in &states {
        let ax = a.mul_vec(x.as_slice());
        let [y0, yg, ya] = infsup_test_parts(d, x)?;
        let norms = squared_norms(d, x)?;
        let a0 = dot(y0.as_slice(), &ax);
        identity_defect = identity_defect.max((a0 - norms.r).abs() / norms.r);
        samples.push((a0, dot(yg.as_slice(), &ax), dot(ya.as_slice(), &ax), norms.coercivity_bound(d.h)));
    }
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &g in &opts.gammas {
        for &a0 in &opts.alpha0s {
            let c = samples
                .iter()
                .map(|&(p, q, r, lower)| (p + g * q + a0 * g * r) / lower)
                .fold(f64::INFINITY, f64::min);
            if c > best.0 {
                best = (c, g, a0);
            }
        }
    }
    Ok(InfSupReport {
        gamma: best.1,
        alpha0: best.2,
        c_emp: best.0,
        trials: opts.trials,
        seed: opts.seed,
        h: d.h,
        tau: d.tau(),
        steps: d.steps(),
        n_dofs: d.n_dofs(),
        identity_defect,
        pass: best.0 > 0.0,
    })
}

/// The implicit forward scheme `(M/τ² + K) u^n = M_χ U^n + M(2u^{n-1} - u^{n-2})/τ²`
/// from given `u⁰`, `u¹`.
pub fn forward_wave_from(d: &Discretization, control: &SpaceTimeField, u0: &[f64], u1: &[f64]) -> Result<SpaceTimeField> {
    let n_steps = d.steps();
    let nh = d.n_dofs();
    if control.first() != 0 || control.last() != n_steps || control.n_dofs() != nh {
        return Err(Error::Shape("the control must live on levels 0..=N".into()));
    }
    let tau2 = d.tau() * d.tau();
    let op = d.mass.scaled(1.0 / tau2).add_scaled(1.0, &d.stiffness);
    let solver = SpdSolver::new(&op)?;
    let mut u = SpaceTimeField::zeros(nh, 0, n_steps);
    u.level_mut(0)?.copy_from_slice(u0);
    u.level_mut(1)?.copy_from_slice(u1);
    for n in 2..=n_steps {
        let hist: Vec<f64> = u.level(n - 1)?.iter().zip(u.level(n - 2)?).map(|(a, b)| (2.0 * a - b) / tau2).collect();
        let mut rhs = d.mass.mul_vec(&hist);
        let src = d.chi_mass.mul_vec(control.level(n)?);
        rhs.iter_mut().zip(&src).for_each(|(r, s)| *r += s);
        solver.solve_in_place(&mut rhs);
        u.level_mut(n)?.copy_from_slice(&rhs);
    }
    Ok(u)
}

/// Forward solve with `u⁰ = π_h g₀` and `u¹ = u⁰ + τ P_h g₁`.
pub fn forward_wave_solve(d: &Discretization, control: &SpaceTimeField, data: &ProblemData) -> Result<SpaceTimeField> {
    let u1: Vec<f64> = data.g0.iter().zip(&data.g1).map(|(a, b)| a + d.tau() * b).collect();
    forward_wave_from(d, control, &data.g0, &u1)
}

/// The backward scheme `(M/τ² + K) U^n = M(2U^{n+1} - U^{n+2})/τ²` from `U^N`, `U^{N-1}`.
pub fn backward_wave_solve(d: &Discretization, top: &[f64], below_top: &[f64]) -> Result<SpaceTimeField> {
    let n_steps = d.steps();
    let nh = d.n_dofs();
    let tau2 = d.tau() * d.tau();
    let op = d.mass.scaled(1.0 / tau2).add_scaled(1.0, &d.stiffness);
    let solver = SpdSolver::new(&op)?;
    let mut cap_u = SpaceTimeField::zeros(nh, 0, n_steps);
    cap_u.level_mut(n_steps)?.copy_from_slice(top);
    cap_u.level_mut(n_steps - 1)?.copy_from_slice(below_top);
    for n in (0..=n_steps - 2).rev() {
        let hist: Vec<f64> = cap_u
            .level(n + 1)?
            .iter()
            .zip(cap_u.level(n + 2)?)
            .map(|(a, b)| (2.0 * a - b) / tau2)
            .collect();
        let mut rhs = d.mass.mul_vec(&hist);
        solver.solve_in_place(&mut rhs);
        cap_u.level_mut(n)?.copy_from_slice(&rhs);
    }
    Ok(cap_u)
}

/// `E^n = ½‖∂u^n‖² + ½‖∇u^n‖²` for `n = 1..=N`.
pub fn discrete_energy(d: &Discretization, u: &SpaceTimeField) -> Result<Vec<f64>> {
    (1..=d.steps())
        .map(|n| {
            let du = backward_diff(&d.grid, u, n)?;
            Ok(0.5 * d.mass.quadratic(&du) + 0.5 * d.stiffness.quadratic(u.level(n)?))
        })
        .collect()
}

/// Backward-in-time energy `½‖∂̃U^n‖² + ½‖∇U^n‖²` for `n = 0..=N-1`.
pub fn discrete_backward_energy(d: &Discretization, cap_u: &SpaceTimeField) -> Result<Vec<f64>> {
    (0..d.steps())
        .map(|n| {
            let du = forward_diff(&d.grid, cap_u, n)?;
            Ok(0.5 * d.mass.quadratic(&du) + 0.5 * d.stiffness.quadratic(cap_u.level(n)?))
        })
        .collect()
}

/// Per-level relative residuals of the forward recursion `M∂²u^n + Ku^n = M_χU^n`
/// (`n = 2..=N`) and of the backward recursion `M∂̃²U^n + KU^n = 0` (`n = 0..=N-2`),
/// each relative to the size of its largest term.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeResiduals {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
}

impl SchemeResiduals {
    pub fn max(&self) -> f64 {
        self.forward.iter().chain(&self.backward).cloned().fold(0.0, f64::max)
    }
}

pub fn scheme_residuals(d: &Discretization, x: &StateVector) -> Result<SchemeResiduals> {
    let grid = &d.grid;
    let (u, cap_u) = (x.u(), x.cap_u());
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let rel = |terms: [Vec<f64>; 3]| {
        let scale = terms.iter().map(|t| norm(t)).fold(0.0, f64::max);
        let r: Vec<f64> = (0..terms[0].len()).map(|i| terms[0][i] + terms[1][i] - terms[2][i]).collect();
        if scale == 0.0 {
            0.0
        } else {
            norm(&r) / scale
        }
    };
    let mut forward = Vec::new();
    for n in 2..=d.steps() {
        forward.push(rel([
            d.mass.mul_vec(&backward_diff2(grid, &u, n)?),
            d.stiffness.mul_vec(u.level(n)?),
            d.chi_mass.mul_vec(cap_u.level(n)?),
        ]));
    }
    let mut backward = Vec::new();
    for n in 0..=d.steps() - 2 {
        backward.push(rel([
            d.mass.mul_vec(&forward_diff2(grid, &cap_u, n)?),
            d.stiffness.mul_vec(cap_u.level(n)?),
            vec![0.0; d.n_dofs()],
        ]));
    }
    Ok(SchemeResiduals { forward, backward })
}

/// `‖v‖_{-1,h}² = (Mv)ᵀ K⁻¹ (Mv)`.
pub fn discrete_hminus1_norm(mass: &SparseOperator, stiffness: &SpdSolver, v: &[f64]) -> f64 {
    let mv = mass.mul_vec(v);
    let y = stiffness.solve(&mv);
    dot(&mv, &y).max(0.0).sqrt()
}

/// One convergence study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudySpec {
    pub domain: DomainSpec,
    pub cutoff: CutoffSpec,
    pub g0: InitialData,
    pub g1: InitialData,
    pub t_final: f64,
    pub rho: f64,
    pub levels: usize,
    pub solver: SolveOptions,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StudyRow {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub n_dofs: usize,
    pub dofs: usize,
    pub r_residual: f64,
    pub z_d: f64,
    pub cap_z_dprime: f64,
    pub self_err_state_h1: Option<f64>,
    pub self_err_control_l2: Option<f64>,
    pub self_err_control_hm1: Option<f64>,
    pub order_r_residual: Option<f64>,
    pub order_multipliers: Option<f64>,
    pub order_state_h1: Option<f64>,
    pub order_control_l2: Option<f64>,
    pub order_control_hm1: Option<f64>,
    pub solver_residual: f64,
    /// Largest per-level residual of the forward and backward recursions.
    pub scheme_residual: f64,
    pub wall_time: f64,
}

fn order(coarse: Option<f64>, fine: Option<f64>) -> Option<f64> {
    match (coarse, fine) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
        _ => None,
    }
}

struct LevelResult {
    disc: Discretization,
    x: StateVector,
}

/// Self-convergence errors between a coarse solution and its refinement
/// (space refined once, time steps doubled).
fn self_errors(coarse: &LevelResult, fine: &LevelResult, transfer: &NestedTransfer) -> Result<(f64, f64, f64)> {
    let (cd, fd) = (&coarse.disc, &fine.disc);
    let nc = cd.steps();
    if fd.steps() != 2 * nc {
        return Err(Error::Config("fine level must double the time steps".into()));
    }
    let (uc, uf) = (coarse.x.u(), fine.x.u());
    let (cuc, cuf) = (coarse.x.cap_u(), fine.x.cap_u());
    let k_solver = SpdSolver::new(&fd.stiffness)?;
    let diff = |a: Vec<f64>, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p - q).collect() };
    let (mut state, mut l2, mut hm1): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for n in 0..=nc {
        let e = diff(transfer.prolong(uc.level(n)?), uf.level(2 * n)?);
        let mut s = fd.stiffness.quadratic(&e);
        let e_cap = diff(transfer.prolong(cuc.level(n)?), cuf.level(2 * n)?);
        l2 = l2.max(fd.mass.quadratic(&e_cap).sqrt());
        if n >= 1 {
            let ev = diff(transfer.prolong(&backward_diff(&cd.grid, &uc, n)?), &backward_diff(&fd.grid, &uf, 2 * n)?);
            s += fd.mass.quadratic(&ev);
            let ec = diff(transfer.prolong(&backward_diff(&cd.grid, &cuc, n)?), &backward_diff(&fd.grid, &cuf, 2 * n)?);
            hm1 = hm1.max(discrete_hminus1_norm(&fd.mass, &k_solver, &ec));
        }
        state = state.max(s.sqrt());
    }
    Ok((state, l2, hm1))
}

/// Builds the discretization and data for one mesh and grid.
pub fn setup_level(
    space: FemSpace,
    grid: TimeGrid,
    cutoff: &CutoffSpec,
    g0: &InitialData,
    g1: &InitialData,
) -> Result<(Discretization, ProblemData)> {
    let domain = space
        .mesh()
        .domain()
        .ok_or_else(|| Error::Config("mesh carries no domain description".into()))?;
    let chi = build_cutoff(*cutoff, domain)?;
    let chi_h = discretize_cutoff(&chi, space.mesh());
    let data = ProblemData::from_spec(&space, g0, g1)?;
    Ok((Discretization::new(space, grid, chi_h)?, data))
}

/// Runs the study on `levels` nested meshes with index-doubling in time.
/// `progress` is called after every level.
pub fn convergence_study(spec: &StudySpec, mut progress: impl FnMut(&StudyRow)) -> Result<Vec<StudyRow>> {
    if spec.levels < 3 {
        return Err(Error::Config(format!("a study needs at least 3 levels, got {}", spec.levels)));
    }
    if matches!(spec.g0, InitialData::Nodal { .. }) || matches!(spec.g1, InitialData::Nodal { .. }) {
        return Err(Error::Config("nodal data cannot be transferred across levels".into()));
    }
    let mesh = build_mesh(&spec.domain)?;
    let mut space = FemSpace::new(mesh)?;
    let mut grid = TimeGrid::with_ratio(spec.t_final, space.h(), spec.rho)?;
    let mut rows: Vec<StudyRow> = Vec::new();
    let mut prev: Option<LevelResult> = None;
    let mut transfer: Option<NestedTransfer> = None;
    for level in 0..spec.levels {
        let start = Instant::now();
        let (disc, data) = setup_level(space.clone(), grid, &spec.cutoff, &spec.g0, &spec.g1)?;
        let sys = disc.assemble_saddle(&data, Scales::default())?;
        let report = solve(&disc, &sys, &spec.solver)?;
        let x = report.solution;
        let norms = squared_norms(&disc, &x)?;
        let r = disc.eval_r(&x.u(), &data)?;
        let scheme_residual = scheme_residuals(&disc, &x)?.max();
        let result = LevelResult { disc, x };
        let mut row = StudyRow {
            level,
            h: result.disc.h,
            tau: result.disc.tau(),
            steps: result.disc.steps(),
            n_dofs: result.disc.n_dofs(),
            dofs: sys.matrix.n_rows(),
            r_residual: (2.0 * r).sqrt(),
            z_d: norms.d.sqrt(),
            cap_z_dprime: norms.dprime.sqrt(),
            solver_residual: report.stats.relative_residual,
            scheme_residual,
            ..Default::default()
        };
        if let (Some(p), Some(t)) = (&prev, &transfer) {
            let (s, l2, hm1) = self_errors(p, &result, t)?;
            row.self_err_state_h1 = Some(s);
            row.self_err_control_l2 = Some(l2);
            row.self_err_control_hm1 = Some(hm1);
        }
        if let Some(last) = rows.last() {
            row.order_r_residual = order(Some(last.r_residual), Some(row.r_residual));
            row.order_multipliers = order(Some(last.z_d + last.cap_z_dprime), Some(row.z_d + row.cap_z_dprime));
            row.order_state_h1 = order(last.self_err_state_h1, row.self_err_state_h1);
            row.order_control_l2 = order(last.self_err_control_l2, row.self_err_control_l2);
            row.order_control_hm1 = order(last.self_err_control_hm1, row.self_err_control_hm1);
        }
        row.wall_time = start.elapsed().as_secs_f64();
        progress(&row);
        rows.push(row);
        if level + 1 < spec.levels {
            let (fine, t) = NestedTransfer::refine(&space)?;
            space = fine;
            grid = grid.doubled();
            transfer = Some(t);
        }
        prev = Some(result);
    }
    Ok(rows)
}

pub const CSV_COLUMNS: [&str; 20] = [
    "level",
    "h",
    "tau",
    "N",
    "Nh",
    "dofs",
    "R_residual",
    "zD",
    "ZDprime",
    "self_err_state_H1",
    "self_err_control_L2",
    "self_err_control_Hm1",
    "order_R_residual",
    "order_multipliers",
    "order_state_H1",
    "order_control_L2",
    "order_control_Hm1",
    "solver_residual",
    "scheme_residual",
    "wall_time",
];

pub fn write_study_csv<W: Write>(rows: &[StudyRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{:.6e},{:.6e},{},{},{},{:.6e},{:.6e},{:.6e},{},{},{},{},{},{},{},{},{:.3e},{:.3e},{:.3}",
            r.level,
            r.h,
            r.tau,
            r.steps,
            r.n_dofs,
            r.dofs,
            r.r_residual,
            r.z_d,
            r.cap_z_dprime,
            opt(r.self_err_state_h1),
            opt(r.self_err_control_l2),
            opt(r.self_err_control_hm1),
            opt(r.order_r_residual),
            opt(r.order_multipliers),
            opt(r.order_state_h1),
            opt(r.order_control_l2),
            opt(r.order_control_hm1),
            r.solver_residual,
            r.scheme_residual,
            r.wall_time
        )?;
    }
    Ok(())
}

/// A gnuplot script plotting `log2(error)` against `log2(1/h)` from the CSV.
pub fn write_gnuplot_script<W: Write>(csv_name: &str, mut w: W) -> Result<()> {
    writeln!(w, "set datafile separator ','")?;
    writeln!(w, "set terminal pngcairo size 900,600")?;
    writeln!(w, "set output 'convergence.png'")?;
    writeln!(w, "set xlabel 'log2(1/h)'")?;
    writeln!(w, "set ylabel 'log2(error)'")?;
    writeln!(w, "set key left bottom")?;
    writeln!(w, "set grid")?;
    let series = [
        (7, "sqrt(2 R(u_h))"),
        (8, "|z|_D"),
        (9, "|Z|_D'"),
        (10, "state H1 x L2"),
        (11, "control L2"),
        (12, "control H-1"),
    ];
    let plots: Vec<String> = series
        .iter()
        .map(|(c, t)| format!("'{csv_name}' every ::1 using (log(1/$2)/log(2)):(log(${c})/log(2)) with linespoints title '{t}'"))
        .collect();
    writeln!(w, "plot {}", plots.join(", \\\n     "))?;
    Ok(())
}

/// Symmetry of the assembled matrix and the block-transpose relations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureReport {
    /// `max|A - Aᵀ| / max|A|`
    pub symmetry: f64,
    /// Largest entrywise `|A_rc - A_crᵀ|` over all block pairs.
    pub block_transpose: f64,
    pub pass: bool,
}

pub fn structure_check(sys: &SaddleSystem) -> StructureReport {
    let symmetry = sys.matrix.symmetry_defect() / sys.matrix.max_abs().max(f64::MIN_POSITIVE);
    let mut block_transpose: f64 = 0.0;
    for (i, &r) in Block::ALL.iter().enumerate() {
        for &c in &Block::ALL[i..] {
            block_transpose = block_transpose.max(sys.block(r, c).max_abs_diff(&sys.block(c, r).transpose()));
        }
    }
    StructureReport {
        symmetry,
        block_transpose,
        pass: symmetry <= 1e-12 && block_transpose <= 1e-13,
    }
}

/// Largest relative mismatch between central differences of `𝒥` and
/// `yᵀAx - yᵀb` over random pairs.
pub fn gradient_check(d: &Discretization, sys: &SaddleSystem, data: &ProblemData, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = d.layout();
    let mut worst: f64 = 0.0;
    let eps = 1e-3;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..layout.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..layout.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let shifted = |c: f64| -> Result<f64> {
            let v: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + c * b).collect();
            d.eval_j(&StateVector::from_flat(layout, v)?, data, sys.meta.scales)
        };
        let fd = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
        let exact = sys.directional_derivative(&x, &y);
        worst = worst.max((fd - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleCase {
    pub name: String,
    pub dofs: usize,
    pub structure: StructureReport,
    pub kernel: KernelReport,
    /// `‖x_sparse - x_dense‖_∞`
    pub dense_vs_sparse: f64,
    pub gradient_rel_err: f64,
    pub identity_defect: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub cases: Vec<OracleCase>,
    pub pass: bool,
}

/// The tiny instances of the oracle suite: unit interval with three interior
/// vertices and four time steps (collar and whole-domain cut-offs), and a
/// 3x3 square mesh.
pub fn tiny_instances() -> Result<Vec<(String, Discretization, ProblemData)>> {
    let sin = InitialData::SinProduct { modes: [1, 1], amplitude: 1.0 };
    let cos_like = InitialData::SinProduct { modes: [2, 1], amplitude: 0.5 };
    let cases = [
        ("interval_collar", interval_mesh(4), CutoffSpec::collar(0.3, 0.1)),
        ("interval_whole", interval_mesh(4), CutoffSpec::whole_domain()),
        ("square_collar", square_mesh(3), CutoffSpec::collar(0.3, 0.1)),
    ];
    cases
        .into_iter()
        .map(|(name, mesh, cutoff)| {
            let space = FemSpace::new(mesh)?;
            let (d, data) = setup_level(space, TimeGrid::new(1.0, 4)?, &cutoff, &sin, &cos_like)?;
            Ok((name.to_string(), d, data))
        })
        .collect()
}

pub fn oracle_case(name: &str, d: &Discretization, data: &ProblemData, seed: u64) -> Result<OracleCase> {
    let sys = d.assemble_saddle(data, Scales::default())?;
    let structure = structure_check(&sys);
    let kernel = kernel_check(&sys)?;
    let sparse = solve(d, &sys, &SolveOptions::with_method(Method::SparseDirect))?.solution;
    let dense = sys
        .matrix
        .to_dense()
        .lu()
        .solve(&nalgebra::DVector::from_column_slice(&sys.rhs))
        .ok_or_else(|| Error::LinearAlgebra("dense LU found a singular matrix".into()))?;
    let dense_vs_sparse = sparse.as_slice().iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let gradient_rel_err = gradient_check(d, &sys, data, 20, seed)?;
    let mut identity_defect: f64 = 0.0;
    for x in random_unit_states(d, 100, seed.wrapping_add(1))? {
        let [y0, _, _] = infsup_test_parts(d, &x)?;
        let r = squared_norms(d, &x)?.r;
        identity_defect = identity_defect.max((sys.form(x.as_slice(), y0.as_slice()) - r).abs() / r);
    }
    let pass = structure.pass && kernel.pass && dense_vs_sparse <= 1e-10 && gradient_rel_err <= 1e-8 && identity_defect <= 1e-12;
    Ok(OracleCase {
        name: name.to_string(),
        dofs: sys.matrix.n_rows(),
        structure,
        kernel,
        dense_vs_sparse,
        gradient_rel_err,
        identity_defect,
        pass,
    })
}

pub fn oracle_suite(seed: u64) -> Result<OracleReport> {
    let cases = tiny_instances()?
        .iter()
        .map(|(name, d, data)| oracle_case(name, d, data, seed))
        .collect::<Result<Vec<_>>>()?;
    let pass = cases.iter().all(|c| c.pass);
    Ok(OracleReport { seed, cases, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(steps: usize) -> Discretization {
        let space = FemSpace::new(interval_mesh(4)).unwrap();
        let n = space.mesh().n_vertices();
        Discretization::new(space, TimeGrid::new(1.0, steps).unwrap(), vec![1.0; n]).unwrap()
    }

    #[test]
    fn integrator_closed_form() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let z = SpaceTimeField::from_levels(1, 2, vec![vec![2.0]; 3]).unwrap();
        let iz = integrator_i(&grid, &z);
        assert!((iz.level(3).unwrap()[0] - 0.8125 * 2.0).abs() < 1e-15);
        assert_eq!(iz.level(1).unwrap()[0], 0.0);
        for n in 1..=4 {
            let d = backward_diff(&grid, &iz, n).unwrap()[0];
            let expect = if n >= 2 { (1.0 + n as f64 * 0.25) * 2.0 } else { 0.0 };
            assert!((d - expect).abs() < 1e-13);
        }
        let cz = SpaceTimeField::from_levels(1, 0, vec![vec![1.0], vec![-1.0], vec![3.0]]).unwrap();
        let itz = integrator_itilde(&grid, &cz);
        for n in 0..4 {
            let d = forward_diff(&grid, &itz, n).unwrap()[0];
            let expect = if n <= 2 { (1.0 + (4 - n) as f64 * 0.25) * cz.level(n).unwrap()[0] } else { 0.0 };
            assert!((d - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn norms_of_single_hat() {
        let d = tiny(4);
        let mut x = StateVector::zeros(d.layout());
        x.level_mut(Block::State, 4)[1] = 1.0;
        let n = compute_norms(&d, &x).unwrap();
        let h = 0.25;
        let expect = 2.0 / h + (2.0 * h / 3.0) / (0.25 * 0.25);
        assert!((n.R * n.R - expect).abs() < 1e-12 * expect);
        assert_eq!(compute_norms(&d, &StateVector::zeros(d.layout())).unwrap(), NormReport::default());
    }

    #[test]
    fn norms_are_homogeneous() {
        let d = tiny(5);
        let x = random_unit_states(&d, 1, 3).unwrap().pop().unwrap();
        let a = compute_norms(&d, &x).unwrap();
        let mut y = x.clone();
        y.as_mut_slice().iter_mut().for_each(|v| *v *= -2.5);
        let b = compute_norms(&d, &y).unwrap();
        for (p, q) in [(a.R, b.R), (a.F, b.F), (a.Fprime, b.Fprime), (a.D, b.D), (a.Dprime, b.Dprime), (a.C, b.C), (a.S, b.S)] {
            assert!((2.5 * p - q).abs() <= 1e-13 * q);
        }
        assert!((a.C - 1.0).abs() < 1e-12);
        assert!(a.S >= a.R);
    }

    #[test]
    fn r_norm_identity_through_matrix() {
        let d = tiny(6);
        let sys = d.assemble_saddle(&ProblemData::zero(&d.space), Scales::default()).unwrap();
        for x in random_unit_states(&d, 100, 7).unwrap() {
            let [y0, _, _] = infsup_test_parts(&d, &x).unwrap();
            let lhs = sys.form(x.as_slice(), y0.as_slice());
            let r2 = squared_norms(&d, &x).unwrap().r;
            assert!((lhs - r2).abs() <= 1e-12 * r2);
        }
    }

    #[test]
    fn test_function_without_multipliers() {
        let d = tiny(5);
        let mut x = random_unit_states(&d, 1, 11).unwrap().pop().unwrap();
        let l = x.layout();
        for b in [Block::StateMultiplier, Block::AdjointMultiplier] {
            x.as_mut_slice()[l.block_range(b)].iter_mut().for_each(|v| *v = 0.0);
        }
        let y = build_infsup_test(&d, &x, 1.0, 1.0).unwrap();
        assert_eq!(y.u(), x.u());
        assert_eq!(y.cap_u(), x.cap_u());
        let [_, yg, ya] = infsup_test_parts(&d, &x).unwrap();
        assert_eq!(y.z(), ya.z());
        assert_eq!(y.cap_z(), yg.cap_z());
        assert!(build_infsup_test(&d, &StateVector::zeros(l), 0.3, 0.1).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_energy_is_nonincreasing_and_mirrors_backward() {
        let space = FemSpace::new(square_mesh(6)).unwrap();
        let n = space.mesh().n_vertices();
        let d = Discretization::new(space, TimeGrid::new(2.0, 20).unwrap(), vec![1.0; n]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let nh = d.n_dofs();
        let data = ProblemData {
            g0: (0..nh).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            g1: (0..nh).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let zero = SpaceTimeField::zeros(nh, 0, 20);
        let u = forward_wave_solve(&d, &zero, &data).unwrap();
        let e = discrete_energy(&d, &u).unwrap();
        assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let rev = u.time_reversed(20);
        let back = backward_wave_solve(&d, rev.level(20).unwrap(), rev.level(19).unwrap()).unwrap();
        let scale = u.as_flat().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..=20 {
            for (a, b) in back.level(k).unwrap().iter().zip(rev.level(k).unwrap()) {
                assert!((a - b).abs() <= 1e-10 * scale);
            }
        }
        let eb = discrete_backward_energy(&d, &back).unwrap();
        assert!(eb.windows(2).all(|w| w[0] <= w[1] * (1.0 + 1e-12)));
        let u0 = forward_wave_solve(&d, &zero, &ProblemData::zero(&d.space)).unwrap();
        assert!(u0.as_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hminus1_norm_of_first_eigenvector() {
        let space = FemSpace::new(interval_mesh(32)).unwrap();
        let (m, k) = (space.assemble_mass(), space.assemble_stiffness());
        let ks = SpdSolver::new(&k).unwrap();
        let h = 1.0 / 32.0;
        // discrete eigenvectors of the tridiagonal pair are sampled sines
        let phi: Vec<f64> = (1..32).map(|i| (std::f64::consts::PI * i as f64 * h).sin()).collect();
        let c = (std::f64::consts::PI * h).cos();
        let lambda = 6.0 / (h * h) * (1.0 - c) / (2.0 + c);
        let nm = m.quadratic(&phi).sqrt();
        let hm1 = discrete_hminus1_norm(&m, &ks, &phi);
        assert!((hm1 - nm / lambda.sqrt()).abs() < 1e-12 * hm1);
        let two: Vec<f64> = phi.iter().map(|v| 2.0 * v).collect();
        assert!((discrete_hminus1_norm(&m, &ks, &two) - 2.0 * hm1).abs() < 1e-13);
        assert_eq!(discrete_hminus1_norm(&m, &ks, &vec![0.0; 31]), 0.0);
    }

    #[test]
    fn zero_data_study_is_identically_zero() {
        let spec = StudySpec {
            domain: DomainSpec::new(crate::mesh::Domain::UnitInterval, 0.25),
            cutoff: CutoffSpec::collar(0.2, 0.1),
            g0: InitialData::Zero,
            g1: InitialData::Zero,
            t_final: 2.0,
            rho: 1.0,
            levels: 3,
            solver: SolveOptions::default(),
        };
        let rows = convergence_study(&spec, |_| {}).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.r_residual, 0.0);
            assert_eq!(r.z_d + r.cap_z_dprime, 0.0);
        }
        assert_eq!(rows[2].self_err_state_h1, Some(0.0));
        let mut csv = Vec::new();
        write_study_csv(&rows, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }

    #[test]
    fn oracle_suite_passes() {
        let report = oracle_suite(42).unwrap();
        for c in &report.cases {
            assert!(c.pass, "{c:?}");
        }
        assert_eq!(report.cases[0].dofs, 48);
    }
}
