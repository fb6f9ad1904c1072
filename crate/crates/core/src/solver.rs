//! Solvers for the saddle-point system.
//!
//! Three methods are available. `SparseDirect` factors the assembled matrix
//! with a supernodal LU (partial pivoting, COLAMD column order). `Minres` is
//! the unpreconditioned minimal residual method. `TimeMarching` uses the time
//! structure: all rows except four boundary levels are implicit wave steps,
//! so the system reduces to a dense one in `(u⁰, u¹, U^{N-1}, U^N)`; the
//! reduced matrix is built column by column from marches, factored densely,
//! and the result is polished by iterative refinement against the assembled
//! matrix. `Auto` picks the direct factorization for small systems.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, LuSolver, SparseOperator, SpdSolver};
use crate::system::{Block, Discretization, SaddleSystem, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SparseDirect,
    Minres,
    TimeMarching,
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub method: Method,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Recorded for reproducibility; the LU backend always pivots on the
    /// largest entry of the column (threshold 1).
    pub pivot_threshold: f64,
    /// Largest system handed to `SparseDirect` by `Auto`.
    pub direct_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            rel_tol: 1e-10,
            max_iter: 20_000,
            pivot_threshold: 1.0,
            direct_limit: 40_000,
        }
    }
}

impl SolveOptions {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-4) {
            return Err(Error::Config(format!("rel_tol must lie in (0, 1e-4], got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveStats {
    pub method: Method,
    pub unknowns: usize,
    pub nonzeros: usize,
    pub relative_residual: f64,
    pub iterations: Option<usize>,
    pub refinement_steps: usize,
    /// Stored factor entries when the backend exposes them.
    pub factor_entries: Option<usize>,
    /// FNV-1a hash of the column and row orderings used by the factorization.
    pub ordering_fingerprint: Option<String>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: StateVector,
    pub stats: SolveStats,
    pub column_permutation: Option<Vec<usize>>,
    pub row_permutation: Option<Vec<usize>>,
}

pub fn relative_residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> f64 {
    let r = residual(a, x, b);
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

fn residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

fn fingerprint(perms: &[&[usize]]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in perms {
        for &v in *p {
            for byte in (v as u64).to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

fn conditioning_error(a: &SparseOperator, x: &[f64], b: &[f64]) -> Error {
    let frob = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let nx = norm2(x);
    let ratio = if nx.is_finite() && nx > 0.0 { norm2(b) / (frob * nx) } else { 0.0 };
    Error::Conditioning { ratio }
}

/// Solves `sys`; `problem` supplies the operators needed by `TimeMarching`.
pub fn solve(problem: &Discretization, sys: &SaddleSystem, opts: &SolveOptions) -> Result<SolveReport> {
    opts.validate()?;
    let n = sys.matrix.n_rows();
    if sys.rhs.len() != n || sys.layout().len() != n {
        return Err(Error::Shape("right-hand side does not match the matrix".into()));
    }
    let method = match opts.method {
        Method::Auto if n <= opts.direct_limit => Method::SparseDirect,
        Method::Auto => Method::TimeMarching,
        m => m,
    };
    let start = Instant::now();
    let mut stats = SolveStats {
        method,
        unknowns: n,
        nonzeros: sys.matrix.nnz(),
        relative_residual: 0.0,
        iterations: None,
        refinement_steps: 0,
        factor_entries: None,
        ordering_fingerprint: None,
        wall_time: 0.0,
    };
    let mut perms = (None, None);
    let x = if norm2(&sys.rhs) == 0.0 {
        vec![0.0; n]
    } else {
        match method {
            Method::SparseDirect => {
                let lu = LuSolver::new(&sys.matrix)?;
                let (col, row) = (lu.column_permutation(), lu.row_permutation());
                stats.ordering_fingerprint = Some(fingerprint(&[&col, &row]));
                perms = (Some(col), Some(row));
                let mut x = lu.solve(&sys.rhs);
                let mut rel = relative_residual(&sys.matrix, &x, &sys.rhs);
                while rel.is_finite() && rel > opts.rel_tol && stats.refinement_steps < 3 {
                    let d = lu.solve(&residual(&sys.matrix, &x, &sys.rhs));
                    x.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                    rel = relative_residual(&sys.matrix, &x, &sys.rhs);
                    stats.refinement_steps += 1;
                }
                if !rel.is_finite() || rel > opts.rel_tol {
                    return Err(conditioning_error(&sys.matrix, &x, &sys.rhs));
                }
                x
            }
            Method::Minres => {
                let (x, iters) = minres(&sys.matrix, &sys.rhs, opts.rel_tol, opts.max_iter)?;
                stats.iterations = Some(iters);
                x
            }
            Method::TimeMarching => {
                let marcher = TimeMarcher::new(problem, sys)?;
                stats.factor_entries = Some(marcher.reduced_entries());
                let mut x = marcher.solve(&sys.rhs)?;
                let mut rel = relative_residual(&sys.matrix, &x, &sys.rhs);
                while rel.is_finite() && rel > opts.rel_tol && stats.refinement_steps < 8 {
                    let d = marcher.solve(&residual(&sys.matrix, &x, &sys.rhs))?;
                    x.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                    let next = relative_residual(&sys.matrix, &x, &sys.rhs);
                    stats.refinement_steps += 1;
                    if next > 0.5 * rel {
                        rel = next;
                        break;
                    }
                    rel = next;
                }
                if !rel.is_finite() || rel > opts.rel_tol {
                    return Err(Error::Conditioning { ratio: marcher.pivot_ratio() });
                }
                x
            }
            Method::Auto => unreachable!(),
        }
    };
    stats.relative_residual = relative_residual(&sys.matrix, &x, &sys.rhs);
    stats.wall_time = start.elapsed().as_secs_f64();
    Ok(SolveReport {
        solution: StateVector::from_flat(sys.layout(), x)?,
        stats,
        column_permutation: perms.0,
        row_permutation: perms.1,
    })
}

/// Unpreconditioned MINRES for a symmetric operator. Returns the iterate and
/// the iteration count once `‖b - A x‖ ≤ rel_tol ‖b‖`.
pub fn minres(a: &SparseOperator, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    let beta1 = norm2(b);
    let mut x = vec![0.0; n];
    if beta1 == 0.0 {
        return Ok((x, 0));
    }
    let mut history = Vec::new();
    let mut r1 = b.to_vec();
    let mut r2 = b.to_vec();
    let mut y = b.to_vec();
    let (mut oldb, mut beta, mut dbar, mut epsln, mut phibar) = (0.0, beta1, 0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0, 0.0);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    for it in 1..=max_iter {
        let v: Vec<f64> = y.iter().map(|t| t / beta).collect();
        y = a.mul_vec(&v);
        if it >= 2 {
            let c = beta / oldb;
            y.iter_mut().zip(&r1).for_each(|(yi, ri)| *yi -= c * ri);
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        y.iter_mut().zip(&r2).for_each(|(yi, ri)| *yi -= c * ri);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = norm2(&r2);
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) / gamma;
            x[i] += phi * w[i];
        }
        let est = phibar.abs() / beta1;
        history.push(est);
        if est <= rel_tol || beta == 0.0 || it % 200 == 0 {
            if relative_residual(a, &x, b) <= rel_tol {
                return Ok((x, it));
            }
            if beta == 0.0 {
                break;
            }
        }
    }
    let last = relative_residual(a, &x, b);
    if last <= rel_tol {
        return Ok((x, history.len()));
    }
    Err(Error::Iteration {
        iterations: history.len(),
        last,
        history,
    })
}

/// Reduced solver based on implicit marches in time.
pub struct TimeMarcher<'a> {
    d: &'a Discretization,
    layout: crate::system::Layout,
    wave_solver: SpdSolver,
    initial: f64,
    stab: f64,
    reduced: faer::linalg::solvers::PartialPivLu<f64>,
    pivot_ratio: f64,
}

/// Columns per batched march while building the reduced matrix.
const BATCH: usize = 32;

struct Trajectory {
    u: Vec<f64>,
    cap_u: Vec<f64>,
    z: Vec<f64>,
    cap_z: Vec<f64>,
}

impl<'a> TimeMarcher<'a> {
    pub fn new(d: &'a Discretization, sys: &SaddleSystem) -> Result<Self> {
        let tau = d.tau();
        let wave = d.mass.scaled(1.0 / tau).add_scaled(tau, &d.stiffness);
        let wave_solver = SpdSolver::new(&wave)?;
        let layout = d.layout();
        if sys.layout() != layout {
            return Err(Error::Shape("system and discretization disagree".into()));
        }
        let nh = d.n_dofs();
        let p_len = 4 * nh;
        let mut marcher = Self {
            d,
            layout,
            wave_solver,
            initial: sys.meta.scales.initial,
            stab: sys.meta.scales.stabilization * d.h * d.h,
            reduced: faer::Mat::<f64>::identity(1, 1).partial_piv_lu(),
            pivot_ratio: 0.0,
        };
        let mut c = faer::Mat::<f64>::zeros(p_len, p_len);
        let mut j0 = 0;
        while j0 < p_len {
            let k = BATCH.min(p_len - j0);
            let mut p = vec![0.0; p_len * k];
            for j in 0..k {
                p[j * p_len + j0 + j] = 1.0;
            }
            let (_, cond) = marcher.march(&p, None, k);
            for j in 0..k {
                for i in 0..p_len {
                    c[(i, j0 + j)] = cond[j * p_len + i];
                }
            }
            j0 += k;
        }
        let lu = c.partial_piv_lu();
        let u = lu.U();
        let diag: Vec<f64> = (0..p_len).map(|i| u[(i, i)].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        marcher.pivot_ratio = if max > 0.0 { min / max } else { 0.0 };
        if !(marcher.pivot_ratio > 1e-15) {
            return Err(Error::Conditioning { ratio: marcher.pivot_ratio });
        }
        marcher.reduced = lu;
        Ok(marcher)
    }

    /// Smallest over largest pivot of the reduced factorization.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn reduced_entries(&self) -> usize {
        let p = 4 * self.d.n_dofs();
        p * p
    }

    /// Solves `A x = r` for an arbitrary right-hand side.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        use faer::linalg::solvers::Solve;
        let nh = self.d.n_dofs();
        let p_len = 4 * nh;
        let zero = vec![0.0; p_len];
        let (_, c0) = self.march(&zero, Some(r), 1);
        let l = self.layout;
        let n = l.steps;
        let mut target = faer::Mat::<f64>::zeros(p_len, 1);
        let rows = [
            l.offset(Block::State, 0),
            l.offset(Block::State, 1),
            l.offset(Block::Adjoint, n - 1),
            l.offset(Block::Adjoint, n),
        ];
        for (q, &o) in rows.iter().enumerate() {
            for i in 0..nh {
                target[(q * nh + i, 0)] = r[o + i] - c0[q * nh + i];
            }
        }
        let p = self.reduced.solve(&target);
        let p: Vec<f64> = (0..p_len).map(|i| p[(i, 0)]).collect();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Conditioning { ratio: self.pivot_ratio });
        }
        let (traj, _) = self.march(&p, Some(r), 1);
        let mut x = StateVector::zeros(l);
        let out = x.as_mut_slice();
        out[l.block_range(Block::State)].copy_from_slice(&traj.u);
        out[l.block_range(Block::Adjoint)].copy_from_slice(&traj.cap_u);
        out[l.block_range(Block::StateMultiplier)].copy_from_slice(&traj.z);
        out[l.block_range(Block::AdjointMultiplier)].copy_from_slice(&traj.cap_z);
        Ok(x.into_vec())
    }

    /// Runs the four marches for `k` parameter columns `(u⁰, u¹, U^{N-1}, U^N)`
    /// (column-major, `4 N_h` rows) and returns the trajectories (only
    /// meaningful for `k = 1`) and the residuals of the four boundary rows.
    /// `r` is a full right-hand side and requires `k = 1`.
    fn march(&self, p: &[f64], r: Option<&[f64]>, k: usize) -> (Trajectory, Vec<f64>) {
        let d = self.d;
        let nh = d.n_dofs();
        let n = d.steps();
        let tau = d.tau();
        let lay = self.layout;
        let blk = nh * k;
        let (m, kk, mc) = (&d.mass, &d.stiffness, &d.chi_mass);
        let (si, ss) = (self.initial, self.stab);
        assert!(r.is_none() || k == 1);
        let p_len = 4 * nh;
        let param = |q: usize| -> Vec<f64> {
            let mut out = vec![0.0; blk];
            for j in 0..k {
                out[j * nh..(j + 1) * nh].copy_from_slice(&p[j * p_len + q * nh..j * p_len + (q + 1) * nh]);
            }
            out
        };
        let rhs = |block: Block, level: usize| -> Vec<f64> {
            match r {
                Some(r) => {
                    let o = lay.offset(block, level);
                    r[o..o + nh].to_vec()
                }
                None => vec![0.0; blk],
            }
        };
        let at = |i: usize| i * blk..(i + 1) * blk;

        // U backward from the top two levels
        let mut cu = vec![0.0; (n + 1) * blk];
        cu[at(n)].copy_from_slice(&param(3));
        cu[at(n - 1)].copy_from_slice(&param(2));
        for lv in (0..=n - 2).rev() {
            let mut b = rhs(Block::AdjointMultiplier, lv);
            m.mul_columns_add(2.0 / tau, &cu[at(lv + 1)], &mut b, k);
            m.mul_columns_add(-1.0 / tau, &cu[at(lv + 2)], &mut b, k);
            self.wave_solver.solve_columns_in_place(&mut b, k);
            cu[at(lv)].copy_from_slice(&b);
        }

        // u forward from the first two levels, driven by χ_h U
        let mut u = vec![0.0; (n + 1) * blk];
        u[at(0)].copy_from_slice(&param(0));
        u[at(1)].copy_from_slice(&param(1));
        for lv in 2..=n {
            let mut b = rhs(Block::StateMultiplier, lv);
            m.mul_columns_add(2.0 / tau, &u[at(lv - 1)], &mut b, k);
            m.mul_columns_add(-1.0 / tau, &u[at(lv - 2)], &mut b, k);
            mc.mul_columns_add(tau, &cu[at(lv)], &mut b, k);
            self.wave_solver.solve_columns_in_place(&mut b, k);
            u[at(lv)].copy_from_slice(&b);
        }

        // rows of the initial/final condition terms in u
        let init = |lv: usize| -> Vec<f64> {
            let mut out = vec![0.0; blk];
            if si == 0.0 {
                return out;
            }
            let diff = |top: usize| -> Vec<f64> {
                u[at(top)].iter().zip(&u[at(top - 1)]).map(|(a, b)| a - b).collect()
            };
            let c = si / (tau * tau);
            if lv == 0 {
                kk.mul_columns_add(si, &u[at(0)], &mut out, k);
                m.mul_columns_add(-c, &diff(1), &mut out, k);
            } else if lv == 1 {
                m.mul_columns_add(c, &diff(1), &mut out, k);
            } else if lv == n - 1 {
                m.mul_columns_add(-c, &diff(n), &mut out, k);
            } else if lv == n {
                kk.mul_columns_add(si, &u[at(n)], &mut out, k);
                m.mul_columns_add(c, &diff(n), &mut out, k);
            }
            out
        };

        // z backward, levels N..2 stored at index lv - 2
        let zi = |lv: usize| (lv - 2) * blk..(lv - 1) * blk;
        let mut z = vec![0.0; (n - 1) * blk];
        for lv in (2..=n).rev() {
            let mut b = rhs(Block::State, lv);
            let ini = init(lv);
            b.iter_mut().zip(&ini).for_each(|(a, c)| *a -= c);
            if lv < n {
                m.mul_columns_add(2.0 / tau, &z[zi(lv + 1)], &mut b, k);
            }
            if lv + 2 <= n {
                m.mul_columns_add(-1.0 / tau, &z[zi(lv + 2)], &mut b, k);
            }
            self.wave_solver.solve_columns_in_place(&mut b, k);
            z[zi(lv)].copy_from_slice(&b);
        }

        // stabilizer rows in U
        let stab = |lv: usize| -> Vec<f64> {
            let mut comb = vec![0.0; blk];
            if ss == 0.0 {
                return comb;
            }
            let weight = |t: usize| {
                let mut a = ss / tau;
                if t == n {
                    a += ss / (tau * tau);
                }
                if t == 1 {
                    a += ss / (tau * tau);
                }
                a
            };
            if lv >= 1 {
                let a = weight(lv);
                for ((o, x1), x0) in comb.iter_mut().zip(&cu[at(lv)]).zip(&cu[at(lv - 1)]) {
                    *o += a * (x1 - x0);
                }
            }
            if lv < n {
                let a = weight(lv + 1);
                for ((o, x1), x0) in comb.iter_mut().zip(&cu[at(lv + 1)]).zip(&cu[at(lv)]) {
                    *o -= a * (x1 - x0);
                }
            }
            if lv == n {
                for (o, x) in comb.iter_mut().zip(&cu[at(n)]) {
                    *o += ss * x;
                }
            }
            let mut out = vec![0.0; blk];
            kk.mul_columns_add(1.0, &comb, &mut out, k);
            out
        };

        // Z forward, levels 0..N-2
        let mut cz = vec![0.0; (n - 1) * blk];
        for lv in 0..=n - 2 {
            let mut b = rhs(Block::Adjoint, lv);
            let st = stab(lv);
            b.iter_mut().zip(&st).for_each(|(a, c)| *a -= c);
            if lv >= 1 {
                m.mul_columns_add(2.0 / tau, &cz[at(lv - 1)], &mut b, k);
            }
            if lv >= 2 {
                m.mul_columns_add(-1.0 / tau, &cz[at(lv - 2)], &mut b, k);
                mc.mul_columns_add(tau, &z[zi(lv)], &mut b, k);
            }
            self.wave_solver.solve_columns_in_place(&mut b, k);
            cz[at(lv)].copy_from_slice(&b);
        }

        // residual rows: v at levels 0, 1 and V at levels N-1, N
        let mut rows: [Vec<f64>; 4] = [init(0), init(1), stab(n - 1), stab(n)];
        m.mul_columns_add(1.0 / tau, &z[zi(2)], &mut rows[0], k);
        m.mul_columns_add(-2.0 / tau, &z[zi(2)], &mut rows[1], k);
        m.mul_columns_add(1.0 / tau, &z[zi(3)], &mut rows[1], k);
        m.mul_columns_add(-2.0 / tau, &cz[at(n - 2)], &mut rows[2], k);
        m.mul_columns_add(1.0 / tau, &cz[at(n - 3)], &mut rows[2], k);
        mc.mul_columns_add(-tau, &z[zi(n - 1)], &mut rows[2], k);
        m.mul_columns_add(1.0 / tau, &cz[at(n - 2)], &mut rows[3], k);
        mc.mul_columns_add(-tau, &z[zi(n)], &mut rows[3], k);
        let mut cond = vec![0.0; p_len * k];
        for j in 0..k {
            for (q, row) in rows.iter().enumerate() {
                cond[j * p_len + q * nh..j * p_len + (q + 1) * nh].copy_from_slice(&row[j * nh..(j + 1) * nh]);
            }
        }
        (Trajectory { u, cap_u: cu, z, cap_z: cz }, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FemSpace;
    use crate::mesh::{interval_mesh, square_mesh};
    use crate::system::{ProblemData, Scales};
    use crate::timegrid::TimeGrid;

    fn problem(mesh: crate::mesh::Mesh, steps: usize, chi: f64) -> (Discretization, SaddleSystem) {
        let space = FemSpace::new(mesh).unwrap();
        let nv = space.mesh().n_vertices();
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let chi_h: Vec<f64> = (0..nv).map(|i| chi * (0.5 + 0.5 * (i as f64).sin().abs())).collect();
        let d = Discretization::new(space, grid, chi_h).unwrap();
        let n = d.n_dofs();
        let data = ProblemData {
            g0: (0..n).map(|i| ((i + 1) as f64).sin()).collect(),
            g1: (0..n).map(|i| ((i + 2) as f64).cos()).collect(),
        };
        let sys = d.assemble_saddle(&data, Scales::default()).unwrap();
        (d, sys)
    }

    #[test]
    fn methods_agree() {
        let (d, sys) = problem(interval_mesh(6), 6, 1.0);
        let direct = solve(&d, &sys, &SolveOptions::with_method(Method::SparseDirect)).unwrap();
        let marching = solve(&d, &sys, &SolveOptions::with_method(Method::TimeMarching)).unwrap();
        let iterative = solve(&d, &sys, &SolveOptions::with_method(Method::Minres)).unwrap();
        let x = direct.solution.as_slice();
        let nx = norm2(x);
        for other in [&marching, &iterative] {
            let diff: Vec<f64> = x.iter().zip(other.solution.as_slice()).map(|(a, b)| a - b).collect();
            assert!(norm2(&diff) / nx <= 1e-8, "{:?}: {}", other.stats.method, norm2(&diff) / nx);
        }
        assert!(direct.stats.relative_residual <= 1e-10);
    }

    #[test]
    fn time_marching_on_square() {
        let (d, sys) = problem(square_mesh(5), 8, 1.0);
        let direct = solve(&d, &sys, &SolveOptions::with_method(Method::SparseDirect)).unwrap();
        let marching = solve(&d, &sys, &SolveOptions::with_method(Method::TimeMarching)).unwrap();
        let diff: Vec<f64> = direct
            .solution
            .as_slice()
            .iter()
            .zip(marching.solution.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        assert!(norm2(&diff) <= 1e-8 * norm2(direct.solution.as_slice()));
        assert!(marching.stats.relative_residual <= 1e-10);
    }

    #[test]
    fn zero_rhs_and_linearity() {
        let (d, mut sys) = problem(interval_mesh(4), 4, 1.0);
        let opts = SolveOptions::with_method(Method::SparseDirect);
        let x1 = solve(&d, &sys, &opts).unwrap().solution.into_vec();
        sys.rhs.iter_mut().for_each(|v| *v *= 2.0);
        let x2 = solve(&d, &sys, &opts).unwrap().solution.into_vec();
        for (a, b) in x1.iter().zip(&x2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        sys.rhs.iter_mut().for_each(|v| *v = 0.0);
        let x0 = solve(&d, &sys, &opts).unwrap().solution.into_vec();
        assert!(x0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn direct_solve_is_deterministic() {
        let (d, sys) = problem(square_mesh(4), 6, 1.0);
        let opts = SolveOptions::with_method(Method::SparseDirect);
        let a = solve(&d, &sys, &opts).unwrap();
        let b = solve(&d, &sys, &opts).unwrap();
        assert_eq!(a.solution, b.solution);
        assert_eq!(a.stats.ordering_fingerprint, b.stats.ordering_fingerprint);
        assert!(a.column_permutation.is_some());
    }

    #[test]
    fn options_are_validated() {
        let mut o = SolveOptions::default();
        o.rel_tol = 1e-3;
        assert!(o.validate().is_err());
    }

    #[test]
    fn minres_reports_history_on_failure() {
        let (d, sys) = problem(square_mesh(4), 6, 1.0);
        let mut o = SolveOptions::with_method(Method::Minres);
        o.max_iter = 3;
        match solve(&d, &sys, &o) {
            Err(Error::Iteration { history, .. }) => assert_eq!(history.len(), 3),
            other => panic!("expected an iteration error, got {other:?}"),
        }
    }
}
