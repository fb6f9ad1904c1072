//! Continuous piecewise-linear finite elements with homogeneous Dirichlet
//! conditions imposed by eliminating boundary vertices.
//!
//! Operators come in two flavours: `*_full` variants act on every mesh
//! vertex, while the [`FemSpace`] methods return the interior-dof blocks used
//! by the discrete problem. Element integrals of products of two or three
//! hat functions are evaluated in closed form, so assembly carries no
//! quadrature error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, SparseOperator, SpdSolver, TripletBuilder};
use crate::mesh::Mesh;
use crate::quadrature::{self, barycentric_moment};
use crate::timegrid::TimeGrid;

/// Gradients of the barycentric coordinates of cell `c` (constant per cell).
pub fn barycentric_gradients(mesh: &Mesh, c: usize) -> [[f64; 2]; 3] {
    let v = mesh.cell(c);
    if mesh.dim() == 1 {
        let len = mesh.point(v[1])[0] - mesh.point(v[0])[0];
        [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0, 0.0]]
    } else {
        let (a, b, d) = (mesh.point(v[0]), mesh.point(v[1]), mesh.point(v[2]));
        let twice_area = (b[0] - a[0]) * (d[1] - a[1]) - (d[0] - a[0]) * (b[1] - a[1]);
        [
            [(b[1] - d[1]) / twice_area, (d[0] - b[0]) / twice_area],
            [(d[1] - a[1]) / twice_area, (a[0] - d[0]) / twice_area],
            [(a[1] - b[1]) / twice_area, (b[0] - a[0]) / twice_area],
        ]
    }
}

fn cell_point(mesh: &Mesh, c: usize, bary: &[f64; 3]) -> [f64; 2] {
    let v = mesh.cell(c);
    let mut x = [0.0, 0.0];
    for (k, &vk) in v.iter().enumerate() {
        let p = mesh.point(vk);
        x[0] += bary[k] * p[0];
        x[1] += bary[k] * p[1];
    }
    x
}

pub fn assemble_mass_full(mesh: &Mesh) -> SparseOperator {
    let npc = mesh.dim() + 1;
    let mut t = TripletBuilder::with_capacity(mesh.n_vertices(), mesh.n_vertices(), mesh.n_cells() * npc * npc);
    let diag = barycentric_moment(mesh.dim(), &[2]);
    let off = barycentric_moment(mesh.dim(), &[1, 1]);
    for (c, v) in mesh.cells().enumerate() {
        let area = mesh.cell_measure(c);
        for i in 0..npc {
            for j in 0..npc {
                t.push(v[i], v[j], area * if i == j { diag } else { off });
            }
        }
    }
    t.build()
}

pub fn assemble_stiffness_full(mesh: &Mesh) -> SparseOperator {
    let npc = mesh.dim() + 1;
    let mut t = TripletBuilder::with_capacity(mesh.n_vertices(), mesh.n_vertices(), mesh.n_cells() * npc * npc);
    for (c, v) in mesh.cells().enumerate() {
        let area = mesh.cell_measure(c);
        let g = barycentric_gradients(mesh, c);
        for i in 0..npc {
            for j in 0..npc {
                t.push(v[i], v[j], area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
            }
        }
    }
    t.build()
}

/// `∫ I_h[w] φ_i φ_j` for a nodal weight `w` given on every vertex.
pub fn assemble_weighted_mass_full(mesh: &Mesh, weight: &[f64]) -> Result<SparseOperator> {
    if weight.len() != mesh.n_vertices() {
        return Err(Error::Shape(format!(
            "weight has {} values for {} vertices",
            weight.len(),
            mesh.n_vertices()
        )));
    }
    if let Some(v) = weight.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::Config(format!("weight must be non-negative, vertex {v} has {}", weight[v])));
    }
    let npc = mesh.dim() + 1;
    let dim = mesh.dim();
    // moments[i][j][k] = ∫ λ_i λ_j λ_k / |K|
    let mut moments = [[[0.0; 3]; 3]; 3];
    for i in 0..npc {
        for j in 0..npc {
            for k in 0..npc {
                let mut e = [0u32; 3];
                e[i] += 1;
                e[j] += 1;
                e[k] += 1;
                moments[i][j][k] = barycentric_moment(dim, &e[..npc]);
            }
        }
    }
    let mut t = TripletBuilder::with_capacity(mesh.n_vertices(), mesh.n_vertices(), mesh.n_cells() * npc * npc);
    for (c, v) in mesh.cells().enumerate() {
        let area = mesh.cell_measure(c);
        for i in 0..npc {
            for j in 0..npc {
                let s: f64 = (0..npc).map(|k| weight[v[k]] * moments[i][j][k]).sum();
                t.push(v[i], v[j], area * s);
            }
        }
    }
    Ok(t.build())
}

/// The discrete space `V_h`: P1 functions vanishing on the boundary vertices.
#[derive(Clone, Debug)]
pub struct FemSpace {
    mesh: Mesh,
    interior: Vec<usize>,
    dof_of_vertex: Vec<Option<usize>>,
}

impl FemSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let interior: Vec<usize> = (0..mesh.n_vertices()).filter(|&v| !mesh.is_boundary(v)).collect();
        if interior.is_empty() {
            return Err(Error::Config("mesh has no interior vertices".into()));
        }
        let mut dof_of_vertex = vec![None; mesh.n_vertices()];
        for (k, &v) in interior.iter().enumerate() {
            dof_of_vertex[v] = Some(k);
        }
        Ok(Self {
            mesh,
            interior,
            dof_of_vertex,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_dofs(&self) -> &[usize] {
        &self.interior
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    fn restrict(&self, full: &SparseOperator) -> SparseOperator {
        full.submatrix(&self.interior, &self.interior)
    }

    pub fn assemble_mass(&self) -> SparseOperator {
        self.restrict(&assemble_mass_full(&self.mesh))
    }

    pub fn assemble_stiffness(&self) -> SparseOperator {
        self.restrict(&assemble_stiffness_full(&self.mesh))
    }

    pub fn assemble_weighted_mass(&self, weight: &[f64]) -> Result<SparseOperator> {
        Ok(self.restrict(&assemble_weighted_mass_full(&self.mesh, weight)?))
    }

    /// Coefficients on every vertex, boundary values set to zero.
    pub fn extend_to_vertices(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n_dofs());
        let mut all = vec![0.0; self.mesh.n_vertices()];
        for (k, &v) in self.interior.iter().enumerate() {
            all[v] = coeffs[k];
        }
        all
    }

    pub fn restrict_to_dofs(&self, all: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&v| all[v]).collect()
    }

    /// Nodal interpolation at every vertex.
    pub fn interpolate_vertices(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.mesh.points().iter().map(|&p| f(p)).collect()
    }

    /// Nodal interpolation at the interior dofs.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.interior.iter().map(|&v| f(self.mesh.point(v))).collect()
    }

    /// `∫ f φ_i` for every interior dof, by the degree-5 rule.
    pub fn load_vector(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        let rule = quadrature::rule(self.mesh.dim());
        let mut b = vec![0.0; self.n_dofs()];
        for (c, v) in self.mesh.cells().enumerate() {
            let area = self.mesh.cell_measure(c);
            for q in &rule {
                let fx = f(cell_point(&self.mesh, c, &q.bary)) * q.weight * area;
                for (k, &vk) in v.iter().enumerate() {
                    if let Some(d) = self.dof_of_vertex[vk] {
                        b[d] += fx * q.bary[k];
                    }
                }
            }
        }
        b
    }

    /// `∫ ∇u · ∇φ_i` for every interior dof, from an analytic gradient.
    pub fn gradient_load_vector(&self, grad: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let rule = quadrature::rule(self.mesh.dim());
        let mut b = vec![0.0; self.n_dofs()];
        for (c, v) in self.mesh.cells().enumerate() {
            let area = self.mesh.cell_measure(c);
            let g = barycentric_gradients(&self.mesh, c);
            for q in &rule {
                let gu = grad(cell_point(&self.mesh, c, &q.bary));
                for (k, &vk) in v.iter().enumerate() {
                    if let Some(d) = self.dof_of_vertex[vk] {
                        b[d] += q.weight * area * (gu[0] * g[k][0] + gu[1] * g[k][1]);
                    }
                }
            }
        }
        b
    }

    /// L2 projection onto `V_h`.
    pub fn l2_projection(&self, f: impl Fn([f64; 2]) -> f64) -> Result<Vec<f64>> {
        let solver = SpdSolver::new(&self.assemble_mass())?;
        Ok(solver.solve(&self.load_vector(f)))
    }

    /// Ritz projection `a_h(π_h u, v) = a_h(u, v)` for all `v` in `V_h`,
    /// given the gradient of `u`.
    pub fn h1_projection(&self, grad: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Vec<f64>> {
        let solver = SpdSolver::new(&self.assemble_stiffness())?;
        Ok(solver.solve(&self.gradient_load_vector(grad)))
    }

    /// Ritz projection of a function living on a nested finer space.
    pub fn h1_projection_nested(&self, transfer: &NestedTransfer, fine: &FemSpace, u_fine: &[f64]) -> Result<Vec<f64>> {
        let k_fine = fine.assemble_stiffness();
        let b = transfer.prolongation.transpose().mul_vec(&k_fine.mul_vec(u_fine));
        let solver = SpdSolver::new(&self.assemble_stiffness())?;
        Ok(solver.solve(&b))
    }

    /// `‖u - u_h‖_{L2(Ω_h)}` by the degree-5 rule.
    pub fn l2_error(&self, coeffs: &[f64], u: impl Fn([f64; 2]) -> f64) -> f64 {
        let all = self.extend_to_vertices(coeffs);
        let rule = quadrature::rule(self.mesh.dim());
        let mut s = 0.0;
        for (c, v) in self.mesh.cells().enumerate() {
            let area = self.mesh.cell_measure(c);
            for q in &rule {
                let uh: f64 = v.iter().enumerate().map(|(k, &vk)| q.bary[k] * all[vk]).sum();
                s += q.weight * area * (u(cell_point(&self.mesh, c, &q.bary)) - uh).powi(2);
            }
        }
        s.sqrt()
    }

    /// `‖∇(u - u_h)‖_{L2(Ω_h)}` by the degree-5 rule.
    pub fn h1_seminorm_error(&self, coeffs: &[f64], grad: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
        let all = self.extend_to_vertices(coeffs);
        let rule = quadrature::rule(self.mesh.dim());
        let mut s = 0.0;
        for (c, v) in self.mesh.cells().enumerate() {
            let area = self.mesh.cell_measure(c);
            let g = barycentric_gradients(&self.mesh, c);
            let mut gh = [0.0, 0.0];
            for (k, &vk) in v.iter().enumerate() {
                gh[0] += all[vk] * g[k][0];
                gh[1] += all[vk] * g[k][1];
            }
            for q in &rule {
                let gu = grad(cell_point(&self.mesh, c, &q.bary));
                s += q.weight * area * ((gu[0] - gh[0]).powi(2) + (gu[1] - gh[1]).powi(2));
            }
        }
        s.sqrt()
    }

    /// Point evaluation of the zero extension of a `V_h` function to the plane.
    pub fn zero_extension<'a>(&'a self, coeffs: &[f64]) -> ZeroExtension<'a> {
        ZeroExtension {
            space: self,
            values: self.extend_to_vertices(coeffs),
        }
    }
}

/// A `V_h` function extended by zero outside `Ω_h`.
pub struct ZeroExtension<'a> {
    space: &'a FemSpace,
    values: Vec<f64>,
}

impl ZeroExtension<'_> {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let mesh = self.space.mesh();
        for c in 0..mesh.n_cells() {
            if let Some(bary) = locate(mesh, c, x) {
                return mesh.cell(c).iter().enumerate().map(|(k, &v)| bary[k] * self.values[v]).sum();
            }
        }
        0.0
    }
}

fn locate(mesh: &Mesh, c: usize, x: [f64; 2]) -> Option<[f64; 3]> {
    const EPS: f64 = 1e-12;
    let v = mesh.cell(c);
    if mesh.dim() == 1 {
        let (a, b) = (mesh.point(v[0])[0], mesh.point(v[1])[0]);
        let s = (x[0] - a) / (b - a);
        return (-EPS..=1.0 + EPS).contains(&s).then_some([1.0 - s, s, 0.0]);
    }
    let g = barycentric_gradients(mesh, c);
    let p0 = mesh.point(v[0]);
    let (dx, dy) = (x[0] - p0[0], x[1] - p0[1]);
    let l1 = g[1][0] * dx + g[1][1] * dy;
    let l2 = g[2][0] * dx + g[2][1] * dy;
    let l0 = 1.0 - l1 - l2;
    (l0 >= -EPS && l1 >= -EPS && l2 >= -EPS).then_some([l0, l1, l2])
}

/// Prolongation from a coarse space to the space on its uniform refinement.
#[derive(Clone, Debug)]
pub struct NestedTransfer {
    /// `fine dofs x coarse dofs`
    pub prolongation: SparseOperator,
}

impl NestedTransfer {
    /// Refines the coarse mesh once and returns the fine space with the
    /// matching prolongation. On disk meshes the projected boundary midpoints
    /// make the pair only approximately nested; interior values still follow
    /// the midpoint rule.
    pub fn refine(coarse: &FemSpace) -> Result<(FemSpace, NestedTransfer)> {
        let (fine_mesh, parents) = coarse.mesh().refine_with_parents();
        let fine = FemSpace::new(fine_mesh)?;
        let mut t = TripletBuilder::new(fine.n_dofs(), coarse.n_dofs());
        for (fd, &fv) in fine.interior_dofs().iter().enumerate() {
            let [a, b] = parents[fv];
            let w = if a == b { 1.0 } else { 0.5 };
            for p in if a == b { vec![a] } else { vec![a, b] } {
                if let Some(cd) = coarse.dof_of_vertex(p) {
                    t.push(fd, cd, w);
                }
            }
        }
        Ok((fine, NestedTransfer { prolongation: t.build() }))
    }

    pub fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        self.prolongation.mul_vec(coarse)
    }

    /// Composition `self ∘ coarser`: prolongs two levels at once.
    pub fn compose(&self, coarser: &NestedTransfer) -> NestedTransfer {
        let p = &self.prolongation;
        let q = &coarser.prolongation;
        let mut t = TripletBuilder::new(p.n_rows(), q.n_cols());
        for (i, k, a) in p.triplets() {
            for (j, b) in q.row(k) {
                t.push(i, j, a * b);
            }
        }
        NestedTransfer { prolongation: t.build() }
    }
}

/// Inverse-inequality constants `max{h,τ} ‖∇u‖ ≤ κ ‖u‖` and `κ̃ ‖u‖ ≤ ‖∇u‖`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InverseConstants {
    pub kappa: f64,
    pub kappa_tilde: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub h: f64,
    pub tau: f64,
    pub iterations: [usize; 2],
}

/// Extreme eigenvalues of `K x = λ M x` by power and inverse-power iteration.
pub fn generalized_extreme_eigenvalues(
    stiffness: &SparseOperator,
    mass: &SparseOperator,
    rel_tol: f64,
    max_iter: usize,
) -> Result<((f64, usize), (f64, usize))> {
    let n = stiffness.n_rows();
    let m_solver = SpdSolver::new(mass)?;
    let k_solver = SpdSolver::new(stiffness)?;
    // deterministic start vector with every mode present
    let start: Vec<f64> = (0..n)
        .map(|i| {
            let s = ((i as f64 + 1.0) * 12.9898).sin() * 43758.5453;
            s - s.floor() - 0.5
        })
        .collect();
    let top = power_iteration(stiffness, mass, |y| m_solver.solve_in_place(y), &start, rel_tol, max_iter, false)?;
    let bottom = power_iteration(stiffness, mass, |y| k_solver.solve_in_place(y), &start, rel_tol, max_iter, true)?;
    Ok((top, bottom))
}

/// Power iteration for `B^{-1} A` where `A = K, B = M` (largest eigenvalue) or
/// `A = M, B = K` (reciprocal of the smallest). Returns the eigenvalue of the
/// pencil `(K, M)` and the iteration count.
fn power_iteration(
    k: &SparseOperator,
    m: &SparseOperator,
    solve: impl Fn(&mut [f64]),
    start: &[f64],
    rel_tol: f64,
    max_iter: usize,
    inverse: bool,
) -> Result<(f64, usize)> {
    let (a, b) = if inverse { (m, k) } else { (k, m) };
    let mut x = start.to_vec();
    let mut prev = f64::NAN;
    for it in 1..=max_iter {
        let bx = b.mul_vec(&x);
        let norm = dot(&x, &bx).sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        let ax = a.mul_vec(&x);
        let rq = dot(&x, &ax);
        // y = B^{-1} A x; the B^{-1}-norm of A x - rq B x bounds the eigenvalue error
        let mut y = ax.clone();
        solve(&mut y);
        let bx: Vec<f64> = bx.iter().map(|v| v / norm).collect();
        let res: f64 = ax
            .iter()
            .zip(&bx)
            .zip(y.iter().zip(&x))
            .map(|((axi, bxi), (yi, xi))| (axi - rq * bxi) * (yi - rq * xi))
            .sum::<f64>()
            .max(0.0)
            .sqrt();
        let converged = res <= rel_tol * rq || (prev.is_finite() && (rq - prev).abs() <= 1e-3 * rel_tol * rq);
        if converged {
            return Ok((if inverse { 1.0 / rq } else { rq }, it));
        }
        prev = rq;
        x = y;
    }
    Err(Error::Numerical(format!("power iteration did not converge in {max_iter} steps")))
}

pub fn estimate_inverse_constants(space: &FemSpace, grid: &TimeGrid) -> Result<InverseConstants> {
    let k = space.assemble_stiffness();
    let m = space.assemble_mass();
    let ((lambda_max, it_max), (lambda_min, it_min)) = generalized_extreme_eigenvalues(&k, &m, 1e-6, 10_000)?;
    let h = space.h();
    Ok(InverseConstants {
        kappa: h.max(grid.tau()) * lambda_max.sqrt(),
        kappa_tilde: lambda_min.sqrt(),
        lambda_max,
        lambda_min,
        h,
        tau: grid.tau(),
        iterations: [it_max, it_min],
    })
}
