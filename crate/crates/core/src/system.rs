//! The discrete Lagrangian and its Euler-Lagrange saddle-point system.
//!
//! Unknowns are `x = (u, U, z, Z)` with `u, U` on levels `0..=N`, `z` on
//! `2..=N` and `Z` on `0..=N-2`. The flat layout is block-major
//! `[u | U | z | Z]`, time-major inside each block and in [`FemSpace`] dof
//! order inside each level, for a total of `4 N N_h` entries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::FemSpace;
use crate::linalg::{dot, SparseOperator, TripletBuilder};
use crate::timegrid::{backward_diff, backward_diff2, forward_diff2, SpaceTimeField, TimeGrid};

pub const LAYOUT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// forward state `u`
    State,
    /// backward state `U`
    Adjoint,
    /// multiplier `z`
    StateMultiplier,
    /// multiplier `Z`
    AdjointMultiplier,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::State, Block::Adjoint, Block::StateMultiplier, Block::AdjointMultiplier];
}

/// Offsets of the four blocks inside the flat vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_dofs: usize,
    pub steps: usize,
}

impl Layout {
    pub fn new(n_dofs: usize, steps: usize) -> Self {
        Self { n_dofs, steps }
    }

    pub fn len(&self) -> usize {
        4 * self.steps * self.n_dofs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn levels(&self, block: Block) -> (usize, usize) {
        let n = self.steps;
        match block {
            Block::State | Block::Adjoint => (0, n),
            Block::StateMultiplier => (2, n),
            Block::AdjointMultiplier => (0, n - 2),
        }
    }

    fn block_start(&self, block: Block) -> usize {
        let n = self.steps;
        let nh = self.n_dofs;
        match block {
            Block::State => 0,
            Block::Adjoint => (n + 1) * nh,
            Block::StateMultiplier => 2 * (n + 1) * nh,
            Block::AdjointMultiplier => (3 * n + 1) * nh,
        }
    }

    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let (a, b) = self.levels(block);
        let s = self.block_start(block);
        s..s + (b - a + 1) * self.n_dofs
    }

    /// Offset of level `n` of `block`.
    pub fn offset(&self, block: Block, n: usize) -> usize {
        let (a, b) = self.levels(block);
        assert!((a..=b).contains(&n), "level {n} outside {a}..={b} for {block:?}");
        self.block_start(block) + (n - a) * self.n_dofs
    }
}

/// A flat `(u, U, z, Z)` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    layout: Layout,
    data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            data: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_flat(layout: Layout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::Shape(format!("state vector of length {} for layout of {}", data.len(), layout.len())));
        }
        Ok(Self { layout, data })
    }

    pub fn from_fields(u: &SpaceTimeField, cap_u: &SpaceTimeField, z: &SpaceTimeField, cap_z: &SpaceTimeField) -> Result<Self> {
        let layout = Layout::new(u.n_dofs(), u.last());
        let mut x = Self::zeros(layout);
        for (block, f) in Block::ALL.into_iter().zip([u, cap_u, z, cap_z]) {
            let (a, b) = layout.levels(block);
            if f.first() != a || f.last() != b || f.n_dofs() != layout.n_dofs {
                return Err(Error::Shape(format!(
                    "{block:?} field on levels {}..={} with {} dofs, expected {a}..={b} with {}",
                    f.first(),
                    f.last(),
                    f.n_dofs(),
                    layout.n_dofs
                )));
            }
            x.data[layout.block_range(block)].copy_from_slice(f.as_flat());
        }
        Ok(x)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn field(&self, block: Block) -> SpaceTimeField {
        let (a, b) = self.layout.levels(block);
        SpaceTimeField::from_flat(self.layout.n_dofs, a, b, self.data[self.layout.block_range(block)].to_vec())
            .expect("layout ranges are consistent")
    }

    pub fn u(&self) -> SpaceTimeField {
        self.field(Block::State)
    }

    pub fn cap_u(&self) -> SpaceTimeField {
        self.field(Block::Adjoint)
    }

    pub fn z(&self) -> SpaceTimeField {
        self.field(Block::StateMultiplier)
    }

    pub fn cap_z(&self) -> SpaceTimeField {
        self.field(Block::AdjointMultiplier)
    }

    pub fn level(&self, block: Block, n: usize) -> &[f64] {
        let o = self.layout.offset(block, n);
        &self.data[o..o + self.layout.n_dofs]
    }

    pub fn level_mut(&mut self, block: Block, n: usize) -> &mut [f64] {
        let o = self.layout.offset(block, n);
        &mut self.data[o..o + self.layout.n_dofs]
    }

    /// Little-endian binary export: magic, layout version, `N_h`, `N`, values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"WCSV")?;
        w.write_all(&LAYOUT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layout.n_dofs as u64).to_le_bytes())?;
        w.write_all(&(self.layout.steps as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < 24 || &buf[..4] != b"WCSV" {
            return Err(Error::Parse("not a state vector file".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != LAYOUT_VERSION {
            return Err(Error::Parse(format!("unsupported layout version {version}")));
        }
        let n_dofs = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
        let steps = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
        let layout = Layout::new(n_dofs, steps);
        let body = &buf[24..];
        if body.len() != 8 * layout.len() {
            return Err(Error::Parse(format!("expected {} values, found {} bytes", layout.len(), body.len())));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::from_flat(layout, data)
    }

    /// Text export: a header line `layout_version N_h N`, then one value per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", LAYOUT_VERSION, self.layout.n_dofs, self.layout.steps)?;
        for v in &self.data {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty state vector file".into()))??;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        if h.len() != 3 || h[0] != LAYOUT_VERSION as usize {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let mut data = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            data.push(line.trim().parse().map_err(|_| Error::Parse(format!("bad value `{line}`")))?);
        }
        Self::from_flat(Layout::new(h[1], h[2]), data)
    }
}

/// Initial data in `V_h`: `g0` through its Ritz projection, `g1` through its
/// L2 projection.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
}

impl ProblemData {
    pub fn zero(space: &FemSpace) -> Self {
        Self {
            g0: vec![0.0; space.n_dofs()],
            g1: vec![0.0; space.n_dofs()],
        }
    }

    /// Projects analytic data. `g0` must vanish on the boundary; this is
    /// checked at the boundary vertices and edge midpoints.
    pub fn project(
        space: &FemSpace,
        g0: impl Fn([f64; 2]) -> f64,
        grad_g0: impl Fn([f64; 2]) -> [f64; 2],
        g1: impl Fn([f64; 2]) -> f64,
    ) -> Result<Self> {
        let mesh = space.mesh();
        let scale = mesh.points().iter().map(|&p| g0(p).abs()).fold(1.0, f64::max);
        let mut samples: Vec<[f64; 2]> = mesh.boundary_vertices().iter().map(|&v| mesh.point(v)).collect();
        for (a, b) in mesh.boundary_edges() {
            let (p, q) = (mesh.point(a), mesh.point(b));
            let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
            // on curved boundaries the true boundary point is what matters
            let mid = match mesh.domain() {
                Some(crate::mesh::Domain::Disk { radius, center }) => {
                    let (dx, dy) = (mid[0] - center[0], mid[1] - center[1]);
                    let r = (dx * dx + dy * dy).sqrt();
                    [center[0] + dx * radius / r, center[1] + dy * radius / r]
                }
                _ => mid,
            };
            samples.push(mid);
        }
        if let Some(p) = samples.iter().find(|&&p| g0(p).abs() > 1e-10 * scale) {
            return Err(Error::Config(format!("initial displacement does not vanish on the boundary at {p:?}")));
        }
        Ok(Self {
            g0: space.h1_projection(grad_g0)?,
            g1: space.l2_projection(g1)?,
        })
    }
}

/// Named initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    Zero,
    /// `amplitude · sin(k₁πx) sin(k₂πy)` (the `y` factor is dropped in 1D).
    SinProduct {
        #[serde(default = "unit_modes")]
        modes: [u32; 2],
        #[serde(default = "unit_amplitude")]
        amplitude: f64,
    },
    /// `amplitude · (1 - |x - c|²/R²)²` on a disk.
    RadialBump {
        #[serde(default = "unit_amplitude")]
        amplitude: f64,
    },
    /// Values at every mesh vertex.
    Nodal { values: Vec<f64> },
}

fn unit_modes() -> [u32; 2] {
    [1, 1]
}

fn unit_amplitude() -> f64 {
    1.0
}

impl InitialData {
    pub fn is_zero(&self) -> bool {
        match self {
            InitialData::Zero => true,
            InitialData::SinProduct { amplitude, .. } | InitialData::RadialBump { amplitude } => *amplitude == 0.0,
            InitialData::Nodal { values } => values.iter().all(|&v| v == 0.0),
        }
    }

    /// Value and gradient at `x`.
    pub fn eval(&self, mesh: &crate::mesh::Mesh, x: [f64; 2]) -> Result<(f64, [f64; 2])> {
        use std::f64::consts::PI;
        match self {
            InitialData::Zero => Ok((0.0, [0.0, 0.0])),
            InitialData::SinProduct { modes, amplitude } => {
                let (kx, ky) = (modes[0] as f64 * PI, modes[1] as f64 * PI);
                let (sx, cx) = (kx * x[0]).sin_cos();
                if mesh.dim() == 1 {
                    return Ok((amplitude * sx, [amplitude * kx * cx, 0.0]));
                }
                let (sy, cy) = (ky * x[1]).sin_cos();
                Ok((amplitude * sx * sy, [amplitude * kx * cx * sy, amplitude * ky * sx * cy]))
            }
            InitialData::RadialBump { amplitude } => match mesh.domain() {
                Some(crate::mesh::Domain::Disk { radius, center }) => {
                    let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
                    let q = 1.0 - (dx * dx + dy * dy) / (radius * radius);
                    let g = -4.0 * amplitude * q / (radius * radius);
                    Ok((amplitude * q * q, [g * dx, g * dy]))
                }
                _ => Err(Error::Config("radial_bump data needs a disk domain".into())),
            },
            InitialData::Nodal { .. } => Err(Error::Config("nodal data has no analytic form".into())),
        }
    }
}

impl ProblemData {
    pub fn from_spec(space: &FemSpace, g0: &InitialData, g1: &InitialData) -> Result<Self> {
        let mesh = space.mesh();
        let nodal = |d: &InitialData| -> Result<Option<Vec<f64>>> {
            match d {
                InitialData::Nodal { values } => {
                    if values.len() != mesh.n_vertices() {
                        return Err(Error::Config(format!(
                            "nodal data has {} values for {} vertices",
                            values.len(),
                            mesh.n_vertices()
                        )));
                    }
                    Ok(Some(space.restrict_to_dofs(values)))
                }
                _ => Ok(None),
            }
        };
        if let InitialData::Nodal { values } = g0 {
            if let Some(v) = mesh.boundary_vertices().iter().find(|&&v| values.get(v).is_some_and(|x| *x != 0.0)) {
                return Err(Error::Config(format!("initial displacement is nonzero at boundary vertex {v}")));
            }
        }
        let (n0, n1) = (nodal(g0)?, nodal(g1)?);
        // validate analytic data once so the closures below cannot fail
        for d in [g0, g1] {
            if !matches!(d, InitialData::Nodal { .. }) {
                d.eval(mesh, mesh.point(0))?;
            }
        }
        let ev = |d: &InitialData, x: [f64; 2]| d.eval(mesh, x).map(|v| v.0).unwrap_or(0.0);
        let gr = |d: &InitialData, x: [f64; 2]| d.eval(mesh, x).map(|v| v.1).unwrap_or([0.0, 0.0]);
        let mut data = match (&n0, &n1) {
            (Some(_), Some(_)) => Self::zero(space),
            (Some(_), None) => Self::project(space, |_| 0.0, |_| [0.0, 0.0], |x| ev(g1, x))?,
            (None, Some(_)) => Self::project(space, |x| ev(g0, x), |x| gr(g0, x), |_| 0.0)?,
            (None, None) => Self::project(space, |x| ev(g0, x), |x| gr(g0, x), |x| ev(g1, x))?,
        };
        if let Some(v) = n0 {
            data.g0 = v;
        }
        if let Some(v) = n1 {
            data.g1 = v;
        }
        Ok(data)
    }
}

/// Scalings of the initial-condition term and of the `h^2` stabilizer.
/// Both are 1 for the method itself; other values serve diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub initial: f64,
    pub stabilization: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Self {
            initial: 1.0,
            stabilization: 1.0,
        }
    }
}

/// Mesh, time grid and the three spatial operators of one discrete problem.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub space: FemSpace,
    pub grid: TimeGrid,
    pub mass: SparseOperator,
    pub stiffness: SparseOperator,
    pub chi_mass: SparseOperator,
    pub chi_h: Vec<f64>,
    pub h: f64,
}

impl Discretization {
    pub fn new(space: FemSpace, grid: TimeGrid, chi_h: Vec<f64>) -> Result<Self> {
        if grid.steps() < TimeGrid::MIN_STEPS {
            return Err(Error::Config("need at least 4 time steps".into()));
        }
        let chi_mass = space.assemble_weighted_mass(&chi_h)?;
        Ok(Self {
            mass: space.assemble_mass(),
            stiffness: space.assemble_stiffness(),
            h: space.h(),
            chi_mass,
            chi_h,
            space,
            grid,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn tau(&self) -> f64 {
        self.grid.tau()
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.n_dofs(), self.steps())
    }

    fn m(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass.bilinear(a, b)
    }

    fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        self.stiffness.bilinear(a, b)
    }

    fn check(&self, f: &SpaceTimeField, first: usize, last: usize, name: &str) -> Result<()> {
        if f.n_dofs() != self.n_dofs() || f.first() != first || f.last() != last {
            return Err(Error::Shape(format!(
                "{name} lives on levels {}..={} with {} dofs, expected {first}..={last} with {}",
                f.first(),
                f.last(),
                f.n_dofs(),
                self.n_dofs()
            )));
        }
        Ok(())
    }

    /// `τ Σ_{n=2}^N (∂²u^n, z^n) + a(u^n, z^n)`
    pub fn eval_g(&self, u: &SpaceTimeField, z: &SpaceTimeField) -> Result<f64> {
        let n_steps = self.steps();
        self.check(u, 0, n_steps, "u")?;
        self.check(z, 2, n_steps, "z")?;
        let mut s = 0.0;
        for n in 2..=n_steps {
            let zn = z.level(n)?;
            s += self.m(&backward_diff2(&self.grid, u, n)?, zn) + self.k(u.level(n)?, zn);
        }
        Ok(self.tau() * s)
    }

    /// `τ Σ_{n=0}^{N-2} (Z^n, ∂̃²U^n) + a(Z^n, U^n)`
    pub fn eval_gstar(&self, cap_z: &SpaceTimeField, cap_u: &SpaceTimeField) -> Result<f64> {
        let n_steps = self.steps();
        self.check(cap_u, 0, n_steps, "U")?;
        self.check(cap_z, 0, n_steps - 2, "Z")?;
        let mut s = 0.0;
        for n in 0..=n_steps - 2 {
            let zn = cap_z.level(n)?;
            s += self.m(zn, &forward_diff2(&self.grid, cap_u, n)?) + self.k(zn, cap_u.level(n)?);
        }
        Ok(self.tau() * s)
    }

    /// `τ Σ_{n=2}^N (χ_h U^n, z^n)`
    pub fn eval_coupling(&self, cap_u: &SpaceTimeField, z: &SpaceTimeField) -> Result<f64> {
        let n_steps = self.steps();
        self.check(cap_u, 0, n_steps, "U")?;
        self.check(z, 2, n_steps, "z")?;
        let mut s = 0.0;
        for n in 2..=n_steps {
            s += self.chi_mass.bilinear(cap_u.level(n)?, z.level(n)?);
        }
        Ok(self.tau() * s)
    }

    /// `½[‖∇u^N‖² + ‖∂u^N‖² + ‖∇(u⁰-g₀)‖² + ‖∂u¹-g₁‖²]`
    pub fn eval_r(&self, u: &SpaceTimeField, data: &ProblemData) -> Result<f64> {
        let n_steps = self.steps();
        self.check(u, 0, n_steps, "u")?;
        let un = u.level(n_steps)?;
        let dun = backward_diff(&self.grid, u, n_steps)?;
        let e0: Vec<f64> = u.level(0)?.iter().zip(&data.g0).map(|(a, b)| a - b).collect();
        let e1: Vec<f64> = backward_diff(&self.grid, u, 1)?.iter().zip(&data.g1).map(|(a, b)| a - b).collect();
        Ok(0.5 * (self.k(un, un) + self.m(&dun, &dun) + self.k(&e0, &e0) + self.m(&e1, &e1)))
    }

    /// The `h²`-scaled stabilizer in `U`.
    pub fn eval_j1(&self, cap_u: &SpaceTimeField) -> Result<f64> {
        let n_steps = self.steps();
        self.check(cap_u, 0, n_steps, "U")?;
        let h2 = self.h * self.h;
        let un = cap_u.level(n_steps)?;
        let dn = backward_diff(&self.grid, cap_u, n_steps)?;
        let d1 = backward_diff(&self.grid, cap_u, 1)?;
        let mut sum = 0.0;
        for n in 1..=n_steps {
            let d = backward_diff(&self.grid, cap_u, n)?;
            sum += self.k(&d, &d);
        }
        Ok(0.5 * h2 * (self.k(un, un) + self.k(&dn, &dn) + self.k(&d1, &d1) + self.tau() * sum))
    }

    /// The discrete Lagrangian.
    pub fn eval_j(&self, x: &StateVector, data: &ProblemData, scales: Scales) -> Result<f64> {
        let (u, cap_u, z, cap_z) = (x.u(), x.cap_u(), x.z(), x.cap_z());
        Ok(self.eval_g(&u, &z)? - self.eval_coupling(&cap_u, &z)?
            + self.eval_gstar(&cap_z, &cap_u)?
            + scales.initial * self.eval_r(&u, data)?
            + scales.stabilization * self.eval_j1(&cap_u)?)
    }

    /// Assembles `A` and `b` with `𝒜(x; y) = yᵀ A x` and `rhs(y) = yᵀ b`.
    /// Test functions `(v, V, w, W)` share the layout of `(u, U, z, Z)`.
    pub fn assemble_saddle(&self, data: &ProblemData, scales: Scales) -> Result<SaddleSystem> {
        let nh = self.n_dofs();
        if data.g0.len() != nh || data.g1.len() != nh {
            return Err(Error::Shape("initial data do not match the space".into()));
        }
        let layout = self.layout();
        let n_steps = self.steps();
        let tau = self.tau();
        let h2 = self.h * self.h;
        let (m, k, mc) = (&self.mass, &self.stiffness, &self.chi_mass);
        let wave = m.scaled(1.0 / tau).add_scaled(tau, k);
        let per_level = m.nnz().max(k.nnz());
        let mut t = TripletBuilder::with_capacity(layout.len(), layout.len(), 40 * n_steps * per_level);
        let mut put = |rb: Block, rn: usize, cb: Block, cn: usize, c: f64, op: &SparseOperator| {
            t.push_block(layout.offset(rb, rn), layout.offset(cb, cn), c, op);
        };
        use Block::*;
        let si = scales.initial;
        let ss = scales.stabilization * h2;
        // 𝒢 stencil: level n pairs with (n, n-1, n-2) of the second difference
        for n in 2..=n_steps {
            // (v, z) and its transpose (w, u)
            put(State, n, StateMultiplier, n, 1.0, &wave);
            put(State, n - 1, StateMultiplier, n, -2.0 / tau, m);
            put(State, n - 2, StateMultiplier, n, 1.0 / tau, m);
            put(StateMultiplier, n, State, n, 1.0, &wave);
            put(StateMultiplier, n, State, n - 1, -2.0 / tau, m);
            put(StateMultiplier, n, State, n - 2, 1.0 / tau, m);
            // control coupling (V, z) and (w, U)
            put(Adjoint, n, StateMultiplier, n, -tau, mc);
            put(StateMultiplier, n, Adjoint, n, -tau, mc);
        }
        // 𝒢* stencil: level n pairs with (n, n+1, n+2)
        for n in 0..=n_steps - 2 {
            put(Adjoint, n, AdjointMultiplier, n, 1.0, &wave);
            put(Adjoint, n + 1, AdjointMultiplier, n, -2.0 / tau, m);
            put(Adjoint, n + 2, AdjointMultiplier, n, 1.0 / tau, m);
            put(AdjointMultiplier, n, Adjoint, n, 1.0, &wave);
            put(AdjointMultiplier, n, Adjoint, n + 1, -2.0 / tau, m);
            put(AdjointMultiplier, n, Adjoint, n + 2, 1.0 / tau, m);
        }
        // initial and final conditions on u
        if si != 0.0 {
            put(State, 0, State, 0, si, k);
            put(State, n_steps, State, n_steps, si, k);
            for top in [1, n_steps] {
                let c = si / (tau * tau);
                put(State, top, State, top, c, m);
                put(State, top, State, top - 1, -c, m);
                put(State, top - 1, State, top, -c, m);
                put(State, top - 1, State, top - 1, c, m);
            }
        }
        // stabilizer on U
        if ss != 0.0 {
            put(Adjoint, n_steps, Adjoint, n_steps, ss, k);
            let mut diff_pair = |top: usize, c: f64| {
                put(Adjoint, top, Adjoint, top, c, k);
                put(Adjoint, top, Adjoint, top - 1, -c, k);
                put(Adjoint, top - 1, Adjoint, top, -c, k);
                put(Adjoint, top - 1, Adjoint, top - 1, c, k);
            };
            diff_pair(n_steps, ss / (tau * tau));
            diff_pair(1, ss / (tau * tau));
            for n in 1..=n_steps {
                diff_pair(n, ss / tau);
            }
        }
        let matrix = t.build();

        let mut b = vec![0.0; layout.len()];
        let kg0 = k.mul_vec(&data.g0);
        let mg1 = m.mul_vec(&data.g1);
        let o0 = layout.offset(State, 0);
        let o1 = layout.offset(State, 1);
        for i in 0..nh {
            b[o0 + i] = si * (kg0[i] - mg1[i] / tau);
            b[o1 + i] = si * mg1[i] / tau;
        }
        Ok(SaddleSystem {
            matrix,
            rhs: b,
            meta: SystemMeta {
                layout_version: LAYOUT_VERSION,
                h: self.h,
                tau,
                steps: n_steps,
                t_final: self.grid.t_final(),
                n_dofs: nh,
                total_dofs: layout.len(),
                scales,
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemMeta {
    pub layout_version: u32,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub t_final: f64,
    pub n_dofs: usize,
    pub total_dofs: usize,
    pub scales: Scales,
}

/// `A x = b` for the Euler-Lagrange equations.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub matrix: SparseOperator,
    pub rhs: Vec<f64>,
    pub meta: SystemMeta,
}

impl SaddleSystem {
    pub fn layout(&self) -> Layout {
        Layout::new(self.meta.n_dofs, self.meta.steps)
    }

    /// The sub-block with test rows `rows` and trial columns `cols`.
    pub fn block(&self, rows: Block, cols: Block) -> SparseOperator {
        let l = self.layout();
        let r: Vec<usize> = l.block_range(rows).collect();
        let c: Vec<usize> = l.block_range(cols).collect();
        self.matrix.submatrix(&r, &c)
    }

    /// `𝒜(x; y)`
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matrix.bilinear(y, x)
    }

    /// `D𝒥(x)[y] = yᵀ A x - yᵀ b`
    pub fn directional_derivative(&self, x: &[f64], y: &[f64]) -> f64 {
        self.form(x, y) - dot(y, &self.rhs)
    }

    /// Writes the matrix in coordinate form to `matrix` and the metadata
    /// as JSON to `sidecar`.
    pub fn export<W1: Write, W2: Write>(&self, matrix: W1, sidecar: W2) -> Result<()> {
        self.matrix.write_coordinate(matrix)?;
        serde_json::to_writer_pretty(sidecar, &self.meta)?;
        Ok(())
    }

    pub fn write_rhs<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.rhs.len())?;
        for v in &self.rhs {
            writeln!(w, "{v:e}")?;
        }
        Ok(())
    }
}

/// Dense singular value check of the trivial kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub const KERNEL_CHECK_MAX_DOFS: usize = 2000;

pub fn kernel_check(sys: &SaddleSystem) -> Result<KernelReport> {
    let n = sys.matrix.n_rows();
    if n > KERNEL_CHECK_MAX_DOFS {
        return Err(Error::Config(format!(
            "dense kernel check is limited to {KERNEL_CHECK_MAX_DOFS} unknowns, system has {n}"
        )));
    }
    let sv = sys.matrix.to_dense().singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    let ratio = if sigma_max > 0.0 { sigma_min / sigma_max } else { 0.0 };
    let threshold = 1e-10;
    Ok(KernelReport {
        sigma_min,
        sigma_max,
        ratio,
        threshold,
        pass: ratio > threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::interval_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(chi: f64) -> Discretization {
        let space = FemSpace::new(interval_mesh(4)).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let n = space.mesh().n_vertices();
        Discretization::new(space, grid, vec![chi; n]).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, nh: usize, first: usize, last: usize) -> SpaceTimeField {
        let data = (0..nh * (last - first + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        SpaceTimeField::from_flat(nh, first, last, data).unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = Layout::new(3, 4);
        assert_eq!(l.len(), 48);
        assert_eq!(l.offset(Block::Adjoint, 0), 15);
        assert_eq!(l.offset(Block::StateMultiplier, 2), 30);
        assert_eq!(l.offset(Block::AdjointMultiplier, 0), 39);
        assert_eq!(l.block_range(Block::AdjointMultiplier).end, 48);
    }

    #[test]
    fn g_with_level_constant_u() {
        let d = tiny(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
        let u = SpaceTimeField::from_levels(3, 0, vec![c.clone(); 5]).unwrap();
        let z = random_field(&mut rng, 3, 2, 4);
        let expect: f64 = (2..=4).map(|n| d.stiffness.bilinear(&c, z.level(n).unwrap())).sum::<f64>() * d.tau();
        assert!((d.eval_g(&u, &z).unwrap() - expect).abs() < 1e-13);
        assert_eq!(d.eval_g(&SpaceTimeField::zeros(3, 0, 4), &z).unwrap(), 0.0);
        assert!(d.eval_g(&z, &u).is_err());
    }

    #[test]
    fn r_of_hat_initial_displacement() {
        let d = tiny(1.0);
        let data = ProblemData {
            g0: vec![0.0, 1.0, 0.0],
            g1: vec![0.0; 3],
        };
        let r = d.eval_r(&SpaceTimeField::zeros(3, 0, 4), &data).unwrap();
        assert!((r - 0.5 * 2.0 / 0.25).abs() < 1e-12);
    }

    #[test]
    fn j1_of_time_constant_u() {
        let d = tiny(1.0);
        let c = vec![0.3, -0.2, 0.7];
        let u = SpaceTimeField::from_levels(3, 0, vec![c.clone(); 5]).unwrap();
        let expect = 0.5 * d.h * d.h * d.stiffness.quadratic(&c);
        assert!((d.eval_j1(&u).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn saddle_is_symmetric_and_zero_data_gives_zero_rhs() {
        let d = tiny(0.7);
        let sys = d.assemble_saddle(&ProblemData::zero(&d.space), Scales::default()).unwrap();
        assert_eq!(sys.matrix.n_rows(), 48);
        assert!(sys.matrix.symmetry_defect() <= 1e-12 * sys.matrix.max_abs());
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chi_scaling_changes_only_coupling_blocks() {
        let a = tiny(0.4);
        let b = tiny(0.8);
        let data = ProblemData::zero(&a.space);
        let sa = a.assemble_saddle(&data, Scales::default()).unwrap();
        let sb = b.assemble_saddle(&data, Scales::default()).unwrap();
        for rb in Block::ALL {
            for cb in Block::ALL {
                let diff = sa.block(rb, cb).max_abs_diff(&sb.block(rb, cb));
                let coupling = matches!(
                    (rb, cb),
                    (Block::Adjoint, Block::StateMultiplier) | (Block::StateMultiplier, Block::Adjoint)
                );
                if coupling {
                    assert!(diff > 0.0);
                    assert!(sb.block(rb, cb).max_abs_diff(&sa.block(rb, cb).scaled(2.0)) < 1e-13);
                } else {
                    assert_eq!(diff, 0.0, "{rb:?} {cb:?}");
                }
            }
        }
    }

    #[test]
    fn state_vector_round_trips() {
        let layout = Layout::new(3, 4);
        let x = StateVector::from_flat(layout, (0..48).map(|i| i as f64 * 0.1 - 1.7).collect()).unwrap();
        let mut bin = Vec::new();
        x.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 24 + 48 * 8);
        assert_eq!(StateVector::read_binary(&bin[..]).unwrap(), x);
        let mut txt = Vec::new();
        x.write_text(&mut txt).unwrap();
        assert_eq!(StateVector::read_text(&txt[..]).unwrap(), x);
        let y = StateVector::from_fields(&x.u(), &x.cap_u(), &x.z(), &x.cap_z()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn boundary_incompatible_data_is_rejected() {
        let space = FemSpace::new(crate::mesh::square_mesh(4)).unwrap();
        let res = ProblemData::project(&space, |x| x[0] + 1.0, |_| [1.0, 0.0], |_| 0.0);
        assert!(matches!(res, Err(Error::Config(_))));
        let pi = std::f64::consts::PI;
        let ok = ProblemData::project(
            &space,
            |x| (pi * x[0]).sin() * (pi * x[1]).sin(),
            |x| [pi * (pi * x[0]).cos() * (pi * x[1]).sin(), pi * (pi * x[0]).sin() * (pi * x[1]).cos()],
            |_| 0.0,
        );
        assert!(ok.is_ok());
    }
}
