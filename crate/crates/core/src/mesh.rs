//! Interval and triangle meshes of the computational domain, including the
//! inscribed-polygon approximation of a disk and nested uniform refinement.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The continuum domain a mesh approximates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    UnitInterval,
    UnitSquare,
    Disk { radius: f64, center: [f64; 2] },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::UnitInterval => 1,
            _ => 2,
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Domain::UnitInterval => 1.0,
            Domain::UnitSquare => 2f64.sqrt(),
            Domain::Disk { radius, .. } => 2.0 * radius,
        }
    }

    pub fn inradius(&self) -> f64 {
        match *self {
            Domain::UnitInterval | Domain::UnitSquare => 0.5,
            Domain::Disk { radius, .. } => radius,
        }
    }

    /// Distance from `x` to the boundary of the continuum domain, for points inside it.
    pub fn boundary_distance(&self, x: [f64; 2]) -> f64 {
        match *self {
            Domain::UnitInterval => x[0].min(1.0 - x[0]),
            Domain::UnitSquare => x[0].min(1.0 - x[0]).min(x[1]).min(1.0 - x[1]),
            Domain::Disk { radius, center } => {
                radius - ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt()
            }
        }
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        match *self {
            Domain::UnitInterval => (0.0..=1.0).contains(&x[0]),
            Domain::UnitSquare => (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1]),
            Domain::Disk { .. } => self.boundary_distance(x) >= 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: Domain,
    pub target_h: f64,
}

impl DomainSpec {
    pub fn new(domain: Domain, target_h: f64) -> Self {
        Self { domain, target_h }
    }

    pub fn validate(&self) -> Result<()> {
        if let Domain::Disk { radius, .. } = self.domain {
            if !(radius > 0.0) {
                return Err(Error::Config("disk radius must be positive".into()));
            }
        }
        // coarser than the inradius leaves no interior vertex to carry a dof
        if !(self.target_h > 0.0) || self.target_h > self.domain.inradius() {
            return Err(Error::Config(format!(
                "target_h = {} must lie in (0, inradius = {}]",
                self.target_h,
                self.domain.inradius()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    domain: Option<Domain>,
    points: Vec<[f64; 2]>,
    cells: Vec<usize>,
    boundary: BTreeSet<usize>,
    cell_diameters: Vec<f64>,
}

impl Mesh {
    pub fn new(
        dim: usize,
        domain: Option<Domain>,
        points: Vec<[f64; 2]>,
        cells: Vec<usize>,
        boundary: BTreeSet<usize>,
    ) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::Config(format!("unsupported mesh dimension {dim}")));
        }
        let npc = dim + 1;
        if cells.len() % npc != 0 || cells.iter().any(|&v| v >= points.len()) {
            return Err(Error::Shape("cell connectivity does not match the vertex list".into()));
        }
        if boundary.iter().any(|&v| v >= points.len()) {
            return Err(Error::Shape("boundary index out of range".into()));
        }
        let mut mesh = Self {
            dim,
            domain,
            points,
            cells,
            boundary,
            cell_diameters: Vec::new(),
        };
        for c in 0..mesh.n_cells() {
            if mesh.cell_measure(c) <= 0.0 {
                return Err(Error::Shape(format!("cell {c} is degenerate or inverted")));
            }
        }
        mesh.cell_diameters = (0..mesh.n_cells()).map(|c| mesh.diameter_of(c)).collect();
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Option<Domain> {
        self.domain
    }

    pub fn n_vertices(&self) -> usize {
        self.points.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn point(&self, v: usize) -> [f64; 2] {
        self.points[v]
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let npc = self.dim + 1;
        &self.cells[c * npc..(c + 1) * npc]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.dim + 1)
    }

    pub fn boundary_vertices(&self) -> &BTreeSet<usize> {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary.contains(&v)
    }

    pub fn cell_diameters(&self) -> &[f64] {
        &self.cell_diameters
    }

    /// Global mesh size: the largest cell diameter.
    pub fn h(&self) -> f64 {
        self.cell_diameters.iter().cloned().fold(0.0, f64::max)
    }

    pub fn quasi_uniformity(&self) -> f64 {
        let hmin = self.cell_diameters.iter().cloned().fold(f64::INFINITY, f64::min);
        self.h() / hmin
    }

    /// Signed measure (length or area) of cell `c`.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let v = self.cell(c);
        let p = |i: usize| self.points[v[i]];
        match self.dim {
            1 => p(1)[0] - p(0)[0],
            _ => {
                let (a, b, c) = (p(0), p(1), p(2));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            }
        }
    }

    fn diameter_of(&self, c: usize) -> f64 {
        let v = self.cell(c);
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                d = d.max(dist(self.points[v[i]], self.points[v[j]]));
            }
        }
        d
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_measure(c)).sum()
    }

    /// Sorted vertex pairs of all edges (2D only).
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut edges = BTreeSet::new();
        if self.dim == 2 {
            for c in self.cells() {
                for (a, b) in [(c[0], c[1]), (c[1], c[2]), (c[2], c[0])] {
                    edges.insert((a.min(b), a.max(b)));
                }
            }
        }
        edges
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        if self.dim == 1 {
            return counts;
        }
        for c in self.cells() {
            for (a, b) in [(c[0], c[1]), (c[1], c[2]), (c[2], c[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Edges that belong to exactly one triangle (2D only).
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self
            .edge_counts()
            .into_iter()
            .filter(|&(_, n)| n == 1)
            .map(|(e, _)| e)
            .collect();
        out.sort_unstable();
        out
    }

    /// Largest distance to the continuum boundary over boundary vertices and
    /// boundary edge midpoints. Zero for meshes that resolve their domain exactly.
    pub fn boundary_deviation(&self) -> f64 {
        let Some(domain) = self.domain else {
            return 0.0;
        };
        let mut dev: f64 = 0.0;
        for &v in &self.boundary {
            dev = dev.max(domain.boundary_distance(self.points[v]).abs());
        }
        for (a, b) in self.boundary_edges() {
            dev = dev.max(domain.boundary_distance(midpoint(self.points[a], self.points[b])).abs());
        }
        dev
    }

    /// Uniform red refinement: triangles split into four, intervals into two.
    /// Boundary midpoints of disk meshes are projected back onto the circle.
    pub fn refine(&self) -> Mesh {
        self.refine_with_parents().0
    }

    /// Like [`Mesh::refine`], also returning for every fine vertex the two
    /// coarse vertices whose midpoint it is (`[v, v]` for inherited vertices).
    pub fn refine_with_parents(&self) -> (Mesh, Vec<[usize; 2]>) {
        let mut points = self.points.clone();
        let mut parents: Vec<[usize; 2]> = (0..self.points.len()).map(|v| [v, v]).collect();
        let mut boundary = self.boundary.clone();
        let mut cells = Vec::with_capacity(self.cells.len() * if self.dim == 1 { 2 } else { 4 });
        if self.dim == 1 {
            for c in self.cells() {
                let m = points.len();
                points.push(midpoint(self.points[c[0]], self.points[c[1]]));
                parents.push([c[0], c[1]]);
                cells.extend_from_slice(&[c[0], m, m, c[1]]);
            }
        } else {
            let boundary_edges: BTreeSet<_> = self.boundary_edges().into_iter().collect();
            let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
            let mut mid = |a: usize, b: usize, points: &mut Vec<[f64; 2]>, parents: &mut Vec<[usize; 2]>| -> usize {
                let key = (a.min(b), a.max(b));
                *mids.entry(key).or_insert_with(|| {
                    let mut p = midpoint(points[a], points[b]);
                    if boundary_edges.contains(&key) {
                        if let Some(Domain::Disk { radius, center }) = self.domain {
                            p = project_to_circle(p, center, radius);
                        }
                        boundary.insert(points.len());
                    }
                    points.push(p);
                    parents.push([key.0, key.1]);
                    points.len() - 1
                })
            };
            for c in self.cells() {
                let (a, b, d) = (c[0], c[1], c[2]);
                let ab = mid(a, b, &mut points, &mut parents);
                let bd = mid(b, d, &mut points, &mut parents);
                let da = mid(d, a, &mut points, &mut parents);
                cells.extend_from_slice(&[a, ab, da, ab, b, bd, da, bd, d, ab, bd, da]);
            }
        }
        let mesh = Mesh::new(self.dim, self.domain, points, cells, boundary)
            .expect("refinement of a valid mesh is valid");
        (mesh, parents)
    }

    /// Plain-text export: `dim n_vertices n_cells`, vertex lines, cell lines,
    /// then one boundary vertex index per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.n_vertices(), self.n_cells())?;
        for p in &self.points {
            if self.dim == 1 {
                writeln!(w, "{:.17e}", p[0])?;
            } else {
                writeln!(w, "{:.17e} {:.17e}", p[0], p[1])?;
            }
        }
        for c in self.cells() {
            let line: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for v in &self.boundary {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Mesh> {
        let mut lines = r.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let mut next = || -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of mesh file".into()))??;
            Ok(line.split_whitespace().map(str::to_owned).collect())
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let idx = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        let header = next()?;
        if header.len() != 3 {
            return Err(Error::Parse("mesh header must be `dim n_vertices n_cells`".into()));
        }
        let (dim, nv, nc) = (idx(&header[0])?, idx(&header[1])?, idx(&header[2])?);
        let mut points = Vec::with_capacity(nv);
        for _ in 0..nv {
            let f = next()?;
            if f.len() != dim {
                return Err(Error::Parse(format!("vertex line needs {dim} coordinates")));
            }
            points.push([num(&f[0])?, if dim == 2 { num(&f[1])? } else { 0.0 }]);
        }
        let mut cells = Vec::with_capacity(nc * (dim + 1));
        for _ in 0..nc {
            let f = next()?;
            if f.len() != dim + 1 {
                return Err(Error::Parse(format!("cell line needs {} indices", dim + 1)));
            }
            for s in &f {
                cells.push(idx(s)?);
            }
        }
        let mut boundary = BTreeSet::new();
        while let Ok(f) = next() {
            for s in &f {
                boundary.insert(idx(s)?);
            }
        }
        Mesh::new(dim, None, points, cells, boundary)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn project_to_circle(p: [f64; 2], center: [f64; 2], radius: f64) -> [f64; 2] {
    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
    let r = (dx * dx + dy * dy).sqrt();
    [center[0] + radius * dx / r, center[1] + radius * dy / r]
}

pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;
    match spec.domain {
        Domain::UnitInterval => {
            let n = (1.0 / spec.target_h - 1e-9).ceil() as usize;
            Ok(interval_mesh(n))
        }
        Domain::UnitSquare => {
            let n = (1.0 / spec.target_h - 1e-9).ceil() as usize;
            Ok(square_mesh(n))
        }
        Domain::Disk { radius, center } => {
            let mut rings = (radius / spec.target_h).ceil() as usize;
            loop {
                let mesh = disk_mesh(radius, center, rings);
                if mesh.h() <= spec.target_h {
                    return Ok(mesh);
                }
                rings += 1;
            }
        }
    }
}

/// Uniform subdivision of `[0, 1]` into `n` cells.
pub fn interval_mesh(n: usize) -> Mesh {
    let points = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
    let cells = (0..n).flat_map(|i| [i, i + 1]).collect();
    let boundary = [0, n].into_iter().collect();
    Mesh::new(1, Some(Domain::UnitInterval), points, cells, boundary).expect("valid interval mesh")
}

/// `n x n` squares of the unit square, each split along its `(0,0)-(1,1)` diagonal.
pub fn square_mesh(n: usize) -> Mesh {
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut points = Vec::with_capacity((n + 1) * (n + 1));
    let mut boundary = BTreeSet::new();
    for j in 0..=n {
        for i in 0..=n {
            points.push([i as f64 / n as f64, j as f64 / n as f64]);
            if i == 0 || j == 0 || i == n || j == n {
                boundary.insert(id(i, j));
            }
        }
    }
    let mut cells = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            cells.extend_from_slice(&[a, b, c, a, c, d]);
        }
    }
    Mesh::new(2, Some(Domain::UnitSquare), points, cells, boundary).expect("valid square mesh")
}

/// Concentric-ring triangulation: ring `k` has `6k` vertices at radius `k R / rings`.
/// The outer ring is the inscribed polygon approximating the circle.
pub fn disk_mesh(radius: f64, center: [f64; 2], rings: usize) -> Mesh {
    let rings = rings.max(1);
    let mut points = vec![center];
    let mut ring_start = vec![0usize];
    for k in 1..=rings {
        ring_start.push(points.len());
        let r = radius * k as f64 / rings as f64;
        let n = 6 * k;
        for j in 0..n {
            let t = 2.0 * PI * j as f64 / n as f64;
            points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
        }
    }
    let mut cells = Vec::new();
    let mut push = |a: usize, b: usize, c: usize, points: &[[f64; 2]]| {
        let (pa, pb, pc) = (points[a], points[b], points[c]);
        let area = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
        if area > 0.0 {
            cells.extend_from_slice(&[a, b, c]);
        } else {
            cells.extend_from_slice(&[a, c, b]);
        }
    };
    for k in 1..=rings {
        let outer_n = 6 * k;
        let outer = |j: usize| ring_start[k] + j % outer_n;
        if k == 1 {
            for j in 0..outer_n {
                push(0, outer(j), outer(j + 1), &points);
            }
            continue;
        }
        let inner_n = 6 * (k - 1);
        let inner = |i: usize| ring_start[k - 1] + i % inner_n;
        let (mut i, mut j) = (0usize, 0usize);
        while i < inner_n || j < outer_n {
            let next_inner = (i + 1) as f64 / inner_n as f64;
            let next_outer = (j + 1) as f64 / outer_n as f64;
            if j < outer_n && (i == inner_n || next_outer <= next_inner) {
                push(inner(i), outer(j), outer(j + 1), &points);
                j += 1;
            } else {
                push(inner(i), outer(j), inner(i + 1), &points);
                i += 1;
            }
        }
    }
    let boundary = (ring_start[rings]..points.len()).collect();
    Mesh::new(2, Some(Domain::Disk { radius, center }), points, cells, boundary).expect("valid disk mesh")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_counts() {
        let m = build_mesh(&DomainSpec::new(Domain::UnitInterval, 0.25)).unwrap();
        assert_eq!((m.n_cells(), m.n_vertices(), m.boundary_vertices().len()), (4, 5, 2));
        assert!((m.h() - 0.25).abs() < 1e-15);
        let f = m.refine();
        assert_eq!(f.n_cells(), 8);
        assert!((f.h() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn square_counts_and_refinement() {
        let m = build_mesh(&DomainSpec::new(Domain::UnitSquare, 0.2)).unwrap();
        assert_eq!(m.n_cells(), 2 * 5 * 5);
        let m = square_mesh(2);
        assert_eq!((m.n_cells(), m.n_vertices()), (8, 9));
        let f = m.refine();
        assert_eq!(f.n_cells(), 32);
        assert_eq!(f.h(), m.h() / 2.0);
        for v in 0..m.n_vertices() {
            assert_eq!(m.point(v), f.point(v), "parent vertices keep their index");
        }
        assert_eq!(f.boundary_vertices().len(), 16);
        assert!((f.total_measure() - 1.0).abs() < 1e-14);
        // refining the 2x2 grid reproduces the 4x4 grid cell for cell (up to numbering)
        let g = square_mesh(4);
        let key = |m: &Mesh| {
            let mut cells: Vec<Vec<(i64, i64)>> = m
                .cells()
                .map(|c| {
                    let mut v: Vec<_> = c
                        .iter()
                        .map(|&i| ((m.point(i)[0] * 4.0).round() as i64, (m.point(i)[1] * 4.0).round() as i64))
                        .collect();
                    v.sort();
                    v
                })
                .collect();
            cells.sort();
            cells
        };
        assert_eq!(key(&f), key(&g));
    }

    #[test]
    fn coarse_target_is_rejected() {
        assert!(build_mesh(&DomainSpec::new(Domain::UnitSquare, 0.6)).is_err());
        let m = build_mesh(&DomainSpec::new(Domain::UnitSquare, 0.5)).unwrap();
        assert_eq!((m.n_cells(), m.n_vertices()), (8, 9));
        assert!(build_mesh(&DomainSpec::new(Domain::UnitInterval, -0.1)).is_err());
    }

    #[test]
    fn euler_characteristic() {
        for m in [square_mesh(3), disk_mesh(1.0, [0.0, 0.0], 4), disk_mesh(1.0, [0.5, 0.2], 3).refine()] {
            let (v, e, f) = (m.n_vertices() as i64, m.edges().len() as i64, m.n_cells() as i64);
            assert_eq!(v - e + f, 1);
            // conforming: every edge is shared by at most two cells
            assert!(m.edge_counts().values().all(|&n| n <= 2));
            assert_eq!(m.boundary_edges().len(), m.boundary_vertices().len());
        }
    }

    #[test]
    fn disk_boundary_sagitta_and_area() {
        let spec = DomainSpec::new(Domain::Disk { radius: 1.0, center: [0.0, 0.0] }, 0.1);
        let m = build_mesh(&spec).unwrap();
        assert!(m.h() <= 0.1);
        let n = m.boundary_vertices().len();
        let theta = 2.0 * PI / n as f64;
        let sagitta = 1.0 - (theta / 2.0).cos();
        assert!((m.boundary_deviation() - sagitta).abs() < 1e-12);
        assert!(m.boundary_deviation() <= m.h() * m.h() / 8.0 * 1.05);
        let polygon = 0.5 * n as f64 * theta.sin();
        assert!((m.total_measure() - polygon).abs() < 1e-12 * polygon);
        assert!(m.total_measure() < PI);
        assert!(m.quasi_uniformity() <= 4.0);
    }

    #[test]
    fn disk_refinement_keeps_quadratic_boundary_fit() {
        let mut m = disk_mesh(1.0, [0.0, 0.0], 3);
        let mut constants = Vec::new();
        for _ in 0..3 {
            constants.push(m.boundary_deviation() / (m.h() * m.h()));
            assert!(m.quasi_uniformity() <= 4.0, "q = {}", m.quasi_uniformity());
            m = m.refine();
        }
        let cmax = constants.iter().cloned().fold(0.0, f64::max);
        assert!(cmax < 0.2, "{constants:?}");
    }

    #[test]
    fn text_round_trip() {
        let m = disk_mesh(0.5, [0.5, 0.5], 2);
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let back = Mesh::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.points(), m.points());
        assert_eq!(back.boundary_vertices(), m.boundary_vertices());
        assert!(back.cells().eq(m.cells()));
        assert!(Mesh::read_text("2 3 1\n0 0\n1 0\n".as_bytes()).is_err());
    }
}
