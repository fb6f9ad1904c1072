//! Compressed sparse row operators and thin wrappers over the sparse
//! factorizations used throughout the crate.

use std::io::{BufRead, Write};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::lu::{factorize_symbolic_lu, NumericLu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut, Par};

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator; duplicates are summed on conversion.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Adds `scale * block` with its rows shifted by `row0` and columns by `col0`.
    pub fn push_block(&mut self, row0: usize, col0: usize, scale: f64, block: &SparseOperator) {
        if scale == 0.0 {
            return;
        }
        for i in 0..block.n_rows {
            for (j, v) in block.row(i) {
                self.push(row0 + i, col0 + j, scale * v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(mut self) -> SparseOperator {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseOperator {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseOperator {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        TripletBuilder::new(n_rows, n_cols).build()
    }

    pub fn identity(n: usize) -> Self {
        let mut t = TripletBuilder::new(n, n);
        (0..n).for_each(|i| t.push(i, i, 1.0));
        t.build()
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut t = TripletBuilder::new(rows.len(), n_cols);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                t.push(i, j, v);
            }
        }
        t.build()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `Y += c A X` for `k` column-major columns.
    pub fn mul_columns_add(&self, c: f64, x: &[f64], y: &mut [f64], k: usize) {
        let (m, n) = (self.n_rows, self.n_cols);
        assert!(x.len() == n * k && y.len() == m * k);
        for j in 0..k {
            let xj = &x[j * n..(j + 1) * n];
            let yj = &mut y[j * m..(j + 1) * m];
            for (i, yi) in yj.iter_mut().enumerate() {
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[p] * xj[self.col_idx[p]];
                }
                *yi += c * s;
            }
        }
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `y^T A x`
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        assert_eq!(y.len(), self.n_rows);
        assert_eq!(x.len(), self.n_cols);
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            total += yi * s;
        }
        total
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }

    pub fn transpose(&self) -> SparseOperator {
        let mut t = TripletBuilder::with_capacity(self.n_cols, self.n_rows, self.nnz());
        for (i, j, v) in self.triplets() {
            t.push(j, i, v);
        }
        t.build()
    }

    pub fn scaled(&self, c: f64) -> SparseOperator {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`
    pub fn add_scaled(&self, c: f64, other: &SparseOperator) -> SparseOperator {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut t = TripletBuilder::with_capacity(self.n_rows, self.n_cols, self.nnz() + other.nnz());
        for (i, j, v) in self.triplets() {
            t.push(i, j, v);
        }
        for (i, j, v) in other.triplets() {
            t.push(i, j, c * v);
        }
        t.build()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry of `|A - B|` over the union of both patterns.
    pub fn max_abs_diff(&self, other: &SparseOperator) -> f64 {
        self.add_scaled(-1.0, other).max_abs()
    }

    /// `max |A - A^T|`
    pub fn symmetry_defect(&self) -> f64 {
        self.max_abs_diff(&self.transpose())
    }

    /// Rows `rows` and columns `cols` of `self`, renumbered consecutively.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseOperator {
        let mut col_map = vec![usize::MAX; self.n_cols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut t = TripletBuilder::new(rows.len(), cols.len());
        for (ri, &r) in rows.iter().enumerate() {
            for (j, v) in self.row(r) {
                if col_map[j] != usize::MAX {
                    t.push(ri, col_map[j], v);
                }
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let triplets: Vec<_> = self.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        SparseColMat::try_new_from_triplets(self.n_rows, self.n_cols, &triplets)
            .map_err(|e| Error::LinearAlgebra(format!("sparse conversion: {e:?}")))
    }

    /// Coordinate text export, one `row col value` triple per line after a
    /// `n_rows n_cols nnz` header.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }

    pub fn read_coordinate<R: BufRead>(r: R) -> Result<SparseOperator> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty coordinate file".into()))??;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|e| Error::Parse(format!("{s}: {e}"))))
            .collect::<Result<_>>()?;
        if h.len() != 3 {
            return Err(Error::Parse("coordinate header must be `n_rows n_cols nnz`".into()));
        }
        let mut t = TripletBuilder::with_capacity(h[0], h[1], h[2]);
        for line in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            if f.len() != 3 {
                return Err(Error::Parse(format!("bad coordinate line `{line}`")));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s}: {e}")));
            let v = f[2].parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", f[2])))?;
            let (i, j) = (p(f[0])?, p(f[1])?);
            if i >= h[0] || j >= h[1] {
                return Err(Error::Parse(format!("entry ({i}, {j}) outside {}x{}", h[0], h[1])));
            }
            t.push(i, j, v);
        }
        Ok(t.build())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += c x`
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += c * xi);
}

pub(crate) fn parallelism() -> Par {
    let threads = std::env::var("WAVECONTROL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(1);
    if threads > 1 {
        Par::rayon(threads)
    } else {
        Par::Seq
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite operator.
pub struct SpdSolver {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
    n: usize,
}

impl SpdSolver {
    pub fn new(a: &SparseOperator) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::Shape("Cholesky needs a square operator".into()));
        }
        let m = a.to_faer()?;
        let llt = m
            .sp_cholesky(faer::Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Self { llt, n: a.n_rows() })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        use faer::linalg::solvers::Solve;
        assert_eq!(b.len(), self.n);
        let col = faer::ColMut::from_slice_mut(b);
        self.llt.solve_in_place(col.as_mat_mut());
    }

    /// Solves for `k` right-hand sides stored column-major in `b`.
    pub fn solve_columns_in_place(&self, b: &mut [f64], k: usize) {
        use faer::linalg::solvers::Solve;
        assert_eq!(b.len(), self.n * k);
        let mat = MatMut::from_column_major_slice_mut(b, self.n, k);
        self.llt.solve_in_place(mat);
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Sparse LU with partial (row) pivoting and a COLAMD fill-reducing column order.
pub struct LuSolver {
    symbolic: SymbolicLu<usize>,
    numeric: NumericLu<usize, f64>,
    n: usize,
    par: Par,
}

impl LuSolver {
    pub fn new(a: &SparseOperator) -> Result<Self> {
        let n = a.n_rows();
        if n != a.n_cols() {
            return Err(Error::Shape("LU needs a square operator".into()));
        }
        let par = parallelism();
        let m = a.to_faer()?;
        let symbolic = factorize_symbolic_lu(m.symbolic(), Default::default())
            .map_err(|e| Error::LinearAlgebra(format!("symbolic LU failed: {e:?}")))?;
        let mut numeric = NumericLu::new();
        let req = symbolic.factorize_numeric_lu_scratch::<f64>(par, Default::default());
        let mut mem = MemBuffer::try_new(req)
            .map_err(|_| Error::LinearAlgebra("out of memory for LU workspace".into()))?;
        symbolic
            .factorize_numeric_lu(&mut numeric, m.as_ref(), par, MemStack::new(&mut mem), Default::default())
            .map_err(|e| Error::LinearAlgebra(format!("numeric LU failed: {e:?}")))?;
        Ok(Self {
            symbolic,
            numeric,
            n,
            par,
        })
    }

    pub fn column_permutation(&self) -> Vec<usize> {
        let (fwd, _) = self.symbolic.col_perm().arrays();
        fwd.to_vec()
    }

    pub fn row_permutation(&self) -> Vec<usize> {
        let lu = faer::sparse::linalg::lu::LuRef::new_unchecked(&self.symbolic, &self.numeric);
        let (fwd, _) = lu.row_perm().arrays();
        fwd.to_vec()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        let lu = faer::sparse::linalg::lu::LuRef::new_unchecked(&self.symbolic, &self.numeric);
        let req = self.symbolic.solve_in_place_scratch::<f64>(1, self.par);
        let mut mem = MemBuffer::new(req);
        let rhs: MatMut<'_, f64> = faer::ColMut::from_slice_mut(&mut x).as_mat_mut();
        lu.solve_in_place_with_conj(Conj::No, rhs, self.par, MemStack::new(&mut mem));
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_sums_duplicates_and_sorts() {
        let mut t = TripletBuilder::new(2, 3);
        t.push(1, 2, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 2, 0.5);
        t.push(1, 0, 4.0);
        let a = t.build();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.col_idx(), &[1, 0, 2]);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 2.0]), vec![2.0, 7.0]);
        assert_eq!(a.transpose().get(2, 1), 1.5);
        assert_eq!(a.bilinear(&[1.0, 2.0], &[1.0, 1.0, 2.0]), 16.0);
    }

    #[test]
    fn coordinate_round_trip() {
        let a = SparseOperator::from_dense(&[vec![1.0, 0.0, -2.5], vec![0.0, 1e-30, 3.0]]);
        let mut buf = Vec::new();
        a.write_coordinate(&mut buf).unwrap();
        assert_eq!(SparseOperator::read_coordinate(buf.as_slice()).unwrap(), a);
        assert!(SparseOperator::read_coordinate("2 2 1\n5 0 1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn factorizations_solve() {
        let a = SparseOperator::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ]);
        let b = [1.0, 2.0, 3.0];
        let x = SpdSolver::new(&a).unwrap().solve(&b);
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) < 1e-14);
        // indefinite with a zero diagonal
        let s = SparseOperator::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let lu = LuSolver::new(&s).unwrap();
        assert_eq!(lu.solve(&[2.0, 3.0]), vec![3.0, 2.0]);
        assert_eq!(lu.column_permutation().len(), 2);
    }
}
