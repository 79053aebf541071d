//! Dense row-major matrices and the symmetric eigensolver behind PCA and
//! whitening.
//!
//! Everything here is `f64`. Conversion to `f32` happens only when values are
//! written to disk.

use std::fmt;

use crate::error::{shape_err, Error, Result};

/// Maximum number of cyclic Jacobi sweeps before giving up.
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigenvalues closer than this (relative to the largest) are reported as
/// degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// Row-major set of fixed-width vectors, one per row.
pub type EmbeddingMatrix = Matrix;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(shape_err(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "expected {} values for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(shape_err("no rows"));
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err(format!(
                    "row {i} has width {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Keep the first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Result<Matrix> {
        if n == 0 || n > self.cols {
            return Err(shape_err(format!(
                "cannot take {n} leading columns of a {}-column matrix",
                self.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, n, |r, c| self.get(r, c)))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        matmul(self, other)
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(shape_err(format!(
                "matvec: {}x{} matrix with vector of width {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.iter_rows().map(|row| dot(row, x)).collect())
    }

    /// `selfᵀ · x`
    pub fn t_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(shape_err(format!(
                "transposed matvec: {}x{} matrix with vector of width {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (row, &xr) in self.iter_rows().zip(x) {
            axpy(xr, row, &mut out);
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖_F`
    pub fn frobenius_distance(&self, other: &Matrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape_err(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Standard matrix product, accumulated in i-k-j order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err(format!(
            "matmul: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik != 0.0 {
                axpy(aik, b.row(k), out_row);
            }
        }
    }
    Ok(out)
}

/// `a · aᵀ`, exploiting symmetry.
pub fn gram(a: &Matrix) -> Matrix {
    let n = a.rows;
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(a.row(i), a.row(j));
            g.data[i * n + j] = v;
            g.data[j * n + i] = v;
        }
    }
    g
}

/// Subtract the column-wise mean from every row.
pub fn center_rows(points: &Matrix) -> (Vec<f64>, Matrix) {
    let m = points.rows as f64;
    let mut mean = vec![0.0; points.cols];
    for row in points.iter_rows() {
        axpy(1.0, row, &mut mean);
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut centered = points.clone();
    for r in 0..centered.rows {
        for (v, mu) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    (mean, centered)
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    /// Descending.
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector for `values[j]`.
    pub vectors: Matrix,
    pub sweeps: usize,
}

impl Eigen {
    /// Indices `i` where `values[i]` and `values[i + 1]` coincide up to
    /// [`DEGENERACY_TOL`], restricted to the first `leading` values.
    pub fn degenerate_pairs(&self, leading: usize) -> Vec<usize> {
        let scale = self.values.first().map_or(1.0, |v| v.abs().max(1.0));
        let upto = leading.min(self.values.len());
        (0..upto.saturating_sub(1))
            .filter(|&i| (self.values[i] - self.values[i + 1]).abs() <= DEGENERACY_TOL * scale)
            .collect()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenvalues come back in descending order (exact ties keep input column
/// order) and every eigenvector has its largest-magnitude component positive.
pub fn eigh(sym: &Matrix) -> Result<Eigen> {
    if !sym.is_square() {
        return Err(Error::Contract(format!(
            "eigh needs a square matrix, got {}x{}",
            sym.rows, sym.cols
        )));
    }
    let n = sym.rows;
    let max_abs = sym.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sym_tol = 1e-9 * max_abs.max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (sym.get(i, j) - sym.get(j, i)).abs() > sym_tol {
                return Err(Error::Contract(format!(
                    "eigh input not symmetric at ({i}, {j}): {} vs {}",
                    sym.get(i, j),
                    sym.get(j, i)
                )));
            }
        }
    }

    let mut a = sym.clone();
    // symmetrize exactly so rotations see a consistent matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    let frob = a.frobenius_norm();
    let mut sweeps = 0;
    let mut converged = frob == 0.0 || n == 1;
    while !converged {
        if sweeps >= MAX_JACOBI_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge after {sweeps} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum::<f64>()
            .sqrt();
        converged = off <= 1e-15 * frob;
    }

    let raw: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: exact ties keep column order
    order.sort_by(|&x, &y| raw[y].total_cmp(&raw[x]));

    let values = order.iter().map(|&i| raw[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        fix_sign(&mut col);
        for (r, val) in col.into_iter().enumerate() {
            vectors.set(r, dst, val);
        }
    }
    Ok(Eigen {
        values,
        vectors,
        sweeps,
    })
}

fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let n = a.rows;
    let apq = a.get(p, q);
    if apq.abs() < f64::MIN_POSITIVE {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    for k in 0..n {
        let akp = a.data[k * n + p];
        let akq = a.data[k * n + q];
        a.data[k * n + p] = c * akp - s * akq;
        a.data[k * n + q] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a.data[p * n + k];
        let aqk = a.data[q * n + k];
        a.data[p * n + k] = c * apk - s * aqk;
        a.data[q * n + k] = s * apk + c * aqk;
    }
    a.data[p * n + q] = 0.0;
    a.data[q * n + p] = 0.0;
    for k in 0..n {
        let vkp = v.data[k * n + p];
        let vkq = v.data[k * n + q];
        v.data[k * n + p] = c * vkp - s * vkq;
        v.data[k * n + q] = s * vkp + c * vkq;
    }
}

/// Make the largest-magnitude component positive (first one on exact ties).
pub fn fix_sign(col: &mut [f64]) {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|x| *x < 0.0) {
        col.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Thin SVD `E = V · diag(S) · Ut`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `r×r`, orthonormal columns.
    pub v: Matrix,
    /// Descending, non-negative, length `r`.
    pub s: Vec<f64>,
    /// `r×c`; rows belonging to numerically zero singular values are zero.
    pub ut: Matrix,
    /// Leading singular values that tie within [`DEGENERACY_TOL`].
    pub degenerate: Vec<usize>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut vs = self.v.clone();
        for r in 0..vs.rows {
            for (c, s) in self.s.iter().enumerate() {
                let x = vs.get(r, c) * s;
                vs.set(r, c, x);
            }
        }
        matmul(&vs, &self.ut).expect("svd factors are conformable")
    }
}

/// SVD of an `r×c` matrix through the eigendecomposition of its `r×r` Gram
/// matrix. Cheap when `r ≪ c`, which is the PCA case.
pub fn svd(e: &Matrix) -> Result<SvdResult> {
    let g = gram(e);
    let eig = eigh(&g)?;
    let s: Vec<f64> = eig.values.iter().map(|l| l.max(0.0).sqrt()).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let r = e.rows;
    let mut ut = Matrix::zeros(r, e.cols);
    for i in 0..r {
        if s[i] <= smax * 1e-12 || s[i] == 0.0 {
            continue;
        }
        let vi = eig.vectors.column(i);
        let proj = e.t_matvec(&vi)?;
        for (dst, p) in ut.row_mut(i).iter_mut().zip(proj) {
            *dst = p / s[i];
        }
    }
    let degenerate = eig.degenerate_pairs(r);
    Ok(SvdResult {
        v: eig.vectors,
        s,
        ut,
        degenerate,
    })
}
