//! Dense row-major matrices and the spectral kernels built on them.
//!
//! Eigen and singular value decompositions are delegated to `faer` and
//! then normalized: values are sorted in descending order and every vector
//! is sign-fixed so that its first nonzero component is positive. This makes
//! factorizations reproducible for golden tests.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative tolerance on `max|A - A^T|` accepted by [`sym_eigen`].
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Components below this magnitude are skipped by the sign convention.
const SIGN_EPS: f64 = 1e-12;

/// Dense real matrix stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    /// Builds a matrix from row-major data, rejecting empty shapes and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: k / cols,
                col: k % cols,
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != cols) {
            return Err(Error::ShapeMismatch(format!(
                "ragged rows: expected length {cols}, found {}",
                bad.as_ref().len()
            )));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Mat::from_vec(rows.len(), cols, data)
    }

    /// All-zero matrix. Panics on an empty shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix shape {rows}x{cols}");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Mat::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Mat::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Column vector (`len x 1`).
    pub fn column(v: &[f64]) -> Self {
        Mat::from_fn(v.len(), 1, |i, _| v[i])
    }

    /// Outer product `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Mat::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product `self * rhs`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matmul dimension mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Product `self^T * rhs` without forming the transpose.
    pub fn t_matmul(&self, rhs: &Mat) -> Mat {
        assert_eq!(self.rows, rhs.rows, "t_matmul dimension mismatch");
        let mut out = Mat::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let b = rhs.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &bv) in out_row.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// Frobenius inner product `<self, rhs> = tr(self^T rhs)`.
    pub fn inner(&self, rhs: &Mat) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "inner product shape mismatch");
        self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, a: f64) -> Mat {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Mat) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    /// Adds `a * u v^T` in place.
    pub fn add_outer(&mut self, a: f64, u: &[f64], v: &[f64]) {
        assert_eq!(
            (u.len(), v.len()),
            self.shape(),
            "outer product shape mismatch"
        );
        for (i, &ui) in u.iter().enumerate() {
            let s = a * ui;
            if s == 0.0 {
                continue;
            }
            for (x, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *x += s * vj;
            }
        }
    }

    /// Adds `a * u u^T` in place, touching only the upper triangle.
    /// Call [`Mat::fill_lower_from_upper`] once accumulation is finished.
    pub fn add_sym_outer_upper(&mut self, a: f64, u: &[f64]) {
        let n = self.cols;
        for (i, &ui) in u.iter().enumerate() {
            let s = a * ui;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[i * n + i..(i + 1) * n];
            for (x, &uj) in row.iter_mut().zip(&u[i..]) {
                *x += s * uj;
            }
        }
    }

    pub fn fill_lower_from_upper(&mut self) {
        let n = self.cols;
        for i in 0..n {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// `max |A_ij - A_ji|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// `(A + A^T) / 2`.
    pub fn symmetrized(&self) -> Mat {
        assert!(self.is_square(), "symmetrize needs a square matrix");
        Mat::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    /// Copy of the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "block out of range"
        );
        Mat::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Writes `src` into `self` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Mat) {
        assert!(
            r0 + src.rows <= self.rows && c0 + src.cols <= self.cols,
            "block out of range"
        );
        for i in 0..src.rows {
            let dst =
                &mut self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + src.cols];
            dst.copy_from_slice(src.row(i));
        }
    }

    /// Horizontal concatenation `[A_1, A_2, ...]`.
    pub fn hstack(blocks: &[Mat]) -> Result<Mat> {
        let first = blocks
            .first()
            .ok_or(Error::EmptyMatrix { rows: 0, cols: 0 })?;
        if let Some(b) = blocks.iter().find(|b| b.rows != first.rows) {
            return Err(Error::ShapeMismatch(format!(
                "hstack row counts {} and {}",
                first.rows, b.rows
            )));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Mat::zeros(first.rows, cols);
        let mut c0 = 0;
        for b in blocks {
            out.set_block(0, c0, b);
            c0 += b.cols;
        }
        Ok(out)
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        matrix_norm(self, kind)
    }

    pub fn frobenius(&self) -> f64 {
        self.inner(self).sqrt()
    }

    fn to_faer(&self) -> faer::Mat<f64> {
        faer::Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }

    fn from_faer(m: faer::MatRef<'_, f64>) -> Mat {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl std::ops::Add for &Mat {
    type Output = Mat;

    fn add(self, rhs: &Mat) -> Mat {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl std::ops::Sub for &Mat {
    type Output = Mat;

    fn sub(self, rhs: &Mat) -> Mat {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

/// Which matrix norm [`matrix_norm`] computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    /// Frobenius norm.
    Fro,
    /// Spectral norm, the largest singular value.
    Op,
    /// Nuclear norm, the sum of singular values.
    Nuclear,
    /// Largest absolute entry.
    Max,
}

pub fn matrix_norm(a: &Mat, kind: NormKind) -> f64 {
    match kind {
        NormKind::Fro => a.frobenius(),
        NormKind::Max => a.max_abs(),
        NormKind::Op => svd(a).singular_values.first().copied().unwrap_or(0.0),
        NormKind::Nuclear => svd(a).singular_values.iter().sum(),
    }
}

/// Eigendecomposition `A = V diag(eigenvalues) V^T` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the same order.
    pub eigenvectors: Mat,
}

impl SymEigen {
    /// `V diag(f(eigenvalues)) V^T`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Mat {
        let v = &self.eigenvectors;
        let n = v.rows();
        let mut out = Mat::zeros(n, n);
        let mut col = vec![0.0; n];
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let w = f(lambda);
            if w == 0.0 {
                continue;
            }
            for (i, c) in col.iter_mut().enumerate() {
                *c = v[(i, k)];
            }
            out.add_sym_outer_upper(w, &col);
        }
        out.fill_lower_from_upper();
        out
    }

    pub fn reconstruct(&self) -> Mat {
        self.map_spectrum(|x| x)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// Thin singular value decomposition `A = U diag(singular_values) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Left singular vectors, `rows x k` with `k = min(rows, cols)`.
    pub u: Mat,
    /// Singular values in descending order.
    pub singular_values: Vec<f64>,
    /// Right singular vectors, `cols x k`.
    pub v: Mat,
}

impl Svd {
    /// `U diag(f(singular_values)) V^T`.
    pub fn map_singular_values(&self, f: impl Fn(f64) -> f64) -> Mat {
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Mat::zeros(m, n);
        let mut left = vec![0.0; m];
        let mut right = vec![0.0; n];
        for (k, &s) in self.singular_values.iter().enumerate() {
            let w = f(s);
            if w == 0.0 {
                continue;
            }
            for (i, x) in left.iter_mut().enumerate() {
                *x = self.u[(i, k)];
            }
            for (j, x) in right.iter_mut().enumerate() {
                *x = self.v[(j, k)];
            }
            out.add_outer(w, &left, &right);
        }
        out
    }

    pub fn reconstruct(&self) -> Mat {
        self.map_singular_values(|s| s)
    }

    /// Number of singular values strictly above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Flips column `k` of `m` (and of `partner`, when given) so that the first
/// component of `m`'s column with magnitude above [`SIGN_EPS`] is positive.
fn fix_column_sign(m: &mut Mat, partner: Option<&mut Mat>, k: usize) {
    let first = (0..m.rows())
        .map(|i| m[(i, k)])
        .find(|x| x.abs() > SIGN_EPS);
    if first.is_some_and(|x| x < 0.0) {
        for i in 0..m.rows() {
            m[(i, k)] = -m[(i, k)];
        }
        if let Some(p) = partner {
            for i in 0..p.rows() {
                p[(i, k)] = -p[(i, k)];
            }
        }
    }
}

/// Reorders columns of `m` according to `order`.
fn permute_columns(m: &Mat, order: &[usize]) -> Mat {
    Mat::from_fn(m.rows(), order.len(), |i, j| m[(i, order[j])])
}

/// Symmetric eigendecomposition with descending eigenvalues.
///
/// The input is symmetrized first; asymmetry above
/// `SYMMETRY_TOL * max(1, max|A|)` is rejected.
pub fn sym_eigen(a: &Mat) -> Result<SymEigen> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let asymmetry = a.asymmetry();
    if asymmetry > SYMMETRY_TOL * a.max_abs().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    let eig = a
        .symmetrized()
        .to_faer()
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("eigensolver converges on finite input");
    let values = eig.S().column_vector();
    let mut order: Vec<usize> = (0..a.rows()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let mut eigenvectors = permute_columns(&Mat::from_faer(eig.U()), &order);
    for k in 0..a.rows() {
        fix_column_sign(&mut eigenvectors, None, k);
    }
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Thin SVD with descending singular values.
pub fn svd(a: &Mat) -> Svd {
    let dec = a
        .to_faer()
        .thin_svd()
        .expect("SVD converges on finite input");
    let values = dec.S().column_vector();
    let u = Mat::from_faer(dec.U());
    let v = Mat::from_faer(dec.V());
    let k = values.nrows();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let singular_values = order.iter().map(|&i| values[i].max(0.0)).collect();
    let mut u = permute_columns(&u, &order);
    let mut v = permute_columns(&v, &order);
    for j in 0..k {
        fix_column_sign(&mut u, Some(&mut v), j);
    }
    Svd {
        u,
        singular_values,
        v,
    }
}

/// `f(A) = V f(Lambda) V^T` for symmetric `A`.
pub fn apply_spectral_fn(a: &Mat, f: impl Fn(f64) -> f64) -> Result<Mat> {
    Ok(sym_eigen(a)?.map_spectrum(f))
}

/// Scalar clip `sign(x) * min(|x|, tau)`.
pub fn psi(tau: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| x.clamp(-tau, tau)
}

/// Singular value thresholding: the proximal map of `t * ||.||_*`.
pub fn svt(a: &Mat, t: f64) -> Mat {
    assert!(t >= 0.0, "threshold must be nonnegative, got {t}");
    if t == 0.0 {
        return a.clone();
    }
    svd(a).map_singular_values(|s| (s - t).max(0.0))
}
