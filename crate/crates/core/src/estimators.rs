//! Second-moment and cross-moment estimators feeding the solvers.
//!
//! Every sample average is accumulated in a canonical order (samples sorted
//! by their bit patterns) so the result does not depend on how the caller
//! ordered the samples. Samples of size at least [`PAIRWISE_MIN`] are
//! summed blockwise with a pairwise reduction of the block sums.

use std::cmp::Ordering;

use crate::calibrate::ClippedGram;
use crate::error::{Error, Result};
use crate::mat::{apply_spectral_fn, psi, svd, sym_eigen, Mat, Svd};

/// Sample size from which pairwise accumulation is used.
pub const PAIRWISE_MIN: usize = 10_000;
const BLOCK: usize = 256;

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Permutation sorting samples by their contents. Identical samples are
/// interchangeable, so the order of ties does not matter.
pub(crate) fn canonical_order(n: usize, cmp: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| cmp(i, j));
    order
}

/// Sums per-sample terms in the given order into a `rows x cols` matrix.
pub(crate) fn accumulate(
    order: &[usize],
    rows: usize,
    cols: usize,
    add_term: impl Fn(&mut Mat, usize),
) -> Mat {
    if order.len() < PAIRWISE_MIN {
        let mut acc = Mat::zeros(rows, cols);
        for &i in order {
            add_term(&mut acc, i);
        }
        return acc;
    }
    let mut partials: Vec<Mat> = order
        .chunks(BLOCK)
        .map(|chunk| {
            let mut acc = Mat::zeros(rows, cols);
            for &i in chunk {
                add_term(&mut acc, i);
            }
            acc
        })
        .collect();
    while partials.len() > 1 {
        partials = partials
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => a + b,
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
    }
    partials.pop().expect("nonempty sample")
}

/// `(1/n) sum_i x_i x_i^T` over the rows of `x`.
fn second_moment(x: &Mat) -> Result<Mat> {
    if x.rows() == 0 {
        return Err(Error::EmptySample);
    }
    let order = canonical_order(x.rows(), |i, j| cmp_rows(x.row(i), x.row(j)));
    let d = x.cols();
    let mut acc = accumulate(&order, d, d, |m, i| m.add_sym_outer_upper(1.0, x.row(i)));
    acc.fill_lower_from_upper();
    Ok(acc.scaled(1.0 / x.rows() as f64))
}

/// Bias-corrected second moment of quantized covariates:
/// `(1/n) sum_i x_i x_i^T - (eta1^2 / 4) I`.
///
/// The correction removes the second moment of the triangular-dither
/// quantization error. The result may be indefinite; see [`psd_floor`].
pub fn sigma_xx_tilde(xq: &Mat, eta1: f64) -> Result<Mat> {
    let mut s = second_moment(xq)?;
    let correction = 0.25 * eta1 * eta1;
    for i in 0..s.rows() {
        s[(i, i)] -= correction;
    }
    Ok(s)
}

/// Cross moment `(1/n) sum_i x_i y_i^T`. No correction is needed because
/// the two dithers are independent.
pub fn sigma_xy_tilde(xq: &Mat, yq: &Mat) -> Result<Mat> {
    if xq.rows() != yq.rows() {
        return Err(Error::SampleCountMismatch {
            left: xq.rows(),
            right: yq.rows(),
        });
    }
    let n = xq.rows();
    let order = canonical_order(n, |i, j| {
        cmp_rows(xq.row(i), xq.row(j)).then_with(|| cmp_rows(yq.row(i), yq.row(j)))
    });
    let acc = accumulate(&order, xq.cols(), yq.cols(), |m, i| {
        m.add_outer(1.0, xq.row(i), yq.row(i))
    });
    Ok(acc.scaled(1.0 / n as f64))
}

/// Sample second moment `(1/n) sum_i x_i x_i^T` of raw covariates.
pub fn sample_cov(x: &Mat) -> Result<Mat> {
    second_moment(x)
}

/// Hermitian dilation `[[0, B], [B^T, 0]]`.
pub fn dilation(b: &Mat) -> Mat {
    let (d1, d2) = b.shape();
    let mut out = Mat::zeros(d1 + d2, d1 + d2);
    out.set_block(0, d1, b);
    out.set_block(d1, 0, &b.transpose());
    out
}

fn check_cross_inputs(xk: &[f64], ys: &[Mat]) -> Result<(usize, usize)> {
    if xk.len() != ys.len() {
        return Err(Error::SampleCountMismatch {
            left: xk.len(),
            right: ys.len(),
        });
    }
    let first = ys.first().ok_or(Error::EmptySample)?;
    if let Some(bad) = ys.iter().find(|y| y.shape() != first.shape()) {
        return Err(Error::ShapeMismatch(format!(
            "response matrices must share a shape: {:?} vs {:?}",
            first.shape(),
            bad.shape()
        )));
    }
    Ok(first.shape())
}

fn cross_order(xk: &[f64], ys: &[Mat]) -> Vec<usize> {
    canonical_order(xk.len(), |i, j| {
        xk[i]
            .total_cmp(&xk[j])
            .then_with(|| cmp_rows(ys[i].as_slice(), ys[j].as_slice()))
    })
}

/// Spectrally truncated cross moment: the top-right `d1 x d2` block of
/// `(1/n) sum_i psi_tau(F(x_i Y_i))`, with `psi_tau` clipping eigenvalues to
/// `[-tau, tau]`.
///
/// This evaluates one symmetric eigendecomposition of the full dilation per
/// sample. [`ResponseSpectra::cross_moment`] computes the same quantity from
/// the SVD of each response and is what the experiment pipeline uses.
pub fn minsker_cross_moment(xk: &[f64], ys: &[Mat], tau_k: f64) -> Result<Mat> {
    if !(tau_k > 0.0) {
        return Err(Error::NonPositiveTau(tau_k));
    }
    let (d1, d2) = check_cross_inputs(xk, ys)?;
    let order = cross_order(xk, ys);
    let mut acc = Mat::zeros(d1 + d2, d1 + d2);
    for &i in &order {
        if xk[i] == 0.0 {
            continue;
        }
        let f = dilation(&ys[i].scaled(xk[i]));
        acc.axpy(1.0, &apply_spectral_fn(&f, psi(tau_k))?);
    }
    Ok(acc.block(0, d1, d1, d2).scaled(1.0 / xk.len() as f64))
}

/// Clips the spectrum of a symmetric matrix from below at `floor`.
///
/// Returns the input untouched (and `false`) when its smallest eigenvalue is
/// already at least `floor`.
pub fn psd_floor(s: &Mat, floor: f64) -> Result<(Mat, bool)> {
    let eig = sym_eigen(s)?;
    if eig.min_eigenvalue() >= floor {
        return Ok((s.clone(), false));
    }
    Ok((eig.map_spectrum(|x| x.max(floor)), true))
}

/// Per-sample SVDs of the response matrices of a matrix-response sample.
///
/// The dilation `F(x Y)` of a scaled response has eigenvalues
/// `+/- |x| sigma_j(Y)` with eigenvectors `(u_j, +/- v_j) / sqrt(2)`, so
/// `psi_tau(F(x Y)) = F(U psi_tau(x Sigma) V^T)` and
/// `psi_tau(F(x Y))^2 = diag(U min(x^2 Sigma^2, tau^2) U^T, V min(x^2 Sigma^2, tau^2) V^T)`.
/// One SVD per response therefore serves every covariate and every level.
#[derive(Debug, Clone)]
pub struct ResponseSpectra {
    ys: Vec<Mat>,
    svds: Vec<Svd>,
    d1: usize,
    d2: usize,
}

impl ResponseSpectra {
    pub fn new(ys: &[Mat]) -> Result<Self> {
        let first = ys.first().ok_or(Error::EmptySample)?;
        let (d1, d2) = first.shape();
        check_cross_inputs(&vec![0.0; ys.len()], ys)?;
        Ok(ResponseSpectra {
            ys: ys.to_vec(),
            svds: ys.iter().map(svd).collect(),
            d1,
            d2,
        })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    pub fn responses(&self) -> &[Mat] {
        &self.ys
    }

    fn check_covariate(&self, xk: &[f64]) -> Result<()> {
        if xk.len() != self.ys.len() {
            return Err(Error::SampleCountMismatch {
                left: xk.len(),
                right: self.ys.len(),
            });
        }
        Ok(())
    }

    /// Same value as [`minsker_cross_moment`] for these responses.
    pub fn cross_moment(&self, xk: &[f64], tau_k: f64) -> Result<Mat> {
        if !(tau_k > 0.0) {
            return Err(Error::NonPositiveTau(tau_k));
        }
        self.check_covariate(xk)?;
        let order = cross_order(xk, &self.ys);
        let clip = psi(tau_k);
        let acc = accumulate(&order, self.d1, self.d2, |m, i| {
            let svd = &self.svds[i];
            m.axpy(1.0, &svd.map_singular_values(|s| clip(xk[i] * s)));
        });
        Ok(acc.scaled(1.0 / xk.len() as f64))
    }

    /// Plain average `(1/n) sum_i x_i Y_i`.
    pub fn plain_cross_moment(&self, xk: &[f64]) -> Result<Mat> {
        self.check_covariate(xk)?;
        let order = cross_order(xk, &self.ys);
        let acc = accumulate(&order, self.d1, self.d2, |m, i| m.axpy(xk[i], &self.ys[i]));
        Ok(acc.scaled(1.0 / xk.len() as f64))
    }

    /// The two diagonal blocks of `sum_i psi_tau(F(x_i Y_i))^2`, as clipped
    /// Gram accumulators over the left and right singular vectors.
    pub(crate) fn clipped_grams(&self, xk: &[f64]) -> Result<(ClippedGram, ClippedGram)> {
        self.check_covariate(xk)?;
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &i in &cross_order(xk, &self.ys) {
            let svd = &self.svds[i];
            for (j, &s) in svd.singular_values.iter().enumerate() {
                let level = (xk[i] * s).powi(2);
                if level > 0.0 {
                    left.push((level, svd.u.col(j)));
                    right.push((level, svd.v.col(j)));
                }
            }
        }
        Ok((
            ClippedGram::new(self.d1, left),
            ClippedGram::new(self.d2, right),
        ))
    }

    /// Largest `|x_i| * ||Y_i||_op`.
    pub(crate) fn max_scaled_norm(&self, xk: &[f64]) -> f64 {
        xk.iter()
            .zip(&self.svds)
            .map(|(x, s)| x.abs() * s.singular_values.first().copied().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }
}
