//! Data-driven robustification levels.
//!
//! Both calibration equations have the form `||M(tau)||_op = rhs` where
//! `M(tau) = sum_j min(a_j / T(tau), 1) u_j u_j^T` is a clipped Gram sum and
//! `T` is increasing in `tau`. Every weight is nonincreasing in `tau`, so the
//! left-hand side is nonincreasing and continuous and the root is found by
//! bisection on `log(tau)`.
//!
//! * covariance levels: `a_i = ||X_i||^4`, `u_i = X_i / ||X_i||`, `T = tau^4`,
//!   `rhs = log(2d) + log(n)`;
//! * cross-moment levels: `a_ij = x_i^2 sigma_j(Y_i)^2` with `u` running over
//!   the left and right singular vectors of `Y_i`, `T = tau^2`,
//!   `rhs = 4 log(d1 + d2) + 4 log(n)`. This is
//!   `||tau^-2 sum_i psi_tau(F(x_i Y_i))^2||_op`, the operator norm of a
//!   block-diagonal matrix.

use crate::error::{Error, Result};
use crate::estimators::ResponseSpectra;
use crate::mat::{sym_eigen, Mat};

/// Relative residual tolerance `|lhs - rhs| <= RTOL * rhs`.
pub const RTOL: f64 = 1e-6;
/// Bisection step limit.
pub const MAX_STEPS: usize = 200;
/// Bracket extension limit (doublings of the upper end).
pub const MAX_DOUBLINGS: usize = 60;
/// Lower bracket end relative to the largest sample norm.
const LO_FACTOR: f64 = 1e-8;
/// Bisection stops once `log(hi / lo)` drops below this.
const LOG_WIDTH_TOL: f64 = 1e-13;
/// Items between stored prefix sums in [`ClippedGram`].
const CHECKPOINT_EVERY: usize = 64;

/// Outcome of a calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibResult {
    pub tau: f64,
    /// `lhs(tau) - rhs`.
    pub residual: f64,
    pub iterations: usize,
    /// `false` when the equation has no root in the bracket; `tau` is then the
    /// nearest bracket end.
    pub root_found: bool,
}

/// `sum_j min(a_j / t, 1) u_j u_j^T` for arbitrary `t > 0`, with prefix sums
/// stored every [`CHECKPOINT_EVERY`] items (sorted by level) so that one
/// evaluation touches at most that many rank-one terms.
#[derive(Debug, Clone)]
pub struct ClippedGram {
    dim: usize,
    levels: Vec<f64>,
    vectors: Vec<f64>,
    /// `sum_{j < c K} a_j u_j u_j^T` for checkpoint `c` (upper triangles).
    weighted: Vec<Mat>,
    /// `sum_{j < c K} u_j u_j^T` for checkpoint `c` (upper triangles).
    plain: Vec<Mat>,
    plain_total: Mat,
}

impl ClippedGram {
    /// Items are `(level, vector)` pairs; nonpositive levels are dropped.
    pub fn new(dim: usize, mut items: Vec<(f64, Vec<f64>)>) -> Self {
        items.retain(|(a, _)| *a > 0.0);
        items.sort_by(|x, y| x.0.total_cmp(&y.0));
        let levels: Vec<f64> = items.iter().map(|(a, _)| *a).collect();
        let vectors: Vec<f64> = items.iter().flat_map(|(_, u)| u.iter().copied()).collect();

        let mut weighted = vec![Mat::zeros(dim, dim)];
        let mut plain = vec![Mat::zeros(dim, dim)];
        let mut w_acc = Mat::zeros(dim, dim);
        let mut p_acc = Mat::zeros(dim, dim);
        for (j, &a) in levels.iter().enumerate() {
            let u = &vectors[j * dim..(j + 1) * dim];
            w_acc.add_sym_outer_upper(a, u);
            p_acc.add_sym_outer_upper(1.0, u);
            if (j + 1) % CHECKPOINT_EVERY == 0 {
                weighted.push(w_acc.clone());
                plain.push(p_acc.clone());
            }
        }
        ClippedGram {
            dim,
            levels,
            vectors,
            weighted,
            plain,
            plain_total: p_acc,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// The clipped Gram matrix at threshold `t`.
    pub fn matrix(&self, t: f64) -> Mat {
        let m = self.levels.partition_point(|&a| a <= t);
        let c = m / CHECKPOINT_EVERY;
        let mut w = self.weighted[c].clone();
        let mut p = self.plain[c].clone();
        for j in c * CHECKPOINT_EVERY..m {
            let u = &self.vectors[j * self.dim..(j + 1) * self.dim];
            w.add_sym_outer_upper(self.levels[j], u);
            p.add_sym_outer_upper(1.0, u);
        }
        let mut out = w.scaled(1.0 / t);
        out.axpy(1.0, &self.plain_total);
        out.axpy(-1.0, &p);
        out.fill_lower_from_upper();
        out
    }

    /// Largest eigenvalue of [`ClippedGram::matrix`] (it is PSD).
    pub fn op_norm(&self, t: f64) -> f64 {
        if self.levels.is_empty() {
            return 0.0;
        }
        sym_eigen(&self.matrix(t))
            .map(|e| e.max_eigenvalue().max(0.0))
            .expect("clipped Gram matrix is symmetric")
    }
}

/// Solves `lhs(tau) = rhs` for a nonincreasing continuous `lhs`.
fn solve_decreasing(lhs: impl Fn(f64) -> f64, rhs: f64, tau_lo: f64, tau_hi: f64) -> CalibResult {
    let f = |tau: f64| lhs(tau) - rhs;
    let f_lo = f(tau_lo);
    if f_lo <= 0.0 {
        return CalibResult {
            tau: tau_lo,
            residual: f_lo,
            iterations: 0,
            root_found: f_lo.abs() <= RTOL * rhs,
        };
    }
    let mut hi = tau_hi;
    let mut f_hi = f(hi);
    let mut doublings = 0;
    while f_hi > 0.0 {
        if doublings == MAX_DOUBLINGS {
            return CalibResult {
                tau: hi,
                residual: f_hi,
                iterations: 0,
                root_found: false,
            };
        }
        hi *= 2.0;
        f_hi = f(hi);
        doublings += 1;
    }
    if f_hi == 0.0 {
        return CalibResult {
            tau: hi,
            residual: 0.0,
            iterations: 0,
            root_found: true,
        };
    }

    let (mut lo, mut hi) = (tau_lo.ln(), hi.ln());
    let mut best = (tau_lo, f_lo);
    let mut iterations = 0;
    while iterations < MAX_STEPS && hi - lo > LOG_WIDTH_TOL {
        let mid = 0.5 * (lo + hi);
        let tau = mid.exp();
        let value = f(tau);
        iterations += 1;
        if value.abs() < best.1.abs() {
            best = (tau, value);
        }
        if value == 0.0 {
            break;
        }
        if value > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    CalibResult {
        tau: best.0,
        residual: best.1,
        iterations,
        root_found: best.1.abs() <= RTOL * rhs,
    }
}

/// The covariance-level equation for one set of sample rows.
#[derive(Debug, Clone)]
pub struct CovEquation {
    gram: ClippedGram,
    n: usize,
    d: usize,
    max_norm: f64,
}

impl CovEquation {
    pub fn new(x: &Mat) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::TooFewSamples(x.rows()));
        }
        let mut max_norm = 0.0_f64;
        let items = (0..x.rows())
            .filter_map(|i| {
                let row = x.row(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                max_norm = max_norm.max(norm);
                (norm > 0.0).then(|| (norm.powi(4), row.iter().map(|v| v / norm).collect()))
            })
            .collect();
        if !(max_norm > 0.0) {
            return Err(Error::DegenerateData);
        }
        Ok(CovEquation {
            gram: ClippedGram::new(x.cols(), items),
            n: x.rows(),
            d: x.cols(),
            max_norm,
        })
    }

    /// `||tau^-4 sum_i min(||X_i||^2, tau^2)^2 X_i X_i^T / ||X_i||^2||_op`.
    pub fn lhs(&self, tau: f64) -> f64 {
        self.gram.op_norm(tau.powi(4))
    }

    /// `log(2d) + log(n)`.
    pub fn default_rhs(&self) -> f64 {
        (2.0 * self.d as f64).ln() + (self.n as f64).ln()
    }

    pub fn solve(&self, rhs: f64) -> CalibResult {
        solve_decreasing(
            |t| self.lhs(t),
            rhs,
            LO_FACTOR * self.max_norm,
            self.max_norm,
        )
    }
}

/// Covariance-level shrinkage radius for the rows of `x`.
pub fn calibrate_tau_cov(x: &Mat) -> Result<CalibResult> {
    let eq = CovEquation::new(x)?;
    Ok(eq.solve(eq.default_rhs()))
}

/// The cross-moment truncation equation for one covariate coordinate.
#[derive(Debug, Clone)]
pub struct TauKEquation {
    left: ClippedGram,
    right: ClippedGram,
    n: usize,
    d1: usize,
    d2: usize,
    max_norm: f64,
}

impl TauKEquation {
    pub fn new(spectra: &ResponseSpectra, xk: &[f64]) -> Result<Self> {
        if xk.len() < 2 {
            return Err(Error::TooFewSamples(xk.len()));
        }
        let (left, right) = spectra.clipped_grams(xk)?;
        let max_norm = spectra.max_scaled_norm(xk);
        if !(max_norm > 0.0) {
            return Err(Error::DegenerateData);
        }
        let (d1, d2) = spectra.shape();
        Ok(TauKEquation {
            left,
            right,
            n: xk.len(),
            d1,
            d2,
            max_norm,
        })
    }

    /// `||tau^-2 sum_i psi_tau(F(x_i Y_i))^2||_op`.
    pub fn lhs(&self, tau: f64) -> f64 {
        let t = tau * tau;
        self.left.op_norm(t).max(self.right.op_norm(t))
    }

    /// `4 log(d1 + d2) + 4 log(n)`.
    pub fn default_rhs(&self) -> f64 {
        4.0 * ((self.d1 + self.d2) as f64).ln() + 4.0 * (self.n as f64).ln()
    }

    pub fn solve(&self, rhs: f64) -> CalibResult {
        solve_decreasing(
            |t| self.lhs(t),
            rhs,
            LO_FACTOR * self.max_norm,
            self.max_norm,
        )
    }
}

/// Truncation level for the cross moment of covariate `xk` with responses `ys`.
pub fn calibrate_tau_k(xk: &[f64], ys: &[Mat]) -> Result<CalibResult> {
    let spectra = ResponseSpectra::new(ys)?;
    calibrate_tau_k_with(&spectra, xk)
}

/// As [`calibrate_tau_k`], reusing precomputed response spectra.
pub fn calibrate_tau_k_with(spectra: &ResponseSpectra, xk: &[f64]) -> Result<CalibResult> {
    let eq = TauKEquation::new(spectra, xk)?;
    Ok(eq.solve(eq.default_rhs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_gram_matches_direct_sum() {
        let items: Vec<(f64, Vec<f64>)> = (0..150)
            .map(|j| {
                let a = ((j * 37) % 101) as f64 * 0.1;
                let u = vec![(j as f64).sin(), (j as f64 * 0.7).cos(), 0.3];
                (a, u)
            })
            .collect();
        let gram = ClippedGram::new(3, items.clone());
        for t in [0.05, 1.0, 3.3, 7.7, 20.0] {
            let mut direct = Mat::zeros(3, 3);
            for (a, u) in &items {
                if *a > 0.0 {
                    direct.add_outer((a / t).min(1.0), u, u);
                }
            }
            assert!((&gram.matrix(t) - &direct).max_abs() < 1e-10, "t = {t}");
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            calibrate_tau_cov(&Mat::zeros(1, 3)),
            Err(Error::TooFewSamples(1))
        ));
        assert!(matches!(
            calibrate_tau_cov(&Mat::zeros(4, 3)),
            Err(Error::DegenerateData)
        ));
        let ys = vec![Mat::zeros(2, 2); 3];
        assert!(matches!(
            calibrate_tau_k(&[1.0, 2.0, 3.0], &ys),
            Err(Error::DegenerateData)
        ));
        assert!(matches!(
            calibrate_tau_k(&[1.0], &ys[..1]),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn no_root_is_flagged() {
        // two orthogonal unit rows: lhs never exceeds 1 < log(4) + log(2)
        let x = Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let res = calibrate_tau_cov(&x).unwrap();
        assert!(!res.root_found);
        assert!((res.tau - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn scalar_dilation_closed_form() {
        // n = 1, x = 1, Y = [y]: lhs = min(y, tau)^2 / tau^2
        let y = 3.0;
        let spectra = ResponseSpectra::new(&[Mat::from_rows(&[[y]]).unwrap()]).unwrap();
        let (left, right) = spectra.clipped_grams(&[1.0]).unwrap();
        for tau in [1.0, 2.5, 3.0, 4.0, 9.0] {
            let expected = (y.min(tau) / tau).powi(2);
            let t = tau * tau;
            assert!((left.op_norm(t).max(right.op_norm(t)) - expected).abs() < 1e-12);
        }
    }
}
