#![allow(dead_code)]

use robust_lowrank::estimators::dilation;
use robust_lowrank::mat::{apply_spectral_fn, psi, sym_eigen, Mat};
use robust_lowrank::simgen::{standard_normal, SimRng};

pub fn gaussian_mat(rows: usize, cols: usize, rng: &mut SimRng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| standard_normal(rng))
}

pub fn op(a: &Mat) -> f64 {
    robust_lowrank::mat::matrix_norm(a, robust_lowrank::NormKind::Op)
}

/// Covariance-equation left side straight from its definition.
pub fn cov_lhs_direct(x: &Mat, tau: f64) -> f64 {
    let d = x.cols();
    let mut acc = Mat::zeros(d, d);
    for i in 0..x.rows() {
        let row = x.row(i);
        let sq: f64 = row.iter().map(|v| v * v).sum();
        if sq == 0.0 {
            continue;
        }
        let w = sq.min(tau * tau).powi(2) / sq / tau.powi(4);
        acc.add_outer(w, row, row);
    }
    op(&acc)
}

/// Truncated-moment equation left side through literal dilations.
pub fn tau_k_lhs_direct(xk: &[f64], ys: &[Mat], tau: f64) -> f64 {
    let (d1, d2) = ys[0].shape();
    let mut acc = Mat::zeros(d1 + d2, d1 + d2);
    for (x, y) in xk.iter().zip(ys) {
        let clipped = apply_spectral_fn(&dilation(&y.scaled(*x)), psi(tau)).unwrap();
        acc.axpy(1.0, &clipped.matmul(&clipped));
    }
    sym_eigen(&acc.symmetrized()).unwrap().max_eigenvalue() / (tau * tau)
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
