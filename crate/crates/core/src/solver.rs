//! Nuclear-norm penalized least squares by accelerated proximal gradient.
//!
//! Both programs minimize a convex quadratic `f` plus `lambda` times a sum of
//! nuclear norms:
//!
//! * multi-task: `f(Theta) = <Theta, Sxx Theta> - 2 <Theta, Sxy>`;
//! * matrix response with blocks `Theta_1..Theta_s`:
//!   `f = sum_ij Sxx_ij <Theta_i, Theta_j> - 2 sum_k <Sxy_k, Theta_k>`.
//!
//! The gradient is `2 (S Theta - Sxy)` with Lipschitz constant `2 ||Sxx||_op`;
//! the proximal step is blockwise singular value thresholding. Iterates start
//! at zero. The accelerated variant restarts its momentum whenever an
//! extrapolated step would increase the objective, so the recorded objective
//! trace never increases. Steps are accepted on the sign of the objective
//! change computed as a difference of quadratics rather than of two rounded
//! objective values; without this the iterate stalls at roughly the square
//! root of machine precision.

use crate::error::{Error, Result};
use crate::mat::{svd, sym_eigen, Mat};

/// Number of iterations over which the relative objective decrease is measured.
pub const STOP_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOpts {
    /// Nuclear-norm weight.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the objective decreased by less than `tol * |objective|`
    /// over the last [`STOP_WINDOW`] iterations.
    pub tol: f64,
    pub acceleration: bool,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            lambda: 0.0,
            max_iters: 5000,
            tol: 1e-9,
            acceleration: true,
        }
    }
}

impl SolveOpts {
    pub fn with_lambda(lambda: f64) -> Self {
        SolveOpts {
            lambda,
            ..SolveOpts::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::BadSpec(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::BadSpec(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// One block for the multi-task program, `s` blocks for the matrix-response one.
    pub theta: Vec<Mat>,
    /// Objective after each iteration, starting with the value at the initial point.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set by callers that floored an indefinite second-moment estimate.
    pub psd_floor_applied: bool,
}

impl SolveResult {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("trace holds the initial objective")
    }
}

/// The quadratic part, in either block layout.
enum Quadratic<'a> {
    /// `Sxx` acts on the left of a single `d1 x d2` block.
    Left { sxx: &'a Mat, sxy: &'a Mat },
    /// `Sxx` mixes `s` blocks.
    Mixing { sxx: &'a Mat, sxy: &'a [Mat] },
}

impl Quadratic<'_> {
    fn sxy(&self) -> &[Mat] {
        match self {
            Quadratic::Left { sxy, .. } => std::slice::from_ref(*sxy),
            Quadratic::Mixing { sxy, .. } => sxy,
        }
    }

    fn sxx(&self) -> &Mat {
        match self {
            Quadratic::Left { sxx, .. } | Quadratic::Mixing { sxx, .. } => sxx,
        }
    }

    fn check(&self, theta: &[Mat]) -> Result<()> {
        let sxy = self.sxy();
        if !self.sxx().is_square() {
            return Err(Error::ShapeMismatch(format!(
                "Sxx is {:?}, expected square",
                self.sxx().shape()
            )));
        }
        let shape = sxy[0].shape();
        if sxy.iter().any(|b| b.shape() != shape) {
            return Err(Error::ShapeMismatch(
                "cross-moment blocks must share a shape".into(),
            ));
        }
        match self {
            Quadratic::Left { sxx, sxy } if sxx.rows() != sxy.rows() => {
                return Err(Error::ShapeMismatch(format!(
                    "Sxx is {:?} but Sxy is {:?}",
                    sxx.shape(),
                    sxy.shape()
                )));
            }
            Quadratic::Mixing { sxx, sxy } if sxx.rows() != sxy.len() => {
                return Err(Error::ShapeMismatch(format!(
                    "Sxx is {:?} but there are {} blocks",
                    sxx.shape(),
                    sxy.len()
                )));
            }
            _ => {}
        }
        if theta.len() != sxy.len() || theta.iter().any(|t| t.shape() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "parameter must be {} block(s) of shape {:?}",
                sxy.len(),
                shape
            )));
        }
        Ok(())
    }

    /// `S Theta` blockwise.
    fn apply(&self, theta: &[Mat]) -> Vec<Mat> {
        match self {
            Quadratic::Left { sxx, .. } => vec![sxx.matmul(&theta[0])],
            Quadratic::Mixing { sxx, .. } => (0..theta.len())
                .map(|k| {
                    let mut acc = Mat::zeros(theta[k].rows(), theta[k].cols());
                    for (j, t) in theta.iter().enumerate() {
                        let w = sxx[(k, j)];
                        if w != 0.0 {
                            acc.axpy(w, t);
                        }
                    }
                    acc
                })
                .collect(),
        }
    }

    fn value_with(&self, theta: &[Mat], s_theta: &[Mat]) -> f64 {
        theta
            .iter()
            .zip(s_theta)
            .zip(self.sxy())
            .map(|((t, st), c)| t.inner(st) - 2.0 * t.inner(c))
            .sum()
    }

    fn value(&self, theta: &[Mat]) -> f64 {
        self.value_with(theta, &self.apply(theta))
    }

    /// `f(to) - f(from)` as `<to - from, S (to + from) - 2 Sxy>`, which keeps
    /// its accuracy when the two values agree to many digits.
    fn change(&self, from: &[Mat], to: &[Mat]) -> f64 {
        let sum: Vec<Mat> = from.iter().zip(to).map(|(a, b)| a + b).collect();
        self.apply(&sum)
            .iter()
            .zip(self.sxy())
            .zip(from.iter().zip(to))
            .map(|((st, c), (a, b))| {
                let d = b - a;
                d.inner(st) - 2.0 * d.inner(c)
            })
            .sum()
    }

    fn gradient(&self, theta: &[Mat]) -> Vec<Mat> {
        self.apply(theta)
            .into_iter()
            .zip(self.sxy())
            .map(|(mut st, c)| {
                st.axpy(-1.0, c);
                st.scaled(2.0)
            })
            .collect()
    }
}

fn nuclear(blocks: &[Mat]) -> f64 {
    blocks
        .iter()
        .map(|b| svd(b).singular_values.iter().sum::<f64>())
        .sum()
}

/// Blockwise SVT; also returns the nuclear norm of the result.
fn prox(blocks: &[Mat], t: f64) -> (Vec<Mat>, f64) {
    let mut nuc = 0.0;
    let out = blocks
        .iter()
        .map(|b| {
            let dec = svd(b);
            nuc += dec
                .singular_values
                .iter()
                .map(|s| (s - t).max(0.0))
                .sum::<f64>();
            dec.map_singular_values(|s| (s - t).max(0.0))
        })
        .collect();
    (out, nuc)
}

fn check_psd(sxx: &Mat) -> Result<f64> {
    let eig = sym_eigen(sxx)?;
    let scale = eig.max_eigenvalue().abs().max(1.0);
    if eig.min_eigenvalue() < -1e-9 * scale {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min_eigenvalue(),
        });
    }
    Ok(eig.max_eigenvalue().max(0.0))
}

fn minimize(q: &Quadratic<'_>, init: Vec<Mat>, opts: &SolveOpts) -> Result<SolveResult> {
    opts.validate()?;
    q.check(&init)?;
    let top = check_psd(q.sxx())?;
    // with Sxx = 0 the smooth part is linear and any step is valid
    let lipschitz = if top > 0.0 { 2.0 * top } else { 1.0 };
    let step = 1.0 / lipschitz;
    let threshold = step * opts.lambda;

    let prox_step = |from: &[Mat]| {
        let grad = q.gradient(from);
        let moved: Vec<Mat> = from
            .iter()
            .zip(&grad)
            .map(|(x, g)| {
                let mut m = x.clone();
                m.axpy(-step, g);
                m
            })
            .collect();
        prox(&moved, threshold)
    };
    // objective change from x to z given the nuclear norms of both
    let change = |x: &[Mat], nx: f64, z: &[Mat], nz: f64| q.change(x, z) + opts.lambda * (nz - nx);

    let mut x = init;
    let mut nx = nuclear(&x);
    let mut fx = q.value(&x) + opts.lambda * nx;
    let mut y = x.clone();
    let mut momentum = 1.0_f64;
    let mut trace = vec![fx];
    // recent exact changes; trace entries lose those below one ulp of fx
    let mut recent = std::collections::VecDeque::with_capacity(STOP_WINDOW);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let (mut z, mut nz) = prox_step(&y);
        let mut delta = change(&x, nx, &z, nz);
        if !(delta <= 0.0) && opts.acceleration {
            // restart from the last accepted point
            momentum = 1.0;
            (z, nz) = prox_step(&x);
            delta = change(&x, nx, &z, nz);
        }
        if !(delta <= 0.0) {
            // no descent left at working precision
            trace.push(fx);
            converged = delta.is_finite();
            break;
        }
        if opts.acceleration {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            y = z
                .iter()
                .zip(&x)
                .map(|(zk, xk)| {
                    let mut m = zk.clone();
                    m.axpy(beta, &(zk - xk));
                    m
                })
                .collect();
            momentum = next;
        } else {
            y = z.clone();
        }
        x = z;
        nx = nz;
        fx += delta;
        trace.push(fx);
        if recent.len() == STOP_WINDOW {
            recent.pop_front();
        }
        recent.push_back(delta);
        if recent.len() == STOP_WINDOW && -recent.iter().sum::<f64>() <= opts.tol * fx.abs() {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        theta: x,
        objective_trace: trace,
        iterations,
        converged,
        psd_floor_applied: false,
    })
}

/// `tr(Theta^T Sxx Theta) - 2 tr(Theta^T Sxy) + lambda ||Theta||_*`.
pub fn objective_multitask(theta: &Mat, sxx: &Mat, sxy: &Mat, lambda: f64) -> Result<f64> {
    let q = Quadratic::Left { sxx, sxy };
    let blocks = std::slice::from_ref(theta);
    q.check(blocks)?;
    Ok(q.value(blocks) + lambda * nuclear(blocks))
}

/// Gradient `2 Sxx Theta - 2 Sxy` of the smooth multi-task loss.
pub fn multitask_gradient(theta: &Mat, sxx: &Mat, sxy: &Mat) -> Result<Mat> {
    let q = Quadratic::Left { sxx, sxy };
    let blocks = std::slice::from_ref(theta);
    q.check(blocks)?;
    Ok(q.gradient(blocks).pop().expect("one block"))
}

/// Solves the multi-task program from `Theta = 0`.
pub fn solve_multitask(sxx: &Mat, sxy: &Mat, opts: &SolveOpts) -> Result<SolveResult> {
    solve_multitask_from(sxx, sxy, &Mat::zeros(sxy.rows(), sxy.cols()), opts)
}

/// Solves the multi-task program from a given starting point.
pub fn solve_multitask_from(
    sxx: &Mat,
    sxy: &Mat,
    init: &Mat,
    opts: &SolveOpts,
) -> Result<SolveResult> {
    minimize(&Quadratic::Left { sxx, sxy }, vec![init.clone()], opts)
}

/// `sum_ij Sxx_ij <Theta_i, Theta_j> - 2 sum_k <Sxy_k, Theta_k> + lambda sum_k ||Theta_k||_*`.
pub fn objective_matrix_response(
    thetas: &[Mat],
    sxx: &Mat,
    sxy: &[Mat],
    lambda: f64,
) -> Result<f64> {
    if sxy.is_empty() {
        return Err(Error::ShapeMismatch("no cross-moment blocks".into()));
    }
    let q = Quadratic::Mixing { sxx, sxy };
    q.check(thetas)?;
    Ok(q.value(thetas) + lambda * nuclear(thetas))
}

/// Blockwise gradient `2 sum_j Sxx_kj Theta_j - 2 Sxy_k` of the smooth loss.
pub fn matrix_response_gradient(thetas: &[Mat], sxx: &Mat, sxy: &[Mat]) -> Result<Vec<Mat>> {
    if sxy.is_empty() {
        return Err(Error::ShapeMismatch("no cross-moment blocks".into()));
    }
    let q = Quadratic::Mixing { sxx, sxy };
    q.check(thetas)?;
    Ok(q.gradient(thetas))
}

/// Solves the matrix-response program from all-zero blocks.
pub fn solve_matrix_response(sxx: &Mat, sxy: &[Mat], opts: &SolveOpts) -> Result<SolveResult> {
    let first = sxy
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no cross-moment blocks".into()))?;
    let init = vec![Mat::zeros(first.rows(), first.cols()); sxy.len()];
    solve_matrix_response_from(sxx, sxy, init, opts)
}

pub fn solve_matrix_response_from(
    sxx: &Mat,
    sxy: &[Mat],
    init: Vec<Mat>,
    opts: &SolveOpts,
) -> Result<SolveResult> {
    if sxy.is_empty() {
        return Err(Error::ShapeMismatch("no cross-moment blocks".into()));
    }
    minimize(&Quadratic::Mixing { sxx, sxy }, init, opts)
}
