//! Monte-Carlo orchestration: data generation, the robust and standard
//! pipelines, error bookkeeping and report files.
//!
//! Seeding: the target is drawn once per study from stream `u64::MAX` of
//! `seed`; replication `r` at sample size `n` draws its data from stream
//! `n << 16` of `seed ^ r` and its dithers at the `j`-th resolution from
//! stream `(n << 16) | (j + 1)`. Every replication is therefore reproducible
//! on its own, and results do not depend on the number of worker threads.

mod report;
mod spec;

use std::time::Instant;

use rayon::prelude::*;

use crate::calibrate::calibrate_tau_k_with;
use crate::error::{Error, Result};
use crate::estimators::{psd_floor, sample_cov, sigma_xx_tilde, sigma_xy_tilde, ResponseSpectra};
use crate::mat::{Mat, NormKind};
use crate::preprocess::{preprocess_multitask, QuantConfig, ShrinkConfig};
use crate::simgen::{gen_matrix_response_data, gen_multitask_data, seeded_rng, SimRng};
use crate::solver::{solve_matrix_response, solve_multitask, SolveOpts, SolveResult};

pub use report::{
    fit_loglog_slope, plot_series, read_records, read_records_from, slopes, summarize,
    write_outputs, write_records, write_records_to, write_slopes, write_summary, MeanSd,
    PlotSeries, SlopeRow, SummaryRow, RECORD_HEADER, SLOPE_HEADER, SUMMARY_HEADER,
};
pub use spec::{
    presets, ExperimentSpec, Mode, Model, TargetKind, TargetSpec,
    DEFAULT_LAMBDA_CONST_MATRIX_RESPONSE, DEFAULT_LAMBDA_CONST_MULTITASK,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Shrinkage, dither correction and spectral truncation.
    Robust,
    /// Plain sample moments with the same penalty.
    Standard,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Robust, Method::Standard];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Robust => "robust",
            Method::Standard => "standard",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "robust" => Some(Method::Robust),
            "standard" => Some(Method::Standard),
            _ => None,
        }
    }
}

/// Errors of a successful fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Frobenius error of all blocks together.
    pub err_fro: f64,
    /// Operator-norm error of the blocks placed side by side.
    pub err_op: f64,
    /// Frobenius error of each block.
    pub block_err_fro: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// One fit of one replication in one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub replication: usize,
    pub method: Method,
    /// The fit, or the message of the error that stopped it.
    pub outcome: std::result::Result<Fit, String>,
    /// Estimation plus solve time; not written to the records file.
    pub wall_secs: f64,
}

impl RunRecord {
    pub fn fit(&self) -> Option<&Fit> {
        self.outcome.as_ref().ok()
    }
}

fn errors(estimate: &[Mat], target: &[Mat], solve: &SolveResult) -> Fit {
    let diffs: Vec<Mat> = estimate.iter().zip(target).map(|(e, t)| e - t).collect();
    let block_err_fro: Vec<f64> = diffs.iter().map(Mat::frobenius).collect();
    let err_fro = block_err_fro.iter().map(|e| e * e).sum::<f64>().sqrt();
    let err_op = Mat::hstack(&diffs)
        .expect("blocks share a row count")
        .norm(NormKind::Op);
    Fit {
        err_fro,
        err_op,
        block_err_fro,
        iterations: solve.iterations,
        converged: solve.converged,
    }
}

/// Robust and standard moment pairs for one multitask cell.
fn multitask_moments(
    x: &Mat,
    y: &Mat,
    spec: &ExperimentSpec,
    eta: f64,
    dither_stream: (u64, u64),
    method: Method,
) -> Result<(Mat, Mat, bool)> {
    let quant = QuantConfig::new(eta, eta)?;
    // both methods see the same dithers
    let mut rng = seeded_rng(dither_stream.0, dither_stream.1);
    match method {
        Method::Robust => {
            let pre = preprocess_multitask(
                x,
                y,
                &ShrinkConfig::auto(),
                &quant,
                spec.mode.into(),
                &mut rng,
            )?;
            let sxx = sigma_xx_tilde(&pre.x, eta)?;
            let (sxx, floored) = psd_floor(&sxx, 0.0)?;
            Ok((sxx, sigma_xy_tilde(&pre.x, &pre.y)?, floored))
        }
        Method::Standard => {
            let pre = preprocess_multitask(
                x,
                y,
                &ShrinkConfig::unbounded(),
                &quant,
                spec.mode.into(),
                &mut rng,
            )?;
            Ok((
                sigma_xx_tilde(&pre.x, 0.0)?,
                sigma_xy_tilde(&pre.x, &pre.y)?,
                false,
            ))
        }
    }
}

fn solve_opts(lambda: f64) -> SolveOpts {
    SolveOpts::with_lambda(lambda)
}

/// All records of replication `rep` at sample size `n`.
fn run_replication(spec: &ExperimentSpec, target: &[Mat], n: usize, rep: usize) -> Vec<RunRecord> {
    let (d1, d2) = target[0].shape();
    let data_seed = spec.seed ^ rep as u64;
    let mut data_rng = seeded_rng(data_seed, (n as u64) << 16);
    let lambda = spec.lambda(n, d1, d2);
    let mut out = Vec::new();
    let mut push =
        |eta: f64, method: Method, outcome: std::result::Result<Fit, String>, wall_secs: f64| {
            out.push(RunRecord {
                n,
                d1,
                d2,
                eta1: eta,
                eta2: eta,
                replication: rep,
                method,
                outcome,
                wall_secs,
            })
        };
    match spec.model {
        Model::Multitask => {
            let data =
                gen_multitask_data(&target[0], &spec.covspec, &spec.noisespec, n, &mut data_rng);
            for (j, &eta) in spec.eta_grid.iter().enumerate() {
                for method in Method::ALL {
                    let start = Instant::now();
                    let outcome = data.as_ref().map_err(Error::to_string).and_then(|(x, y)| {
                        let stream = ((n as u64) << 16) | (j as u64 + 1);
                        let (sxx, sxy, floored) =
                            multitask_moments(x, y, spec, eta, (data_seed, stream), method)
                                .map_err(|e| e.to_string())?;
                        let mut res = solve_multitask(&sxx, &sxy, &solve_opts(lambda))
                            .map_err(|e| e.to_string())?;
                        res.psd_floor_applied = floored;
                        Ok(errors(&res.theta, target, &res))
                    });
                    push(eta, method, outcome, start.elapsed().as_secs_f64());
                }
            }
        }
        Model::MatrixResponse => {
            let data = gen_matrix_response_data(target, &spec.noisespec, n, &mut data_rng);
            let spectra = data
                .as_ref()
                .map_err(Error::to_string)
                .and_then(|(_, ys)| ResponseSpectra::new(ys).map_err(|e| e.to_string()));
            for method in Method::ALL {
                let start = Instant::now();
                let outcome = data.as_ref().map_err(Error::to_string).and_then(|(x, _)| {
                    let spectra = spectra.as_ref().map_err(Clone::clone)?;
                    let fit = || -> Result<Fit> {
                        let sxx = sample_cov(x)?;
                        let sxy = (0..x.cols())
                            .map(|k| {
                                let xk = x.col(k);
                                match method {
                                    Method::Robust => {
                                        let tau = calibrate_tau_k_with(spectra, &xk)?.tau;
                                        spectra.cross_moment(&xk, tau)
                                    }
                                    Method::Standard => spectra.plain_cross_moment(&xk),
                                }
                            })
                            .collect::<Result<Vec<_>>>()?;
                        let res = solve_matrix_response(&sxx, &sxy, &solve_opts(lambda))?;
                        Ok(errors(&res.theta, target, &res))
                    };
                    fit().map_err(|e| e.to_string())
                });
                push(0.0, method, outcome, start.elapsed().as_secs_f64());
            }
        }
    }
    out
}

/// The study's parameter blocks, drawn from the reserved target stream.
pub fn experiment_target(spec: &ExperimentSpec) -> Result<Vec<Mat>> {
    let mut rng: SimRng = seeded_rng(spec.seed, u64::MAX);
    spec.target.generate(&mut rng)
}

/// Runs every (n, replication) task on the current rayon pool.
///
/// Records are ordered by sample size, resolution, replication and method.
/// A failing fit becomes a record carrying the error message.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let target = experiment_target(spec)?;
    let tasks: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.replications).map(move |rep| (n, rep)))
        .collect();
    let per_task: Vec<Vec<RunRecord>> = tasks
        .par_iter()
        .map(|&(n, rep)| run_replication(spec, &target, n, rep))
        .collect();
    // regroup from (n, rep, eta, method) to (n, eta, rep, method)
    let etas = spec.eta_grid.len();
    let mut records = Vec::with_capacity(per_task.iter().map(Vec::len).sum());
    for chunk in per_task.chunks(spec.replications) {
        for j in 0..etas {
            for task in chunk {
                let per_eta = task.len() / etas;
                records.extend_from_slice(&task[j * per_eta..(j + 1) * per_eta]);
            }
        }
    }
    Ok(records)
}

/// [`run_experiment`] on a dedicated pool of `threads` workers (`0` = rayon default).
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: usize,
) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::BadSpec(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| run_experiment(spec))
}
