//! Shrink-then-quantize preprocessing of raw samples.
//!
//! Each sample row is first pulled back onto an l2 ball (heavy-tailed streams
//! only), then a random dither is added and the result is rounded by the
//! uniform quantizer `Q_eta(x) = eta * (floor(x / eta) + 1/2)`. A resolution
//! of zero disables both the dither and the quantizer for that stream.

use rand::Rng;

use crate::calibrate::calibrate_tau_cov;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Dither distribution added before quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DitherKind {
    /// i.i.d. coordinates on `[-eta/2, eta/2]`.
    Uniform,
    /// Sum of two independent uniform dithers; support `[-eta, eta]`.
    Triangular,
}

/// Quantization resolutions for the covariate and response streams.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    pub eta1: f64,
    pub eta2: f64,
    pub dither_x: DitherKind,
    pub dither_y: DitherKind,
}

impl QuantConfig {
    /// Triangular dither on covariates, uniform dither on responses.
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        for eta in [eta1, eta2] {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::BadSpec(format!(
                    "quantization resolution must be a finite nonnegative number, got {eta}"
                )));
            }
        }
        Ok(QuantConfig {
            eta1,
            eta2,
            dither_x: DitherKind::Triangular,
            dither_y: DitherKind::Uniform,
        })
    }

    /// No quantization on either stream.
    pub fn none() -> Self {
        QuantConfig::new(0.0, 0.0).expect("zero resolution is valid")
    }
}

/// A shrinkage radius, either fixed or calibrated from the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Fixed(f64),
    Auto,
}

impl Radius {
    fn resolve(self, samples: &Mat) -> Result<f64> {
        match self {
            Radius::Fixed(r) if r > 0.0 => Ok(r),
            Radius::Fixed(r) => Err(Error::NonPositiveRadius(r)),
            Radius::Auto => Ok(calibrate_tau_cov(samples)?.tau),
        }
    }
}

/// Shrinkage radii for the covariate (`tau`) and response (`varpi`) rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkConfig {
    pub tau: Radius,
    pub varpi: Radius,
}

impl ShrinkConfig {
    pub fn auto() -> Self {
        ShrinkConfig {
            tau: Radius::Auto,
            varpi: Radius::Auto,
        }
    }

    /// Radii large enough that nothing is shrunk.
    pub fn unbounded() -> Self {
        ShrinkConfig {
            tau: Radius::Fixed(f64::INFINITY),
            varpi: Radius::Fixed(f64::INFINITY),
        }
    }
}

/// Which streams are treated as heavy-tailed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeavyMode {
    /// Shrink both covariates and responses.
    HeavyBoth,
    /// Covariates are light-tailed and only quantized; responses are shrunk.
    HeavyResponseOnly,
}

/// `(min(|v|, radius) / |v|) * v`.
pub fn shrink_l2(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) {
        return Err(Error::NonPositiveRadius(radius));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= radius {
        return Ok(v.to_vec());
    }
    let scale = radius / norm;
    Ok(v.iter().map(|x| x * scale).collect())
}

/// Draws a dither vector of length `d` at resolution `eta`.
pub fn gen_dither<R: Rng + ?Sized>(
    d: usize,
    eta: f64,
    kind: DitherKind,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::NonPositiveEta(eta));
    }
    let half = 0.5 * eta;
    let mut draw = || rng.random_range(-half..=half);
    Ok((0..d)
        .map(|_| match kind {
            DitherKind::Uniform => draw(),
            DitherKind::Triangular => draw() + draw(),
        })
        .collect())
}

/// Scalar uniform quantizer `eta * (floor(x / eta) + 1/2)`; identity for `eta = 0`.
///
/// Exact lattice boundaries (`x / eta` integral) round with `floor`.
pub fn quantize_scalar(x: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        x
    } else {
        eta * ((x / eta).floor() + 0.5)
    }
}

/// Elementwise `Q_eta(v + dither)`, or `v` itself when `eta = 0`.
pub fn quantize_uniform(v: &[f64], eta: f64, dither: &[f64]) -> Result<Vec<f64>> {
    if eta == 0.0 {
        return Ok(v.to_vec());
    }
    if !(eta > 0.0) {
        return Err(Error::NonPositiveEta(eta));
    }
    if dither.len() != v.len() {
        return Err(Error::DitherLengthMismatch {
            len: v.len(),
            dither: dither.len(),
        });
    }
    Ok(v.iter()
        .zip(dither)
        .map(|(x, u)| quantize_scalar(x + u, eta))
        .collect())
}

/// Dithers and quantizes one row; `eta = 0` passes it through untouched.
fn dither_quantize<R: Rng + ?Sized>(
    row: &[f64],
    eta: f64,
    kind: DitherKind,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if eta == 0.0 {
        return Ok(row.to_vec());
    }
    let dither = gen_dither(row.len(), eta, kind, rng)?;
    quantize_uniform(row, eta, &dither)
}

/// Output of [`preprocess_multitask`].
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub x: Mat,
    pub y: Mat,
    /// Covariate radius actually used (`None` when covariates are not shrunk).
    pub tau: Option<f64>,
    /// Response radius actually used.
    pub varpi: f64,
}

/// Shrinks, dithers and quantizes a multi-task sample.
///
/// Dithers are drawn fresh for every row, covariate row first, in sample order.
pub fn preprocess_multitask<R: Rng + ?Sized>(
    x: &Mat,
    y: &Mat,
    shrink: &ShrinkConfig,
    quant: &QuantConfig,
    mode: HeavyMode,
    rng: &mut R,
) -> Result<Preprocessed> {
    if x.rows() != y.rows() {
        return Err(Error::SampleCountMismatch {
            left: x.rows(),
            right: y.rows(),
        });
    }
    let tau = match mode {
        HeavyMode::HeavyBoth => Some(shrink.tau.resolve(x)?),
        HeavyMode::HeavyResponseOnly => None,
    };
    let varpi = shrink.varpi.resolve(y)?;

    let mut xq = Vec::with_capacity(x.rows() * x.cols());
    let mut yq = Vec::with_capacity(y.rows() * y.cols());
    for i in 0..x.rows() {
        let xs = match tau {
            Some(t) => shrink_l2(x.row(i), t)?,
            None => x.row(i).to_vec(),
        };
        let ys = shrink_l2(y.row(i), varpi)?;
        xq.extend(dither_quantize(&xs, quant.eta1, quant.dither_x, rng)?);
        yq.extend(dither_quantize(&ys, quant.eta2, quant.dither_y, rng)?);
    }
    Ok(Preprocessed {
        x: Mat::from_vec(x.rows(), x.cols(), xq)?,
        y: Mat::from_vec(y.rows(), y.cols(), yq)?,
        tau,
        varpi,
    })
}
