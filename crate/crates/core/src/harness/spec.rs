use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::preprocess::HeavyMode;
use crate::simgen::{
    glyph_fixtures, load_binary_images, make_target_blocks, make_target_v7, DistKind, DistSpec,
    SimRng,
};

/// Default multiplier on the multi-task penalty rate, from a pilot sweep.
pub const DEFAULT_LAMBDA_CONST_MULTITASK: f64 = 0.5;
/// Default multiplier on the matrix-response penalty rate, from a pilot sweep.
pub const DEFAULT_LAMBDA_CONST_MATRIX_RESPONSE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Vector responses `Y = Theta^T X + eps`.
    Multitask,
    /// Matrix responses `Y = sum_k x_k Theta_k + E`.
    MatrixResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    HeavyBoth,
    HeavyResponseOnly,
}

impl From<Mode> for HeavyMode {
    fn from(mode: Mode) -> Self {
        match mode {
            Mode::HeavyBoth => HeavyMode::HeavyBoth,
            Mode::HeavyResponseOnly => HeavyMode::HeavyResponseOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `V V^T` for the top-7 eigenvectors of a Gaussian sample covariance (multi-task).
    V7Projector,
    /// Unit-Frobenius products of Gaussian rank-`r` factors (matrix response).
    NormalizedProductBlocks,
    /// Four 43x53 binary images (matrix response); the bundled glyphs when no file is given.
    BinaryImages,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub kind: TargetKind,
    #[serde(default)]
    pub d1: Option<usize>,
    #[serde(default)]
    pub d2: Option<usize>,
    #[serde(default)]
    pub rank: Option<usize>,
    #[serde(default)]
    pub blocks: Option<usize>,
    /// Image file; relative paths are resolved against the spec file.
    #[serde(default)]
    pub images: Option<PathBuf>,
}

impl TargetSpec {
    pub fn v7(d: usize) -> Self {
        TargetSpec {
            kind: TargetKind::V7Projector,
            d1: Some(d),
            d2: None,
            rank: None,
            blocks: None,
            images: None,
        }
    }

    pub fn product_blocks(blocks: usize, d1: usize, d2: usize, rank: usize) -> Self {
        TargetSpec {
            kind: TargetKind::NormalizedProductBlocks,
            d1: Some(d1),
            d2: Some(d2),
            rank: Some(rank),
            blocks: Some(blocks),
            images: None,
        }
    }

    pub fn images(path: Option<PathBuf>) -> Self {
        TargetSpec {
            kind: TargetKind::BinaryImages,
            d1: None,
            d2: None,
            rank: None,
            blocks: None,
            images: path,
        }
    }

    fn need(value: Option<usize>, name: &str, kind: TargetKind) -> Result<usize> {
        value.ok_or_else(|| Error::BadSpec(format!("target {kind:?} needs `{name}`")))
    }

    /// The parameter blocks (one block for the multi-task model).
    pub fn generate(&self, rng: &mut SimRng) -> Result<Vec<Mat>> {
        match self.kind {
            TargetKind::V7Projector => {
                let d = Self::need(self.d1, "d1", self.kind)?;
                if self.d2.is_some_and(|d2| d2 != d) {
                    return Err(Error::BadSpec(
                        "the projector target is square; d2 must equal d1".into(),
                    ));
                }
                Ok(vec![make_target_v7(d, rng)?])
            }
            TargetKind::NormalizedProductBlocks => {
                let d1 = Self::need(self.d1, "d1", self.kind)?;
                let d2 = self.d2.unwrap_or(d1);
                let r = Self::need(self.rank, "rank", self.kind)?;
                let s = Self::need(self.blocks, "blocks", self.kind)?;
                if s == 0 {
                    return Err(Error::BadSpec("block count must be positive".into()));
                }
                make_target_blocks(s, d1, d2, r, rng)
            }
            TargetKind::BinaryImages => match &self.images {
                Some(path) => load_binary_images(path),
                None => Ok(glyph_fixtures()),
            },
        }
    }
}

/// One Monte-Carlo study: a grid of sample sizes and quantization levels,
/// replicated, each replication fitted by the robust and the standard pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: Model,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub target: TargetSpec,
    /// Covariate law; the matrix-response model supports `gaussian_iid` only.
    #[serde(default = "default_cov")]
    pub covspec: DistSpec,
    pub noisespec: DistSpec,
    pub n_grid: Vec<usize>,
    /// Common resolution for both streams; must be `[0]` for the matrix-response model.
    #[serde(default = "default_eta_grid")]
    pub eta_grid: Vec<f64>,
    pub replications: usize,
    /// Multiplier on the penalty rate; the per-model default when absent.
    #[serde(default)]
    pub lambda_const: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> Mode {
    Mode::HeavyBoth
}

fn default_cov() -> DistSpec {
    DistSpec::gaussian(1.0)
}

fn default_eta_grid() -> Vec<f64> {
    vec![0.0]
}

impl ExperimentSpec {
    /// Parses a TOML spec; relative image paths are taken relative to the file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        if let Some(images) = &spec.target.images {
            if images.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                spec.target.images = Some(base.join(images));
            }
        }
        Ok(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec fields are serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::BadSpec(msg.to_string()));
        if self.n_grid.is_empty() || self.eta_grid.is_empty() {
            return bad("n_grid and eta_grid must be nonempty");
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return bad("every sample size must be at least 2");
        }
        if self
            .eta_grid
            .iter()
            .any(|&eta| !(eta >= 0.0 && eta.is_finite()))
        {
            return bad("quantization resolutions must be finite and nonnegative");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if let Some(c) = self.lambda_const {
            if !(c > 0.0 && c.is_finite()) {
                return bad("lambda_const must be positive and finite");
            }
        }
        self.covspec.validate()?;
        self.noisespec.validate()?;
        match self.model {
            Model::Multitask => {
                if self.target.kind != TargetKind::V7Projector {
                    return bad("the multitask model takes a v7_projector target");
                }
                if !self.covspec.is_vector_kind() || !self.noisespec.is_vector_kind() {
                    return bad("the multitask model needs vector covariate and noise laws");
                }
            }
            Model::MatrixResponse => {
                if self.target.kind == TargetKind::V7Projector {
                    return bad("the matrix_response model takes block or image targets");
                }
                if self.covspec.kind != DistKind::GaussianIid || self.covspec.scale != 1.0 {
                    return bad("the matrix_response model draws standard Gaussian covariates");
                }
                if self.eta_grid.iter().any(|&eta| eta != 0.0) {
                    return bad("the matrix_response model is not quantized; eta_grid must be [0]");
                }
            }
        }
        Ok(())
    }

    pub fn lambda_const(&self) -> f64 {
        self.lambda_const.unwrap_or(match self.model {
            Model::Multitask => DEFAULT_LAMBDA_CONST_MULTITASK,
            Model::MatrixResponse => DEFAULT_LAMBDA_CONST_MATRIX_RESPONSE,
        })
    }

    /// Penalty for `n` samples of `d1 x d2` blocks:
    /// `c sqrt(d log d / n)` with `d = max(d1, d2)` (multitask) or `d = d1 + d2` (matrix response).
    pub fn lambda(&self, n: usize, d1: usize, d2: usize) -> f64 {
        let d = match self.model {
            Model::Multitask => d1.max(d2),
            Model::MatrixResponse => d1 + d2,
        } as f64;
        self.lambda_const() * (d * d.ln() / n as f64).sqrt()
    }
}

/// Ready-made studies.
pub mod presets {
    use super::*;

    /// Gaussian covariates, i.i.d. `t_2.1 / 5` noise, projector target; only responses are shrunk.
    pub fn light_covariates(
        d: usize,
        n_grid: Vec<usize>,
        eta_grid: Vec<f64>,
        replications: usize,
        seed: u64,
    ) -> ExperimentSpec {
        ExperimentSpec {
            model: Model::Multitask,
            mode: Mode::HeavyResponseOnly,
            target: TargetSpec::v7(d),
            covspec: DistSpec::gaussian(1.0),
            noisespec: DistSpec::with_nu(DistKind::ScaledTIid, 2.1, 0.2),
            n_grid,
            eta_grid,
            replications,
            lambda_const: None,
            seed,
        }
    }

    /// Multivariate-t covariates (6 dof) and noise (4.1 dof); both streams shrunk.
    pub fn heavy_both(
        d: usize,
        n_grid: Vec<usize>,
        eta_grid: Vec<f64>,
        replications: usize,
        seed: u64,
    ) -> ExperimentSpec {
        ExperimentSpec {
            model: Model::Multitask,
            mode: Mode::HeavyBoth,
            target: TargetSpec::v7(d),
            covspec: DistSpec::with_nu(DistKind::Mvt, 6.0, 1.0),
            noisespec: DistSpec::with_nu(DistKind::Mvt, 4.1, 1.0),
            n_grid,
            eta_grid,
            replications,
            lambda_const: None,
            seed,
        }
    }

    /// Noise for the image-recovery study.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum ImageNoise {
        /// `Z1 Z2^T` with independent 3-dof multivariate-t factors.
        Product,
        /// Columns i.i.d. 2.1-dof multivariate t.
        Columns,
    }

    impl ImageNoise {
        pub fn spec(self) -> DistSpec {
            match self {
                ImageNoise::Product => DistSpec::with_nu(DistKind::TProductNoise, 3.0, 1.0),
                ImageNoise::Columns => DistSpec::with_nu(DistKind::TColumnNoise, 2.1, 1.0),
            }
        }
    }

    /// Binary-image targets with Gaussian covariates at a single sample size.
    pub fn image_recovery(
        images: Option<PathBuf>,
        noise: ImageNoise,
        n: usize,
        replications: usize,
        seed: u64,
    ) -> ExperimentSpec {
        ExperimentSpec {
            model: Model::MatrixResponse,
            mode: Mode::HeavyBoth,
            target: TargetSpec::images(images),
            covspec: DistSpec::gaussian(1.0),
            noisespec: noise.spec(),
            n_grid: vec![n],
            eta_grid: vec![0.0],
            replications,
            lambda_const: None,
            seed,
        }
    }
}
