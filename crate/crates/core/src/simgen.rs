//! Random data for the simulation designs, plus the 0/1 image targets.
//!
//! All randomness flows through [`SimRng`] (ChaCha8, a counter-based
//! generator with selectable streams). Normals use the ziggurat sampler of
//! `rand_distr`; chi-squared variates are sums of squared normals for
//! integer degrees of freedom and Marsaglia-Tsang gamma draws otherwise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::sample_cov;
use crate::mat::{sym_eigen, Mat};

pub type SimRng = ChaCha8Rng;

/// Generator for `seed` positioned on the independent stream `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn check_nu(nu: f64) -> Result<f64> {
    if nu > 0.0 && nu.is_finite() {
        Ok(nu)
    } else {
        Err(Error::BadNu(nu))
    }
}

/// Chi-squared variate with `nu` degrees of freedom.
pub fn chi_squared<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> Result<f64> {
    let nu = check_nu(nu)?;
    if nu.fract() == 0.0 && nu <= 64.0 {
        Ok((0..nu as usize).map(|_| standard_normal(rng).powi(2)).sum())
    } else {
        let gamma = Gamma::new(0.5 * nu, 2.0).map_err(|_| Error::BadNu(nu))?;
        Ok(gamma.sample(rng))
    }
}

/// Univariate Student-t variate.
pub fn student_t<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> Result<f64> {
    let z = standard_normal(rng);
    let w = chi_squared(nu, rng)?;
    Ok(z / (w / nu).sqrt())
}

/// `T_d(0, I, nu)` vector: a standard normal vector over one shared `sqrt(W / nu)`.
fn mvt_standard<R: Rng + ?Sized>(d: usize, nu: f64, rng: &mut R) -> Result<Vec<f64>> {
    let z: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
    let w = chi_squared(nu, rng)?;
    let s = (w / nu).sqrt().recip();
    Ok(z.into_iter().map(|v| v * s).collect())
}

/// `n` rows drawn i.i.d. from the multivariate t distribution `T_d(mu, sigma, nu)`.
pub fn sample_mvt<R: Rng + ?Sized>(
    n: usize,
    mu: &[f64],
    sigma: &Mat,
    nu: f64,
    rng: &mut R,
) -> Result<Mat> {
    let nu = check_nu(nu)?;
    let d = mu.len();
    if sigma.shape() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "scale matrix is {:?}, location has length {d}",
            sigma.shape()
        )));
    }
    let eig = sym_eigen(sigma)?;
    if eig.min_eigenvalue() < -1e-9 * sigma.max_abs().max(1.0) {
        return Err(Error::NotPsd {
            min_eigenvalue: eig.min_eigenvalue(),
        });
    }
    // factor F with F F^T = sigma
    let factor = Mat::from_fn(d, d, |i, j| {
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt()
    });
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut out = Mat::zeros(n, d);
    for i in 0..n {
        let z = mvt_standard(d, nu, rng)?;
        for (r, a) in out.row_mut(i).iter_mut().enumerate() {
            *a = mu[r]
                + factor
                    .row(r)
                    .iter()
                    .zip(&z)
                    .map(|(f, zv)| f * zv)
                    .sum::<f64>();
        }
    }
    Ok(out)
}

/// Distribution family of a covariate or noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    /// i.i.d. standard normal entries.
    GaussianIid,
    /// Multivariate t with identity scale; for matrices, applied to `vec(E)`.
    Mvt,
    /// i.i.d. univariate t entries.
    ScaledTIid,
    /// `Z1 Z2^T` with independent `Z1 ~ T_d1(0, I, nu)`, `Z2 ~ T_d2(0, I, nu)`.
    TProductNoise,
    /// Columns i.i.d. `T_d1(0, I, nu)`.
    TColumnNoise,
    /// `Z Z^T - nu / (nu - 2) I` with `Z ~ T_d(0, I, nu)`; square only.
    WishartCenteredT,
}

/// A distribution family, its degrees of freedom and an overall scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistSpec {
    pub kind: DistKind,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl DistSpec {
    pub fn gaussian(scale: f64) -> Self {
        DistSpec {
            kind: DistKind::GaussianIid,
            nu: None,
            scale,
        }
    }

    pub fn with_nu(kind: DistKind, nu: f64, scale: f64) -> Self {
        DistSpec {
            kind,
            nu: Some(nu),
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::BadSpec(format!(
                "scale must be finite and nonnegative, got {}",
                self.scale
            )));
        }
        if self.kind != DistKind::GaussianIid {
            check_nu(
                self.nu
                    .ok_or_else(|| Error::BadSpec(format!("{:?} needs `nu`", self.kind)))?,
            )?;
        }
        if self.kind == DistKind::WishartCenteredT && self.nu.is_some_and(|nu| nu <= 2.0) {
            return Err(Error::BadSpec(
                "centered Wishart-t noise needs nu > 2".into(),
            ));
        }
        Ok(())
    }

    fn nu(&self) -> Result<f64> {
        check_nu(
            self.nu
                .ok_or_else(|| Error::BadSpec(format!("{:?} needs `nu`", self.kind)))?,
        )
    }

    /// Whether the family describes vectors (covariates, multi-task noise).
    pub fn is_vector_kind(&self) -> bool {
        matches!(
            self.kind,
            DistKind::GaussianIid | DistKind::Mvt | DistKind::ScaledTIid
        )
    }

    /// One draw of length `d`.
    pub fn sample_vector<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<Vec<f64>> {
        let raw = match self.kind {
            DistKind::GaussianIid => (0..d).map(|_| standard_normal(rng)).collect(),
            DistKind::Mvt => mvt_standard(d, self.nu()?, rng)?,
            DistKind::ScaledTIid => {
                let nu = self.nu()?;
                (0..d)
                    .map(|_| student_t(nu, rng))
                    .collect::<Result<Vec<_>>>()?
            }
            kind => {
                return Err(Error::BadSpec(format!(
                    "{kind:?} is a matrix noise family, not a vector one"
                )));
            }
        };
        Ok(raw.into_iter().map(|v| v * self.scale).collect())
    }

    /// One `d1 x d2` draw.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, d1: usize, d2: usize, rng: &mut R) -> Result<Mat> {
        let raw = match self.kind {
            DistKind::GaussianIid | DistKind::Mvt | DistKind::ScaledTIid => {
                let unit = DistSpec {
                    scale: 1.0,
                    ..*self
                };
                Mat::from_vec(d1, d2, unit.sample_vector(d1 * d2, rng)?)?
            }
            DistKind::TProductNoise => {
                let nu = self.nu()?;
                let z1 = mvt_standard(d1, nu, rng)?;
                let z2 = mvt_standard(d2, nu, rng)?;
                Mat::outer(&z1, &z2)
            }
            DistKind::TColumnNoise => {
                let nu = self.nu()?;
                let mut e = Mat::zeros(d1, d2);
                for j in 0..d2 {
                    for (i, v) in mvt_standard(d1, nu, rng)?.into_iter().enumerate() {
                        e[(i, j)] = v;
                    }
                }
                e
            }
            DistKind::WishartCenteredT => {
                if d1 != d2 {
                    return Err(Error::ShapeMismatch(format!(
                        "centered Wishart-t noise is square, requested {d1}x{d2}"
                    )));
                }
                let nu = self.nu()?;
                if nu <= 2.0 {
                    return Err(Error::BadSpec(
                        "centered Wishart-t noise needs nu > 2".into(),
                    ));
                }
                let z = mvt_standard(d1, nu, rng)?;
                let mut e = Mat::outer(&z, &z);
                let center = nu / (nu - 2.0);
                for i in 0..d1 {
                    e[(i, i)] -= center;
                }
                e
            }
        };
        Ok(raw.scaled(self.scale))
    }
}

/// Projector onto the top 7 eigenvectors of the sample second moment of 100
/// standard Gaussian vectors in dimension `d`.
pub fn make_target_v7<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Mat> {
    const RANK: usize = 7;
    const DRAWS: usize = 100;
    if d < RANK {
        return Err(Error::DimTooSmall { dim: d, min: RANK });
    }
    let z = Mat::from_fn(DRAWS, d, |_, _| standard_normal(rng));
    let eig = sym_eigen(&sample_cov(&z)?)?;
    let v7 = eig.eigenvectors.block(0, 0, d, RANK);
    Ok(v7.matmul(&v7.transpose()))
}

/// `s` blocks `A B^T / ||A B^T||_F` with standard normal `A` (`d1 x r`) and `B` (`d2 x r`).
pub fn make_target_blocks<R: Rng + ?Sized>(
    s: usize,
    d1: usize,
    d2: usize,
    r: usize,
    rng: &mut R,
) -> Result<Vec<Mat>> {
    if r == 0 || r > d1.min(d2) {
        return Err(Error::BadRank {
            rank: r,
            rows: d1,
            cols: d2,
        });
    }
    (0..s)
        .map(|_| {
            let a = Mat::from_fn(d1, r, |_, _| standard_normal(rng));
            let b = Mat::from_fn(d2, r, |_, _| standard_normal(rng));
            let prod = a.matmul(&b.transpose());
            let norm = prod.frobenius();
            Ok(prod.scaled(1.0 / norm))
        })
        .collect()
}

/// Multi-task sample `Y_i = Theta^T X_i + eps_i`, rows drawn in order `X_i`, `eps_i`.
pub fn gen_multitask_data<R: Rng + ?Sized>(
    theta: &Mat,
    cov: &DistSpec,
    noise: &DistSpec,
    n: usize,
    rng: &mut R,
) -> Result<(Mat, Mat)> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    for spec in [cov, noise] {
        spec.validate()?;
        if !spec.is_vector_kind() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} draws matrices; the multi-task model needs vector draws",
                spec.kind
            )));
        }
    }
    let (d1, d2) = theta.shape();
    let mut x = Mat::zeros(n, d1);
    let mut e = Mat::zeros(n, d2);
    for i in 0..n {
        x.row_mut(i).copy_from_slice(&cov.sample_vector(d1, rng)?);
        e.row_mut(i).copy_from_slice(&noise.sample_vector(d2, rng)?);
    }
    let mut y = x.matmul(theta);
    y.axpy(1.0, &e);
    Ok((x, y))
}

/// `Y_i = sum_k x_ik Theta_k + E_i`.
pub fn assemble_matrix_response(x: &Mat, thetas: &[Mat], noise: &[Mat]) -> Result<Vec<Mat>> {
    if x.cols() != thetas.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} covariates for {} parameter blocks",
            x.cols(),
            thetas.len()
        )));
    }
    if x.rows() != noise.len() {
        return Err(Error::SampleCountMismatch {
            left: x.rows(),
            right: noise.len(),
        });
    }
    let shape = thetas.first().ok_or(Error::EmptySample)?.shape();
    if thetas.iter().chain(noise).any(|m| m.shape() != shape) {
        return Err(Error::ShapeMismatch(
            "parameter and noise blocks must share a shape".into(),
        ));
    }
    Ok(noise
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut y = e.clone();
            for (k, theta) in thetas.iter().enumerate() {
                y.axpy(x[(i, k)], theta);
            }
            y
        })
        .collect())
}

/// Matrix-response sample with `x_i ~ N(0, I_s)`, drawn in order `x_i`, `E_i`.
pub fn gen_matrix_response_data<R: Rng + ?Sized>(
    thetas: &[Mat],
    noise: &DistSpec,
    n: usize,
    rng: &mut R,
) -> Result<(Mat, Vec<Mat>)> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    noise.validate()?;
    let s = thetas.len();
    let (d1, d2) = thetas.first().ok_or(Error::EmptySample)?.shape();
    let mut x = Mat::zeros(n, s);
    let mut e = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..s {
            x[(i, k)] = standard_normal(rng);
        }
        e.push(noise.sample_matrix(d1, d2, rng)?);
    }
    let ys = assemble_matrix_response(&x, thetas, &e)?;
    Ok((x, ys))
}

/// Image target dimensions.
pub const IMAGE_ROWS: usize = 43;
pub const IMAGE_COLS: usize = 53;
pub const IMAGE_COUNT: usize = 4;

/// Reads blank-line separated 0/1 matrices, each introduced by a `rows cols` line.
pub fn read_binary_matrices(path: &Path) -> Result<Vec<Mat>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad_shape = |expected: String, found: String| Error::BadShape {
        path: path.to_path_buf(),
        expected,
        found,
    };
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    loop {
        while lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.next();
        }
        let Some((_, header)) = lines.next() else {
            break;
        };
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad_shape("a `rows cols` header".into(), format!("{header:?}")))?;
        let [rows, cols] = dims[..] else {
            return Err(bad_shape(
                "a `rows cols` header".into(),
                format!("{header:?}"),
            ));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (lineno, line) = lines
                .next()
                .filter(|(_, l)| !l.trim().is_empty())
                .ok_or_else(|| bad_shape(format!("{rows} rows"), format!("{r} rows")))?;
            let before = data.len();
            for token in line.split_whitespace() {
                data.push(match token {
                    "0" => 0.0,
                    "1" => 1.0,
                    other => {
                        return Err(Error::NonBinaryEntry {
                            path: path.to_path_buf(),
                            line: lineno + 1,
                            value: other.to_string(),
                        })
                    }
                });
            }
            if data.len() - before != cols {
                return Err(bad_shape(
                    format!("{cols} entries on line {}", lineno + 1),
                    format!("{}", data.len() - before),
                ));
            }
        }
        out.push(Mat::from_vec(rows, cols, data)?);
    }
    Ok(out)
}

/// Writes matrices in the format read by [`read_binary_matrices`].
pub fn write_binary_matrices(path: &Path, mats: &[Mat]) -> Result<()> {
    let mut text = String::new();
    for (k, m) in mats.iter().enumerate() {
        if k > 0 {
            text.push('\n');
        }
        text.push_str(&format!("{} {}\n", m.rows(), m.cols()));
        for i in 0..m.rows() {
            let row: Vec<&str> = m
                .row(i)
                .iter()
                .map(|&v| if v == 0.0 { "0" } else { "1" })
                .collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the four 43x53 image targets.
pub fn load_binary_images(path: &Path) -> Result<Vec<Mat>> {
    let mats = read_binary_matrices(path)?;
    if mats.len() != IMAGE_COUNT {
        return Err(Error::BadShape {
            path: path.to_path_buf(),
            expected: format!("{IMAGE_COUNT} matrices"),
            found: format!("{}", mats.len()),
        });
    }
    if let Some(m) = mats.iter().find(|m| m.shape() != (IMAGE_ROWS, IMAGE_COLS)) {
        return Err(Error::BadShape {
            path: path.to_path_buf(),
            expected: format!("{IMAGE_ROWS}x{IMAGE_COLS}"),
            found: format!("{}x{}", m.rows(), m.cols()),
        });
    }
    Ok(mats)
}

/// Built-in glyphs: a cross, a hollow square, a filled triangle and a T.
pub fn glyph_fixtures() -> Vec<Mat> {
    let glyph = |f: &dyn Fn(usize, usize) -> bool| {
        Mat::from_fn(
            IMAGE_ROWS,
            IMAGE_COLS,
            |i, j| if f(i, j) { 1.0 } else { 0.0 },
        )
    };
    let cross = glyph(&|i, j| {
        ((18..25).contains(&i) && (8..45).contains(&j))
            || ((5..38).contains(&i) && (23..30).contains(&j))
    });
    let square = glyph(&|i, j| {
        let outer = (8..35).contains(&i) && (12..41).contains(&j);
        let inner = (12..31).contains(&i) && (16..37).contains(&j);
        outer && !inner
    });
    let triangle =
        glyph(&|i, j| (6..=36).contains(&i) && ((j as f64) - 26.0).abs() <= 0.7 * (i as f64 - 6.0));
    let tee = glyph(&|i, j| {
        ((6..12).contains(&i) && (8..45).contains(&j))
            || ((12..38).contains(&i) && (23..30).contains(&j))
    });
    vec![cross, square, triangle, tee]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{matrix_norm, svd, NormKind};

    #[test]
    fn v7_target_is_rank_seven_projector() {
        let mut rng = seeded_rng(7, 0);
        let theta = make_target_v7(20, &mut rng).unwrap();
        assert!((theta.trace() - 7.0).abs() < 1e-9);
        assert!((&theta.matmul(&theta) - &theta).max_abs() < 1e-8);
        assert!((theta.frobenius() - 7f64.sqrt()).abs() < 1e-9);
        assert!((matrix_norm(&theta, NormKind::Op) - 1.0).abs() < 1e-9);
        assert!(matches!(
            make_target_v7(6, &mut rng),
            Err(Error::DimTooSmall { dim: 6, min: 7 })
        ));
    }

    #[test]
    fn block_targets_are_normalized_rank_r() {
        let mut rng = seeded_rng(8, 0);
        let blocks = make_target_blocks(3, 9, 7, 2, &mut rng).unwrap();
        assert_eq!(blocks.len(), 3);
        for b in &blocks {
            assert!((b.frobenius() - 1.0).abs() < 1e-10);
            let sv = svd(b).singular_values;
            assert!(sv[1] > 1e-6);
            assert!(sv[2..].iter().all(|&s| s <= 1e-10));
            assert!(sv[0] <= 1.0 + 1e-12);
        }
        assert!(matches!(
            make_target_blocks(1, 3, 4, 4, &mut rng),
            Err(Error::BadRank { .. })
        ));
    }

    #[test]
    fn zero_noise_and_zero_theta() {
        let mut rng = seeded_rng(9, 0);
        let theta = Mat::from_fn(3, 2, |i, j| (i + j) as f64 - 1.0);
        let (x, y) = gen_multitask_data(
            &theta,
            &DistSpec::gaussian(1.0),
            &DistSpec::gaussian(0.0),
            50,
            &mut rng,
        )
        .unwrap();
        assert_eq!(y, x.matmul(&theta));

        let mut rng_a = seeded_rng(10, 0);
        let mut rng_b = seeded_rng(10, 0);
        let noise = DistSpec::with_nu(DistKind::ScaledTIid, 2.1, 0.2);
        let (_, y) = gen_multitask_data(
            &Mat::zeros(3, 2),
            &DistSpec::gaussian(1.0),
            &noise,
            20,
            &mut rng_a,
        )
        .unwrap();
        for i in 0..20 {
            let _x = DistSpec::gaussian(1.0)
                .sample_vector(3, &mut rng_b)
                .unwrap();
            assert_eq!(
                y.row(i),
                noise.sample_vector(2, &mut rng_b).unwrap().as_slice()
            );
        }
    }

    #[test]
    fn matrix_kinds_rejected_for_vectors() {
        let mut rng = seeded_rng(11, 0);
        let noise = DistSpec::with_nu(DistKind::TColumnNoise, 3.0, 1.0);
        assert!(gen_multitask_data(
            &Mat::zeros(2, 2),
            &DistSpec::gaussian(1.0),
            &noise,
            5,
            &mut rng
        )
        .is_err());
        assert!(DistSpec::with_nu(DistKind::WishartCenteredT, 5.0, 1.0)
            .sample_matrix(2, 3, &mut rng)
            .is_err());
        assert!(DistSpec {
            kind: DistKind::Mvt,
            nu: None,
            scale: 1.0
        }
        .validate()
        .is_err());
        assert!(DistSpec::with_nu(DistKind::Mvt, -1.0, 1.0)
            .validate()
            .is_err());
    }

    #[test]
    fn single_covariate_without_noise_reproduces_theta() {
        let theta = Mat::from_fn(3, 4, |i, j| (i * 4 + j) as f64);
        let x = Mat::from_vec(5, 1, vec![1.0; 5]).unwrap();
        let ys =
            assemble_matrix_response(&x, std::slice::from_ref(&theta), &vec![Mat::zeros(3, 4); 5])
                .unwrap();
        assert!(ys.iter().all(|y| *y == theta));
    }

    #[test]
    fn mvt_rejects_bad_parameters() {
        let mut rng = seeded_rng(12, 0);
        assert!(matches!(
            sample_mvt(3, &[0.0], &Mat::identity(1), 0.0, &mut rng),
            Err(Error::BadNu(_))
        ));
        let indefinite = Mat::from_diag(&[1.0, -1.0]);
        assert!(matches!(
            sample_mvt(3, &[0.0, 0.0], &indefinite, 3.0, &mut rng),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn image_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("glyphs.txt");
        let glyphs = glyph_fixtures();
        write_binary_matrices(&path, &glyphs).unwrap();
        assert_eq!(load_binary_images(&path).unwrap(), glyphs);

        let zeros = vec![Mat::zeros(IMAGE_ROWS, IMAGE_COLS); IMAGE_COUNT];
        write_binary_matrices(&path, &zeros).unwrap();
        let loaded = load_binary_images(&path).unwrap();
        assert_eq!(svd(&loaded[0]).rank(1e-12), 0);

        fs::write(&path, "1 2\n0 0.5\n").unwrap();
        assert!(matches!(
            read_binary_matrices(&path),
            Err(Error::NonBinaryEntry { line: 2, .. })
        ));
        fs::write(&path, "2 2\n0 1\n1\n").unwrap();
        assert!(matches!(
            read_binary_matrices(&path),
            Err(Error::BadShape { .. })
        ));
        write_binary_matrices(&path, &glyphs[..3]).unwrap();
        assert!(matches!(
            load_binary_images(&path),
            Err(Error::BadShape { .. })
        ));
        assert!(matches!(
            read_binary_matrices(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
