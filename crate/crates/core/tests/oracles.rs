//! Independent oracles: Monte-Carlo moments, closed forms and brute force.

mod common;

use common::{gaussian_mat, mean_and_se, op};
use robust_lowrank::calibrate::{calibrate_tau_cov, calibrate_tau_k, CovEquation, TauKEquation};
use robust_lowrank::estimators::{
    minsker_cross_moment, psd_floor, sample_cov, sigma_xx_tilde, sigma_xy_tilde, ResponseSpectra,
};
use robust_lowrank::mat::svt;
use robust_lowrank::preprocess::{
    gen_dither, preprocess_multitask, quantize_uniform, DitherKind, HeavyMode, QuantConfig, Radius,
    ShrinkConfig,
};
use robust_lowrank::simgen::{
    gen_matrix_response_data, gen_multitask_data, glyph_fixtures, load_binary_images,
    make_target_blocks, make_target_v7, read_binary_matrices, sample_mvt, seeded_rng,
    standard_normal, student_t, write_binary_matrices, DistKind, DistSpec, IMAGE_COLS, IMAGE_ROWS,
};
use robust_lowrank::solver::{
    objective_multitask, solve_matrix_response, solve_multitask, SolveOpts,
};
use robust_lowrank::{Error, Mat};

fn tight(lambda: f64) -> SolveOpts {
    SolveOpts {
        lambda,
        max_iters: 100_000,
        tol: 1e-20,
        acceleration: true,
    }
}

#[test]
fn dither_variances() {
    let mut rng = seeded_rng(11, 0);
    for (kind, var, tol) in [
        (DitherKind::Uniform, 1.0 / 12.0, 0.001),
        (DitherKind::Triangular, 1.0 / 6.0, 0.002),
    ] {
        let u = gen_dither(1_000_000, 1.0, kind, &mut rng).unwrap();
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let v = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / u.len() as f64;
        assert!((v - var).abs() <= tol, "{kind:?}: variance {v}");
    }
}

#[test]
fn dithered_quantizer_is_unbiased() {
    let mut rng = seeded_rng(12, 0);
    let eta = 0.5;
    for x in [0.37, -1.23, 2.0, 0.0] {
        for kind in [DitherKind::Uniform, DitherKind::Triangular] {
            let draws: Vec<f64> = (0..100_000)
                .map(|_| {
                    let u = gen_dither(1, eta, kind, &mut rng).unwrap();
                    quantize_uniform(&[x], eta, &u).unwrap()[0]
                })
                .collect();
            let (mean, se) = mean_and_se(&draws);
            assert!((mean - x).abs() <= 0.01, "{kind:?} at {x}: mean {mean}");
            assert!(
                (mean - x).abs() <= 3.0 * se,
                "{kind:?} at {x}: {mean} se {se}"
            );
        }
    }
}

#[test]
fn corrected_second_moment_is_unbiased() {
    let n = 8;
    let d = 3;
    let eta = 0.3;
    let mut data_rng = seeded_rng(13, 0);
    let x = gaussian_mat(n, d, &mut data_rng).scaled(2.0);
    let target = sample_cov(&x).unwrap();
    let quant = QuantConfig::new(eta, 0.0).unwrap();
    let shrink = ShrinkConfig::unbounded();
    let y = Mat::zeros(n, 1);
    let draws = 100_000;
    let mut sum = Mat::zeros(d, d);
    let mut sq = Mat::zeros(d, d);
    let mut rng = seeded_rng(13, 1);
    for _ in 0..draws {
        let pre = preprocess_multitask(
            &x,
            &y,
            &shrink,
            &quant,
            HeavyMode::HeavyResponseOnly,
            &mut rng,
        )
        .unwrap();
        let s = sigma_xx_tilde(&pre.x, eta).unwrap();
        sum.axpy(1.0, &s);
        sq.axpy(1.0, &s.map(|v| v * v));
    }
    let m = draws as f64;
    for i in 0..d {
        for j in 0..d {
            let mean = sum[(i, j)] / m;
            let se = ((sq[(i, j)] / m - mean * mean) / m).sqrt();
            assert!(
                (mean - target[(i, j)]).abs() <= 3.0 * se,
                "({i},{j}): {mean} vs {} se {se}",
                target[(i, j)]
            );
        }
    }
}

#[test]
fn quantized_second_moment_is_consistent() {
    let mut rng = seeded_rng(14, 0);
    let n = 100_000;
    let d = 10;
    let x = gaussian_mat(n, d, &mut rng);
    let y = Mat::zeros(n, 1);
    let quant = QuantConfig::new(0.2, 0.0).unwrap();
    let pre = preprocess_multitask(
        &x,
        &y,
        &ShrinkConfig::unbounded(),
        &quant,
        HeavyMode::HeavyResponseOnly,
        &mut rng,
    )
    .unwrap();
    let s = sigma_xx_tilde(&pre.x, 0.2).unwrap();
    assert!(op(&(&s - &Mat::identity(d))) <= 0.1);
}

#[test]
fn cross_moment_matches_population_identity() {
    let mut rng = seeded_rng(15, 0);
    let theta = gaussian_mat(10, 5, &mut rng).scaled(0.3);
    let (x, y) = gen_multitask_data(
        &theta,
        &DistSpec::gaussian(1.0),
        &DistSpec::gaussian(1.0),
        100_000,
        &mut rng,
    )
    .unwrap();
    let sxy = sigma_xy_tilde(&x, &y).unwrap();
    assert!(op(&(&sxy - &theta)) <= 0.1);
}

#[test]
fn sample_covariance_is_consistent() {
    let mut rng = seeded_rng(16, 0);
    let x = gaussian_mat(100_000, 4, &mut rng);
    assert!(op(&(&sample_cov(&x).unwrap() - &Mat::identity(4))) <= 0.05);
}

#[test]
fn multivariate_t_moments() {
    let mut rng = seeded_rng(17, 0);
    let d = 3;
    let n = 1_000_000;
    let x = sample_mvt(n, &[0.0; 3], &Mat::identity(d), 6.0, &mut rng).unwrap();
    let cov = sample_cov(&x).unwrap();
    assert!(
        op(&(&cov - &Mat::identity(d).scaled(1.5))) <= 0.02,
        "{cov:?}"
    );

    let shifted = sample_mvt(100_000, &[5.0, -5.0, 0.0], &Mat::identity(d), 6.0, &mut rng).unwrap();
    for (j, mu) in [5.0, -5.0, 0.0].into_iter().enumerate() {
        let (mean, se) = mean_and_se(&shifted.col(j));
        assert!((mean - mu).abs() <= 3.0 * se, "coordinate {j}: {mean}");
    }
}

#[test]
fn heavy_tail_scan() {
    // nu = 2.1: finite variance, infinite fourth moment
    let mut rng = seeded_rng(18, 0);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| student_t(2.1, &mut rng).unwrap())
        .collect();
    let moment = |m: usize, p: i32| draws[..m].iter().map(|v| v.powi(p)).sum::<f64>() / m as f64;
    let sizes = [10_000, 100_000, 1_000_000];
    let fourth: Vec<f64> = sizes.iter().map(|&m| moment(m, 4)).collect();
    let second: Vec<f64> = sizes.iter().map(|&m| moment(m, 2)).collect();
    assert!(fourth[2] > 10.0 * fourth[0], "fourth moments {fourth:?}");
    let spread = second.iter().cloned().fold(f64::MIN, f64::max)
        / second.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 3.0, "second moments {second:?}");
}

#[test]
fn centered_wishart_noise_has_zero_mean_and_no_lag() {
    let mut rng = seeded_rng(19, 0);
    let spec = DistSpec::with_nu(DistKind::WishartCenteredT, 5.0, 0.1);
    let d = 3;
    let n = 100_000;
    let draws: Vec<Mat> = (0..n)
        .map(|_| spec.sample_matrix(d, d, &mut rng).unwrap())
        .collect();
    for i in 0..d {
        for j in 0..d {
            let entry: Vec<f64> = draws.iter().map(|e| e[(i, j)]).collect();
            let (mean, se) = mean_and_se(&entry);
            assert!(mean.abs() <= 3.0 * se, "({i},{j}): mean {mean} se {se}");
        }
    }
    let series: Vec<f64> = draws.iter().map(|e| e[(0, 1)]).collect();
    let (mean, _) = mean_and_se(&series);
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>();
    let lag = c.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / var;
    assert!(
        lag.abs() <= 3.0 / (n as f64).sqrt(),
        "lag-1 correlation {lag}"
    );
}

#[test]
fn unpenalized_fit_recovers_multitask_target() {
    let mut rng = seeded_rng(20, 0);
    let theta = make_target_v7(10, &mut rng).unwrap();
    let (x, y) = gen_multitask_data(
        &theta,
        &DistSpec::gaussian(1.0),
        &DistSpec::gaussian(1.0),
        100_000,
        &mut rng,
    )
    .unwrap();
    let sxx = sample_cov(&x).unwrap();
    let sxy = sigma_xy_tilde(&x, &y).unwrap();
    let res = solve_multitask(&sxx, &sxy, &tight(0.0)).unwrap();
    assert!((&res.theta[0] - &theta).frobenius() <= 0.05);
}

#[test]
fn minsker_survives_an_outlier() {
    let mut rng = seeded_rng(21, 0);
    let n = 50;
    let mut xk: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
    xk[7] = 1e8;
    let ys: Vec<Mat> = (0..n).map(|_| gaussian_mat(3, 2, &mut rng)).collect();
    let tau = 2.0;
    let robust = minsker_cross_moment(&xk, &ys, tau).unwrap();
    let plain = ResponseSpectra::new(&ys)
        .unwrap()
        .plain_cross_moment(&xk)
        .unwrap();
    assert!(op(&robust) <= tau);
    assert!(op(&plain) > 1e5);
}

#[test]
fn equal_norm_covariance_level_has_closed_form() {
    let mut rng = seeded_rng(22, 0);
    let (n, d, a) = (200, 3, 2.5);
    let x = Mat::from_fn(n, d, |_, _| standard_normal(&mut rng));
    let x = Mat::from_fn(n, d, |i, j| {
        a * x[(i, j)] / x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    });
    let eq = CovEquation::new(&x).unwrap();
    let rhs = eq.default_rhs();
    let s = op(&x.t_matmul(&x)) / (a * a);
    assert!(s > rhs, "root must lie above the common norm");
    let closed = a * (s / rhs).powf(0.25);
    let res = calibrate_tau_cov(&x).unwrap();
    assert!(
        (res.tau - closed).abs() <= 1e-6 * closed,
        "{} vs {closed}",
        res.tau
    );
    assert!(res.root_found);
}

#[test]
fn covariance_level_residual_on_gaussian_data() {
    let mut rng = seeded_rng(23, 0);
    let x = gaussian_mat(1000, 50, &mut rng);
    let eq = CovEquation::new(&x).unwrap();
    let res = calibrate_tau_cov(&x).unwrap();
    assert!(res.residual.abs() <= 1e-6 * eq.default_rhs());
    assert!((eq.lhs(res.tau) - eq.default_rhs() - res.residual).abs() <= 1e-12 * eq.default_rhs());
}

#[test]
fn truncation_level_residual_on_matrix_response_data() {
    let mut rng = seeded_rng(24, 0);
    let thetas = make_target_blocks(4, 20, 20, 3, &mut rng).unwrap();
    let noise = DistSpec::with_nu(DistKind::TProductNoise, 3.0, 1.0);
    let (x, ys) = gen_matrix_response_data(&thetas, &noise, 500, &mut rng).unwrap();
    let spectra = ResponseSpectra::new(&ys).unwrap();
    for k in 0..x.cols() {
        let xk = x.col(k);
        let eq = TauKEquation::new(&spectra, &xk).unwrap();
        let res = eq.solve(eq.default_rhs());
        assert!(res.root_found);
        assert!(
            res.residual.abs() <= 1e-6 * eq.default_rhs(),
            "block {k}: {res:?}"
        );
    }
}

#[test]
fn duplicated_scalar_response_has_closed_form_level() {
    // two copies of x = 1, Y = [y]: lhs = 2 * 2 min(y, tau)^2 / tau^2, a trace of 2
    let y = 3.0;
    let ys = vec![Mat::from_diag(&[y]), Mat::from_diag(&[y])];
    let xk = [1.0, 1.0];
    let spectra = ResponseSpectra::new(&ys).unwrap();
    let eq = TauKEquation::new(&spectra, &xk).unwrap();
    let rhs = 1.5;
    let res = eq.solve(rhs);
    let closed = y * (2.0 / rhs).sqrt();
    assert!(
        (res.tau - closed).abs() <= 1e-6 * closed,
        "{} vs {closed}",
        res.tau
    );
    assert!((common::tau_k_lhs_direct(&xk, &ys, closed) - rhs).abs() <= 1e-12);
}

#[test]
fn truncation_level_grows_like_root_n_over_log_n() {
    let level = |n: usize| {
        let mut rng = seeded_rng(25, n as u64);
        let xk: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let ys: Vec<Mat> = (0..n).map(|_| gaussian_mat(3, 3, &mut rng)).collect();
        calibrate_tau_k(&xk, &ys).unwrap().tau
    };
    let rate = |n: f64| (n / n.ln()).sqrt();
    let (n1, n2) = (1000, 16_000);
    let ratio = level(n2) / level(n1);
    let expected = rate(n2 as f64) / rate(n1 as f64);
    assert!(
        (ratio / expected - 1.0).abs() <= 0.3,
        "{ratio} vs {expected}"
    );
}

#[test]
fn column_problem_matches_brute_force() {
    let sxx = Mat::from_diag(&[2.0, 1.0]);
    let sxy = Mat::from_rows(&[[1.3], [-0.4]]).unwrap();
    let lambda = 0.7;
    let f = |a: f64, b: f64| {
        objective_multitask(&Mat::from_rows(&[[a], [b]]).unwrap(), &sxx, &sxy, lambda).unwrap()
    };
    // zooming grid search
    let (mut ca, mut cb, mut half) = (0.0, 0.0, 4.0);
    for _ in 0..12 {
        let steps = 40;
        let mut best = (f64::INFINITY, ca, cb);
        for i in 0..=steps {
            for j in 0..=steps {
                let a = ca - half + 2.0 * half * i as f64 / steps as f64;
                let b = cb - half + 2.0 * half * j as f64 / steps as f64;
                let v = f(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        (ca, cb) = (best.1, best.2);
        half /= 4.0;
    }
    let brute = f(ca, cb);
    let res = solve_multitask(&sxx, &sxy, &tight(lambda)).unwrap();
    assert!(
        (res.final_objective() - brute).abs() <= 1e-6,
        "{} vs {brute}",
        res.final_objective()
    );
}

#[test]
fn coupled_blocks_solve_the_normal_equations() {
    let mut rng = seeded_rng(26, 0);
    let sxx = Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
    let s1 = gaussian_mat(3, 3, &mut rng);
    let s2 = gaussian_mat(3, 3, &mut rng);
    // inverse of [[2, 1], [1, 2]] is [[2, -1], [-1, 2]] / 3
    let mut t1 = s1.scaled(2.0 / 3.0);
    t1.axpy(-1.0 / 3.0, &s2);
    let mut t2 = s2.scaled(2.0 / 3.0);
    t2.axpy(-1.0 / 3.0, &s1);
    let res = solve_matrix_response(&sxx, &[s1, s2], &tight(0.0)).unwrap();
    assert!((&res.theta[0] - &t1).frobenius() <= 1e-7);
    assert!((&res.theta[1] - &t2).frobenius() <= 1e-7);
}

#[test]
fn identity_design_is_singular_value_thresholding() {
    let mut rng = seeded_rng(27, 0);
    let sxy = gaussian_mat(5, 4, &mut rng);
    let res = solve_multitask(&Mat::identity(5), &sxy, &tight(1.2)).unwrap();
    assert!((&res.theta[0] - &svt(&sxy, 0.6)).frobenius() <= 1e-8);
}

#[test]
fn robust_pipelines_stay_finite_under_outliers() {
    let mut rng = seeded_rng(28, 0);
    let theta = make_target_v7(12, &mut rng).unwrap();
    let (mut x, mut y) = gen_multitask_data(
        &theta,
        &DistSpec::gaussian(1.0),
        &DistSpec::with_nu(DistKind::ScaledTIid, 2.1, 0.2),
        400,
        &mut rng,
    )
    .unwrap();
    for i in [3, 50, 333] {
        x.row_mut(i)[0] = 1e12;
        y.row_mut(i)[1] = -1e12;
    }
    let quant = QuantConfig::new(0.2, 0.2).unwrap();
    let pre = preprocess_multitask(
        &x,
        &y,
        &ShrinkConfig::auto(),
        &quant,
        HeavyMode::HeavyBoth,
        &mut rng,
    )
    .unwrap();
    let (sxx, _) = psd_floor(&sigma_xx_tilde(&pre.x, 0.2).unwrap(), 0.0).unwrap();
    let sxy = sigma_xy_tilde(&pre.x, &pre.y).unwrap();
    let res = solve_multitask(&sxx, &sxy, &SolveOpts::with_lambda(0.1)).unwrap();
    assert!(res.theta[0].as_slice().iter().all(|v| v.is_finite()));

    let thetas = make_target_blocks(2, 6, 5, 2, &mut rng).unwrap();
    let noise = DistSpec::with_nu(DistKind::TColumnNoise, 2.1, 1.0);
    let (x, mut ys) = gen_matrix_response_data(&thetas, &noise, 200, &mut rng).unwrap();
    ys[17] = ys[17].scaled(1e12);
    let spectra = ResponseSpectra::new(&ys).unwrap();
    let sxy: Vec<Mat> = (0..2)
        .map(|k| {
            let xk = x.col(k);
            let tau = calibrate_tau_k(&xk, &ys).unwrap().tau;
            let m = spectra.cross_moment(&xk, tau).unwrap();
            assert!(op(&m) <= tau * (1.0 + 1e-12));
            m
        })
        .collect();
    let res = solve_matrix_response(&sample_cov(&x).unwrap(), &sxy, &SolveOpts::with_lambda(0.1))
        .unwrap();
    assert!(res
        .theta
        .iter()
        .all(|t| t.as_slice().iter().all(|v| v.is_finite())));
}

#[test]
fn shrink_radius_is_applied_before_quantizing() {
    let x = Mat::from_rows(&[[30.0, 40.0], [0.3, 0.4]]).unwrap();
    let y = Mat::from_rows(&[[1.0], [2.0]]).unwrap();
    let shrink = ShrinkConfig {
        tau: Radius::Fixed(5.0),
        varpi: Radius::Fixed(1.5),
    };
    let pre = preprocess_multitask(
        &x,
        &y,
        &shrink,
        &QuantConfig::none(),
        HeavyMode::HeavyBoth,
        &mut seeded_rng(0, 0),
    )
    .unwrap();
    assert_eq!(pre.x.row(0), &[3.0, 4.0]);
    assert_eq!(pre.x.row(1), &[0.3, 0.4]);
    assert_eq!(pre.y.as_slice(), &[1.0, 1.5]);
}

#[test]
fn image_fixture_files() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = vec![Mat::zeros(IMAGE_ROWS, IMAGE_COLS); 4];
    let path = dir.path().join("zeros.txt");
    write_binary_matrices(&path, &zeros).unwrap();
    assert_eq!(load_binary_images(&path).unwrap(), zeros);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "2 2\n0 1\n0.5 1\n").unwrap();
    assert!(matches!(
        read_binary_matrices(&bad),
        Err(Error::NonBinaryEntry { line: 3, .. })
    ));

    let shipped = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/glyphs.txt");
    assert_eq!(load_binary_images(&shipped).unwrap(), glyph_fixtures());
    let again = dir.path().join("glyphs.txt");
    write_binary_matrices(&again, &glyph_fixtures()).unwrap();
    assert_eq!(
        std::fs::read(&again).unwrap(),
        std::fs::read(&shipped).unwrap()
    );
}
