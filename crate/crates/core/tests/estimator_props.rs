mod common;

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ssdm::profile::AlphaMode;
use ssdm::simulate::{generate, run_table1, DgpConfig, Table1Config};
use ssdm::weights::{build_exp_decay_weights, load_weights};
use ssdm::{
    estimate, io, profile::estimate_with, standard_errors, BandwidthPolicy, KernelSpec, ModelSpec,
    SeMode, WeightMatrix,
};

const EPA: KernelSpec = KernelSpec::Epanechnikov;

fn knn_weights(locs: &[[f64; 2]], k: usize) -> DMatrix<f64> {
    let n = locs.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((locs[i][0] - locs[j][0]).hypot(locs[i][1] - locs[j][1]), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(_, j) in &d[..k] {
            m[(i, j)] = 1.0 / k as f64;
        }
    }
    m
}

#[test]
fn all_constant_fit_with_zero_alpha_is_least_squares() {
    for seed in 0..5 {
        let data = common::random_dataset(120, 3, seed);
        let w = WeightMatrix::zeros(120);
        let bw = BandwidthPolicy::absolute(0.5, 50.0, 0.5);
        let fit = estimate_with(&data, &w, &bw, &ModelSpec::all(3), EPA, AlphaMode::Fixed(0.0))
            .unwrap();
        let beta = common::ols_oracle(data.x(), data.y());
        for j in 0..3 {
            assert_abs_diff_eq!(fit.beta_const[&(j + 1)], beta[j], epsilon = 1e-6);
        }
        let rss = (data.y() - data.x() * &beta).norm_squared();
        assert_abs_diff_eq!(fit.sigma2_hat, rss / 120.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.rss() / 120.0, fit.sigma2_hat, epsilon = 1e-10);
    }
}

#[test]
fn recovers_alpha_under_nearest_neighbour_weights() {
    let mut estimates = Vec::new();
    for rep in 0..6 {
        let g = generate(&DgpConfig::example1(300, 5).with_stream(rep)).unwrap();
        let w = load_weights(knn_weights(g.data.locations(), 6)).unwrap();
        let y = w.spatial_filter(0.5).lu().solve(&(&g.mean + &g.epsilon)).unwrap();
        let data = g.data.with_response(y).unwrap();
        let bw = BandwidthPolicy::absolute(0.4, 0.6, 0.4);
        let fit = estimate(&data, &w, &bw, &ModelSpec::empty(), EPA).unwrap();
        estimates.push(fit.alpha_hat);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{estimates:?}");
}

#[test]
fn smoother_fit_sigma2_is_mean_squared_residual_when_bandwidths_agree() {
    let g = generate(&DgpConfig::example1(200, 9)).unwrap();
    let bw = BandwidthPolicy {
        h: ssdm::Bandwidth::Absolute(0.5),
        h1: ssdm::Bandwidth::Absolute(0.5 + 1e-12),
        selection_h: ssdm::Bandwidth::Absolute(0.5),
    };
    let fit = estimate(&g.data, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
    assert_abs_diff_eq!(fit.rss() / 200.0, fit.sigma2_hat, epsilon = 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn alpha_is_invariant_to_response_scaling(seed in any::<u64>(), c in 0.05..20.0f64) {
        let g = generate(&DgpConfig::example1(120, seed)).unwrap();
        let bw = BandwidthPolicy::absolute(0.5, 0.75, 0.5);
        let fit = estimate(&g.data, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
        let scaled = g.data.with_response(g.data.y() * c).unwrap();
        let fit_c = estimate(&scaled, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
        prop_assert!((fit.alpha_hat - fit_c.alpha_hat).abs() < 1e-6);
        prop_assert!((fit_c.sigma2_hat / (c * c) - fit.sigma2_hat).abs() < 1e-6 * fit.sigma2_hat.max(1.0));
        prop_assert!((&fit_c.beta_surface / c - &fit.beta_surface).amax() < 1e-6);
    }

    #[test]
    fn covariate_permutation_equivariance(seed in any::<u64>(), constant in prop::option::of(1usize..4)) {
        let g = generate(&DgpConfig::example1(120, seed)).unwrap();
        let order = [2usize, 0, 1];
        let permuted = g.data.permute_covariates(&order).unwrap();
        let bw = BandwidthPolicy::absolute(0.5, 0.75, 0.5);
        let spec = ModelSpec::new(constant, 3).unwrap();
        // Original component j sits at position inverse[j] after permuting.
        let inverse = |j: usize| order.iter().position(|&o| o == j).unwrap();
        let spec_p = ModelSpec::new(spec.zero_based().map(|j| inverse(j) + 1), 3).unwrap();
        let fit = estimate(&g.data, &g.weights, &bw, &spec, EPA).unwrap();
        let fit_p = estimate(&permuted, &g.weights, &bw, &spec_p, EPA).unwrap();
        prop_assert!((fit.alpha_hat - fit_p.alpha_hat).abs() < 1e-10);
        prop_assert!((fit.sigma2_hat - fit_p.sigma2_hat).abs() < 1e-10);
        for (k, &j) in order.iter().enumerate() {
            let a = fit.beta_surface.column(j);
            let b = fit_p.beta_surface.column(k);
            prop_assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn fit_round_trips_through_json(seed in any::<u64>(), se in any::<bool>(), constant in prop::option::of(1usize..4)) {
        let g = generate(&DgpConfig::example1(80, seed)).unwrap();
        let bw = BandwidthPolicy::absolute(0.6, 0.9, 0.6);
        let spec = ModelSpec::new(constant, 3).unwrap();
        let mut fit = estimate(&g.data, &g.weights, &bw, &spec, EPA).unwrap();
        if se {
            fit = standard_errors(&fit, &g.data, &g.weights, SeMode::Sandwich).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        io::write_fit(&fit, &path).unwrap();
        let back = io::read_fit(&path).unwrap();
        prop_assert_eq!(back, fit);
    }
}

#[test]
fn row_permutation_leaves_estimates_unchanged() {
    use rand::seq::SliceRandom;
    let g = generate(&DgpConfig::example1(150, 21)).unwrap();
    let mut order: Vec<usize> = (0..150).collect();
    order.shuffle(&mut common::rng(4));
    let permuted = g.data.permute_rows(&order).unwrap();
    let wp = build_exp_decay_weights(permuted.locations()).unwrap();
    let bw = BandwidthPolicy::absolute(0.4, 0.6, 0.4);
    let a = estimate(&g.data, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
    let b = estimate(&permuted, &wp, &bw, &ModelSpec::empty(), EPA).unwrap();
    assert_abs_diff_eq!(a.alpha_hat, b.alpha_hat, epsilon = 1e-8);
    assert_abs_diff_eq!(a.sigma2_hat, b.sigma2_hat, epsilon = 1e-8);
    for (i, &k) in order.iter().enumerate() {
        assert_abs_diff_eq!(b.residuals[i], a.residuals[k], epsilon = 1e-7);
    }
}

#[test]
fn monte_carlo_is_identical_across_thread_counts() {
    let mut cfg = Table1Config::new(vec![120], 4, 17);
    cfg.standard_errors = Some(SeMode::Normal);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let reports = pool.install(|| run_table1(&cfg)).unwrap();
        serde_json::to_string(&reports).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(1));
}

#[test]
fn plug_in_standard_errors_are_finite() {
    let g = generate(&DgpConfig::example1(200, 2)).unwrap();
    let bw = BandwidthPolicy::absolute(0.4, 0.6, 0.4);
    let fit = estimate(&g.data, &g.weights, &bw, &ModelSpec::new([3], 3).unwrap(), EPA).unwrap();
    for mode in [SeMode::Normal, SeMode::Sandwich] {
        let f = standard_errors(&fit, &g.data, &g.weights, mode).unwrap();
        assert!(f.se_alpha.unwrap() > 0.0);
        assert!(f.se_sigma2.unwrap() > 0.0);
        let se = f.beta_se_surface.unwrap();
        assert!(se.iter().all(|v| v.is_finite() && *v > 0.0));
    }
    let w0 = WeightMatrix::zeros(200);
    let y = DVector::from_iterator(200, g.data.y().iter().copied());
    let data = g.data.with_response(y).unwrap();
    let fit0 = estimate(&data, &w0, &bw, &ModelSpec::empty(), EPA).unwrap();
    let f0 = standard_errors(&fit0, &data, &w0, SeMode::Normal).unwrap();
    assert!(f0.se_alpha.is_none());
    assert!(f0.se_sigma2.unwrap() > 0.0);
}

// Parametric special case: with every coefficient constant the plug-in
// variance of α̂ is the (α, α) entry of the inverse of the full
// (β, α, σ²) information matrix of the Gaussian spatial lag model.
#[test]
fn constant_model_standard_error_matches_parametric_information() {
    let g = generate(&DgpConfig::example1(250, 31)).unwrap();
    let bw = BandwidthPolicy::absolute(0.4, 0.6, 0.4);
    let fit = estimate(&g.data, &g.weights, &bw, &ModelSpec::all(3), EPA).unwrap();
    let fit = standard_errors(&fit, &g.data, &g.weights, SeMode::Normal).unwrap();

    let n = 250;
    let nf = n as f64;
    let x = g.data.x();
    let beta = DVector::from_fn(3, |j, _| fit.beta_const[&(j + 1)]);
    let s2 = fit.sigma2_hat;
    let a = DMatrix::identity(n, n) - g.weights.entries() * fit.alpha_hat;
    let gm = g.weights.entries() * a.try_inverse().unwrap();
    let gxb = &gm * (x * &beta);
    let mut info = DMatrix::zeros(5, 5);
    info.view_mut((0, 0), (3, 3)).copy_from(&(x.transpose() * x / (nf * s2)));
    let xb = x.transpose() * &gxb / (nf * s2);
    for j in 0..3 {
        info[(j, 3)] = xb[j];
        info[(3, j)] = xb[j];
    }
    info[(3, 3)] = gxb.norm_squared() / (nf * s2)
        + ((&gm * &gm).trace() + (gm.transpose() * &gm).trace()) / nf;
    info[(3, 4)] = gm.trace() / (nf * s2);
    info[(4, 3)] = info[(3, 4)];
    info[(4, 4)] = 1.0 / (2.0 * s2 * s2);
    let cov = info.try_inverse().unwrap();
    let se_alpha = (cov[(3, 3)] / nf).sqrt();
    let se_sigma2 = (cov[(4, 4)] / nf).sqrt();
    assert_abs_diff_eq!(fit.se_alpha.unwrap(), se_alpha, epsilon = 1e-10 * se_alpha);
    assert_abs_diff_eq!(fit.se_sigma2.unwrap(), se_sigma2, epsilon = 1e-10 * se_sigma2);
}
