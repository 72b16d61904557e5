//! Acceptance suite. Each test prints one `ACCEPTANCE <k> PASS|FAIL|SKIPPED`
//! line (written straight to stderr, so it shows without `--nocapture`).

mod common;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use ssdm::io::{read_dataset, DatasetSchema};
use ssdm::kernels::KernelSpec;
use ssdm::locallinear::smoother_matrix;
use ssdm::profile::{concentrated_loglik, estimate_with, AlphaMode};
use ssdm::selection::{effective_params, select};
use ssdm::simulate::{generate, run_table1, run_table2, DgpConfig, Table1Config, Table2Config};
use ssdm::weights::build_exp_decay_weights;
use ssdm::{
    estimate, Algorithm, Bandwidth, BandwidthPolicy, Criterion, ModelSpec, SeMode,
    SelectionSettings, SmootherCache, WeightMatrix,
};

const EPA: KernelSpec = KernelSpec::Epanechnikov;

struct Report {
    id: u8,
    title: &'static str,
    checks: Vec<(String, bool)>,
}

impl Report {
    fn new(id: u8, title: &'static str) -> Self {
        Report {
            id,
            title,
            checks: Vec::new(),
        }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    fn finish(self) {
        let ok = self.checks.iter().all(|c| c.1);
        let detail: Vec<String> = self
            .checks
            .iter()
            .map(|(w, pass)| format!("{}{}", if *pass { "" } else { "NOT " }, w))
            .collect();
        let line = format!(
            "\nACCEPTANCE {:>2} {} {}: {}\n",
            self.id,
            if ok { "PASS" } else { "FAIL" },
            self.title,
            detail.join("; ")
        );
        let _ = std::io::stderr().write_all(line.as_bytes());
        assert!(ok, "{}", line.trim_end());
    }

    fn skip(self, why: &str) {
        let line = format!("\nACCEPTANCE {:>2} SKIPPED {}: {}\n", self.id, self.title, why);
        let _ = std::io::stderr().write_all(line.as_bytes());
    }
}

fn within(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

#[test]
fn acceptance_01_estimation_accuracy() {
    let mut rep = Report::new(1, "estimation study, Example 1");
    let cfg = Table1Config::new(vec![400, 600], 50, 2024);
    let reports = run_table1(&cfg).unwrap();
    let (r400, r600) = (&reports[0], &reports[1]);
    let mse_a = r400.mse_alpha.unwrap();
    let mse_s = r400.mse_sigma2.unwrap();
    let mise = r400.mise_beta.clone().unwrap();
    rep.check(
        format!("MSE(alpha)={mse_a:.4} in [0.006, 0.026]"),
        within(mse_a, 0.006, 0.026),
    );
    rep.check(
        format!("MSE(sigma2)={mse_s:.4} in [0.004, 0.018]"),
        within(mse_s, 0.004, 0.018),
    );
    rep.check(
        format!("MISE(beta1)={:.4} in [0.04, 0.16]", mise[0]),
        within(mise[0], 0.04, 0.16),
    );
    let mut pairs = vec![
        ("MSE(alpha)", mse_a, r600.mse_alpha.unwrap()),
        ("MSE(sigma2)", mse_s, r600.mse_sigma2.unwrap()),
    ];
    let mise600 = r600.mise_beta.clone().unwrap();
    let names = ["MISE(beta1)", "MISE(beta2)", "MISE(beta3)"];
    for j in 0..3 {
        pairs.push((names[j], mise[j], mise600[j]));
    }
    for (name, a, b) in pairs {
        rep.check(format!("{name} n=600 {b:.4} < n=400 {a:.4}"), b < a);
    }
    rep.check(
        format!("failures {}+{} < 5%", r400.failures, r600.failures),
        r400.failures * 20 < 50 && r600.failures * 20 < 50,
    );
    rep.finish();
}

#[test]
fn acceptance_02_selection_frequencies() {
    let mut rep = Report::new(2, "selection study, Example 2, n=500");
    let ratio = |criterion, algorithm| {
        let cfg = Table2Config::new(vec![500], 50, criterion, algorithm, 2024);
        run_table2(&cfg).map(|r| r[0].selection_ratio("{5}").unwrap())
    };
    let runs = [
        ("BIC", ratio(Criterion::Bic, Algorithm::BackwardElimination), ratio(Criterion::Bic, Algorithm::Ctar), 0.80),
        ("AIC", ratio(Criterion::Aic, Algorithm::BackwardElimination), ratio(Criterion::Aic, Algorithm::Ctar), 0.75),
    ];
    for (name, backward, ctar, floor) in runs {
        match &backward {
            Ok(b) => rep.check(format!("{name} backward {b:.2} >= {floor:.2}"), *b >= floor),
            Err(e) => rep.check(format!("{name} backward completed ({e})"), false),
        }
        match (&backward, &ctar) {
            (Ok(b), Ok(c)) => rep.check(
                format!("{name} CTAR {c:.2} within 0.10 of {b:.2}"),
                (c - b).abs() <= 0.10 + 1e-12,
            ),
            (_, Err(e)) => rep.check(format!("{name} CTAR completed ({e})"), false),
            (Err(_), Ok(c)) => rep.check(format!("{name} CTAR {c:.2} without a backward baseline"), false),
        }
    }
    rep.finish();
}

#[test]
fn acceptance_03_concentrated_likelihood_oracle() {
    let mut rep = Report::new(3, "concentrated likelihood vs LU determinant");
    let mut r = common::rng(303);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let n = r.random_range(20..=100);
        let p = r.random_range(1..=3);
        let data = common::random_dataset(n, p, 1000 + inst);
        let w = build_exp_decay_weights(data.locations()).unwrap();
        let h = 0.6 + 0.4 * r.random::<f64>();
        let s = smoother_matrix(&data, h, EPA).unwrap();
        let cache = SmootherCache::new(s.clone(), h, &w, data.y()).unwrap();
        let interval = w.alpha_interval().unwrap();
        let g = 2001;
        let step = interval.width() / (g + 1) as f64;
        let i_s = DMatrix::identity(n, n) - &s;
        let wy = w.entries() * data.y();
        for k in 0..g {
            let alpha = interval.lower + (k + 1) as f64 * step;
            let sigma2 = (&i_s * (data.y() - &wy * alpha)).norm_squared() / n as f64;
            let oracle =
                -0.5 * n as f64 * sigma2.ln() + common::logdet_oracle(w.entries(), alpha);
            let v = concentrated_loglik(alpha, &cache, &w).unwrap();
            worst = worst.max((v - oracle).abs());
        }
    }
    rep.check(format!("max abs difference {worst:.2e} < 1e-8 over 20 x 2001 points"), worst < 1e-8);
    rep.finish();
}

#[test]
fn acceptance_04_quadratic_identity() {
    let mut rep = Report::new(4, "quadratic identity for sigma2(alpha)");
    let data = common::random_dataset(150, 3, 404);
    let w = build_exp_decay_weights(data.locations()).unwrap();
    let s = smoother_matrix(&data, 0.5, EPA).unwrap();
    let cache = SmootherCache::new(s.clone(), 0.5, &w, data.y()).unwrap();
    let i_s = DMatrix::identity(150, 150) - &s;
    let wy = w.entries() * data.y();
    let mut r = common::rng(4);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let alpha = r.random_range(-0.999..0.999);
        let direct = (&i_s * (data.y() - &wy * alpha)).norm_squared() / 150.0;
        worst = worst.max((cache.sigma2(alpha) - direct).abs());
    }
    rep.check(format!("max abs difference {worst:.2e} < 1e-10 at 20 alphas"), worst < 1e-10);
    rep.finish();
}

#[test]
fn acceptance_05_least_squares_degeneration() {
    let mut rep = Report::new(5, "all-constant model with alpha = 0 is least squares");
    let data = common::random_dataset(200, 4, 505);
    let w = WeightMatrix::zeros(200);
    let bw = BandwidthPolicy::absolute(0.5, 100.0, 0.5);
    let fit =
        estimate_with(&data, &w, &bw, &ModelSpec::all(4), EPA, AlphaMode::Fixed(0.0)).unwrap();
    let beta = common::ols_oracle(data.x(), data.y());
    let db = (0..4)
        .map(|j| (fit.beta_const[&(j + 1)] - beta[j]).abs())
        .fold(0.0, f64::max);
    let rss = (data.y() - data.x() * &beta).norm_squared();
    let ds = (fit.sigma2_hat - rss / 200.0).abs();
    rep.check(format!("max |beta - beta_ols| {db:.2e} < 1e-6"), db < 1e-6);
    rep.check(format!("|sigma2 - RSS/n| {ds:.2e} < 1e-6"), ds < 1e-6);
    rep.finish();
}

#[test]
fn acceptance_06_smoother_exactness() {
    let mut rep = Report::new(6, "local-linear exactness");
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let base = common::random_dataset(200, 3, 600 + seed);
        let mut r = common::rng(seed);
        let c: Vec<f64> = (0..9).map(|_| r.random_range(-2.0..2.0)).collect();
        let y = DVector::from_fn(200, |i, _| {
            let [u, v] = base.locations()[i];
            (0..3)
                .map(|j| base.x()[(i, j)] * (c[3 * j] + c[3 * j + 1] * u + c[3 * j + 2] * v))
                .sum()
        });
        for h in [0.3, 0.5, 1.0] {
            let s = smoother_matrix(&base, h, EPA).unwrap();
            worst = worst.max((&s * &y - &y).amax());
        }
    }
    rep.check(format!("sup error {worst:.2e} < 1e-8"), worst < 1e-8);
    rep.finish();
}

#[test]
fn acceptance_07_effective_parameters() {
    let mut rep = Report::new(7, "kernel constants and effective parameters");
    let c = EPA.constants();
    rep.check(format!("K(0) = {}", c.k0), c.k0 == 0.75);
    // Composite Simpson on [-1, 1] of K(t)^2.
    let m = 2000;
    let hstep = 2.0 / m as f64;
    let k = |t: f64| 0.75 * (1.0 - t * t);
    let mut acc = k(-1.0).powi(2) + k(1.0).powi(2);
    for i in 1..m {
        let t = -1.0 + i as f64 * hstep;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * k(t).powi(2);
    }
    let nu = acc * hstep / 3.0;
    rep.check(
        format!("nu* {} vs quadrature {nu:.12}", c.nu_star),
        (c.nu_star - nu).abs() < 1e-8,
    );
    let t = effective_params(1, 0, EPA, 0.2).unwrap();
    rep.check(format!("effective_params(1, 0, 0.2) = {t}"), t == 19.125);
    rep.finish();
}

#[test]
fn acceptance_08_boston() {
    let rep = Report::new(8, "Boston house prices");
    let Ok(path) = std::env::var("SSDM_BOSTON_CSV") else {
        rep.skip("set SSDM_BOSTON_CSV to a corrected Boston file with LON/LAT columns");
        return;
    };
    let mut rep = rep;
    let data = read_dataset(&path, &DatasetSchema::boston()).unwrap();
    rep.check(format!("n = {}", data.n()), data.n() == 506);
    let w = build_exp_decay_weights(data.locations()).unwrap();
    let wanted = ModelSpec::new([3, 5], 5).unwrap();
    let mut hits = Vec::new();
    for k in 0..=5 {
        let frac = 0.15 + 0.01 * k as f64;
        let bw = BandwidthPolicy {
            h: Bandwidth::FractionOfRange(frac),
            h1: Bandwidth::FractionOfRange(1.5 * frac),
            selection_h: Bandwidth::FractionOfRange(frac),
        };
        let result = select(
            &data,
            &w,
            &bw,
            EPA,
            Algorithm::BackwardElimination,
            SelectionSettings::new(Criterion::Bic),
        );
        if let Ok(result) = result {
            if wanted.indices().all(|j| result.chosen.contains(j)) {
                hits.push(format!("{frac:.2}:{}", result.chosen));
            }
        }
    }
    rep.check(
        format!("components 3 and 5 constant at selection bandwidths [{}]", hits.join(", ")),
        !hits.is_empty(),
    );
    let bw = BandwidthPolicy {
        h: Bandwidth::FractionOfRange(0.4),
        h1: Bandwidth::FractionOfRange(0.6),
        selection_h: Bandwidth::FractionOfRange(0.4),
    };
    let fit = estimate(&data, &w, &bw, &wanted, EPA).unwrap();
    rep.check(
        format!("alpha {:.4} in (0.05, 0.45)", fit.alpha_hat),
        fit.alpha_hat > 0.05 && fit.alpha_hat < 0.45,
    );
    let b3 = fit.beta_const[&3];
    let b5 = fit.beta_const[&5];
    rep.check(format!("beta3 {b3:.4} > 0"), b3 > 0.0);
    rep.check(format!("beta5 {b5:.4} < 0"), b5 < 0.0);
    rep.finish();
}

#[test]
fn acceptance_09_invariances_and_determinism() {
    let mut rep = Report::new(9, "invariances and determinism");
    let g = generate(&DgpConfig::example1(200, 909)).unwrap();
    let bw = BandwidthPolicy::absolute(0.4, 0.6, 0.4);
    let fit = estimate(&g.data, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
    let scaled = g.data.with_response(g.data.y() * 7.5).unwrap();
    let fit_s = estimate(&scaled, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
    let da = (fit.alpha_hat - fit_s.alpha_hat).abs();
    rep.check(format!("response scaling |d alpha| {da:.2e} < 1e-6"), da < 1e-6);

    let order = [1usize, 2, 0];
    let permuted = g.data.permute_covariates(&order).unwrap();
    let fit_p = estimate(&permuted, &g.weights, &bw, &ModelSpec::empty(), EPA).unwrap();
    let mut dp = (fit.alpha_hat - fit_p.alpha_hat).abs();
    for (k, &j) in order.iter().enumerate() {
        dp = dp.max((fit.beta_surface.column(j) - fit_p.beta_surface.column(k)).amax());
    }
    rep.check(format!("covariate permutation max diff {dp:.2e} <= 1e-10"), dp <= 1e-10);

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut t1 = Table1Config::new(vec![150], 6, 9);
            t1.standard_errors = Some(SeMode::Normal);
            let a = run_table1(&t1).unwrap();
            let t2 = Table2Config::new(vec![300], 4, Criterion::Bic, Algorithm::BackwardElimination, 9);
            let b = run_table2(&t2).unwrap();
            serde_json::to_string(&(a, b)).unwrap()
        })
    };
    let one = run(1);
    let four = run(4);
    rep.check("Monte Carlo reports identical with 1 and 4 threads", one == four);
    rep.finish();
}

#[test]
fn acceptance_10_standard_error_calibration() {
    let mut rep = Report::new(10, "standard error of alpha, Example 1, n=500");
    let mut cfg = Table1Config::new(vec![500], 100, 1010);
    cfg.standard_errors = Some(SeMode::Normal);
    let r = &run_table1(&cfg).unwrap()[0];
    let sd = r.sd_alpha.unwrap();
    let se = r.mean_se_alpha.unwrap();
    let ratio = sd / se;
    rep.check(
        format!("sd {sd:.4} / mean se {se:.4} = {ratio:.3} in [0.7, 1.3]"),
        within(ratio, 0.7, 1.3),
    );
    rep.finish();
}
