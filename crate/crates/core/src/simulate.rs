//! Data generation and the Monte Carlo harness.
//!
//! Every replication draws from its own ChaCha8 stream, selected by
//! `(n, replication)` under a common seed, so a replication's data do not
//! depend on execution order or thread count. Per-replication results are
//! collected in replication order and reduced sequentially.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdmError};
use crate::kernels::KernelSpec;
use crate::locallinear::SpatialDataset;
use crate::profile::{
    estimate, standard_errors, Bandwidth, BandwidthPolicy, FitResult, ModelSpec, SeMode,
};
use crate::selection::{select, Algorithm, Criterion, SelectionSettings};
use crate::serde_util;
use crate::weights::{build_exp_decay_weights, WeightMatrix};

/// Closed-form coefficient functions on the unit square, `r² = ‖s‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaFunction {
    /// `sin(π r²)`
    SinPiR2,
    /// `cos(π r²)`
    CosPiR2,
    /// `exp(r²)`
    ExpR2,
    /// `sin²(π r²)`
    Sin2PiR2,
    Constant(f64),
}

impl BetaFunction {
    pub fn eval(self, s: [f64; 2]) -> f64 {
        let r2 = s[0] * s[0] + s[1] * s[1];
        match self {
            BetaFunction::SinPiR2 => (PI * r2).sin(),
            BetaFunction::CosPiR2 => (PI * r2).cos(),
            BetaFunction::ExpR2 => r2.exp(),
            BetaFunction::Sin2PiR2 => (PI * r2).sin().powi(2),
            BetaFunction::Constant(c) => c,
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, BetaFunction::Constant(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub alpha: f64,
    pub sigma2: f64,
    pub beta: Vec<BetaFunction>,
    pub seed: u64,
    /// Substream of the seed; replications use distinct streams.
    #[serde(default)]
    pub stream: u64,
}

impl DgpConfig {
    /// `p = 3`, α = 0.5, σ² = 1, β = (sin πr², cos πr², exp r²).
    pub fn example1(n: usize, seed: u64) -> Self {
        DgpConfig {
            n,
            alpha: 0.5,
            sigma2: 1.0,
            beta: vec![
                BetaFunction::SinPiR2,
                BetaFunction::CosPiR2,
                BetaFunction::ExpR2,
            ],
            seed,
            stream: 0,
        }
    }

    /// Example 1 plus `β4 = sin²(πr²)` and the constant `β5 = 1`.
    pub fn example2(n: usize, seed: u64) -> Self {
        let mut cfg = Self::example1(n, seed);
        cfg.beta.push(BetaFunction::Sin2PiR2);
        cfg.beta.push(BetaFunction::Constant(1.0));
        cfg
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// The constant set of the true model.
    pub fn true_model(&self) -> ModelSpec {
        ModelSpec::new(
            self.beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.is_constant())
                .map(|(j, _)| j + 1),
            self.p(),
        )
        .expect("indices in range")
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: SpatialDataset,
    pub weights: WeightMatrix,
    /// True `β_j(s_i)`, n × p.
    pub beta_true: DMatrix<f64>,
    /// `m_i = X_iᵀβ(s_i)`.
    pub mean: DVector<f64>,
    pub epsilon: DVector<f64>,
}

/// Draw `s_i ~ U[0,1]²`, `X_i ~ N(0, I_p)`, `ε_i ~ N(0, σ²)`, build the
/// exponential-decay weights and solve `(I − αW)y = m + ε`.
pub fn generate(config: &DgpConfig) -> Result<GeneratedData> {
    let n = config.n;
    let p = config.p();
    if p == 0 {
        return Err(SsdmError::InvalidArgument("no coefficient functions".into()));
    }
    if !(config.sigma2 > 0.0) {
        return Err(SsdmError::InvalidArgument(format!(
            "sigma2 must be positive, got {}",
            config.sigma2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);
    let locations: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let sd = config.sigma2.sqrt();
    let epsilon = DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal));

    let weights = build_exp_decay_weights(&locations)?;
    let interval = weights.alpha_interval()?;
    if !interval.contains(config.alpha) {
        return Err(SsdmError::InvalidArgument(format!(
            "alpha {} outside the admissible interval ({}, {})",
            config.alpha, interval.lower, interval.upper
        )));
    }
    let beta_true = DMatrix::from_fn(n, p, |i, j| config.beta[j].eval(locations[i]));
    let mean = DVector::from_fn(n, |i, _| (0..p).map(|j| x[(i, j)] * beta_true[(i, j)]).sum());
    let rhs = &mean + &epsilon;
    let y = if config.alpha == 0.0 {
        rhs
    } else {
        weights
            .spatial_filter(config.alpha)
            .lu()
            .solve(&rhs)
            .ok_or_else(|| SsdmError::numerical("simulate", "I - alpha W is singular"))?
    };
    let data = SpatialDataset::new(locations, x, y)?;
    Ok(GeneratedData {
        data,
        weights,
        beta_true,
        mean,
        epsilon,
    })
}

/// `(1/n) Σ_i (β̂_j(s_i) − β_j(s_i))²` per column.
pub fn integrated_squared_error(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<f64> {
    let n = truth.nrows() as f64;
    (0..truth.ncols())
        .map(|j| {
            estimate
                .column(j)
                .iter()
                .zip(truth.column(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n
        })
        .collect()
}

fn stream_id(n: usize, replication: usize) -> u64 {
    ((n as u64) << 32) | replication as u64
}

const MAX_FAILURE_FRACTION: f64 = 0.05;

fn check_failures(n: usize, reps: usize, failures: &[String]) -> Result<()> {
    if failures.len() as f64 >= MAX_FAILURE_FRACTION * reps as f64 && !failures.is_empty() {
        return Err(SsdmError::numerical(
            "simulate",
            format!(
                "{} of {} replications failed at n = {} (first: {})",
                failures.len(),
                reps,
                n,
                failures[0]
            ),
        ));
    }
    for f in failures {
        log::warn!("replication excluded at n = {n}: {f}");
    }
    Ok(())
}

/// Settings of an estimation study on the Example-1 design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Config {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub bandwidths: BandwidthPolicy,
    pub kernel: KernelSpec,
    pub seed: u64,
    /// Also compute plug-in standard errors in every replication.
    pub standard_errors: Option<SeMode>,
}

impl Table1Config {
    /// h = 0.4, h1 = 0.6, Epanechnikov kernel.
    pub fn new(n_list: Vec<usize>, reps: usize, seed: u64) -> Self {
        Table1Config {
            n_list,
            reps,
            bandwidths: BandwidthPolicy::absolute(0.4, 0.6, 0.3),
            kernel: KernelSpec::Epanechnikov,
            seed,
            standard_errors: None,
        }
    }
}

/// Settings of a selection study on the Example-2 design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Config {
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub criterion: Criterion,
    pub algorithm: Algorithm,
    /// Defaults to 0.2 (AIC) or 0.3 (BIC).
    pub selection_h: Option<f64>,
    pub kernel: KernelSpec,
    pub seed: u64,
    pub strict: bool,
}

impl Table2Config {
    pub fn new(
        n_list: Vec<usize>,
        reps: usize,
        criterion: Criterion,
        algorithm: Algorithm,
        seed: u64,
    ) -> Self {
        Table2Config {
            n_list,
            reps,
            criterion,
            algorithm,
            selection_h: None,
            kernel: KernelSpec::Epanechnikov,
            seed,
            strict: false,
        }
    }

    pub fn resolved_selection_h(&self) -> f64 {
        self.selection_h
            .unwrap_or_else(|| self.criterion.default_selection_bandwidth())
    }
}

/// The replication with median aggregate error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRun {
    pub replication: usize,
    pub aggregate_error: f64,
    pub locations: Vec<[f64; 2]>,
    #[serde(with = "serde_util::matrix_rows")]
    pub beta_true: DMatrix<f64>,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub study: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Replications excluded after a fit error.
    pub failures: usize,
    pub mse_alpha: Option<f64>,
    pub mse_sigma2: Option<f64>,
    pub mise_beta: Option<Vec<f64>>,
    pub mean_alpha: Option<f64>,
    pub sd_alpha: Option<f64>,
    pub mean_sigma2: Option<f64>,
    pub mean_se_alpha: Option<f64>,
    pub criterion: Option<Criterion>,
    pub algorithm: Option<Algorithm>,
    pub selection_h: Option<f64>,
    /// Model label (`"{5}"`, …, `"other"`) to number of picks.
    pub selection_counts: Option<BTreeMap<String, usize>>,
    pub median_run: Option<MedianRun>,
}

impl MonteCarloReport {
    pub fn selection_ratio(&self, label: &str) -> Option<f64> {
        let counts = self.selection_counts.as_ref()?;
        let total: usize = counts.values().sum();
        Some(*counts.get(label).unwrap_or(&0) as f64 / total as f64)
    }
}

struct EstimationRep {
    alpha: f64,
    sigma2: f64,
    ise: Vec<f64>,
    se_alpha: Option<f64>,
}

fn estimation_replication(
    config: &Table1Config,
    n: usize,
    replication: usize,
) -> Result<(EstimationRep, FitResult, GeneratedData)> {
    let dgp = DgpConfig::example1(n, config.seed).with_stream(stream_id(n, replication));
    let generated = generate(&dgp)?;
    let mut fit = estimate(
        &generated.data,
        &generated.weights,
        &config.bandwidths,
        &ModelSpec::empty(),
        config.kernel,
    )?;
    if let Some(mode) = config.standard_errors {
        fit = standard_errors(&fit, &generated.data, &generated.weights, mode)?;
    }
    let rep = EstimationRep {
        alpha: fit.alpha_hat,
        sigma2: fit.sigma2_hat,
        ise: integrated_squared_error(&fit.beta_surface, &generated.beta_true),
        se_alpha: fit.se_alpha,
    };
    Ok((rep, fit, generated))
}

/// MSE of α̂ and σ̂², MISE of each surface, and the median-performance
/// replication, for each sample size.
pub fn run_table1(config: &Table1Config) -> Result<Vec<MonteCarloReport>> {
    if config.reps < 2 {
        return Err(SsdmError::InvalidArgument("need at least 2 replications".into()));
    }
    config
        .n_list
        .iter()
        .map(|&n| table1_for_n(config, n))
        .collect()
}

fn table1_for_n(config: &Table1Config, n: usize) -> Result<MonteCarloReport> {
    let truth = DgpConfig::example1(n, config.seed);
    let outcomes: Vec<Result<EstimationRep>> = (0..config.reps)
        .into_par_iter()
        .map(|r| estimation_replication(config, n, r).map(|(rep, _, _)| rep))
        .collect();
    let mut reps = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(rep) => reps.push((r, rep)),
            Err(e) => failures.push(format!("replication {r}: {e}")),
        }
    }
    check_failures(n, config.reps, &failures)?;

    let k = reps.len() as f64;
    let p = truth.p();
    let mse_alpha = reps.iter().map(|(_, r)| (r.alpha - truth.alpha).powi(2)).sum::<f64>() / k;
    let mse_sigma2 = reps.iter().map(|(_, r)| (r.sigma2 - truth.sigma2).powi(2)).sum::<f64>() / k;
    let mise: Vec<f64> = (0..p)
        .map(|j| reps.iter().map(|(_, r)| r.ise[j]).sum::<f64>() / k)
        .collect();
    let mean_alpha = reps.iter().map(|(_, r)| r.alpha).sum::<f64>() / k;
    let sd_alpha = (reps.iter().map(|(_, r)| (r.alpha - mean_alpha).powi(2)).sum::<f64>()
        / (k - 1.0))
        .sqrt();
    let mean_sigma2 = reps.iter().map(|(_, r)| r.sigma2).sum::<f64>() / k;
    let se: Vec<f64> = reps.iter().filter_map(|(_, r)| r.se_alpha).collect();
    let mean_se_alpha = (!se.is_empty()).then(|| se.iter().sum::<f64>() / se.len() as f64);

    let mut ranked: Vec<(f64, usize)> = reps
        .iter()
        .map(|(idx, r)| {
            let agg = (r.alpha - truth.alpha).powi(2)
                + (r.sigma2 - truth.sigma2).powi(2)
                + r.ise.iter().sum::<f64>();
            (agg, *idx)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (aggregate_error, median_idx) = ranked[(ranked.len() - 1) / 2];
    let (_, fit, generated) = estimation_replication(config, n, median_idx)?;

    Ok(MonteCarloReport {
        study: "table1".into(),
        n,
        reps: config.reps,
        seed: config.seed,
        failures: failures.len(),
        mse_alpha: Some(mse_alpha),
        mse_sigma2: Some(mse_sigma2),
        mise_beta: Some(mise),
        mean_alpha: Some(mean_alpha),
        sd_alpha: Some(sd_alpha),
        mean_sigma2: Some(mean_sigma2),
        mean_se_alpha,
        criterion: None,
        algorithm: None,
        selection_h: None,
        selection_counts: None,
        median_run: Some(MedianRun {
            replication: median_idx,
            aggregate_error,
            locations: generated.data.locations().to_vec(),
            beta_true: generated.beta_true,
            fit,
        }),
    })
}

/// Column labels of the selection table, in display order.
pub const TABLE2_MODELS: [&str; 6] = [
    "{5}",
    "{1, 5}",
    "{4, 5}",
    "{1, 4, 5}",
    "{1, 2, 4, 5}",
    "{1, 2, 3, 4, 5}",
];
pub const OTHER_BUCKET: &str = "other";

fn bucket(model: &ModelSpec) -> String {
    let label = model.to_string();
    if TABLE2_MODELS.contains(&label.as_str()) {
        label
    } else {
        OTHER_BUCKET.to_string()
    }
}

/// Pick frequencies of the selection procedure on the Example-2 design.
pub fn run_table2(config: &Table2Config) -> Result<Vec<MonteCarloReport>> {
    if config.reps < 2 {
        return Err(SsdmError::InvalidArgument("need at least 2 replications".into()));
    }
    config
        .n_list
        .iter()
        .map(|&n| table2_for_n(config, n))
        .collect()
}

/// Model chosen in one replication of the selection study.
pub fn table2_replication(config: &Table2Config, n: usize, replication: usize) -> Result<ModelSpec> {
    let dgp = DgpConfig::example2(n, config.seed).with_stream(stream_id(n, replication));
    let generated = generate(&dgp)?;
    let sel_h = config.resolved_selection_h();
    let bw = BandwidthPolicy {
        h: Bandwidth::Absolute(sel_h),
        h1: Bandwidth::Absolute(1.5 * sel_h),
        selection_h: Bandwidth::Absolute(sel_h),
    };
    let mut settings = SelectionSettings::new(config.criterion);
    settings.strict = config.strict;
    let result = select(
        &generated.data,
        &generated.weights,
        &bw,
        config.kernel,
        config.algorithm,
        settings,
    )?;
    Ok(result.chosen)
}

fn table2_for_n(config: &Table2Config, n: usize) -> Result<MonteCarloReport> {
    let outcomes: Vec<Result<ModelSpec>> = (0..config.reps)
        .into_par_iter()
        .map(|r| table2_replication(config, n, r))
        .collect();
    let mut counts: BTreeMap<String, usize> = TABLE2_MODELS
        .iter()
        .chain(std::iter::once(&OTHER_BUCKET))
        .map(|m| (m.to_string(), 0))
        .collect();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(model) => *counts.entry(bucket(&model)).or_insert(0) += 1,
            Err(e) => failures.push(format!("replication {r}: {e}")),
        }
    }
    check_failures(n, config.reps, &failures)?;
    Ok(MonteCarloReport {
        study: "table2".into(),
        n,
        reps: config.reps,
        seed: config.seed,
        failures: failures.len(),
        mse_alpha: None,
        mse_sigma2: None,
        mise_beta: None,
        mean_alpha: None,
        sd_alpha: None,
        mean_sigma2: None,
        mean_se_alpha: None,
        criterion: Some(config.criterion),
        algorithm: Some(config.algorithm),
        selection_h: Some(config.resolved_selection_h()),
        selection_counts: Some(counts),
        median_run: None,
    })
}
