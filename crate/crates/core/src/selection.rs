//! Information criteria and the search for constant coefficient components.
//!
//! An unknown surface estimated with bandwidth `h` is charged
//! `(2K(0)² − ν*²)/h²` parameters, so a model with `q` of its `p` components
//! constant has `𝒦 = q + (p − q)(2K(0)² − ν*²)/h²`. The criterion is
//!
//! ```text
//! AIC = n log σ̂ − log|Â| + RSS/(2σ̂²) + 𝒦
//! ```
//!
//! i.e. negative log-likelihood (without the 2π term) plus one times the
//! parameter count. BIC uses the same scale with penalty `(log n / 2)·𝒦`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdmError};
use crate::kernels::KernelSpec;
use crate::locallinear::{SmootherBasis, SpatialDataset};
use crate::profile::{
    fit_with_bases, AlphaMode, BandwidthPolicy, FitResult, LogDeterminant, ModelSpec,
    DEFAULT_GRID_POINTS,
};
use crate::serde_util;
use crate::weights::WeightMatrix;

/// `q + (p − q)(2K(0)² − ν*²)/h²`.
pub fn effective_params(p: usize, q: usize, kernel: KernelSpec, h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(SsdmError::InvalidArgument(format!(
            "bandwidth must be positive and finite, got {h}"
        )));
    }
    if q > p {
        return Err(SsdmError::InvalidArgument(format!(
            "{q} constant components out of {p}"
        )));
    }
    let per_surface = kernel.constants().df_factor() * (1.0 / h).powi(2);
    Ok(q as f64 + (p - q) as f64 * per_surface)
}

fn fit_term(fit: &FitResult) -> f64 {
    let n = fit.n() as f64;
    0.5 * n * fit.sigma2_hat.ln() - fit.log_det + fit.rss() / (2.0 * fit.sigma2_hat)
}

/// Akaike criterion on the half scale: fit term plus `k`.
pub fn aic(fit: &FitResult, k: f64) -> f64 {
    fit_term(fit) + k
}

/// Bayesian criterion: fit term plus `(ln n / 2)·k`.
pub fn bic(fit: &FitResult, k: f64, n: f64) -> f64 {
    fit_term(fit) + 0.5 * n.ln() * k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    pub fn value(self, fit: &FitResult) -> f64 {
        match self {
            Criterion::Aic => aic(fit, fit.n_effective_params),
            Criterion::Bic => bic(fit, fit.n_effective_params, fit.n() as f64),
        }
    }

    /// Selection bandwidth on the unit square: 0.2 for AIC, 0.3 for BIC.
    pub fn default_selection_bandwidth(self) -> f64 {
        match self {
            Criterion::Aic => 0.2,
            Criterion::Bic => 0.3,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
        })
    }
}

impl FromStr for Criterion {
    type Err = SsdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(SsdmError::InvalidArgument(format!(
                "unknown criterion {other:?} (expected aic or bic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    BackwardElimination,
    Ctar,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::BackwardElimination => "backward",
            Algorithm::Ctar => "ctar",
        })
    }
}

impl FromStr for Algorithm {
    type Err = SsdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "backward" | "backward_elimination" => Ok(Algorithm::BackwardElimination),
            "ctar" => Ok(Algorithm::Ctar),
            other => Err(SsdmError::InvalidArgument(format!(
                "unknown algorithm {other:?} (expected backward or ctar)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionSettings {
    pub criterion: Criterion,
    /// Re-profile α for every candidate instead of holding the fully
    /// functional α̂ fixed.
    pub strict: bool,
    pub grid_points: usize,
}

impl SelectionSettings {
    pub fn new(criterion: Criterion) -> Self {
        SelectionSettings {
            criterion,
            strict: false,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// One evaluated candidate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Search step that evaluated the model (0 = starting model).
    pub step: usize,
    pub model: ModelSpec,
    pub criterion: Option<f64>,
    pub loglik: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub n_effective_params: Option<f64>,
    /// Why the candidate could not be fitted, if it could not.
    pub error: Option<String>,
}

impl TraceEntry {
    pub fn is_feasible(&self) -> bool {
        self.criterion.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: ModelSpec,
    pub criterion: Criterion,
    pub algorithm: Algorithm,
    pub strict: bool,
    pub selection_h: f64,
    /// α̂ of the fully functional model (held fixed unless `strict`).
    pub alpha_hat: f64,
    pub trace: Vec<TraceEntry>,
    #[serde(default, with = "serde_util::option_extended_floats")]
    pub ctar_ratios: Option<Vec<f64>>,
    /// Components in increasing CTAR order (1-based).
    pub ctar_order: Option<Vec<usize>>,
}

impl SelectionResult {
    pub fn chosen_entry(&self) -> Option<&TraceEntry> {
        self.trace
            .iter()
            .rev()
            .find(|e| e.model == self.chosen && e.is_feasible())
    }
}

/// `R_j = Σ_i (β̂_j(s_i) − β̄_j)² / β̄_j²`; `+∞` when `|β̄_j| ≤ 1e−12`.
pub fn ctar_ratios(fit: &FitResult) -> Vec<f64> {
    let surface = &fit.beta_surface;
    (0..surface.ncols())
        .map(|j| {
            let col = surface.column(j);
            let mean = col.mean();
            if mean.abs() <= 1e-12 {
                return f64::INFINITY;
            }
            col.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (mean * mean)
        })
        .collect()
}

struct Evaluator<'a> {
    data: &'a SpatialDataset,
    w: &'a WeightMatrix,
    logdet: LogDeterminant<'a>,
    basis: SmootherBasis,
    selection_h: f64,
    settings: SelectionSettings,
    alpha_full: f64,
    full_fit: FitResult,
}

impl<'a> Evaluator<'a> {
    fn new(
        data: &'a SpatialDataset,
        w: &'a WeightMatrix,
        bw: &BandwidthPolicy,
        kernel: KernelSpec,
        settings: SelectionSettings,
    ) -> Result<Self> {
        if w.n() != data.n() {
            return Err(SsdmError::InvalidData(format!(
                "weight matrix is {0}x{0} but the dataset has {1} rows",
                w.n(),
                data.n()
            )));
        }
        let selection_h = bw.selection_h.resolve(data.max_span());
        let basis = SmootherBasis::new(data, selection_h, kernel)?;
        let logdet = LogDeterminant::new(w);
        let full_fit = fit_with_bases(
            data,
            w,
            &logdet,
            &basis,
            &basis,
            &ModelSpec::empty(),
            AlphaMode::Profile {
                grid_points: settings.grid_points,
            },
            selection_h,
        )?;
        Ok(Evaluator {
            data,
            w,
            logdet,
            basis,
            selection_h,
            settings,
            alpha_full: full_fit.alpha_hat,
            full_fit,
        })
    }

    fn fit(&self, spec: &ModelSpec) -> Result<FitResult> {
        if spec.is_empty() {
            return Ok(self.full_fit.clone());
        }
        let mode = if self.settings.strict {
            AlphaMode::Profile {
                grid_points: self.settings.grid_points,
            }
        } else {
            AlphaMode::Fixed(self.alpha_full)
        };
        fit_with_bases(
            self.data,
            self.w,
            &self.logdet,
            &self.basis,
            &self.basis,
            spec,
            mode,
            self.selection_h,
        )
    }

    fn entry(&self, step: usize, spec: &ModelSpec) -> TraceEntry {
        match self.fit(spec) {
            Ok(fit) => {
                let value = self.settings.criterion.value(&fit);
                if value.is_finite() {
                    TraceEntry {
                        step,
                        model: spec.clone(),
                        criterion: Some(value),
                        loglik: Some(fit.loglik),
                        alpha_hat: Some(fit.alpha_hat),
                        sigma2_hat: Some(fit.sigma2_hat),
                        n_effective_params: Some(fit.n_effective_params),
                        error: None,
                    }
                } else {
                    infeasible(step, spec, "criterion is not finite".into())
                }
            }
            Err(e) => infeasible(step, spec, e.to_string()),
        }
    }

    fn result(
        &self,
        chosen: ModelSpec,
        algorithm: Algorithm,
        trace: Vec<TraceEntry>,
    ) -> SelectionResult {
        SelectionResult {
            chosen,
            criterion: self.settings.criterion,
            algorithm,
            strict: self.settings.strict,
            selection_h: self.selection_h,
            alpha_hat: self.alpha_full,
            trace,
            ctar_ratios: None,
            ctar_order: None,
        }
    }
}

fn infeasible(step: usize, spec: &ModelSpec, error: String) -> TraceEntry {
    log::debug!("candidate {spec} infeasible: {error}");
    TraceEntry {
        step,
        model: spec.clone(),
        criterion: None,
        loglik: None,
        alpha_hat: None,
        sigma2_hat: None,
        n_effective_params: None,
        error: Some(error),
    }
}

/// Backward elimination from the all-constant model.
///
/// At each step every single-index removal from the current constant set is
/// fitted; the one with the largest log-likelihood becomes the next model.
/// The search stops at the current model as soon as it has a strictly lower
/// criterion than that successor, or at `{ }`.
pub fn backward_eliminate(
    data: &SpatialDataset,
    w: &WeightMatrix,
    bw: &BandwidthPolicy,
    kernel: KernelSpec,
    settings: SelectionSettings,
) -> Result<SelectionResult> {
    let eval = Evaluator::new(data, w, bw, kernel, settings)?;
    let p = data.p();
    let mut trace = Vec::new();

    let mut current = ModelSpec::all(p);
    let start = eval.entry(0, &current);
    let mut current_value = start.criterion;
    trace.push(start);
    let mut step = 1;
    while !current.is_empty() {
        let candidates: Vec<ModelSpec> = current.indices().map(|i| current.without(i)).collect();
        let entries: Vec<TraceEntry> = candidates
            .par_iter()
            .map(|spec| eval.entry(step, spec))
            .collect();
        let best = entries
            .iter()
            .filter(|e| e.is_feasible())
            .max_by(|a, b| a.loglik.unwrap().total_cmp(&b.loglik.unwrap()))
            .cloned();
        trace.extend(entries);
        let Some(best) = best else {
            log::warn!("no feasible submodel of {current}; stopping");
            break;
        };
        let best_value = best.criterion.unwrap();
        if let Some(v) = current_value {
            if v < best_value {
                break;
            }
        }
        current = best.model;
        current_value = Some(best_value);
        step += 1;
    }
    if current_value.is_none() {
        return Err(SsdmError::numerical(
            "selection",
            "no candidate model could be fitted",
        ));
    }
    Ok(eval.result(current, Algorithm::BackwardElimination, trace))
}

/// Curvature-to-average-ratio search: sort components by `R_j` from the
/// fully functional fit and grow the constant set in that order until the
/// criterion first increases.
pub fn ctar_select(
    data: &SpatialDataset,
    w: &WeightMatrix,
    bw: &BandwidthPolicy,
    kernel: KernelSpec,
    settings: SelectionSettings,
) -> Result<SelectionResult> {
    let eval = Evaluator::new(data, w, bw, kernel, settings)?;
    let ratios = ctar_ratios(&eval.full_fit);
    let mut order: Vec<usize> = (1..=data.p()).collect();
    order.sort_by(|&a, &b| ratios[a - 1].total_cmp(&ratios[b - 1]).then(a.cmp(&b)));

    let mut trace = Vec::new();
    let mut current = ModelSpec::empty();
    let start = eval.entry(0, &current);
    let mut current_value = start
        .criterion
        .ok_or_else(|| SsdmError::numerical("selection", "fully functional model infeasible"))?;
    trace.push(start);
    let mut candidate = ModelSpec::empty();
    for (k, &idx) in order.iter().enumerate() {
        candidate = candidate.with(idx);
        let entry = eval.entry(k + 1, &candidate);
        let value = entry.criterion;
        trace.push(entry);
        match value {
            Some(v) if v > current_value => break,
            Some(v) => {
                current = candidate.clone();
                current_value = v;
            }
            None => continue,
        }
    }
    let mut result = eval.result(current, Algorithm::Ctar, trace);
    result.ctar_ratios = Some(ratios);
    result.ctar_order = Some(order);
    Ok(result)
}

pub fn select(
    data: &SpatialDataset,
    w: &WeightMatrix,
    bw: &BandwidthPolicy,
    kernel: KernelSpec,
    algorithm: Algorithm,
    settings: SelectionSettings,
) -> Result<SelectionResult> {
    match algorithm {
        Algorithm::BackwardElimination => backward_eliminate(data, w, bw, kernel, settings),
        Algorithm::Ctar => ctar_select(data, w, bw, kernel, settings),
    }
}

/// Tally of chosen models, e.g. across Monte Carlo replications.
pub fn tally<'a>(chosen: impl IntoIterator<Item = &'a ModelSpec>) -> HashMap<ModelSpec, usize> {
    let mut counts = HashMap::new();
    for m in chosen {
        *counts.entry(m.clone()).or_insert(0) += 1;
    }
    counts
}
