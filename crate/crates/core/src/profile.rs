//! Profile-likelihood estimation of α, σ² and the coefficient surfaces.
//!
//! For a fixed α the local-linear smoother gives the surfaces in closed form,
//! so the likelihood concentrates to a function of α alone,
//!
//! ```text
//! ℓ(α) = −(n/2) log σ̃²(α) + Σ_i log|1 − α λ_i|,
//! ```
//!
//! with `λ_i` the eigenvalues of `W` and `n σ̃²(α) = c0 − 2αc1 + α²c2`.
//! α̂ maximizes ℓ on a grid refined by golden-section search; σ̂² = σ̃²(α̂).
//! The surfaces are then re-estimated with the larger bandwidth `h1` on the
//! working response `(I − α̂W)y`, and components declared constant are
//! replaced by the average of their surface.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdmError};
use crate::kernels::KernelSpec;
use crate::locallinear::{
    fitted_values, model_smoother, model_surface, SmootherBasis, SmootherCache, SpatialDataset,
};
use crate::selection::{aic, bic, effective_params};
use crate::serde_util;
use crate::weights::{AlphaInterval, WeightMatrix, DENSE_LIMIT};

pub const DEFAULT_GRID_POINTS: usize = 2001;
const GOLDEN_TOL: f64 = 1e-8;
const POLISH_STEPS: usize = 8;

/// Set of coefficient components (1-based) treated as constant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelSpec(BTreeSet<usize>);

impl ModelSpec {
    /// The fully functional model `{ }`.
    pub fn empty() -> Self {
        ModelSpec(BTreeSet::new())
    }

    /// Every component constant, `{1, …, p}`.
    pub fn all(p: usize) -> Self {
        ModelSpec((1..=p).collect())
    }

    pub fn new(indices: impl IntoIterator<Item = usize>, p: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for i in indices {
            if i == 0 || i > p {
                return Err(SsdmError::InvalidArgument(format!(
                    "constant index {i} out of range 1..={p}"
                )));
            }
            if !set.insert(i) {
                return Err(SsdmError::InvalidArgument(format!(
                    "duplicate constant index {i}"
                )));
            }
        }
        Ok(ModelSpec(set))
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i == 0 || i > p) {
            Some(i) => Err(SsdmError::InvalidArgument(format!(
                "constant index {i} out of range 1..={p}"
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_all_constant(&self, p: usize) -> bool {
        self.0.len() == p
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.contains(&index)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn zero_based(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|i| i - 1)
    }

    /// `mask[j]` is true when column `j` (0-based) is constant.
    pub fn mask(&self, p: usize) -> Vec<bool> {
        (1..=p).map(|i| self.0.contains(&i)).collect()
    }

    pub fn without(&self, index: usize) -> Self {
        let mut set = self.0.clone();
        set.remove(&index);
        ModelSpec(set)
    }

    pub fn with(&self, index: usize) -> Self {
        let mut set = self.0.clone();
        set.insert(index);
        ModelSpec(set)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("{ }");
        }
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl FromStr for ModelSpec {
    type Err = SsdmError;

    /// Parses `"3,5"`, `"{3, 5}"` or `""`/`"{ }"`; range is checked later.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let mut set = BTreeSet::new();
        for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let i: usize = part.parse().map_err(|_| {
                SsdmError::InvalidArgument(format!("bad constant index {part:?}"))
            })?;
            if i == 0 || !set.insert(i) {
                return Err(SsdmError::InvalidArgument(format!(
                    "bad or duplicate constant index {i}"
                )));
            }
        }
        Ok(ModelSpec(set))
    }
}

/// A bandwidth given absolutely or as a fraction of the location range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Absolute(f64),
    FractionOfRange(f64),
}

impl Bandwidth {
    pub fn resolve(self, span: f64) -> f64 {
        match self {
            Bandwidth::Absolute(h) => h,
            Bandwidth::FractionOfRange(f) => f * span,
        }
    }
}

/// Bandwidths for the profile stage (`h`), the final surfaces (`h1`) and
/// model selection (`selection_h`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPolicy {
    pub h: Bandwidth,
    pub h1: Bandwidth,
    pub selection_h: Bandwidth,
}

/// Bandwidths after resolution against a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedBandwidths {
    pub h: f64,
    pub h1: f64,
    pub selection_h: f64,
}

impl BandwidthPolicy {
    pub fn absolute(h: f64, h1: f64, selection_h: f64) -> Self {
        BandwidthPolicy {
            h: Bandwidth::Absolute(h),
            h1: Bandwidth::Absolute(h1),
            selection_h: Bandwidth::Absolute(selection_h),
        }
    }

    /// `h1 = 1.5 h`, `selection_h = h`.
    pub fn from_h(h: f64) -> Self {
        Self::absolute(h, 1.5 * h, h)
    }

    pub fn resolve(&self, span: f64) -> Result<ResolvedBandwidths> {
        let r = ResolvedBandwidths {
            h: self.h.resolve(span),
            h1: self.h1.resolve(span),
            selection_h: self.selection_h.resolve(span),
        };
        for (name, v) in [("h", r.h), ("h1", r.h1), ("selection_h", r.selection_h)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SsdmError::InvalidArgument(format!(
                    "{name} must resolve to a positive finite bandwidth, got {v}"
                )));
            }
        }
        if r.h1 <= r.h {
            return Err(SsdmError::InvalidArgument(format!(
                "h1 ({}) must be larger than h ({})",
                r.h1, r.h
            )));
        }
        Ok(r)
    }
}

/// Result of one model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub kernel: KernelSpec,
    pub h: f64,
    pub h1: f64,
    pub alpha_hat: f64,
    pub alpha_interval: AlphaInterval,
    /// The maximizer sat on the first or last grid point.
    pub alpha_at_boundary: bool,
    /// σ̃²(α̂) from the profile-stage smoother.
    pub sigma2_hat: f64,
    /// `β̂_j(s_i)`, n × p; constant components are constant columns.
    #[serde(with = "serde_util::matrix_rows")]
    pub beta_surface: DMatrix<f64>,
    /// Averaged constants keyed by 1-based component index.
    pub beta_const: BTreeMap<usize, f64>,
    /// `log|I − α̂W|`.
    pub log_det: f64,
    /// Log-likelihood including the `−(n/2)log 2π` term.
    pub loglik: f64,
    /// Bandwidth behind the effective-parameter count.
    pub df_bandwidth: f64,
    pub n_effective_params: f64,
    pub aic: f64,
    pub bic: f64,
    pub se_alpha: Option<f64>,
    pub se_sigma2: Option<f64>,
    #[serde(default, with = "serde_util::option_matrix_rows")]
    pub beta_se_surface: Option<DMatrix<f64>>,
    /// `(I − α̂W)y − m̂`, in dataset row order.
    pub residuals: Vec<f64>,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn p(&self) -> usize {
        self.beta_surface.ncols()
    }

    pub fn rss(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogDetMethod {
    Spectrum,
    Lu,
}

/// `log|I − αW|` by the cached spectrum or by an LU factorization per call.
#[derive(Debug, Clone, Copy)]
pub struct LogDeterminant<'a> {
    w: &'a WeightMatrix,
    method: LogDetMethod,
}

impl<'a> LogDeterminant<'a> {
    /// Spectrum path up to the dense limit, LU above it.
    pub fn new(w: &'a WeightMatrix) -> Self {
        let method = if w.n() <= DENSE_LIMIT {
            LogDetMethod::Spectrum
        } else {
            LogDetMethod::Lu
        };
        LogDeterminant { w, method }
    }

    pub fn with_method(w: &'a WeightMatrix, method: LogDetMethod) -> Self {
        LogDeterminant { w, method }
    }

    pub fn method(&self) -> LogDetMethod {
        self.method
    }

    /// First and second derivatives in α; spectrum path only.
    fn derivatives(&self, alpha: f64) -> Option<(f64, f64)> {
        if self.method != LogDetMethod::Spectrum {
            return None;
        }
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for z in self.w.spectrum().ok()? {
            let q = z / (Complex64::new(1.0, 0.0) - z * alpha);
            d1 -= q.re;
            d2 -= (q * q).re;
        }
        Some((d1, d2))
    }

    pub fn eval(&self, alpha: f64) -> Result<f64> {
        match self.method {
            LogDetMethod::Spectrum => Ok(self
                .w
                .spectrum()?
                .iter()
                .map(|z| {
                    let re = 1.0 - alpha * z.re;
                    let im = alpha * z.im;
                    0.5 * (re * re + im * im).ln()
                })
                .sum()),
            LogDetMethod::Lu => {
                let lu = self.w.spatial_filter(alpha).lu();
                let u = lu.u();
                let mut acc = 0.0;
                for i in 0..u.nrows() {
                    let d = u[(i, i)].abs();
                    if d == 0.0 {
                        return Err(SsdmError::numerical(
                            "profile",
                            format!("I - alpha W is singular at alpha = {alpha}"),
                        ));
                    }
                    acc += d.ln();
                }
                Ok(acc)
            }
        }
    }
}

/// `−(n/2) log σ̃²(α) + log|I − αW|`.
pub fn concentrated_loglik(alpha: f64, cache: &SmootherCache, w: &WeightMatrix) -> Result<f64> {
    profile_value(alpha, cache, &LogDeterminant::new(w))
}

fn profile_value(alpha: f64, cache: &SmootherCache, logdet: &LogDeterminant) -> Result<f64> {
    let sigma2 = cache.sigma2(alpha);
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(SsdmError::numerical(
            "profile",
            format!("sigma2(alpha) = {sigma2} is not positive at alpha = {alpha}"),
        ));
    }
    Ok(-0.5 * cache.n() as f64 * sigma2.ln() + logdet.eval(alpha)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub value: f64,
    /// Best grid point was the first or last one.
    pub at_boundary: bool,
}

/// Maximize the concentrated likelihood over the admissible interval.
pub fn maximize_alpha(
    cache: &SmootherCache,
    w: &WeightMatrix,
    grid_points: usize,
) -> Result<AlphaEstimate> {
    let interval = w.alpha_interval()?;
    maximize_on(cache, &LogDeterminant::new(w), interval, grid_points)
}

pub(crate) fn maximize_on(
    cache: &SmootherCache,
    logdet: &LogDeterminant,
    interval: AlphaInterval,
    grid_points: usize,
) -> Result<AlphaEstimate> {
    if !(interval.width() > 0.0) {
        return Err(SsdmError::numerical("profile", "empty admissible interval for alpha"));
    }
    let g = grid_points.max(3);
    let step = interval.width() / (g + 1) as f64;
    let at = |k: usize| interval.lower + (k + 1) as f64 * step;
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..g {
        let v = profile_value(at(k), cache, logdet)?;
        if v > best.1 {
            best = (k, v);
        }
    }
    let (k, _) = best;
    let bracket = (
        if k == 0 { interval.lower + 0.5 * step } else { at(k - 1) },
        if k + 1 == g { interval.upper - 0.5 * step } else { at(k + 1) },
    );
    let (mut lo, mut hi) = bracket;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = profile_value(x1, cache, logdet)?;
    let mut f2 = profile_value(x2, cache, logdet)?;
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = profile_value(x2, cache, logdet)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = profile_value(x1, cache, logdet)?;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let value = profile_value(alpha, cache, logdet)?;
    let (mut alpha, mut value) = newton_polish(alpha, value, bracket, cache, logdet)?;
    // Never return something worse than the best grid point.
    if best.1 > value {
        alpha = at(k);
        value = best.1;
    }
    let at_boundary = k == 0 || k + 1 == g;
    if at_boundary {
        log::warn!(
            "profile likelihood maximized at the edge of the alpha interval ({alpha:.6}); \
             possible boundary solution or misspecified weights"
        );
    }
    Ok(AlphaEstimate {
        alpha,
        value,
        at_boundary,
    })
}

// Newton steps on the analytic derivative sharpen the golden-section
// estimate well below the resolution of function-value comparisons.
fn newton_polish(
    mut alpha: f64,
    mut value: f64,
    (lo, hi): (f64, f64),
    cache: &SmootherCache,
    logdet: &LogDeterminant,
) -> Result<(f64, f64)> {
    let n = cache.n() as f64;
    let c = cache.quadratic;
    for _ in 0..POLISH_STEPS {
        let Some((l1, l2)) = logdet.derivatives(alpha) else {
            break;
        };
        let q0 = c.c0 - 2.0 * alpha * c.c1 + alpha * alpha * c.c2;
        let q1 = 2.0 * (alpha * c.c2 - c.c1);
        let q2 = 2.0 * c.c2;
        let grad = -0.5 * n * q1 / q0 + l1;
        let hess = -0.5 * n * (q2 * q0 - q1 * q1) / (q0 * q0) + l2;
        if !(hess < 0.0) {
            break;
        }
        let next = alpha - grad / hess;
        if !(next > lo && next < hi) {
            break;
        }
        let v = profile_value(next, cache, logdet)?;
        if v < value - 1e-12 * value.abs().max(1.0) {
            break;
        }
        let moved = (next - alpha).abs();
        alpha = next;
        value = v;
        if moved < 1e-15 {
            break;
        }
    }
    Ok((alpha, value))
}

/// How α is obtained inside a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// Maximize the concentrated likelihood on a grid of this many points.
    Profile { grid_points: usize },
    /// Hold α at a given value.
    Fixed(f64),
}

impl Default for AlphaMode {
    fn default() -> Self {
        AlphaMode::Profile {
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Fit one model given prebuilt smoother bases for the profile stage and
/// the surface stage. `df_bandwidth` enters the effective-parameter count.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_with_bases(
    data: &SpatialDataset,
    w: &WeightMatrix,
    logdet: &LogDeterminant,
    profile_basis: &SmootherBasis,
    surface_basis: &SmootherBasis,
    spec: &ModelSpec,
    alpha_mode: AlphaMode,
    df_bandwidth: f64,
) -> Result<FitResult> {
    let n = data.n();
    let p = data.p();
    spec.validate(p)?;
    let interval = w.alpha_interval()?;

    let s = model_smoother(profile_basis, data, spec)?;
    let cache = SmootherCache::new(s, profile_basis.bandwidth(), w, data.y())?;
    let (alpha_hat, at_boundary) = match alpha_mode {
        AlphaMode::Profile { grid_points } => {
            let est = maximize_on(&cache, logdet, interval, grid_points)?;
            (est.alpha, est.at_boundary)
        }
        AlphaMode::Fixed(a) => {
            if !interval.contains(a) {
                return Err(SsdmError::InvalidArgument(format!(
                    "fixed alpha {a} outside the admissible interval ({}, {})",
                    interval.lower, interval.upper
                )));
            }
            (a, false)
        }
    };
    let sigma2_hat = cache.sigma2(alpha_hat);
    if !(sigma2_hat > 0.0) {
        return Err(SsdmError::numerical(
            "profile",
            format!("sigma2 estimate {sigma2_hat} is not positive"),
        ));
    }

    let ystar = data.y() - cache.wy.clone() * alpha_hat;
    let beta_surface = model_surface(surface_basis, data, &ystar, spec)?;
    let fitted = fitted_values(data.x(), &beta_surface);
    let residuals: Vec<f64> = (&ystar - fitted).iter().copied().collect();
    let beta_const = spec
        .indices()
        .map(|j| (j, beta_surface[(0, j - 1)]))
        .collect();

    let log_det = logdet.eval(alpha_hat)?;
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let nf = n as f64;
    let loglik = -0.5 * nf * (2.0 * std::f64::consts::PI).ln() - 0.5 * nf * sigma2_hat.ln()
        + log_det
        - rss / (2.0 * sigma2_hat);
    let k = effective_params(p, spec.len(), profile_basis.kernel(), df_bandwidth)?;

    let mut fit = FitResult {
        model: spec.clone(),
        kernel: profile_basis.kernel(),
        h: profile_basis.bandwidth(),
        h1: surface_basis.bandwidth(),
        alpha_hat,
        alpha_interval: interval,
        alpha_at_boundary: at_boundary,
        sigma2_hat,
        beta_surface,
        beta_const,
        log_det,
        loglik,
        df_bandwidth,
        n_effective_params: k,
        aic: 0.0,
        bic: 0.0,
        se_alpha: None,
        se_sigma2: None,
        beta_se_surface: None,
        residuals,
    };
    fit.aic = aic(&fit, k);
    fit.bic = bic(&fit, k, nf);
    Ok(fit)
}

/// Full estimation pipeline for a model with constant set `spec`.
pub fn estimate(
    data: &SpatialDataset,
    w: &WeightMatrix,
    bw: &BandwidthPolicy,
    spec: &ModelSpec,
    kernel: KernelSpec,
) -> Result<FitResult> {
    estimate_with(data, w, bw, spec, kernel, AlphaMode::default())
}

pub fn estimate_with(
    data: &SpatialDataset,
    w: &WeightMatrix,
    bw: &BandwidthPolicy,
    spec: &ModelSpec,
    kernel: KernelSpec,
    alpha_mode: AlphaMode,
) -> Result<FitResult> {
    if w.n() != data.n() {
        return Err(SsdmError::InvalidData(format!(
            "weight matrix is {0}x{0} but the dataset has {1} rows",
            w.n(),
            data.n()
        )));
    }
    let r = bw.resolve(data.max_span())?;
    let profile_basis = SmootherBasis::new(data, r.h, kernel)?;
    let surface_basis = SmootherBasis::new(data, r.h1, kernel)?;
    fit_with_bases(
        data,
        w,
        &LogDeterminant::new(w),
        &profile_basis,
        &surface_basis,
        spec,
        alpha_mode,
        r.h1,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeMode {
    /// Inverse information, valid under normal errors.
    Normal,
    /// Sandwich form with third and fourth residual moments.
    Sandwich,
}

/// Plug-in ingredients of the asymptotic covariance of `(α̂, σ̂²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformationParts {
    pub pi1: f64,
    pub pi2: f64,
    pub pi3: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub mu3: f64,
    pub mu4: f64,
    pub omega: Matrix2<f64>,
    pub sigma: Matrix2<f64>,
}

/// Compute `G = W(I − α̂W)⁻¹` based plug-ins and the matrices Ω̂ and Σ̂.
pub fn information_parts(
    fit: &FitResult,
    data: &SpatialDataset,
    w: &WeightMatrix,
) -> Result<InformationParts> {
    let n = data.n();
    let nf = n as f64;
    let a_inv = w
        .spatial_filter(fit.alpha_hat)
        .try_inverse()
        .ok_or_else(|| SsdmError::numerical("profile", "I - alpha W is singular at alpha_hat"))?;
    let g = w.entries() * a_inv;

    let trace_g = g.trace();
    let mut trace_gg = 0.0;
    for i in 0..n {
        for j in 0..n {
            trace_gg += g[(i, j)] * g[(j, i)];
        }
    }
    let pi1 = (trace_gg + g.norm_squared()) / nf;
    let pi2 = trace_g / nf;
    let pi3 = g.diagonal().iter().map(|d| d * d).sum::<f64>() / nf;

    let basis = SmootherBasis::new(data, fit.h, fit.kernel)?;
    let s = model_smoother(&basis, data, &fit.model)?;
    let ystar = data.y() - w.mul_vec(data.y()) * fit.alpha_hat;
    let resid = DVector::from_column_slice(&fit.residuals);
    let m_hat = &ystar - &resid;
    let gm = &g * m_hat;
    let centered = &gm - &s * &gm;
    let lambda1 = centered.dot(&centered) / nf;
    let lambda2 = centered.dot(&g.diagonal()) / nf;
    let lambda3 = centered.sum() / nf;

    let mean = resid.mean();
    let mu3 = resid.iter().map(|r| (r - mean).powi(3)).sum::<f64>() / nf;
    let mu4 = resid.iter().map(|r| (r - mean).powi(4)).sum::<f64>() / nf;

    let s2 = fit.sigma2_hat;
    let omega = Matrix2::new(
        lambda1 / s2 + pi1,
        pi2 / s2,
        pi2 / s2,
        1.0 / (2.0 * s2 * s2),
    );
    let excess = mu4 - 3.0 * s2 * s2;
    let off = mu3 / (2.0 * s2.powi(3)) * lambda3 + excess / (2.0 * s2.powi(3)) * pi2;
    let sigma = Matrix2::new(
        excess / (s2 * s2) * pi3 + 2.0 * mu3 / (s2 * s2) * lambda2,
        off,
        off,
        excess / (4.0 * s2.powi(4)),
    );
    Ok(InformationParts {
        pi1,
        pi2,
        pi3,
        lambda1,
        lambda2,
        lambda3,
        mu3,
        mu4,
        omega,
        sigma,
    })
}

/// Attach standard errors for α̂, σ̂² and the coefficient surfaces.
///
/// When Ω̂ is singular (e.g. `W = 0`, where α is not identified) `se_alpha`
/// is left empty and `se_sigma2` comes from the σ² block alone.
pub fn standard_errors(
    fit: &FitResult,
    data: &SpatialDataset,
    w: &WeightMatrix,
    mode: SeMode,
) -> Result<FitResult> {
    let parts = information_parts(fit, data, w)?;
    let nf = data.n() as f64;
    let mut out = fit.clone();

    let omega = parts.omega;
    let det = omega.determinant();
    let scale = omega[(0, 0)].abs() * omega[(1, 1)].abs();
    if omega[(0, 0)] > 0.0 && det > 1e-12 * scale {
        let inv = omega.try_inverse().expect("checked determinant");
        let cov = match mode {
            SeMode::Normal => inv,
            SeMode::Sandwich => inv + inv * parts.sigma * inv,
        };
        out.se_alpha = (cov[(0, 0)] > 0.0).then(|| (cov[(0, 0)] / nf).sqrt());
        out.se_sigma2 = (cov[(1, 1)] > 0.0).then(|| (cov[(1, 1)] / nf).sqrt());
    } else {
        let var = match mode {
            SeMode::Normal => 1.0 / omega[(1, 1)],
            SeMode::Sandwich => {
                let v = 1.0 / omega[(1, 1)];
                v + v * parts.sigma[(1, 1)] * v
            }
        };
        out.se_alpha = None;
        out.se_sigma2 = (var > 0.0).then(|| (var / nf).sqrt());
    }
    out.beta_se_surface = Some(surface_standard_errors(fit, data)?);
    Ok(out)
}

/// Pointwise `sqrt(κ0⁻² ν0 σ̂² [Ψ̂⁻¹]_jj / (n h1² f̂(s_i)))`.
fn surface_standard_errors(fit: &FitResult, data: &SpatialDataset) -> Result<DMatrix<f64>> {
    let n = data.n();
    let p = data.p();
    let nf = n as f64;
    let c = fit.kernel.constants();
    let psi = data.x().transpose() * data.x() / nf;
    let psi_inv = psi
        .try_inverse()
        .ok_or_else(|| SsdmError::numerical("profile", "covariate second-moment matrix is singular"))?;
    let h1 = fit.h1;
    let locs = data.locations();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let density: f64 = locs
            .iter()
            .map(|sk| {
                let d = ((sk[0] - locs[i][0]).powi(2) + (sk[1] - locs[i][1]).powi(2)).sqrt();
                fit.kernel.eval(d / h1)
            })
            .sum::<f64>()
            / (nf * h1 * h1 * c.kappa0);
        for j in 0..p {
            let var = c.nu0 * fit.sigma2_hat * psi_inv[(j, j)]
                / (c.kappa0 * c.kappa0 * nf * h1 * h1 * density);
            out[(i, j)] = var.sqrt();
        }
    }
    Ok(out)
}
