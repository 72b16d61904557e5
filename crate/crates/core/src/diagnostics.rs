//! Residual diagnostics: sample ACF, PACF (Durbin–Levinson), normal Q–Q.
//!
//! Residuals are taken in dataset row order. For spatial data that ordering
//! is arbitrary, so the correlograms are a heuristic check only.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SsdmError};
use crate::profile::FitResult;

pub const ORDERING_NOTE: &str = "dataset row order";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub lags: usize,
    /// Observation ordering used for ACF/PACF.
    pub ordering: String,
    pub residuals: Vec<f64>,
    /// `(theoretical N(0,1) quantile, ordered standardized residual)`.
    pub qq: Vec<(f64, f64)>,
    /// Lags `1..=lags`; lag 0 is 1 by construction.
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
    /// Half-width of the approximate 95% white-noise band, `1.96/√n`.
    pub band: f64,
}

pub fn default_lags(n: usize) -> usize {
    40.min(n / 4).max(1)
}

/// Sample autocorrelations at lags `1..=max_lag` with the `1/n` denominator.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if max_lag >= n {
        return Err(SsdmError::InvalidArgument(format!(
            "lag {max_lag} must be smaller than the series length {n}"
        )));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = d.iter().map(|v| v * v).sum::<f64>();
    if !(c0 > 0.0) {
        return Err(SsdmError::InvalidData(
            "diagnostics: residuals have zero variance".into(),
        ));
    }
    Ok((1..=max_lag)
        .map(|k| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

/// Partial autocorrelations from autocorrelations `ρ(1..=L)` by the
/// Durbin–Levinson recursion.
pub fn pacf_from_acf(rho: &[f64]) -> Vec<f64> {
    let lags = rho.len();
    let mut out = Vec::with_capacity(lags);
    let mut phi: Vec<f64> = Vec::with_capacity(lags);
    let mut v = 1.0;
    for k in 0..lags {
        let num = rho[k] - phi.iter().enumerate().map(|(j, p)| p * rho[k - 1 - j]).sum::<f64>();
        let kk = if v > 0.0 { num / v } else { 0.0 };
        let prev = phi.clone();
        for j in 0..k {
            phi[j] = prev[j] - kk * prev[k - 1 - j];
        }
        phi.push(kk);
        v *= 1.0 - kk * kk;
        out.push(kk);
    }
    out
}

/// Normal Q–Q points at plotting positions `(i − 0.5)/n`.
pub fn normal_qq(x: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = x.len();
    if n < 2 {
        return Err(SsdmError::InvalidData("diagnostics: need at least 2 residuals".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(SsdmError::InvalidData(
            "diagnostics: residuals have zero variance".into(),
        ));
    }
    let mut z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(|a, b| a.total_cmp(b));
    let normal = Normal::standard();
    Ok(z
        .into_iter()
        .enumerate()
        .map(|(i, r)| (normal.inverse_cdf((i as f64 + 0.5) / n as f64), r))
        .collect())
}

pub fn diagnose_residuals(residuals: &[f64], lags: Option<usize>) -> Result<DiagnosticsReport> {
    let n = residuals.len();
    let lags = lags.unwrap_or_else(|| default_lags(n));
    if lags == 0 {
        return Err(SsdmError::InvalidArgument("need at least one lag".into()));
    }
    let acf = acf(residuals, lags)?;
    let pacf = pacf_from_acf(&acf);
    Ok(DiagnosticsReport {
        n,
        lags,
        ordering: ORDERING_NOTE.to_string(),
        residuals: residuals.to_vec(),
        qq: normal_qq(residuals)?,
        acf,
        pacf,
        band: 1.96 / (n as f64).sqrt(),
    })
}

pub fn residual_diagnostics(fit: &FitResult, lags: Option<usize>) -> Result<DiagnosticsReport> {
    diagnose_residuals(&fit.residuals, lags)
}
