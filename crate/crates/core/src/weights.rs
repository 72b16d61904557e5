//! Spatial weight matrices.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsdmError};

/// Largest `n` for which dense `n × n` storage is accepted without an
/// explicit override.
pub const DENSE_LIMIT: usize = 4096;

/// Shrinkage applied to the admissible interval for α.
pub const ALPHA_SHRINK: f64 = 1e-3;

/// Interval used when `W` has a zero spectrum (`I − αW = I` for every α).
pub const ALPHA_CLAMP: f64 = 10.0;

const ROW_SUM_TOL: f64 = 1e-12;

/// Open interval `(lower, upper)` on which `I − αW` is nonsingular.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaInterval {
    pub lower: f64,
    pub upper: f64,
}

impl AlphaInterval {
    pub fn contains(&self, alpha: f64) -> bool {
        alpha > self.lower && alpha < self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    row_stochastic: bool,
    // Row sums `d` of a symmetric kernel `E` with `W = D⁻¹E`; when present,
    // `D^{1/2} W D^{-1/2}` is symmetric and the spectrum is real.
    symmetrizer: Option<Vec<f64>>,
    spectrum: OnceLock<std::result::Result<Vec<Complex64>, String>>,
}

impl Clone for WeightMatrix {
    fn clone(&self) -> Self {
        let spectrum = OnceLock::new();
        if let Some(s) = self.spectrum.get() {
            let _ = spectrum.set(s.clone());
        }
        WeightMatrix {
            entries: self.entries.clone(),
            row_stochastic: self.row_stochastic,
            symmetrizer: self.symmetrizer.clone(),
            spectrum,
        }
    }
}

fn check_size(n: usize, allow_large: bool) -> Result<()> {
    if n > DENSE_LIMIT && !allow_large {
        return Err(SsdmError::InvalidArgument(format!(
            "n = {n} exceeds the dense limit of {DENSE_LIMIT}; pass --dense-ok to override"
        )));
    }
    Ok(())
}

/// Row-normalized exponential-decay weights,
/// `w_ij = exp(−‖s_i − s_j‖) / Σ_{k≠i} exp(−‖s_i − s_k‖)`, `w_ii = 0`.
pub fn build_exp_decay_weights(locations: &[[f64; 2]]) -> Result<WeightMatrix> {
    build_exp_decay_weights_with(locations, false)
}

pub fn build_exp_decay_weights_with(
    locations: &[[f64; 2]],
    allow_large: bool,
) -> Result<WeightMatrix> {
    let n = locations.len();
    if n < 2 {
        return Err(SsdmError::InvalidData(format!(
            "exponential-decay weights need at least 2 locations, got {n}"
        )));
    }
    check_size(n, allow_large)?;
    if locations.iter().flatten().any(|c| !c.is_finite()) {
        return Err(SsdmError::InvalidData("non-finite location".into()));
    }
    let mut kernel = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let du = locations[i][0] - locations[j][0];
            let dv = locations[i][1] - locations[j][1];
            let e = (-(du * du + dv * dv).sqrt()).exp();
            kernel[(i, j)] = e;
            kernel[(j, i)] = e;
        }
    }
    let sums: Vec<f64> = (0..n).map(|i| kernel.row(i).sum()).collect();
    if sums.iter().any(|&s| !(s > 0.0)) {
        return Err(SsdmError::InvalidData(
            "exponential-decay weights underflowed (locations too far apart)".into(),
        ));
    }
    let mut entries = kernel;
    for i in 0..n {
        let inv = 1.0 / sums[i];
        for j in 0..n {
            entries[(i, j)] *= inv;
        }
    }
    Ok(WeightMatrix {
        entries,
        row_stochastic: true,
        symmetrizer: Some(sums),
        spectrum: OnceLock::new(),
    })
}

/// Validate a user-supplied weight matrix.
pub fn load_weights(matrix: DMatrix<f64>) -> Result<WeightMatrix> {
    load_weights_with(matrix, false)
}

pub fn load_weights_with(matrix: DMatrix<f64>, allow_large: bool) -> Result<WeightMatrix> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(SsdmError::InvalidData(format!(
            "weight matrix must be square, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    if n == 0 {
        return Err(SsdmError::InvalidData("empty weight matrix".into()));
    }
    check_size(n, allow_large)?;
    if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
        return Err(SsdmError::InvalidData(format!(
            "weight matrix entry ({}, {}) is not finite",
            pos % n + 1,
            pos / n + 1
        )));
    }
    if let Some(i) = (0..n).find(|&i| matrix[(i, i)] != 0.0) {
        return Err(SsdmError::InvalidData(format!(
            "weight matrix diagonal must be zero; w[{0},{0}] = {1}",
            i + 1,
            matrix[(i, i)]
        )));
    }
    let row_stochastic = matrix.iter().all(|&v| v >= 0.0)
        && (0..n).all(|i| (matrix.row(i).sum() - 1.0).abs() <= ROW_SUM_TOL);
    Ok(WeightMatrix {
        entries: matrix,
        row_stochastic,
        symmetrizer: None,
        spectrum: OnceLock::new(),
    })
}

impl WeightMatrix {
    /// The zero matrix; `I − αW = I` for every α.
    pub fn zeros(n: usize) -> Self {
        WeightMatrix {
            entries: DMatrix::zeros(n, n),
            row_stochastic: false,
            symmetrizer: None,
            spectrum: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.row_stochastic
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }

    /// Eigenvalues of `W` (computed once, then cached).
    pub fn spectrum(&self) -> Result<&[Complex64]> {
        self.spectrum
            .get_or_init(|| self.compute_spectrum())
            .as_deref()
            .map_err(|msg| SsdmError::numerical("weights", msg.clone()))
    }

    fn compute_spectrum(&self) -> std::result::Result<Vec<Complex64>, String> {
        let n = self.n();
        if self.is_zero() {
            return Ok(vec![Complex64::new(0.0, 0.0); n]);
        }
        if let Some(sym) = self.symmetric_form() {
            let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
                .ok_or_else(|| "symmetric eigensolver did not converge".to_string())?;
            return Ok(eig
                .eigenvalues
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect());
        }
        let m = &self.entries;
        let dense = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
        let eig = dense
            .eigenvalues()
            .map_err(|_| "eigensolver did not converge for W; use the LU log-determinant path".to_string())?;
        Ok(eig.iter().map(|c| Complex64::new(c.re, c.im)).collect())
    }

    // A symmetric matrix similar to W, if one is known cheaply.
    fn symmetric_form(&self) -> Option<DMatrix<f64>> {
        let n = self.n();
        if let Some(d) = &self.symmetrizer {
            let root: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
            let mut sym = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = root[i] * self.entries[(i, j)] / root[j];
                    let b = root[j] * self.entries[(j, i)] / root[i];
                    let v = 0.5 * (a + b);
                    sym[(i, j)] = v;
                    sym[(j, i)] = v;
                }
            }
            return Some(sym);
        }
        let scale = self.entries.amax();
        let symmetric = (0..n).all(|i| {
            (0..i).all(|j| (self.entries[(i, j)] - self.entries[(j, i)]).abs() <= 1e-14 * scale)
        });
        symmetric.then(|| (&self.entries + self.entries.transpose()) * 0.5)
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(self
            .spectrum()?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }

    /// Admissible α interval: `(−1 + δ, 1 − δ)` for row-stochastic `W`,
    /// otherwise `±(1 − δ)/ρ(W)`, clamped to `(−10, 10)`.
    ///
    /// Above the dense limit the spectral radius is bounded by the smaller
    /// of the maximum absolute row and column sums instead of computed.
    pub fn alpha_interval(&self) -> Result<AlphaInterval> {
        if self.row_stochastic {
            return Ok(AlphaInterval {
                lower: -1.0 + ALPHA_SHRINK,
                upper: 1.0 - ALPHA_SHRINK,
            });
        }
        let rho = if self.n() <= DENSE_LIMIT || self.spectrum.get().is_some() {
            self.spectral_radius()?
        } else {
            let rows = (0..self.n())
                .map(|i| self.entries.row(i).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let cols = (0..self.n())
                .map(|j| self.entries.column(j).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            rows.min(cols)
        };
        let half = if rho <= 1e-12 {
            ALPHA_CLAMP
        } else {
            ((1.0 - ALPHA_SHRINK) / rho).min(ALPHA_CLAMP)
        };
        Ok(AlphaInterval {
            lower: -half,
            upper: half,
        })
    }

    pub fn mul_vec(&self, v: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
        &self.entries * v
    }

    /// `I − αW`.
    pub fn spatial_filter(&self, alpha: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut a = &self.entries * (-alpha);
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        a
    }
}
