//! Kernel functions for the local-linear smoother.
//!
//! All kernels are radial in use: a target location `s` gives observation
//! `s_i` the weight `K_h(‖s_i − s‖) = K(‖s_i − s‖ / h) / h²`. The constants
//! returned by [`KernelSpec::constants`] are closed-form values, they enter
//! the effective-parameter count and the asymptotic variances.
//!
//! | family       | K(t)                    | support    |
//! |--------------|-------------------------|------------|
//! | Epanechnikov | `0.75 (1 − t²)₊`        | `[-1, 1]`  |
//! | Quartic      | `15/16 (1 − t²)₊²`      | `[-1, 1]`  |
//! | Gaussian     | `φ(t) 1{|t| ≤ 4}`       | `[-4, 4]`  |
//!
//! The Gaussian family is truncated (not renormalized) at `|t| = 4` so that
//! every family has compact support; this is an approximation of the usual
//! Gaussian kernel with relative mass error below 1e-4.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Result, SsdmError};

const GAUSSIAN_CUTOFF: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSpec {
    #[default]
    Epanechnikov,
    Quartic,
    Gaussian,
}

/// Analytic kernel constants.
///
/// `k0 = K(0)`, `nu_star = ∫K²(t)dt`; the remaining four are integrals over
/// the plane of the radial kernel `K(‖s‖)`:
/// `kappa0 = ∫K`, `kappa2 = ∫s₁²K`, `nu0 = ∫K²`, `nu2 = ∫s₁²K²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub k0: f64,
    pub nu_star: f64,
    pub kappa0: f64,
    pub kappa2: f64,
    pub nu0: f64,
    pub nu2: f64,
}

impl KernelConstants {
    /// `2K(0)² − ν*²`, the per-unit-bandwidth cost of one unknown surface.
    pub fn df_factor(&self) -> f64 {
        2.0 * self.k0 * self.k0 - self.nu_star * self.nu_star
    }
}

impl KernelSpec {
    pub const ALL: [KernelSpec; 3] = [
        KernelSpec::Epanechnikov,
        KernelSpec::Quartic,
        KernelSpec::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Epanechnikov => "epanechnikov",
            KernelSpec::Quartic => "quartic",
            KernelSpec::Gaussian => "gaussian",
        }
    }

    /// Half-width of the support in units of `t`.
    pub fn support_radius(self) -> f64 {
        match self {
            KernelSpec::Epanechnikov | KernelSpec::Quartic => 1.0,
            KernelSpec::Gaussian => GAUSSIAN_CUTOFF,
        }
    }

    pub fn eval(self, t: f64) -> f64 {
        let a = t.abs();
        match self {
            KernelSpec::Epanechnikov => {
                if a < 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
            KernelSpec::Quartic => {
                if a < 1.0 {
                    let u = 1.0 - t * t;
                    15.0 / 16.0 * u * u
                } else {
                    0.0
                }
            }
            KernelSpec::Gaussian => {
                if a <= GAUSSIAN_CUTOFF {
                    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    /// `K(d/h)/h²`.
    pub fn scaled(self, d: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(SsdmError::InvalidArgument(format!(
                "bandwidth must be positive and finite, got {h}"
            )));
        }
        Ok(self.scaled_unchecked(d, h))
    }

    #[inline]
    pub(crate) fn scaled_unchecked(self, d: f64, h: f64) -> f64 {
        self.eval(d / h) / (h * h)
    }

    pub fn constants(self) -> KernelConstants {
        match self {
            KernelSpec::Epanechnikov => KernelConstants {
                k0: 0.75,
                nu_star: 0.6,
                kappa0: 0.375 * PI,
                kappa2: 0.0625 * PI,
                nu0: 0.1875 * PI,
                nu2: 0.5625 * PI / 24.0,
            },
            KernelSpec::Quartic => KernelConstants {
                k0: 15.0 / 16.0,
                nu_star: 5.0 / 7.0,
                kappa0: 5.0 * PI / 16.0,
                kappa2: 5.0 * PI / 128.0,
                nu0: 45.0 * PI / 256.0,
                nu2: 15.0 * PI / 1024.0,
            },
            KernelSpec::Gaussian => {
                let c = GAUSSIAN_CUTOFF;
                let root_2pi = (2.0 * PI).sqrt();
                let e_half = (-0.5 * c * c).exp();
                let e_full = (-c * c).exp();
                KernelConstants {
                    k0: 1.0 / root_2pi,
                    nu_star: erf(c) / (2.0 * PI.sqrt()),
                    kappa0: root_2pi * (1.0 - e_half),
                    kappa2: PI / root_2pi * (2.0 - (c * c + 2.0) * e_half),
                    nu0: 0.5 * (1.0 - e_full),
                    nu2: 0.25 * (1.0 - (1.0 + c * c) * e_full),
                }
            }
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelSpec {
    type Err = SsdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelSpec::Epanechnikov),
            "quartic" | "biweight" => Ok(KernelSpec::Quartic),
            "gaussian" | "normal" => Ok(KernelSpec::Gaussian),
            other => Err(SsdmError::InvalidArgument(format!(
                "unknown kernel {other:?} (expected epanechnikov, quartic or gaussian)"
            ))),
        }
    }
}
