//! Semiparametric spatial dynamic models.
//!
//! The model is `y_i = α Σ_j w_ij y_j + X_iᵀβ(s_i) + ε_i`: a spatial
//! autoregressive response with coefficients that vary smoothly over the
//! locations `s_i`. The crate fits it by profile likelihood with
//! local-linear smoothing ([`profile`]), identifies constant coefficient
//! components with an information criterion ([`selection`]), and provides
//! a Monte Carlo harness for the reference designs ([`simulate`]).

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod kernels;
pub mod locallinear;
pub mod profile;
pub mod selection;
mod serde_util;
pub mod simulate;
pub mod weights;

pub use error::{ErrorClass, Result, SsdmError};
pub use kernels::{KernelConstants, KernelSpec};
pub use locallinear::{LocalFit, SmootherBasis, SmootherCache, SpatialDataset};
pub use profile::{
    estimate, standard_errors, Bandwidth, BandwidthPolicy, FitResult, ModelSpec, SeMode,
};
pub use selection::{Algorithm, Criterion, SelectionResult, SelectionSettings};
pub use simulate::{DgpConfig, MonteCarloReport, Table1Config, Table2Config};
pub use weights::{AlphaInterval, WeightMatrix};
