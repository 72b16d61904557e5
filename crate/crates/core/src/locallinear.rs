//! Local-linear estimation of the coefficient surfaces and the smoother
//! machinery behind the profile likelihood.
//!
//! At a target location `s` the local design has `3p` columns: the
//! covariates `X_i` and their products with the two coordinates of
//! `(s_i − s)`. The level part of the weighted least-squares solution is the
//! coefficient estimate at `s`; stacking `X_iᵀ · level` over all sample
//! locations gives the smoother matrix `S`, which maps any working response
//! to fitted values.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Result, SsdmError};
use crate::kernels::KernelSpec;
use crate::profile::ModelSpec;
use crate::weights::WeightMatrix;

/// Largest acceptable condition number of the local normal equations.
pub const MAX_CONDITION: f64 = 1e10;
const RIDGE_FACTOR: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 2;

/// Locations, covariates and response of one sample.
#[derive(Debug, Clone)]
pub struct SpatialDataset {
    locations: Vec<[f64; 2]>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    covariate_names: Vec<String>,
}

impl SpatialDataset {
    pub fn new(locations: Vec<[f64; 2]>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(locations, x, y, names)
    }

    pub fn with_names(
        locations: Vec<[f64; 2]>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = locations.len();
        let p = x.ncols();
        if x.nrows() != n || y.len() != n {
            return Err(SsdmError::InvalidData(format!(
                "dimension mismatch: {} locations, {} covariate rows, {} responses",
                n,
                x.nrows(),
                y.len()
            )));
        }
        if covariate_names.len() != p {
            return Err(SsdmError::InvalidData(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                p
            )));
        }
        if p == 0 {
            return Err(SsdmError::InvalidData("no covariates".into()));
        }
        if n <= 3 * p {
            return Err(SsdmError::InvalidData(format!(
                "need n > 3p observations for local-linear fits (n = {n}, p = {p})"
            )));
        }
        if locations.iter().flatten().any(|v| !v.is_finite())
            || x.iter().any(|v| !v.is_finite())
            || y.iter().any(|v| !v.is_finite())
        {
            return Err(SsdmError::InvalidData("non-finite value in dataset".into()));
        }
        Ok(SpatialDataset {
            locations,
            x,
            y,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.locations.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn locations(&self) -> &[[f64; 2]] {
        &self.locations
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Coordinate span `(max − min)` along each axis.
    pub fn location_range(&self) -> [f64; 2] {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for s in &self.locations {
            for k in 0..2 {
                lo[k] = lo[k].min(s[k]);
                hi[k] = hi[k].max(s[k]);
            }
        }
        [hi[0] - lo[0], hi[1] - lo[1]]
    }

    /// The larger of the two axis spans; fraction-of-range bandwidths
    /// resolve against this.
    pub fn max_span(&self) -> f64 {
        let [a, b] = self.location_range();
        a.max(b)
    }

    /// Same locations and covariates with a different response.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::with_names(
            self.locations.clone(),
            self.x.clone(),
            y,
            self.covariate_names.clone(),
        )
    }

    /// Reorder observations: row `k` of the result is row `order[k]` here.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        let locations = order.iter().map(|&i| self.locations[i]).collect();
        let x = DMatrix::from_fn(self.n(), self.p(), |r, c| self.x[(order[r], c)]);
        let y = DVector::from_fn(self.n(), |r, _| self.y[order[r]]);
        Self::with_names(locations, x, y, self.covariate_names.clone())
    }

    /// Reorder covariate columns: column `k` of the result is column `order[k]`.
    pub fn permute_covariates(&self, order: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(self.n(), self.p(), |r, c| self.x[(r, order[c])]);
        let names = order
            .iter()
            .map(|&c| self.covariate_names[c].clone())
            .collect();
        Self::with_names(self.locations.clone(), x, self.y.clone(), names)
    }
}

/// Local-linear solution at one target location.
#[derive(Debug, Clone)]
pub struct LocalFit {
    /// Coefficient estimate at the target (length `p`).
    pub level: DVector<f64>,
    /// Gradient estimate, `p × 2` (columns: ∂/∂u, ∂/∂v).
    pub slope: DMatrix<f64>,
    /// Sum of kernel weights at the target.
    pub effective_weight_count: f64,
}

// Weighted least-squares operator at one target, restricted to the
// observations with positive kernel weight.
struct LocalOperator {
    active: Vec<usize>,
    // (3p × m): maps the active responses to (level, slope / h) coefficients.
    coefficients: DMatrix<f64>,
    weight_sum: f64,
}

fn min_feasible_bandwidth(data: &SpatialDataset, s: [f64; 2], kernel: KernelSpec) -> f64 {
    let required = 3 * data.p();
    let mut d: Vec<f64> = data
        .locations
        .iter()
        .map(|si| ((si[0] - s[0]).powi(2) + (si[1] - s[1]).powi(2)).sqrt())
        .collect();
    d.sort_by(|a, b| a.total_cmp(b));
    let k = required.min(d.len()) - 1;
    // K(t) is zero at the support edge, so h must strictly exceed this.
    d[k] / kernel.support_radius()
}

fn local_operator(
    data: &SpatialDataset,
    s: [f64; 2],
    h: f64,
    kernel: KernelSpec,
    target: &dyn Fn() -> String,
) -> Result<LocalOperator> {
    let p = data.p();
    let q = 3 * p;
    let mut active = Vec::new();
    let mut weights = Vec::new();
    for (i, si) in data.locations.iter().enumerate() {
        let d = ((si[0] - s[0]).powi(2) + (si[1] - s[1]).powi(2)).sqrt();
        let w = kernel.scaled_unchecked(d, h);
        if w > 0.0 {
            active.push(i);
            weights.push(w);
        }
    }
    let too_small = |active: usize| SsdmError::BandwidthTooSmall {
        target: target(),
        u: s[0],
        v: s[1],
        h,
        active,
        required: q,
        min_feasible_h: min_feasible_bandwidth(data, s, kernel),
    };
    let m = active.len();
    if m < q {
        return Err(too_small(m));
    }

    // Slope columns are expressed in units of h to keep the system balanced.
    let mut design = DMatrix::zeros(m, q);
    for (k, &i) in active.iter().enumerate() {
        let du = (data.locations[i][0] - s[0]) / h;
        let dv = (data.locations[i][1] - s[1]) / h;
        for j in 0..p {
            let xij = data.x[(i, j)];
            design[(k, j)] = xij;
            design[(k, p + 2 * j)] = xij * du;
            design[(k, p + 2 * j + 1)] = xij * dv;
        }
    }
    let mut weighted_t = design.transpose();
    for (k, &w) in weights.iter().enumerate() {
        weighted_t.column_mut(k).scale_mut(w);
    }
    let mut normal = &weighted_t * &design;
    let ridge = RIDGE_FACTOR * normal.trace() / q as f64;
    for j in 0..q {
        normal[(j, j)] += ridge;
    }
    let eig = SymmetricEigen::new(normal.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmin > 0.0) || lmax / lmin > MAX_CONDITION {
        return Err(too_small(m));
    }
    let chol = normal.clone().cholesky().ok_or_else(|| too_small(m))?;
    let mut coefficients = chol.solve(&weighted_t);
    // Refine against the unregularized system so the ridge leaves no bias.
    for j in 0..q {
        normal[(j, j)] -= ridge;
    }
    for _ in 0..REFINEMENT_STEPS {
        let residual = &weighted_t - &normal * &coefficients;
        coefficients += chol.solve(&residual);
    }
    Ok(LocalOperator {
        active,
        coefficients,
        weight_sum: weights.iter().sum(),
    })
}

/// Minimize `Σ (y*_i − X_iᵀa − X_iᵀB(s_i − s))² K_h(‖s_i − s‖)` over `(a, B)`.
pub fn local_linear_fit(
    data: &SpatialDataset,
    ystar: &DVector<f64>,
    s: [f64; 2],
    h: f64,
    kernel: KernelSpec,
) -> Result<LocalFit> {
    check_bandwidth(h)?;
    if ystar.len() != data.n() {
        return Err(SsdmError::InvalidData(format!(
            "working response has length {}, expected {}",
            ystar.len(),
            data.n()
        )));
    }
    let op = local_operator(data, s, h, kernel, &|| "location".to_string())?;
    let p = data.p();
    let local_y = DVector::from_iterator(op.active.len(), op.active.iter().map(|&i| ystar[i]));
    let coef = &op.coefficients * local_y;
    let level = coef.rows(0, p).into_owned();
    let slope = DMatrix::from_fn(p, 2, |j, k| coef[p + 2 * j + k] / h);
    Ok(LocalFit {
        level,
        slope,
        effective_weight_count: op.weight_sum,
    })
}

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(SsdmError::InvalidArgument(format!(
            "bandwidth must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct LevelRow {
    active: Vec<usize>,
    // p × m
    level: DMatrix<f64>,
}

/// Level operators of the local-linear fit at every sample location, for one
/// bandwidth. Everything the estimator needs at that bandwidth (smoother
/// matrices for any constant-set, coefficient surfaces for any working
/// response) is derived from this.
#[derive(Debug, Clone)]
pub struct SmootherBasis {
    h: f64,
    kernel: KernelSpec,
    n: usize,
    p: usize,
    rows: Vec<LevelRow>,
}

impl SmootherBasis {
    pub fn new(data: &SpatialDataset, h: f64, kernel: KernelSpec) -> Result<Self> {
        check_bandwidth(h)?;
        let p = data.p();
        let rows = (0..data.n())
            .into_par_iter()
            .map(|i| {
                let op = local_operator(data, data.locations[i], h, kernel, &|| {
                    format!("row {}", i + 1)
                })?;
                Ok(LevelRow {
                    level: op.coefficients.rows(0, p).into_owned(),
                    active: op.active,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SmootherBasis {
            h,
            kernel,
            n: data.n(),
            p,
            rows,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    // (1/n) Σ_i L_i, the operator giving the average of the surfaces.
    fn mean_level(&self) -> DMatrix<f64> {
        let mut mean = DMatrix::zeros(self.p, self.n);
        for row in &self.rows {
            for (k, &col) in row.active.iter().enumerate() {
                for j in 0..self.p {
                    mean[(j, col)] += row.level[(j, k)];
                }
            }
        }
        mean / self.n as f64
    }

    /// Coefficient surfaces `β̂(s_i)` (n × p) for a working response.
    pub fn surface(&self, ystar: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.p);
        for (i, row) in self.rows.iter().enumerate() {
            for j in 0..self.p {
                out[(i, j)] = row
                    .active
                    .iter()
                    .enumerate()
                    .map(|(k, &col)| row.level[(j, k)] * ystar[col])
                    .sum();
            }
        }
        out
    }

    /// Smoother matrix of the fully functional model.
    pub fn smoother(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for (k, &col) in row.active.iter().enumerate() {
                s[(i, col)] = (0..self.p).map(|j| x[(i, j)] * row.level[(j, k)]).sum();
            }
        }
        s
    }

    /// Smoother matrix of the model whose components in `spec` are estimated
    /// by averaging their surface over the sample locations.
    fn averaged_smoother(&self, x: &DMatrix<f64>, spec: &ModelSpec) -> DMatrix<f64> {
        let constant = spec.mask(self.p);
        let mean = self.mean_level();
        let mut s = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for (k, &col) in row.active.iter().enumerate() {
                s[(i, col)] = (0..self.p)
                    .filter(|&j| !constant[j])
                    .map(|j| x[(i, j)] * row.level[(j, k)])
                    .sum();
            }
            for j in (0..self.p).filter(|&j| constant[j]) {
                let xij = x[(i, j)];
                for col in 0..self.n {
                    s[(i, col)] += xij * mean[(j, col)];
                }
            }
        }
        s
    }
}

/// Smoother matrix `S` with row `i` equal to `(X_iᵀ, 0)(𝒳ᵀ𝒲𝒳)⁻¹𝒳ᵀ𝒲` at `s_i`.
pub fn smoother_matrix(
    data: &SpatialDataset,
    h: f64,
    kernel: KernelSpec,
) -> Result<DMatrix<f64>> {
    Ok(SmootherBasis::new(data, h, kernel)?.smoother(data.x()))
}

// Least-squares fit of a working response on X with every coefficient held
// constant over space.
fn least_squares(x: &DMatrix<f64>) -> Result<nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let qr = x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
        return Err(SsdmError::numerical(
            "locallinear",
            "covariate matrix is rank deficient",
        ));
    }
    Ok(qr)
}

/// Smoother matrix of a model with constant set `spec`.
///
/// Constant components are estimated as the average of their local-linear
/// surface. When every component is constant no smoothing remains and the
/// smoother is the least-squares projection onto the covariates.
pub fn model_smoother(
    basis: &SmootherBasis,
    data: &SpatialDataset,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    if spec.is_all_constant(data.p()) {
        let q = least_squares(data.x())?.q();
        return Ok(&q * q.transpose());
    }
    if spec.is_empty() {
        return Ok(basis.smoother(data.x()));
    }
    Ok(basis.averaged_smoother(data.x(), spec))
}

/// Coefficient surfaces of a model with constant set `spec` (n × p); columns
/// in `spec` are constant.
pub fn model_surface(
    basis: &SmootherBasis,
    data: &SpatialDataset,
    ystar: &DVector<f64>,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let n = data.n();
    if spec.is_all_constant(data.p()) {
        let qr = least_squares(data.x())?;
        let rhs = qr.q().transpose() * ystar;
        let beta = qr.r().solve_upper_triangular(&rhs).ok_or_else(|| {
            SsdmError::numerical("locallinear", "singular least-squares system")
        })?;
        return Ok(DMatrix::from_fn(n, data.p(), |_, j| beta[j]));
    }
    let mut surface = basis.surface(ystar);
    for j in spec.zero_based() {
        let mean = surface.column(j).mean();
        surface.column_mut(j).fill(mean);
    }
    Ok(surface)
}

/// Fitted values `X_iᵀ β̂(s_i)`.
pub fn fitted_values(x: &DMatrix<f64>, surface: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        (0..x.ncols()).map(|j| x[(i, j)] * surface[(i, j)]).sum()
    })
}

/// Coefficients of `n·σ̃²(α) = c0 − 2αc1 + α²c2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// With `r0 = (I − S)y` and `r1 = (I − S)Wy`: `c0 = r0ᵀr0`, `c1 = r0ᵀr1`,
/// `c2 = r1ᵀr1`.
pub fn projection_quadratic(
    s: &DMatrix<f64>,
    w: &WeightMatrix,
    y: &DVector<f64>,
) -> Result<QuadraticCoefficients> {
    let (r0, r1) = residual_pair(s, w, y)?;
    Ok(QuadraticCoefficients {
        c0: r0.dot(&r0),
        c1: r0.dot(&r1),
        c2: r1.dot(&r1),
    })
}

fn residual_pair(
    s: &DMatrix<f64>,
    w: &WeightMatrix,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = y.len();
    if s.nrows() != n || s.ncols() != n || w.n() != n {
        return Err(SsdmError::InvalidData(format!(
            "dimension mismatch: S is {}x{}, W is {}x{}, y has {} entries",
            s.nrows(),
            s.ncols(),
            w.n(),
            w.n(),
            n
        )));
    }
    let wy = w.mul_vec(y);
    let r0 = y - s * y;
    let r1 = &wy - s * &wy;
    Ok((r0, r1))
}

/// Everything the profile step needs from one smoother: the residual
/// vectors `(I − S)y`, `(I − S)Wy` and their quadratic form in α.
#[derive(Debug, Clone)]
pub struct SmootherCache {
    pub s: DMatrix<f64>,
    pub h: f64,
    pub wy: DVector<f64>,
    pub quadratic: QuadraticCoefficients,
    r0: DVector<f64>,
    r1: DVector<f64>,
}

impl SmootherCache {
    pub fn new(s: DMatrix<f64>, h: f64, w: &WeightMatrix, y: &DVector<f64>) -> Result<Self> {
        let (r0, r1) = residual_pair(&s, w, y)?;
        let quadratic = QuadraticCoefficients {
            c0: r0.dot(&r0),
            c1: r0.dot(&r1),
            c2: r1.dot(&r1),
        };
        Ok(SmootherCache {
            s,
            h,
            wy: w.mul_vec(y),
            quadratic,
            r0,
            r1,
        })
    }

    pub fn n(&self) -> usize {
        self.r0.len()
    }

    /// `σ̃²(α) = (c0 − 2αc1 + α²c2)/n`.
    pub fn sigma2(&self, alpha: f64) -> f64 {
        let q = &self.quadratic;
        (q.c0 - 2.0 * alpha * q.c1 + alpha * alpha * q.c2) / self.n() as f64
    }

    /// `(I − S)(y − αWy)`.
    pub fn residual(&self, alpha: f64) -> DVector<f64> {
        &self.r0 - &self.r1 * alpha
    }
}
