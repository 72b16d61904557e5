#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ssdm::SpatialDataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_locations(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random(), rng.random()]).collect()
}

pub fn normal_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn random_dataset(n: usize, p: usize, seed: u64) -> SpatialDataset {
    let mut r = rng(seed);
    let locs = uniform_locations(n, &mut r);
    let x = normal_matrix(n, p, &mut r);
    let y = DVector::from_fn(n, |_, _| r.sample(StandardNormal));
    SpatialDataset::new(locs, x, y).unwrap()
}

/// Exponential-decay weights straight from the definition.
pub fn exp_weights_oracle(locs: &[[f64; 2]]) -> DMatrix<f64> {
    let n = locs.len();
    let d = |i: usize, j: usize| {
        ((locs[i][0] - locs[j][0]).powi(2) + (locs[i][1] - locs[j][1]).powi(2)).sqrt()
    };
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (-d(i, k)).exp()).sum();
        (-d(i, j)).exp() / denom
    })
}

/// `ln|det(I − αW)|` by a plain determinant.
pub fn logdet_oracle(w: &DMatrix<f64>, alpha: f64) -> f64 {
    let n = w.nrows();
    (DMatrix::identity(n, n) - w * alpha).determinant().abs().ln()
}

/// Level estimate of the local-linear fit at `s`, by SVD least squares on
/// the square-root-weighted design.
pub fn local_linear_oracle(
    locs: &[[f64; 2]],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    s: [f64; 2],
    h: f64,
) -> DVector<f64> {
    let n = locs.len();
    let p = x.ncols();
    let epa = |t: f64| if t.abs() < 1.0 { 0.75 * (1.0 - t * t) } else { 0.0 };
    let rows: Vec<usize> = (0..n)
        .filter(|&i| {
            let d = ((locs[i][0] - s[0]).powi(2) + (locs[i][1] - s[1]).powi(2)).sqrt();
            epa(d / h) > 0.0
        })
        .collect();
    let m = rows.len();
    let mut a = DMatrix::zeros(m, 3 * p);
    let mut b = DVector::zeros(m);
    for (r, &i) in rows.iter().enumerate() {
        let du = locs[i][0] - s[0];
        let dv = locs[i][1] - s[1];
        let sw = (epa((du * du + dv * dv).sqrt() / h) / (h * h)).sqrt();
        for j in 0..p {
            a[(r, j)] = sw * x[(i, j)];
            a[(r, p + 2 * j)] = sw * x[(i, j)] * du;
            a[(r, p + 2 * j + 1)] = sw * x[(i, j)] * dv;
        }
        b[r] = sw * y[i];
    }
    let coef = a.svd(true, true).solve(&b, 1e-14).unwrap();
    coef.rows(0, p).into_owned()
}

/// Ordinary least squares by the normal equations.
pub fn ols_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.cholesky().unwrap().solve(&xty)
}
