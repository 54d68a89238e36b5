//! LASSO by cyclic coordinate descent.
//!
//! Objective, on the (optionally centred and standardised) design:
//!
//! ```text
//! (1 / 2n) * ||y - X b||^2 + lambda * ||b||_1
//! ```
//!
//! Each solve runs until every coordinate satisfies the KKT conditions within
//! `tol`: `|x_j'r/n - lambda * sign(b_j)| <= tol` for active coordinates and
//! `|x_j'r/n| <= lambda + tol` for inactive ones.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoParams {
    /// Fixed penalty. `None` selects it by K-fold cross-validation over a log grid.
    pub lambda: Option<f64>,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub standardize: bool,
    pub fit_intercept: bool,
}

impl Default for LassoParams {
    fn default() -> Self {
        Self {
            lambda: None,
            n_lambdas: 50,
            lambda_min_ratio: 1e-3,
            cv_folds: 5,
            tol: 1e-6,
            max_sweeps: 100_000,
            standardize: true,
            fit_intercept: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub intercept: f64,
    /// Coefficients on the original feature scale.
    pub coefficients: Vec<f64>,
    pub lambda: f64,
}

impl LassoModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut out = vec![self.intercept; x.n_rows()];
        for (j, &b) in self.coefficients.iter().enumerate() {
            if b != 0.0 {
                for (o, v) in out.iter_mut().zip(x.column(j)) {
                    *o += b * v;
                }
            }
        }
        out
    }
}

/// Solutions along a descending penalty grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// Coefficients on the working (centred/standardised) scale, one vector per lambda.
    pub working_coefficients: Vec<Vec<f64>>,
    /// Coefficients on the original feature scale.
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    /// Largest KKT violation at each solution.
    pub kkt_violation: Vec<f64>,
    pub sweeps: Vec<usize>,
}

impl LassoPath {
    pub fn model(&self, k: usize) -> LassoModel {
        LassoModel {
            intercept: self.intercepts[k],
            coefficients: self.coefficients[k].clone(),
            lambda: self.lambdas[k],
        }
    }
}

/// Centred/standardised copy of the design plus the transforms needed to map back.
struct Working {
    cols: Vec<Vec<f64>>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    /// x_j'x_j / n on the working scale.
    col_sq: Vec<f64>,
    y: Vec<f64>,
    y_mean: f64,
}

impl Working {
    fn new(x: &FeatureMatrix, y: &[f64], params: &LassoParams) -> Self {
        let n = x.n_rows() as f64;
        let y_mean = if params.fit_intercept {
            y.iter().sum::<f64>() / n
        } else {
            0.0
        };
        let mut cols = Vec::with_capacity(x.n_features());
        let mut x_mean = Vec::new();
        let mut x_scale = Vec::new();
        let mut col_sq = Vec::new();
        for j in 0..x.n_features() {
            let c = x.column(j);
            let mean = if params.fit_intercept {
                c.iter().sum::<f64>() / n
            } else {
                0.0
            };
            let mut w: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let mut scale = 1.0;
            if params.standardize {
                let sd = (w.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                if sd > 0.0 {
                    scale = sd;
                    w.iter_mut().for_each(|v| *v /= sd);
                }
            }
            col_sq.push(w.iter().map(|v| v * v).sum::<f64>() / n);
            cols.push(w);
            x_mean.push(mean);
            x_scale.push(scale);
        }
        Self {
            cols,
            x_mean,
            x_scale,
            col_sq,
            y: y.iter().map(|v| v - y_mean).collect(),
            y_mean,
        }
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    fn lambda_max(&self) -> f64 {
        let n = self.n();
        self.cols
            .iter()
            .map(|c| (dot(c, &self.y) / n).abs())
            .fold(0.0, f64::max)
    }

    fn kkt_violation(&self, beta: &[f64], residual: &[f64], lambda: f64) -> f64 {
        let n = self.n();
        self.cols
            .iter()
            .zip(beta)
            .zip(&self.col_sq)
            .filter(|(_, &sq)| sq > 0.0)
            .map(|((c, &b), _)| {
                let g = dot(c, residual) / n;
                if b != 0.0 {
                    (g - lambda * b.signum()).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Coordinate descent from a warm start; returns (sweeps, final KKT violation).
    fn solve(&self, lambda: f64, beta: &mut [f64], residual: &mut [f64], params: &LassoParams) -> (usize, f64) {
        let n = self.n();
        let mut sweeps = 0;
        loop {
            let violation = self.kkt_violation(beta, residual, lambda);
            if violation <= params.tol || sweeps >= params.max_sweeps {
                return (sweeps, violation);
            }
            for (j, col) in self.cols.iter().enumerate() {
                let sq = self.col_sq[j];
                if sq == 0.0 {
                    continue;
                }
                let old = beta[j];
                let rho = dot(col, residual) / n + sq * old;
                let new = soft_threshold(rho, lambda) / sq;
                if new != old {
                    let delta = new - old;
                    for (r, v) in residual.iter_mut().zip(col) {
                        *r -= delta * v;
                    }
                    beta[j] = new;
                }
            }
            sweeps += 1;
        }
    }

    fn to_original(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let coefs: Vec<f64> = beta.iter().zip(&self.x_scale).map(|(b, s)| b / s).collect();
        let intercept = self.y_mean - coefs.iter().zip(&self.x_mean).map(|(b, m)| b * m).sum::<f64>();
        (intercept, coefs)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(x: &FeatureMatrix, y: &[f64], params: &LassoParams) -> f64 {
    Working::new(x, y, params).lambda_max()
}

/// Warm-started coordinate descent along a strictly descending grid of positive penalties.
pub fn fit_lasso_path(x: &FeatureMatrix, y: &[f64], lambdas: &[f64], params: &LassoParams) -> Result<LassoPath> {
    if x.n_rows() != y.len() {
        return Err(Error::invalid(format!("{} rows but {} targets", x.n_rows(), y.len())));
    }
    if lambdas.is_empty() {
        return Err(Error::invalid("empty penalty grid"));
    }
    if lambdas.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::invalid("penalties must be positive and finite"));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("penalty grid must be strictly descending"));
    }
    let work = Working::new(x, y, params);
    Ok(solve_path(&work, lambdas, params))
}

fn solve_path(work: &Working, lambdas: &[f64], params: &LassoParams) -> LassoPath {
    let p = work.cols.len();
    let mut beta = vec![0.0; p];
    let mut residual = work.y.clone();
    let mut path = LassoPath {
        lambdas: lambdas.to_vec(),
        working_coefficients: Vec::with_capacity(lambdas.len()),
        coefficients: Vec::with_capacity(lambdas.len()),
        intercepts: Vec::with_capacity(lambdas.len()),
        kkt_violation: Vec::with_capacity(lambdas.len()),
        sweeps: Vec::with_capacity(lambdas.len()),
    };
    for &lambda in lambdas {
        let (sweeps, violation) = work.solve(lambda, &mut beta, &mut residual, params);
        let (intercept, coefs) = work.to_original(&beta);
        path.working_coefficients.push(beta.clone());
        path.coefficients.push(coefs);
        path.intercepts.push(intercept);
        path.kkt_violation.push(violation);
        path.sweeps.push(sweeps);
    }
    path
}

/// Log-spaced grid from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    if n <= 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * ratio).ln());
    (0..n)
        .map(|k| (hi + (lo - hi) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

pub(crate) fn fit(x: &FeatureMatrix, y: &[f64], params: &LassoParams, seed: u64) -> Result<LassoModel> {
    let work = Working::new(x, y, params);
    let lmax = work.lambda_max();
    if lmax <= 0.0 {
        let (intercept, coefficients) = work.to_original(&vec![0.0; x.n_features()]);
        return Ok(LassoModel {
            intercept,
            coefficients,
            lambda: params.lambda.unwrap_or(0.0),
        });
    }
    let lambda = match params.lambda {
        Some(l) if l > 0.0 => l,
        Some(_) => return Err(Error::invalid("lasso penalty must be positive")),
        None => select_lambda(x, y, params, lmax, seed)?,
    };
    // Walk the grid down to the chosen penalty for warm starts.
    let mut grid: Vec<f64> = lambda_grid(lmax, params.n_lambdas, params.lambda_min_ratio)
        .into_iter()
        .filter(|&l| l > lambda)
        .collect();
    grid.push(lambda);
    let path = solve_path(&work, &grid, params);
    Ok(path.model(grid.len() - 1))
}

fn select_lambda(x: &FeatureMatrix, y: &[f64], params: &LassoParams, lmax: f64, seed: u64) -> Result<f64> {
    let grid = lambda_grid(lmax, params.n_lambdas, params.lambda_min_ratio);
    let n = x.n_rows();
    let k = params.cv_folds.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut fold = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    let mut cv_error = vec![0.0; grid.len()];
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let xv = x.select_rows(&test);
        let work = Working::new(&xt, &yt, params);
        let path = solve_path(&work, &grid, params);
        for (e, kidx) in cv_error.iter_mut().zip(0..grid.len()) {
            let pred = path.model(kidx).predict(&xv);
            *e += test.iter().zip(pred).map(|(&i, p)| (y[i] - p).powi(2)).sum::<f64>();
        }
    }
    let best = cv_error
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn grid_is_log_spaced_and_descending() {
        let g = lambda_grid(10.0, 3, 0.01);
        assert!((g[0] - 10.0).abs() < 1e-12);
        assert!((g[1] - 1.0).abs() < 1e-12);
        assert!((g[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn path_rejects_bad_grids() {
        let x = FeatureMatrix::new(vec!["a".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let y = [1.0, 2.0, 4.0];
        let p = LassoParams::default();
        assert!(fit_lasso_path(&x, &y, &[0.1, 0.2], &p).is_err());
        assert!(fit_lasso_path(&x, &y, &[0.2, 0.2], &p).is_err());
        assert!(fit_lasso_path(&x, &y, &[0.2, -0.1], &p).is_err());
        assert!(fit_lasso_path(&x, &y, &[0.2, 0.1], &p).is_ok());
    }
}
