use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::logistic;
use crate::tabular::Dataset;

pub const MAX_IRLS_ITERATIONS: usize = 50;
pub const DEVIANCE_TOL: f64 = 1e-10;
/// Mean deviance below this signals (quasi-)separation.
pub const SEPARATION_DEVIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    Separation,
}

impl FitStatus {
    pub fn name(&self) -> &'static str {
        match self {
            FitStatus::Converged => "ok",
            FitStatus::MaxIterations => "max_iterations",
            FitStatus::Separation => "separation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first when fitted with one.
    pub coef: Vec<f64>,
    /// Inverse observed information `(XᵀWX)⁻¹`.
    pub cov: Vec<Vec<f64>>,
    pub intercept: bool,
    pub status: FitStatus,
    pub iterations: usize,
    pub deviance: f64,
}

impl LogisticFit {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coef.len()).map(|k| self.cov[k][k].sqrt()).collect()
    }

    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        let (b0, rest) = if self.intercept {
            (self.coef[0], &self.coef[1..])
        } else {
            (0.0, &self.coef[..])
        };
        b0 + rest.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| logistic(self.linear_predictor(r))).collect()
    }
}

/// `log(1 + e^x)` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn deviance(eta: &[f64], y: &[f64]) -> f64 {
    2.0 * eta.iter().zip(y).map(|(&e, &t)| log1p_exp(e) - t * e).sum::<f64>()
}

/// Cholesky factor `L` of a symmetric positive definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = a.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|r| l[i][r] * l[j][r]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = l.len();
    let mut z = vec![0.0; k];
    for i in 0..k {
        z[i] = (b[i] - (0..i).map(|r| l[i][r] * z[r]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        x[i] = (z[i] - (i + 1..k).map(|r| l[r][i] * x[r]).sum::<f64>()) / l[i][i];
    }
    x
}

fn chol_inverse(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = l.len();
    let mut inv = vec![vec![0.0; k]; k];
    for c in 0..k {
        let mut e = vec![0.0; k];
        e[c] = 1.0;
        for (r, v) in chol_solve(l, &e).into_iter().enumerate() {
            inv[r][c] = v;
        }
    }
    inv
}

fn design(rows: &[Vec<f64>], intercept: bool) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut v = Vec::with_capacity(r.len() + 1);
            if intercept {
                v.push(1.0);
            }
            v.extend_from_slice(r);
            v
        })
        .collect()
}

fn weighted_gram(x: &[Vec<f64>], w: &[f64]) -> Vec<Vec<f64>> {
    let k = x[0].len();
    let mut g = vec![vec![0.0; k]; k];
    for (row, &wi) in x.iter().zip(w) {
        for a in 0..k {
            let wa = wi * row[a];
            for b in 0..=a {
                g[a][b] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            g[b][a] = g[a][b];
        }
    }
    g
}

/// Logistic regression by iteratively reweighted least squares.
///
/// Stops when the relative deviance change `|D − D_old| / (|D| + 0.1)` drops
/// below `DEVIANCE_TOL` or after `MAX_IRLS_ITERATIONS`; a final mean deviance
/// under `SEPARATION_DEVIANCE` is reported as separation. The last iterate is
/// returned in every case.
pub fn fit_logistic_rows(rows: &[Vec<f64>], y: &[f64], intercept: bool) -> Result<LogisticFit> {
    let n = rows.len();
    if n != y.len() {
        return Err(Error::Data(format!("{n} rows but {} outcomes", y.len())));
    }
    if y.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::Data("outcome must be coded 0/1".into()));
    }
    let x = design(rows, intercept);
    let k = x.first().map_or(0, Vec::len);
    if k == 0 || n <= k {
        return Err(Error::Data(format!(
            "logistic regression needs more rows ({n}) than coefficients ({k})"
        )));
    }
    let mut beta = vec![0.0; k];
    let mut eta = vec![0.0; n];
    let mut dev = deviance(&eta, y);
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    let mut l = None;
    while iterations < MAX_IRLS_ITERATIONS {
        iterations += 1;
        let mut rhs = vec![0.0; k];
        for i in 0..n {
            let mu = logistic(eta[i]);
            w[i] = (mu * (1.0 - mu)).max(1e-300);
            let z = eta[i] + (y[i] - mu) / w[i];
            for a in 0..k {
                rhs[a] += w[i] * x[i][a] * z;
            }
        }
        let Some(chol) = cholesky(&weighted_gram(&x, &w)) else {
            break;
        };
        beta = chol_solve(&chol, &rhs);
        for (e, row) in eta.iter_mut().zip(&x) {
            *e = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        }
        let new_dev = deviance(&eta, y);
        let change = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        l = Some(chol);
        if change < DEVIANCE_TOL {
            status = FitStatus::Converged;
            break;
        }
    }
    if dev / (n as f64) < SEPARATION_DEVIANCE {
        status = FitStatus::Separation;
    }
    // Covariance at the final coefficients.
    for i in 0..n {
        let mu = logistic(eta[i]);
        w[i] = mu * (1.0 - mu);
    }
    let cov = match cholesky(&weighted_gram(&x, &w)).or(l) {
        Some(chol) => chol_inverse(&chol),
        None => {
            status = FitStatus::Separation;
            vec![vec![f64::NAN; k]; k]
        }
    };
    Ok(LogisticFit {
        coef: beta,
        cov,
        intercept,
        status,
        iterations,
        deviance: dev,
    })
}

pub fn fit_logistic(x: &Dataset, y: &[f64], intercept: bool) -> Result<LogisticFit> {
    fit_logistic_rows(&x.to_matrix()?, y, intercept)
}

/// `Xᵀ(y − π̂)` at the fitted coefficients, intercept first.
pub fn score_vector(fit: &LogisticFit, rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let x = design(rows, fit.intercept);
    let mut g = vec![0.0; fit.coef.len()];
    for (row, &t) in x.iter().zip(y) {
        let r = t - logistic(row.iter().zip(&fit.coef).map(|(a, b)| a * b).sum());
        for (ga, xa) in g.iter_mut().zip(row) {
            *ga += xa * r;
        }
    }
    g
}
