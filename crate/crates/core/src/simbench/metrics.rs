use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{t_cdf, t_quantile};
use crate::tabular::{standardize, Cell, ColumnKind, Dataset, StandardizationParams};

/// RMSE over all cells of the standardized matrices, both scaled with the
/// parameters of the original data.
pub fn nrmse(imputed: &Dataset, truth: &Dataset, params: &StandardizationParams) -> Result<f64> {
    if imputed.n_rows() != truth.n_rows() || !imputed.same_schema(truth) {
        return Err(Error::Schema(format!(
            "shape mismatch: {}×{} vs {}×{}",
            imputed.n_rows(),
            imputed.n_cols(),
            truth.n_rows(),
            truth.n_cols()
        )));
    }
    let a = standardize(imputed, params)?.to_matrix()?;
    let b = standardize(truth, params)?.to_matrix()?;
    let cells = (truth.n_rows() * truth.n_cols()) as f64;
    let sse: f64 = a
        .iter()
        .zip(&b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y) * (x - y)))
        .sum();
    Ok((sse / cells).sqrt())
}

pub fn brier(predicted: &[f64], y: &[f64]) -> Result<f64> {
    if predicted.len() != y.len() || y.is_empty() {
        return Err(Error::Data(format!(
            "{} predictions for {} outcomes",
            predicted.len(),
            y.len()
        )));
    }
    Ok(predicted.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub estimate: f64,
    pub within: f64,
    pub between: f64,
    pub total: f64,
    pub df: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PooledEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower < value && value < self.upper
    }
}

/// Barnard–Rubin degrees of freedom for `m` imputations with
/// complete-data degrees of freedom `df_complete`.
pub fn barnard_rubin_df(m: usize, between: f64, total: f64, df_complete: f64) -> f64 {
    let lambda = if total > 0.0 {
        (1.0 + 1.0 / m as f64) * between / total
    } else {
        0.0
    };
    let df_old = if lambda > 0.0 {
        (m as f64 - 1.0) / (lambda * lambda)
    } else {
        f64::INFINITY
    };
    let df_obs = if df_complete.is_finite() {
        (df_complete + 1.0) / (df_complete + 3.0) * df_complete * (1.0 - lambda)
    } else {
        f64::INFINITY
    };
    match (df_old.is_finite(), df_obs.is_finite()) {
        // No within-imputation variance: only the between part carries df.
        _ if lambda >= 1.0 => df_old,
        (false, _) => df_obs,
        (_, false) => df_old,
        _ => df_old * df_obs / (df_old + df_obs),
    }
}

/// Rubin's rules for `m ≥ 2` sets of coefficient estimates and their
/// sampling variances; `alpha` sets the CI level `1 − alpha`.
pub fn pool_rubin(
    estimates: &[Vec<f64>],
    variances: &[Vec<f64>],
    df_complete: f64,
    alpha: f64,
) -> Result<Vec<PooledEstimate>> {
    let m = estimates.len();
    if m < 2 {
        return Err(Error::Data(format!("pooling needs at least 2 imputations, got {m}")));
    }
    if variances.len() != m {
        return Err(Error::Data("estimates and variances differ in count".into()));
    }
    let k = estimates[0].len();
    if estimates.iter().chain(variances).any(|v| v.len() != k) {
        return Err(Error::Data("ragged coefficient vectors".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mf = m as f64;
    Ok((0..k)
        .map(|j| {
            let estimate = estimates.iter().map(|e| e[j]).sum::<f64>() / mf;
            let within = variances.iter().map(|v| v[j]).sum::<f64>() / mf;
            let between = estimates.iter().map(|e| (e[j] - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
            let total = within + (1.0 + 1.0 / mf) * between;
            let df = barnard_rubin_df(m, between, total, df_complete);
            let half = t_quantile(df, 1.0 - alpha / 2.0) * total.sqrt();
            PooledEstimate {
                estimate,
                within,
                between,
                total,
                df,
                lower: estimate - half,
                upper: estimate + half,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub coverage: f64,
    pub avg_width: f64,
    pub rmse: f64,
}

/// Per coefficient over `K` replicates: share of CIs strictly containing the
/// truth, mean CI width and RMSE of the pooled estimate.
pub fn coverage_stats(pooled: &[Vec<PooledEstimate>], truth: &[f64]) -> Result<Vec<CoverageStats>> {
    let k = pooled.len();
    if k == 0 {
        return Err(Error::Data("coverage needs at least one replicate".into()));
    }
    if pooled.iter().any(|r| r.len() != truth.len()) {
        return Err(Error::Data("replicate length differs from truth".into()));
    }
    let kf = k as f64;
    Ok(truth
        .iter()
        .enumerate()
        .map(|(j, &b)| CoverageStats {
            coverage: pooled.iter().filter(|r| r[j].covers(b)).count() as f64 / kf,
            avg_width: pooled.iter().map(|r| r[j].width()).sum::<f64>() / kf,
            rmse: (pooled.iter().map(|r| (r[j].estimate - b).powi(2)).sum::<f64>() / kf).sqrt(),
        })
        .collect())
}

/// One dataset from several imputations: cellwise mean for numeric columns,
/// most frequent label (first in schema order on ties) for categorical ones.
pub fn mean_over_imputations(sets: &[Dataset]) -> Result<Dataset> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Data("no imputed datasets".into()))?;
    if sets.iter().any(|d| !d.same_schema(first) || d.n_rows() != first.n_rows()) {
        return Err(Error::Schema("imputed datasets differ in shape".into()));
    }
    let columns = (0..first.n_cols())
        .map(|j| {
            (0..first.n_rows())
                .map(|i| match first.schema()[j].kind() {
                    ColumnKind::Numeric => {
                        let xs: Vec<f64> = sets.iter().filter_map(|d| d.cell(i, j).as_f64()).collect();
                        if xs.is_empty() {
                            Cell::Missing
                        } else {
                            Cell::Num(xs.iter().sum::<f64>() / xs.len() as f64)
                        }
                    }
                    ColumnKind::Categorical => {
                        let mut counts = vec![0usize; first.schema()[j].n_categories()];
                        for c in sets.iter().filter_map(|d| d.cell(i, j).as_cat()) {
                            counts[c as usize] += 1;
                        }
                        let best = counts.iter().copied().max().unwrap_or(0);
                        if best == 0 {
                            Cell::Missing
                        } else {
                            Cell::Cat(counts.iter().position(|&c| c == best).unwrap() as u32)
                        }
                    }
                })
                .collect()
        })
        .collect();
    Dataset::from_columns(first.schema().to_vec(), columns)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a − b) < 0`.
    pub p_less: f64,
}

/// Paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Data("paired test needs two equal samples of size ≥ 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    let df = n - 1.0;
    Ok(PairedTest {
        mean_diff: mean,
        t,
        df,
        p_less: t_cdf(df, t),
    })
}
