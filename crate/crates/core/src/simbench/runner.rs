use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arf::ArfParams;
use crate::density::DensityOptions;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::impute::{impute_dataset, ImputationConfig, ImputationMode, LeafMean};
use crate::rng::{derive_seed, derived_rng};
use crate::tabular::{Cell, ColumnSchema, Dataset, StandardizationParams};

use super::ampute::{ampute, AmputeSpec, Mechanism};
use super::baselines::{baseline_median, baseline_random};
use super::glm::{fit_logistic, FitStatus, LogisticFit};
use super::metrics::{brier, nrmse, pool_rubin};
use super::simulate::{simulate_features, simulate_outcome, true_beta, Effect, Marginal, SimSpec};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Missarf,
    Median,
    Random,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Missarf => "missarf",
            Method::Median => "median",
            Method::Random => "random",
        }
    }

    fn index(&self) -> u64 {
        match self {
            Method::Missarf => 0,
            Method::Median => 1,
            Method::Random => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "missarf" => Ok(Method::Missarf),
            "median" => Ok(Method::Median),
            "random" => Ok(Method::Random),
            _ => Err(Error::Config(format!("unknown method '{s}' (missarf, median, random)"))),
        }
    }
}

/// Setting I scores single imputations (NRMSE, Brier); setting II pools
/// multiple imputations for inference on β.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Single,
    Multiple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub marginal: Vec<Marginal>,
    pub effect: Vec<Effect>,
    pub mechanism: Vec<Mechanism>,
    pub proportion: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissArfConfig {
    pub trees: usize,
    pub min_node_size: usize,
    pub mtry: Option<usize>,
    pub delta: f64,
    pub max_iters: usize,
    pub smoothing: f64,
    pub leaf_mean: LeafMean,
}

impl Default for MissArfConfig {
    fn default() -> Self {
        let a = ArfParams::default();
        MissArfConfig {
            trees: a.forest.n_trees,
            min_node_size: a.forest.min_node_size,
            mtry: a.forest.mtry,
            delta: a.delta,
            max_iters: a.max_iters,
            smoothing: 0.0,
            leaf_mean: LeafMean::default(),
        }
    }
}

impl MissArfConfig {
    pub fn imputation_config(&self, mode: ImputationMode, seed: u64) -> ImputationConfig {
        ImputationConfig {
            mode,
            arf: ArfParams {
                forest: ForestParams {
                    n_trees: self.trees,
                    min_node_size: self.min_node_size,
                    mtry: self.mtry,
                },
                delta: self.delta,
                max_iters: self.max_iters,
            },
            density: DensityOptions {
                smoothing: self.smoothing,
            },
            leaf_mean: self.leaf_mean,
            seed,
        }
    }
}

fn default_settings() -> Vec<Setting> {
    vec![Setting::Single, Setting::Multiple]
}

fn default_m() -> usize {
    20
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub seed: u64,
    pub replicates: usize,
    #[serde(default = "default_settings")]
    pub settings: Vec<Setting>,
    pub methods: Vec<Method>,
    /// Imputations per replicate in setting II.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Record wall time per method; off gives byte-identical reruns.
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Let the imputation model see the outcome column.
    #[serde(default)]
    pub include_outcome: bool,
    pub grid: GridConfig,
    #[serde(default)]
    pub missarf: MissArfConfig,
}

impl BenchmarkConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchmarkConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let empty = [
            ("grid.n", g.n.is_empty()),
            ("grid.p", g.p.is_empty()),
            ("grid.marginal", g.marginal.is_empty()),
            ("grid.effect", g.effect.is_empty()),
            ("grid.mechanism", g.mechanism.is_empty()),
            ("grid.proportion", g.proportion.is_empty()),
            ("methods", self.methods.is_empty()),
            ("settings", self.settings.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("{name} must not be empty")));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be ≥ 1".into()));
        }
        if self.settings.contains(&Setting::Multiple) && self.m < 2 {
            return Err(Error::Config("m must be ≥ 2 for the multiple-imputation setting".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(q) = g.proportion.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::Config(format!("proportion must lie in (0, 1), got {q}")));
        }
        for &n in &g.n {
            for &p in &g.p {
                SimSpec {
                    n,
                    p,
                    marginal: Marginal::Normal,
                    effect: Effect::Linear,
                    rho: g.rho,
                }
                .validate()?;
            }
        }
        if self.missarf.trees == 0 || self.missarf.min_node_size == 0 {
            return Err(Error::Config("missarf.trees and missarf.min_node_size must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &n in &g.n {
            for &p in &g.p {
                for &marginal in &g.marginal {
                    for &effect in &g.effect {
                        for &mechanism in &g.mechanism {
                            for &proportion in &g.proportion {
                                out.push(CellKey {
                                    n,
                                    p,
                                    marginal,
                                    effect,
                                    mechanism,
                                    proportion,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub n: usize,
    pub p: usize,
    pub marginal: Marginal,
    pub effect: Effect,
    pub mechanism: Mechanism,
    pub proportion: f64,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} p={} {} {} {} q={}",
            self.n, self.p, self.marginal, self.effect, self.mechanism, self.proportion
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: CellKey,
    pub method: Method,
    pub m: usize,
    pub replicate: usize,
    pub metric: String,
    /// 1-based feature index for per-coefficient metrics.
    pub feature: Option<usize>,
    pub value: f64,
    pub status: String,
    pub wall_ms: Option<f64>,
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "n",
    "p",
    "marginal",
    "effect",
    "mechanism",
    "proportion",
    "method",
    "m",
    "replicate",
    "metric",
    "feature",
    "value",
    "status",
    "wall_ms",
];

pub fn write_results<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let to_err = |e: csv::Error| Error::Data(format!("writing results: {e}"));
    w.write_record(RESULT_COLUMNS).map_err(to_err)?;
    for r in rows {
        let fmt_f = |x: f64| if x.is_nan() { String::new() } else { x.to_string() };
        w.write_record([
            r.cell.n.to_string(),
            r.cell.p.to_string(),
            r.cell.marginal.to_string(),
            r.cell.effect.to_string(),
            r.cell.mechanism.to_string(),
            r.cell.proportion.to_string(),
            r.method.to_string(),
            r.m.to_string(),
            r.replicate.to_string(),
            r.metric.clone(),
            r.feature.map_or(String::new(), |f| f.to_string()),
            fmt_f(r.value),
            r.status.clone(),
            r.wall_ms.map_or(String::new(), fmt_f),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing results: {e}")))
}

pub fn write_results_file(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_results(rows, std::io::BufWriter::new(file))
}

/// One replicate's data: complete and amputed train/test sets.
struct ReplicateData {
    train: Dataset,
    train_y: Vec<f64>,
    train_amp: Dataset,
    test_y: Vec<f64>,
    test_amp: Dataset,
}

fn replicate_data(cell: &CellKey, rho: f64, seed: u64) -> Result<ReplicateData> {
    let spec = SimSpec {
        n: cell.n,
        p: cell.p,
        marginal: cell.marginal,
        effect: cell.effect,
        rho,
    };
    let amp = AmputeSpec::new(cell.mechanism, cell.proportion);
    let mut rng = derived_rng(seed, &[0]);
    let train = simulate_features(&spec, &mut rng)?;
    let train_y = simulate_outcome(&train, cell.effect, &mut rng)?;
    let mut rng = derived_rng(seed, &[1]);
    let test = simulate_features(&spec, &mut rng)?;
    let test_y = simulate_outcome(&test, cell.effect, &mut rng)?;
    let train_amp = ampute(&train, &amp, &mut derived_rng(seed, &[2]))?;
    let test_amp = ampute(&test, &amp, &mut derived_rng(seed, &[3]))?;
    Ok(ReplicateData {
        train,
        train_y,
        train_amp,
        test_y,
        test_amp,
    })
}

fn with_outcome(x: &Dataset, y: &[f64]) -> Result<Dataset> {
    let mut schema = x.schema().to_vec();
    schema.push(ColumnSchema::numeric("y"));
    let mut cols: Vec<Vec<Cell>> = (0..x.n_cols()).map(|j| x.column(j).to_vec()).collect();
    cols.push(y.iter().map(|&v| Cell::Num(v)).collect());
    Dataset::from_columns(schema, cols)
}

fn drop_last_column(d: &Dataset) -> Result<Dataset> {
    let p = d.n_cols() - 1;
    Dataset::from_columns(
        d.schema()[..p].to_vec(),
        (0..p).map(|j| d.column(j).to_vec()).collect(),
    )
}

/// Imputes `data` with `method`, producing `m` datasets (`m = 1` means a
/// single imputation: expectation for MissARF).
fn impute_with(
    method: Method,
    data: &Dataset,
    y: &[f64],
    m: usize,
    cfg: &BenchmarkConfig,
    seed: u64,
) -> Result<Vec<Dataset>> {
    let input = if cfg.include_outcome {
        with_outcome(data, y)?
    } else {
        data.clone()
    };
    let sets = match method {
        Method::Missarf => {
            let mode = if m == 1 {
                ImputationMode::SingleExpectation
            } else {
                ImputationMode::Multiple(m)
            };
            impute_dataset(&input, &cfg.missarf.imputation_config(mode, seed))?.datasets
        }
        Method::Median => vec![baseline_median(&input)?],
        Method::Random => baseline_random(&input, m, &mut derived_rng(seed, &[0]))?,
    };
    if cfg.include_outcome {
        sets.iter().map(drop_last_column).collect()
    } else {
        Ok(sets)
    }
}

fn status_of(fits: &[&LogisticFit]) -> &'static str {
    fits.iter()
        .map(|f| f.status)
        .find(|s| *s != FitStatus::Converged)
        .map_or("ok", |s| s.name())
}

struct RowSink<'a> {
    cell: CellKey,
    method: Method,
    m: usize,
    replicate: usize,
    wall_ms: Option<f64>,
    rows: &'a mut Vec<ResultRow>,
}

impl RowSink<'_> {
    fn push(&mut self, metric: &str, feature: Option<usize>, value: f64, status: &str) {
        self.rows.push(ResultRow {
            cell: self.cell,
            method: self.method,
            m: self.m,
            replicate: self.replicate,
            metric: metric.to_string(),
            feature,
            value,
            status: status.to_string(),
            wall_ms: self.wall_ms,
        });
    }
}

fn run_single(
    method: Method,
    data: &ReplicateData,
    cfg: &BenchmarkConfig,
    seed: u64,
    sink: &mut RowSink<'_>,
) -> Result<()> {
    let start = Instant::now();
    let train = impute_with(method, &data.train_amp, &data.train_y, 1, cfg, derive_seed(seed, &[0]))?;
    let test = impute_with(method, &data.test_amp, &data.test_y, 1, cfg, derive_seed(seed, &[1]))?;
    if cfg.timing {
        sink.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    let params = StandardizationParams::fit(&data.train);
    let err = nrmse(&train[0], &data.train, &params)?;
    let fit = fit_logistic(&train[0], &data.train_y, true)?;
    let pred = fit.predict_proba(&test[0].to_matrix()?);
    let score = brier(&pred, &data.test_y)?;
    sink.push("nrmse", None, err, "ok");
    sink.push("brier", None, score, status_of(&[&fit]));
    Ok(())
}

fn run_multiple(
    method: Method,
    data: &ReplicateData,
    cfg: &BenchmarkConfig,
    seed: u64,
    sink: &mut RowSink<'_>,
) -> Result<()> {
    let start = Instant::now();
    let sets = impute_with(method, &data.train_amp, &data.train_y, cfg.m, cfg, seed)?;
    if cfg.timing {
        sink.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    let fits = sets
        .iter()
        .map(|d| fit_logistic(d, &data.train_y, true))
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<Vec<f64>> = fits.iter().map(|f| f.coef.clone()).collect();
    let variances: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| (0..f.coef.len()).map(|k| f.cov[k][k]).collect())
        .collect();
    let p = data.train.n_cols();
    let df_complete = (data.train.n_rows() - (p + 1)) as f64;
    let pooled = pool_rubin(&estimates, &variances, df_complete, cfg.alpha)?;
    let beta = true_beta(p)?;
    let status = status_of(&fits.iter().collect::<Vec<_>>());
    for (j, (est, &b)) in pooled.iter().skip(1).zip(&beta).enumerate() {
        let f = Some(j + 1);
        sink.push("estimate", f, est.estimate, status);
        sink.push("ci_lower", f, est.lower, status);
        sink.push("ci_upper", f, est.upper, status);
        sink.push("ci_width", f, est.width(), status);
        sink.push("covered", f, if est.covers(b) { 1.0 } else { 0.0 }, status);
        sink.push("sq_error", f, (est.estimate - b).powi(2), status);
    }
    Ok(())
}

fn run_replicate(cfg: &BenchmarkConfig, cell_idx: usize, cell: &CellKey, replicate: usize) -> Vec<ResultRow> {
    let seed = derive_seed(cfg.seed, &[cell_idx as u64, replicate as u64]);
    let mut rows = Vec::new();
    let data = match replicate_data(cell, cfg.grid.rho, seed) {
        Ok(d) => d,
        Err(e) => {
            for &method in &cfg.methods {
                rows.push(failure_row(cell, method, 0, replicate, &e));
            }
            return rows;
        }
    };
    for &setting in &cfg.settings {
        for &method in &cfg.methods {
            let m = match setting {
                Setting::Single => 1,
                Setting::Multiple if method == Method::Median => continue,
                Setting::Multiple => cfg.m,
            };
            let method_seed = derive_seed(seed, &[10 + method.index(), setting as u64]);
            let start = rows.len();
            let mut sink = RowSink {
                cell: *cell,
                method,
                m,
                replicate,
                wall_ms: None,
                rows: &mut rows,
            };
            let outcome = match setting {
                Setting::Single => run_single(method, &data, cfg, method_seed, &mut sink),
                Setting::Multiple => run_multiple(method, &data, cfg, method_seed, &mut sink),
            };
            if let Err(e) = outcome {
                rows.truncate(start);
                rows.push(failure_row(cell, method, m, replicate, &e));
            }
        }
    }
    rows
}

fn failure_row(cell: &CellKey, method: Method, m: usize, replicate: usize, e: &Error) -> ResultRow {
    ResultRow {
        cell: *cell,
        method,
        m,
        replicate,
        metric: "failed".into(),
        feature: None,
        value: f64::NAN,
        status: format!("error: {e}"),
        wall_ms: None,
    }
}

/// Runs every grid cell for `cfg.replicates` replicates. Replicate `r` of
/// cell `c` uses seeds derived from `(cfg.seed, c, r)`, so the output does
/// not depend on scheduling. `progress` is called after each cell.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    progress: &(dyn Fn(usize, usize, &CellKey) + Sync),
) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let mut out = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let reps: Vec<usize> = (0..cfg.replicates).collect();
        let run = |&r: &usize| run_replicate(cfg, c, cell, r);
        #[cfg(feature = "parallel")]
        let rows: Vec<Vec<ResultRow>> = reps.par_iter().map(run).collect();
        #[cfg(not(feature = "parallel"))]
        let rows: Vec<Vec<ResultRow>> = reps.iter().map(run).collect();
        out.extend(rows.into_iter().flatten());
        progress(c + 1, cells.len(), cell);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: CellKey,
    pub method: Method,
    pub m: usize,
    pub metric: String,
    pub feature: Option<usize>,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Mean and standard deviation of each metric over successful replicates.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == "ok" && !r.value.is_nan()) {
        let found = groups.iter_mut().find(|(s, _)| {
            s.cell == r.cell && s.method == r.method && s.m == r.m && s.metric == r.metric && s.feature == r.feature
        });
        match found {
            Some((_, v)) => v.push(r.value),
            None => groups.push((
                SummaryRow {
                    cell: r.cell,
                    method: r.method,
                    m: r.m,
                    metric: r.metric.clone(),
                    feature: r.feature,
                    mean: 0.0,
                    sd: 0.0,
                    count: 0,
                },
                vec![r.value],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut s, v)| {
            let (mean, sd) = crate::tabular::mean_sd(&v);
            s.mean = mean;
            s.sd = sd;
            s.count = v.len();
            s
        })
        .collect()
}
