//! MissARF: imputation by conditional sampling from a fitted ARF density.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arf::{ArfFitReport, ArfParams};
use crate::density::{sample_discrete, ColumnSummary, DensityModel, DensityOptions, FeatureDensity};
use crate::error::{Error, Result};
use crate::model::{fingerprint, ModelFile};
use crate::rng::{derived_rng, rng_from_seed};
use crate::tabular::{Cell, ColumnKind, Dataset};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A row split into observed and missing positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationTask {
    pub row: usize,
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    pub cells: Vec<Cell>,
}

impl ImputationTask {
    pub fn new(row: usize, cells: Vec<Cell>) -> Self {
        let (missing, observed): (Vec<usize>, Vec<usize>) =
            (0..cells.len()).partition(|&j| cells[j].is_missing());
        ImputationTask {
            row,
            observed,
            missing,
            cells,
        }
    }

    pub fn from_dataset(data: &Dataset, row: usize) -> Self {
        Self::new(row, data.row(row))
    }
}

/// Leaf weights conditioned on the observed cells. Only leaves with positive
/// weight are listed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedWeights {
    /// Indices into `DensityModel::leaves`.
    pub leaves: Vec<u32>,
    pub weights: Vec<f64>,
    /// `log p̂(x_C)`.
    pub log_normalizer: f64,
}

impl AdjustedWeights {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> u32 {
        self.leaves[sample_discrete(&self.weights, rng)]
    }
}

/// No leaf is compatible with the observed cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackSignal;

pub fn adjusted_weights(
    model: &DensityModel,
    task: &ImputationTask,
) -> std::result::Result<AdjustedWeights, FallbackSignal> {
    let terms = model.joint_log_terms(&task.cells);
    if terms.is_empty() {
        return Err(FallbackSignal);
    }
    let max = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = terms.iter().map(|t| (t.1 - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    Ok(AdjustedWeights {
        leaves: terms.iter().map(|t| t.0).collect(),
        weights: scaled.iter().map(|w| w / total).collect(),
        log_normalizer: max + total.ln(),
    })
}

fn fallback_sample<R: Rng>(summary: &ColumnSummary, rng: &mut R) -> Cell {
    match summary {
        ColumnSummary::Numeric {
            observed, min, max, ..
        } => {
            if *observed == 0 {
                Cell::Num(0.0)
            } else if min == max {
                Cell::Num(*min)
            } else {
                Cell::Num(rng.gen_range(*min..=*max))
            }
        }
        ColumnSummary::Categorical { counts } => {
            let w: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            if w.iter().sum::<f64>() > 0.0 {
                Cell::Cat(sample_discrete(&w, rng) as u32)
            } else {
                Cell::Cat(0)
            }
        }
    }
}

fn fallback_expectation(summary: &ColumnSummary) -> Cell {
    match summary {
        ColumnSummary::Numeric { observed, mean, .. } => {
            Cell::Num(if *observed == 0 { 0.0 } else { *mean })
        }
        ColumnSummary::Categorical { counts } => Cell::Cat(argmax(counts.iter().map(|&c| c as f64)) as u32),
    }
}

fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, x) in xs.enumerate() {
        if x > best.1 {
            best = (k, x);
        }
    }
    best.0
}

fn fill_from_weights<R: Rng>(
    model: &DensityModel,
    task: &ImputationTask,
    weights: &std::result::Result<AdjustedWeights, FallbackSignal>,
    rng: &mut R,
) -> Vec<Cell> {
    let mut out = task.cells.clone();
    match weights {
        Ok(w) => {
            let leaf = &model.leaves[w.draw(rng) as usize];
            for &j in &task.missing {
                out[j] = leaf.features[j].sample(rng);
            }
        }
        Err(FallbackSignal) => {
            for &j in &task.missing {
                out[j] = fallback_sample(&model.columns[j], rng);
            }
        }
    }
    out
}

/// Draws one leaf from the adjusted weights and fills every missing cell
/// from it.
pub fn impute_row_sample<R: Rng>(model: &DensityModel, task: &ImputationTask, rng: &mut R) -> Vec<Cell> {
    if task.missing.is_empty() {
        return task.cells.clone();
    }
    fill_from_weights(model, task, &adjusted_weights(model, task), rng)
}

/// `m` independent draws for one row; the adjusted weights are computed
/// once and draw `k` uses the generator derived from `(seed, row, k)`.
pub fn impute_row_samples(model: &DensityModel, task: &ImputationTask, m: usize, seed: u64) -> Vec<Vec<Cell>> {
    if task.missing.is_empty() {
        return vec![task.cells.clone(); m];
    }
    let weights = adjusted_weights(model, task);
    (0..m)
        .map(|k| fill_from_weights(model, task, &weights, &mut derived_rng(seed, &[task.row as u64, k as u64])))
        .collect()
}

/// Leaf mean used by expectation imputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafMean {
    /// Mean of the fitted truncated normal.
    #[default]
    TruncatedMean,
    /// Sample mean of the leaf's observed values.
    RawLeafMean,
}

/// Conditional mean for numeric cells, weighted mode for categorical cells.
pub fn impute_row_expectation(model: &DensityModel, task: &ImputationTask, mean: LeafMean) -> Vec<Cell> {
    let mut out = task.cells.clone();
    if task.missing.is_empty() {
        return out;
    }
    let w = match adjusted_weights(model, task) {
        Ok(w) => w,
        Err(FallbackSignal) => {
            for &j in &task.missing {
                out[j] = fallback_expectation(&model.columns[j]);
            }
            return out;
        }
    };
    for &j in &task.missing {
        out[j] = match model.schema[j].kind() {
            ColumnKind::Numeric => {
                let mut acc = 0.0;
                for (&l, &wt) in w.leaves.iter().zip(&w.weights) {
                    if let FeatureDensity::Numeric(t) = &model.leaves[l as usize].features[j] {
                        acc += wt
                            * match mean {
                                LeafMean::TruncatedMean => t.mean(),
                                LeafMean::RawLeafMean => t.mu,
                            };
                    }
                }
                Cell::Num(acc)
            }
            ColumnKind::Categorical => {
                let mut acc = vec![0.0; model.schema[j].n_categories()];
                for (&l, &wt) in w.leaves.iter().zip(&w.weights) {
                    if let FeatureDensity::Categorical { probs } = &model.leaves[l as usize].features[j] {
                        for (a, p) in acc.iter_mut().zip(probs) {
                            *a += wt * p;
                        }
                    }
                }
                Cell::Cat(argmax(acc.into_iter()) as u32)
            }
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationMode {
    SingleExpectation,
    SingleSample,
    Multiple(usize),
}

impl ImputationMode {
    pub fn n_outputs(&self) -> usize {
        match self {
            ImputationMode::Multiple(m) => *m,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationConfig {
    pub mode: ImputationMode,
    pub arf: ArfParams,
    pub density: DensityOptions,
    pub leaf_mean: LeafMean,
    pub seed: u64,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            mode: ImputationMode::Multiple(20),
            arf: ArfParams::default(),
            density: DensityOptions::default(),
            leaf_mean: LeafMean::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSet {
    pub datasets: Vec<Dataset>,
    pub config: ImputationConfig,
    pub fingerprint: u64,
    pub report: ArfFitReport,
    pub warnings: Vec<String>,
}

/// Fills the missing cells of `data` with a fitted model. Row `i` of
/// imputation `k` uses a generator derived from `(seed, i, k)`.
pub fn impute_with_model(
    model: &DensityModel,
    data: &Dataset,
    mode: ImputationMode,
    leaf_mean: LeafMean,
    seed: u64,
) -> Result<Vec<Dataset>> {
    if data.schema() != model.schema.as_slice() {
        return Err(Error::Schema("data schema does not match the model".into()));
    }
    let m = mode.n_outputs();
    if m == 0 {
        return Err(Error::Config("number of imputations must be ≥ 1".into()));
    }
    let rows: Vec<usize> = (0..data.n_rows()).filter(|&i| data.row_has_missing(i)).collect();
    let fill = |&i: &usize| -> Vec<Vec<Cell>> {
        let task = ImputationTask::from_dataset(data, i);
        match mode {
            ImputationMode::SingleExpectation => vec![impute_row_expectation(model, &task, leaf_mean)],
            _ => impute_row_samples(model, &task, m, seed),
        }
    };
    #[cfg(feature = "parallel")]
    let filled: Vec<Vec<Vec<Cell>>> = rows.par_iter().map(fill).collect();
    #[cfg(not(feature = "parallel"))]
    let filled: Vec<Vec<Vec<Cell>>> = rows.iter().map(fill).collect();

    let mut out = vec![data.clone(); m];
    for (&i, copies) in rows.iter().zip(filled) {
        for (d, row) in out.iter_mut().zip(copies) {
            for (j, cell) in row.into_iter().enumerate() {
                if data.cell(i, j).is_missing() {
                    d.set(i, j, cell)?;
                }
            }
        }
    }
    Ok(out)
}

/// Fits the ARF and its densities once, then imputes according to `cfg.mode`.
pub fn impute_dataset(data: &Dataset, cfg: &ImputationConfig) -> Result<ImputedSet> {
    if data.n_rows() == 0 {
        return Err(Error::Data("cannot impute an empty dataset".into()));
    }
    if cfg.mode.n_outputs() == 0 {
        return Err(Error::Config("number of imputations must be ≥ 1".into()));
    }
    let mut warnings = Vec::new();
    for j in 0..data.n_cols() {
        if data.column(j).iter().all(Cell::is_missing) {
            let msg = format!(
                "column {} has no observed values; filled with a constant",
                data.schema()[j].name()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut rng = rng_from_seed(cfg.seed);
    let model = ModelFile::fit_with_rng(data, cfg.arf, cfg.density, &mut rng)?;
    let sample_seed = rng.gen::<u64>();
    let datasets = impute_with_model(&model.density, data, cfg.mode, cfg.leaf_mean, sample_seed)?;
    Ok(ImputedSet {
        datasets,
        config: *cfg,
        fingerprint: fingerprint(&model.density),
        report: model.report,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arf::FeatureBound;
    use crate::density::{DensityLeaf, RouteNode, TruncNormal};
    use crate::forest::{ForestParams, Side, SplitKind, SplitRule};
    use crate::tabular::ColumnSchema;
    use proptest::prelude::*;
    use rand::Rng;

    const INF: f64 = f64::INFINITY;

    fn interval(lo: f64, hi: f64) -> FeatureBound {
        FeatureBound::Interval { lo, hi }
    }

    fn numeric_leaf(id: u32, w: f64, bounds: [(f64, f64); 2], mus: [f64; 2]) -> DensityLeaf {
        DensityLeaf {
            leaf_id: id,
            tree: 0,
            weight: w,
            bounds: bounds.iter().map(|&(lo, hi)| interval(lo, hi)).collect(),
            features: bounds
                .iter()
                .zip(mus)
                .map(|(&(lo, hi), mu)| FeatureDensity::Numeric(TruncNormal::new(mu, 0.3, lo, hi)))
                .collect(),
        }
    }

    /// One tree splitting x1 at 0, then x2 at 0 on both sides: the four
    /// quadrant leaves, with the mass on the two off-diagonal clusters.
    fn quadrant_model() -> DensityModel {
        let split = |feature| RouteNode::Internal {
            rule: SplitRule {
                feature,
                kind: SplitKind::Numeric {
                    threshold: 0.0,
                    missing_goes: Side::Right,
                },
            },
            left: 0,
            right: 0,
        };
        let mut root = split(0);
        let mut left = split(1);
        let mut right = split(1);
        if let RouteNode::Internal { left: l, right: r, .. } = &mut root {
            (*l, *r) = (1, 2);
        }
        if let RouteNode::Internal { left: l, right: r, .. } = &mut left {
            (*l, *r) = (3, 4);
        }
        if let RouteNode::Internal { left: l, right: r, .. } = &mut right {
            (*l, *r) = (5, 6);
        }
        DensityModel {
            schema: vec![ColumnSchema::numeric("x1"), ColumnSchema::numeric("x2")],
            n_trees: 1,
            leaves: vec![
                numeric_leaf(0, 0.02, [(-INF, 0.0), (-INF, 0.0)], [-0.5, -0.5]),
                numeric_leaf(1, 0.48, [(-INF, 0.0), (0.0, INF)], [-1.0, 1.0]),
                numeric_leaf(2, 0.48, [(0.0, INF), (-INF, 0.0)], [1.0, -1.0]),
                numeric_leaf(3, 0.02, [(0.0, INF), (0.0, INF)], [0.5, 0.5]),
            ],
            routing: vec![vec![
                root,
                left,
                right,
                RouteNode::Leaf { leaf: Some(0) },
                RouteNode::Leaf { leaf: Some(1) },
                RouteNode::Leaf { leaf: Some(2) },
                RouteNode::Leaf { leaf: Some(3) },
            ]],
            columns: vec![
                ColumnSummary::Numeric {
                    observed: 4,
                    min: -1.0,
                    max: 1.0,
                    mean: 0.0,
                    sd: 1.0,
                };
                2
            ],
            smoothing: 0.0,
        }
    }

    #[test]
    fn empty_condition_keeps_leaf_weights() {
        let m = quadrant_model();
        let w = adjusted_weights(&m, &ImputationTask::new(0, vec![Cell::Missing; 2])).unwrap();
        assert_eq!(w.leaves, vec![0, 1, 2, 3]);
        for (l, wt) in w.leaves.iter().zip(&w.weights) {
            assert!((wt - m.leaves[*l as usize].weight).abs() < 1e-15);
        }
        assert!(w.log_normalizer.abs() < 1e-12);
    }

    #[test]
    fn conditioning_on_left_half_keeps_left_leaves() {
        let m = quadrant_model();
        let task = ImputationTask::new(0, vec![Cell::Num(-1.0), Cell::Missing]);
        let w = adjusted_weights(&m, &task).unwrap();
        assert_eq!(w.leaves, vec![0, 1]);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // x1 = −1 sits on the mean of leaf 1 and 1.67σ from leaf 0.
        assert!(w.weights[1] > 0.9);

        let mut rng = rng_from_seed(1);
        let draws: Vec<f64> = (0..500)
            .map(|_| impute_row_sample(&m, &task, &mut rng)[1].as_f64().unwrap())
            .collect();
        let near_one = draws.iter().filter(|x| (*x - 1.0).abs() < 1.0).count();
        assert!(near_one > 450, "near_one={near_one}");
        let e = impute_row_expectation(&m, &task, LeafMean::TruncatedMean)[1].as_f64().unwrap();
        assert!(e > 0.5, "e={e}");
    }

    #[test]
    fn matches_enumeration_oracle() {
        let m = quadrant_model();
        let mut rng = rng_from_seed(2);
        for _ in 0..200 {
            let x1 = rng.gen_range(-2.0..2.0);
            let task = ImputationTask::new(0, vec![Cell::Num(x1), Cell::Missing]);
            let w = adjusted_weights(&m, &task).unwrap();
            let raw: Vec<f64> = m
                .leaves
                .iter()
                .map(|l| {
                    let FeatureBound::Interval { lo, hi } = l.bounds[0] else { unreachable!() };
                    let FeatureDensity::Numeric(t) = &l.features[0] else { unreachable!() };
                    if x1 > lo && x1 <= hi {
                        l.weight * crate::density::truncnorm_pdf(t.mu, t.sigma, lo, hi, x1)
                    } else {
                        0.0
                    }
                })
                .collect();
            let z: f64 = raw.iter().sum();
            assert!((w.log_normalizer - z.ln()).abs() < 1e-10);
            for (l, r) in raw.iter().enumerate() {
                let got = w
                    .leaves
                    .iter()
                    .position(|&x| x as usize == l)
                    .map_or(0.0, |k| w.weights[k]);
                assert!((got - r / z).abs() < 1e-10);
            }
        }
    }

    fn two_leaf_model(leaf_features: [FeatureDensity; 2], schema: ColumnSchema) -> DensityModel {
        let rule = SplitRule {
            feature: 0,
            kind: SplitKind::Numeric {
                threshold: 0.0,
                missing_goes: Side::Left,
            },
        };
        let [a, b] = leaf_features;
        DensityModel {
            schema: vec![ColumnSchema::numeric("x"), schema],
            n_trees: 1,
            leaves: vec![
                DensityLeaf {
                    leaf_id: 0,
                    tree: 0,
                    weight: 0.5,
                    bounds: vec![interval(-INF, 0.0), unbounded_like(&a)],
                    features: vec![FeatureDensity::Numeric(TruncNormal::new(-1.0, 1.0, -INF, 0.0)), a],
                },
                DensityLeaf {
                    leaf_id: 1,
                    tree: 0,
                    weight: 0.5,
                    bounds: vec![interval(0.0, INF), unbounded_like(&b)],
                    features: vec![FeatureDensity::Numeric(TruncNormal::new(1.0, 1.0, 0.0, INF)), b],
                },
            ],
            routing: vec![vec![
                RouteNode::Internal { rule, left: 1, right: 2 },
                RouteNode::Leaf { leaf: Some(0) },
                RouteNode::Leaf { leaf: Some(1) },
            ]],
            columns: vec![
                ColumnSummary::Numeric {
                    observed: 2,
                    min: -1.0,
                    max: 1.0,
                    mean: 0.0,
                    sd: 1.0,
                },
                ColumnSummary::Categorical { counts: vec![1, 1] },
            ],
            smoothing: 0.0,
        }
    }

    fn unbounded_like(f: &FeatureDensity) -> FeatureBound {
        match f {
            FeatureDensity::Numeric(_) => interval(-INF, INF),
            FeatureDensity::Categorical { probs } => FeatureBound::Labels {
                allowed: (0..probs.len() as u32).collect(),
            },
        }
    }

    #[test]
    fn expectation_is_weighted_truncated_mean() {
        let leaf = |mu: f64| FeatureDensity::Numeric(TruncNormal::new(mu, 1e-3, -INF, INF));
        let mut m = two_leaf_model([leaf(0.0), leaf(4.0)], ColumnSchema::numeric("y"));
        m.leaves[0].weight = 0.25;
        m.leaves[1].weight = 0.75;
        let task = ImputationTask::new(0, vec![Cell::Missing, Cell::Missing]);
        let out = impute_row_expectation(&m, &task, LeafMean::TruncatedMean);
        assert!((out[1].as_f64().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn categorical_expectation_takes_weighted_mode() {
        let cat = |p: [f64; 2]| FeatureDensity::Categorical { probs: p.to_vec() };
        let m = two_leaf_model(
            [cat([0.9, 0.1]), cat([0.2, 0.8])],
            ColumnSchema::categorical("g", ["x", "y"]).unwrap(),
        );
        let task = ImputationTask::new(0, vec![Cell::Missing, Cell::Missing]);
        assert_eq!(impute_row_expectation(&m, &task, LeafMean::TruncatedMean)[1], Cell::Cat(0));
    }

    #[test]
    fn leaf_draw_frequencies_match_weights() {
        // Chi-square goodness of fit with 1 df at α = 0.01.
        let cat = |p: [f64; 2]| FeatureDensity::Categorical { probs: p.to_vec() };
        let mut m = two_leaf_model(
            [cat([1.0, 0.0]), cat([0.0, 1.0])],
            ColumnSchema::categorical("g", ["x", "y"]).unwrap(),
        );
        m.leaves[0].weight = 0.3;
        m.leaves[1].weight = 0.7;
        let task = ImputationTask::new(0, vec![Cell::Missing, Cell::Missing]);
        let n = 1000;
        let firsts = (0..n)
            .filter(|&k| impute_row_sample(&m, &task, &mut derived_rng(9, &[k]))[1] == Cell::Cat(0))
            .count() as f64;
        let (e0, e1) = (0.3 * n as f64, 0.7 * n as f64);
        let chi2 = (firsts - e0).powi(2) / e0 + ((n as f64 - firsts) - e1).powi(2) / e1;
        assert!(chi2 < 6.635, "chi2={chi2}");
        assert!(firsts > 0.0 && firsts < n as f64);
    }

    #[test]
    fn fallback_when_no_leaf_matches() {
        let mut m = quadrant_model();
        m.leaves.truncate(2);
        if let RouteNode::Internal { .. } = m.routing[0][0] {
            m.routing[0][5] = RouteNode::Leaf { leaf: None };
            m.routing[0][6] = RouteNode::Leaf { leaf: None };
        }
        let task = ImputationTask::new(0, vec![Cell::Num(3.0), Cell::Missing]);
        assert_eq!(adjusted_weights(&m, &task), Err(FallbackSignal));
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let x = impute_row_sample(&m, &task, &mut rng)[1].as_f64().unwrap();
            assert!((-1.0..=1.0).contains(&x));
        }
        assert_eq!(
            impute_row_expectation(&m, &task, LeafMean::TruncatedMean)[1],
            Cell::Num(0.0)
        );
    }

    fn small_cfg(mode: ImputationMode, seed: u64) -> ImputationConfig {
        ImputationConfig {
            mode,
            arf: ArfParams {
                forest: ForestParams {
                    n_trees: 20,
                    min_node_size: 5,
                    mtry: None,
                },
                ..Default::default()
            },
            seed,
            ..Default::default()
        }
    }

    fn clusters_with_holes(n: usize, seed: u64, rate: f64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { -1.0 } else { 1.0 };
            x1.push(Cell::Num(s + 0.2 * (rng.gen::<f64>() - 0.5)));
            let v = -s + 0.2 * (rng.gen::<f64>() - 0.5);
            x2.push(if rng.gen::<f64>() < rate { Cell::Missing } else { Cell::Num(v) });
        }
        Dataset::from_columns(vec![ColumnSchema::numeric("x1"), ColumnSchema::numeric("x2")], vec![x1, x2])
            .unwrap()
    }

    #[test]
    fn cluster_sign_recovered() {
        let mut hits = 0;
        let mut total = 0;
        for seed in 0..10 {
            let d = clusters_with_holes(200, 100 + seed, 0.2);
            let out = impute_dataset(&d, &small_cfg(ImputationMode::SingleExpectation, seed)).unwrap();
            let done = &out.datasets[0];
            for i in 0..d.n_rows() {
                if d.cell(i, 1).is_missing() {
                    total += 1;
                    let x1 = done.cell(i, 0).as_f64().unwrap();
                    let x2 = done.cell(i, 1).as_f64().unwrap();
                    if x2.signum() == -x1.signum() {
                        hits += 1;
                    }
                }
            }
        }
        assert!(hits as f64 / total as f64 >= 0.9, "{hits}/{total}");
    }

    #[test]
    fn multiple_imputation_preserves_observed_cells() {
        let d = clusters_with_holes(80, 5, 0.3);
        let out = impute_dataset(&d, &small_cfg(ImputationMode::Multiple(20), 6)).unwrap();
        assert_eq!(out.datasets.len(), 20);
        for done in &out.datasets {
            assert!(done.is_complete());
            for i in 0..d.n_rows() {
                for j in 0..d.n_cols() {
                    if !d.cell(i, j).is_missing() {
                        assert!(done.cell(i, j).identical(&d.cell(i, j)));
                    }
                }
            }
        }
        assert!(!out.datasets[0].identical(&out.datasets[1]));
    }

    #[test]
    fn complete_data_passes_through() {
        let d = clusters_with_holes(40, 7, 0.0);
        for mode in [
            ImputationMode::SingleExpectation,
            ImputationMode::SingleSample,
            ImputationMode::Multiple(3),
        ] {
            let out = impute_dataset(&d, &small_cfg(mode, 1)).unwrap();
            assert_eq!(out.datasets.len(), mode.n_outputs());
            assert!(out.datasets.iter().all(|x| x.identical(&d)));
        }
    }

    #[test]
    fn expectation_is_deterministic() {
        let d = clusters_with_holes(60, 8, 0.3);
        let cfg = small_cfg(ImputationMode::SingleExpectation, 9);
        let a = impute_dataset(&d, &cfg).unwrap();
        let b = impute_dataset(&d, &cfg).unwrap();
        assert!(a.datasets[0].identical(&b.datasets[0]));
        assert_eq!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn all_missing_column_warns_and_fills() {
        let d = Dataset::from_columns(
            vec![ColumnSchema::numeric("a"), ColumnSchema::numeric("b")],
            vec![
                (0..30).map(|i| Cell::Num(i as f64)).collect(),
                vec![Cell::Missing; 30],
            ],
        )
        .unwrap();
        let out = impute_dataset(&d, &small_cfg(ImputationMode::SingleSample, 1)).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.datasets[0].is_complete());
    }

    #[test]
    fn rejects_empty_and_zero_m() {
        let d = clusters_with_holes(10, 1, 0.2);
        assert!(matches!(
            impute_dataset(&d, &small_cfg(ImputationMode::Multiple(0), 1)),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adjusted_weights_form_a_distribution(x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, drop in 0usize..3) {
            let m = quadrant_model();
            let mut cells = vec![Cell::Num(x1), Cell::Num(x2)];
            if drop < 2 {
                cells[drop] = Cell::Missing;
            }
            let task = ImputationTask::new(0, cells.clone());
            let w = adjusted_weights(&m, &task).unwrap();
            prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
            prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for &l in &w.leaves {
                let leaf = &m.leaves[l as usize];
                prop_assert!(leaf.bounds.iter().zip(&cells).all(|(b, &c)| b.admits(c)));
            }
        }
    }
}
