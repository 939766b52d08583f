//! Per-leaf univariate densities and the forest mixture built on them.
//!
//! Inside a converged leaf the features are treated as independent, so a
//! leaf density is a product of univariate ones: truncated normals for
//! numeric features (truncated to the leaf box) and multinomials for
//! categorical features. The forest density is the ω-weighted mixture of the
//! leaf densities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arf::{FeatureBound, LeafGeometry};
use crate::error::{Error, Result};
use crate::forest::{cell_code, Forest, Node, SplitRule};
use crate::stats::{log_sum_exp, norm_cdf, norm_log_pdf, norm_pdf, norm_ppf, norm_sf};
use crate::tabular::{mean_sd, Cell, ColumnKind, ColumnSchema, Dataset};

/// Normalizers below this switch a truncated normal to its fallback form.
pub const MIN_NORMALIZER: f64 = 1e-300;
/// Absolute floor for leaf standard deviations.
pub const SIGMA_FLOOR_ABS: f64 = 1e-9;
/// Floor relative to the full-column standard deviation.
pub const SIGMA_FLOOR_REL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct TruncNormalParams {
    mu: f64,
    sigma: f64,
    #[serde(with = "crate::serde_ext::ext_f64")]
    lo: f64,
    #[serde(with = "crate::serde_ext::ext_f64")]
    hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TruncForm {
    /// Standardized bounds `a`, `b` and normalizer `Φ(b) − Φ(a)`; `upper`
    /// means the interval sits in the right tail and upper-tail functions
    /// are used to keep precision.
    Normal { a: f64, b: f64, z: f64, upper: bool },
    /// Normalizer underflowed on a bounded interval.
    Uniform,
    /// Normalizer underflowed on a half-line: exponential decay away from the
    /// finite bound with the normal's tail rate.
    Exponential { origin: f64, scale: f64, dir: f64 },
}

/// Normal(μ, σ²) restricted to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TruncNormalParams", into = "TruncNormalParams")]
pub struct TruncNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
    form: TruncForm,
}

impl From<TruncNormalParams> for TruncNormal {
    fn from(p: TruncNormalParams) -> Self {
        TruncNormal::new(p.mu, p.sigma, p.lo, p.hi)
    }
}

impl From<TruncNormal> for TruncNormalParams {
    fn from(t: TruncNormal) -> Self {
        TruncNormalParams {
            mu: t.mu,
            sigma: t.sigma,
            lo: t.lo,
            hi: t.hi,
        }
    }
}

impl TruncNormal {
    /// Requires `lo < hi` and `sigma > 0`.
    pub fn new(mu: f64, sigma: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(lo < hi, "empty truncation interval [{lo}, {hi}]");
        debug_assert!(sigma > 0.0, "sigma must be positive");
        let a = (lo - mu) / sigma;
        let b = (hi - mu) / sigma;
        let upper = a > 0.0;
        let z = if upper {
            norm_sf(a) - norm_sf(b)
        } else {
            norm_cdf(b) - norm_cdf(a)
        };
        let form = if z >= MIN_NORMALIZER {
            TruncForm::Normal { a, b, z, upper }
        } else if lo.is_finite() && hi.is_finite() {
            TruncForm::Uniform
        } else if lo.is_finite() {
            TruncForm::Exponential {
                origin: lo,
                scale: sigma / a.abs().max(1.0),
                dir: 1.0,
            }
        } else {
            TruncForm::Exponential {
                origin: hi,
                scale: sigma / b.abs().max(1.0),
                dir: -1.0,
            }
        };
        TruncNormal {
            mu,
            sigma,
            lo,
            hi,
            form,
        }
    }

    /// True when the normalizer underflowed and a fallback form is used.
    pub fn is_degenerate(&self) -> bool {
        !matches!(self.form, TruncForm::Normal { .. })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if !(x >= self.lo && x <= self.hi) {
            return f64::NEG_INFINITY;
        }
        match self.form {
            TruncForm::Normal { z, .. } => {
                norm_log_pdf((x - self.mu) / self.sigma) - self.sigma.ln() - z.ln()
            }
            TruncForm::Uniform => -(self.hi - self.lo).ln(),
            TruncForm::Exponential { origin, scale, dir } => {
                -(dir * (x - origin)) / scale - scale.ln()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Inverse CDF on `[0, 1]`, clamped to the support.
    pub fn quantile(&self, u: f64) -> f64 {
        let x = match self.form {
            TruncForm::Normal { a, z, upper, .. } => {
                if upper {
                    let s = norm_sf(a) - u * z;
                    self.mu - self.sigma * norm_ppf(s.max(0.0))
                } else {
                    let c = norm_cdf(a) + u * z;
                    self.mu + self.sigma * norm_ppf(c.min(1.0))
                }
            }
            TruncForm::Uniform => self.lo + u * (self.hi - self.lo),
            TruncForm::Exponential { origin, scale, dir } => {
                origin - dir * scale * (1.0 - u).ln()
            }
        };
        x.clamp(self.lo, self.hi)
    }

    pub fn mean(&self) -> f64 {
        match self.form {
            TruncForm::Normal { a, b, z, .. } => {
                let m = self.mu + self.sigma * (phi_or_zero(a) - phi_or_zero(b)) / z;
                m.clamp(self.lo, self.hi)
            }
            TruncForm::Uniform => 0.5 * (self.lo + self.hi),
            TruncForm::Exponential { origin, scale, dir } => origin + dir * scale,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }
}

fn phi_or_zero(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        norm_pdf(x)
    }
}

/// Density of a truncated normal at `x` (0 outside `[lo, hi]`).
pub fn truncnorm_pdf(mu: f64, sigma: f64, lo: f64, hi: f64, x: f64) -> f64 {
    TruncNormal::new(mu, sigma, lo, hi).pdf(x)
}

/// Quantile of a truncated normal at probability `u`.
pub fn truncnorm_cdf_inverse(mu: f64, sigma: f64, lo: f64, hi: f64, u: f64) -> f64 {
    TruncNormal::new(mu, sigma, lo, hi).quantile(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureDensity {
    Numeric(TruncNormal),
    /// Probabilities over all schema labels; labels outside the leaf's
    /// allowed set have probability 0.
    Categorical { probs: Vec<f64> },
}

impl FeatureDensity {
    /// Log-density (numeric) or log-probability (categorical) of an
    /// observed cell. Missing cells contribute 0.
    pub fn log_prob(&self, cell: Cell) -> f64 {
        match (self, cell) {
            (_, Cell::Missing) => 0.0,
            (FeatureDensity::Numeric(t), Cell::Num(x)) => t.log_pdf(x),
            (FeatureDensity::Categorical { probs }, Cell::Cat(c)) => {
                probs.get(c as usize).map_or(f64::NEG_INFINITY, |p| p.ln())
            }
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Cell {
        match self {
            FeatureDensity::Numeric(t) => Cell::Num(t.sample(rng)),
            FeatureDensity::Categorical { probs } => Cell::Cat(sample_discrete(probs, rng) as u32),
        }
    }
}

pub(crate) fn sample_discrete<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            if u < p {
                return k;
            }
            u -= p;
            last = k;
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityLeaf {
    pub leaf_id: u32,
    pub tree: usize,
    pub weight: f64,
    pub bounds: Vec<FeatureBound>,
    pub features: Vec<FeatureDensity>,
}

impl DensityLeaf {
    /// `log p̂_l` over the observed cells of `row` (missing cells skipped).
    pub fn log_density(&self, row: &[Cell]) -> f64 {
        let mut acc = 0.0;
        for ((bound, dens), &cell) in self.bounds.iter().zip(&self.features).zip(row) {
            if cell.is_missing() {
                continue;
            }
            if !bound.admits(cell) {
                return f64::NEG_INFINITY;
            }
            acc += dens.log_prob(cell);
            if acc == f64::NEG_INFINITY {
                break;
            }
        }
        acc
    }
}

/// Full-column statistics used by fallbacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ColumnSummary {
    Numeric {
        observed: usize,
        min: f64,
        max: f64,
        mean: f64,
        sd: f64,
    },
    Categorical {
        counts: Vec<usize>,
    },
}

impl ColumnSummary {
    pub fn of(data: &Dataset, j: usize) -> Self {
        match data.schema()[j].kind() {
            ColumnKind::Numeric => {
                let xs = data.observed_f64(j);
                let (mean, sd) = mean_sd(&xs);
                ColumnSummary::Numeric {
                    observed: xs.len(),
                    min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                    max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean,
                    sd,
                }
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; data.schema()[j].n_categories()];
                for c in data.column(j).iter().filter_map(Cell::as_cat) {
                    counts[c as usize] += 1;
                }
                ColumnSummary::Categorical { counts }
            }
        }
    }

    pub fn n_observed(&self) -> usize {
        match self {
            ColumnSummary::Numeric { observed, .. } => *observed,
            ColumnSummary::Categorical { counts } => counts.iter().sum(),
        }
    }
}

/// Split structure kept for leaf lookup; leaves point into
/// `DensityModel::leaves` (`None` for zero-weight leaves).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum RouteNode {
    Internal {
        rule: SplitRule,
        left: u32,
        right: u32,
    },
    Leaf {
        leaf: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub schema: Vec<ColumnSchema>,
    pub n_trees: usize,
    /// Leaves with ω > 0, in leaf-id order.
    pub leaves: Vec<DensityLeaf>,
    pub routing: Vec<Vec<RouteNode>>,
    pub columns: Vec<ColumnSummary>,
    pub smoothing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    /// Additive smoothing α for categorical leaf frequencies.
    pub smoothing: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        DensityOptions { smoothing: 0.0 }
    }
}

fn sigma_floor(column_sd: f64) -> f64 {
    let rel = if column_sd.is_finite() {
        SIGMA_FLOOR_REL * column_sd
    } else {
        0.0
    };
    SIGMA_FLOOR_ABS.max(rel)
}

/// μ and σ of a sample; fewer than two distinct values use the σ floor.
fn moments_with_floor(xs: &[f64], floor: f64) -> (f64, f64) {
    let (mean, sd) = mean_sd(xs);
    let distinct = xs.iter().any(|&x| x != xs[0]);
    if distinct && sd > 0.0 {
        (mean, sd)
    } else {
        (mean, floor)
    }
}

fn fit_numeric(
    values: &[f64],
    bound: &FeatureBound,
    data: &Dataset,
    j: usize,
    summary: &ColumnSummary,
) -> TruncNormal {
    let (lo, hi) = match bound {
        FeatureBound::Interval { lo, hi } => (*lo, *hi),
        FeatureBound::Labels { .. } => unreachable!("numeric column has interval bounds"),
    };
    let col_sd = match summary {
        ColumnSummary::Numeric { sd, .. } => *sd,
        ColumnSummary::Categorical { .. } => f64::NAN,
    };
    let floor = sigma_floor(col_sd);
    let (mu, sigma) = if !values.is_empty() {
        moments_with_floor(values, floor)
    } else {
        // Never observed in this leaf: use the column's values inside the box.
        let inside: Vec<f64> = data
            .observed_f64(j)
            .into_iter()
            .filter(|&x| x > lo && x <= hi)
            .collect();
        if !inside.is_empty() {
            moments_with_floor(&inside, floor)
        } else {
            match summary {
                ColumnSummary::Numeric {
                    observed, mean, sd, ..
                } if *observed > 0 => {
                    let sd = if sd.is_finite() && *sd > 0.0 { *sd } else { floor };
                    (*mean, sd)
                }
                _ => (0.0, 1.0),
            }
        }
    };
    TruncNormal::new(mu, sigma, lo, hi)
}

fn fit_categorical(
    cells: impl Iterator<Item = Cell>,
    bound: &FeatureBound,
    k: usize,
    alpha: f64,
    summary: &ColumnSummary,
) -> Vec<f64> {
    let allowed: Vec<u32> = match bound {
        FeatureBound::Labels { allowed } => allowed.clone(),
        FeatureBound::Interval { .. } => unreachable!("categorical column has label bounds"),
    };
    let mut counts = vec![0.0f64; k];
    for c in cells.filter_map(|c| c.as_cat()) {
        counts[c as usize] += 1.0;
    }
    let normalize = |counts: &[f64], alpha: f64, support: &[u32]| -> Option<Vec<f64>> {
        let total: f64 = support.iter().map(|&c| counts[c as usize] + alpha).sum();
        (total > 0.0).then(|| {
            let mut probs = vec![0.0; k];
            for &c in support {
                probs[c as usize] = (counts[c as usize] + alpha) / total;
            }
            probs
        })
    };
    if let Some(p) = normalize(&counts, alpha, &allowed) {
        return p;
    }
    let col_counts: Vec<f64> = match summary {
        ColumnSummary::Categorical { counts } => counts.iter().map(|&c| c as f64).collect(),
        ColumnSummary::Numeric { .. } => vec![0.0; k],
    };
    let all: Vec<u32> = (0..k as u32).collect();
    normalize(&col_counts, alpha, &allowed)
        .or_else(|| normalize(&vec![0.0; k], 1.0, &allowed))
        .or_else(|| normalize(&col_counts, alpha, &all))
        .or_else(|| normalize(&vec![0.0; k], 1.0, &all))
        .unwrap_or_default()
}

/// Fits the per-leaf densities on the real rows recorded in each leaf.
pub fn fit_leaf_densities(
    forest: &Forest,
    geometry: &[LeafGeometry],
    real: &Dataset,
    opts: &DensityOptions,
) -> Result<DensityModel> {
    if !(opts.smoothing >= 0.0) {
        return Err(Error::Config(format!(
            "categorical smoothing must be ≥ 0, got {}",
            opts.smoothing
        )));
    }
    if forest.n_features != real.n_cols() {
        return Err(Error::Schema(format!(
            "forest has {} features, data has {}",
            forest.n_features,
            real.n_cols()
        )));
    }
    let p = real.n_cols();
    let columns: Vec<ColumnSummary> = (0..p).map(|j| ColumnSummary::of(real, j)).collect();
    let mut leaves = Vec::new();
    let mut index_of = vec![None; forest.n_leaves()];
    let mut values = Vec::new();
    for g in geometry.iter().filter(|g| g.weight > 0.0) {
        let features = (0..p)
            .map(|j| match real.schema()[j].kind() {
                ColumnKind::Numeric => {
                    values.clear();
                    values.extend(g.row_ids.iter().filter_map(|&r| real.cell(r as usize, j).as_f64()));
                    FeatureDensity::Numeric(fit_numeric(&values, &g.bounds[j], real, j, &columns[j]))
                }
                ColumnKind::Categorical => FeatureDensity::Categorical {
                    probs: fit_categorical(
                        g.row_ids.iter().map(|&r| real.cell(r as usize, j)),
                        &g.bounds[j],
                        real.schema()[j].n_categories(),
                        opts.smoothing,
                        &columns[j],
                    ),
                },
            })
            .collect();
        index_of[g.leaf_id as usize] = Some(leaves.len() as u32);
        leaves.push(DensityLeaf {
            leaf_id: g.leaf_id,
            tree: g.tree,
            weight: g.weight,
            bounds: g.bounds.clone(),
            features,
        });
    }
    let routing = forest
        .trees
        .iter()
        .map(|t| {
            t.nodes
                .iter()
                .map(|n| match n {
                    Node::Internal { rule, left, right } => RouteNode::Internal {
                        rule: rule.clone(),
                        left: *left,
                        right: *right,
                    },
                    Node::Leaf { leaf_id, .. } => RouteNode::Leaf {
                        leaf: index_of[*leaf_id as usize],
                    },
                })
                .collect()
        })
        .collect();
    Ok(DensityModel {
        schema: real.schema().to_vec(),
        n_trees: forest.n_trees(),
        leaves,
        routing,
        columns,
        smoothing: opts.smoothing,
    })
}

impl DensityModel {
    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Indices of leaves (into `self.leaves`) compatible with the observed
    /// cells of `row`: missing features follow both branches of a split.
    pub fn matching_leaves(&self, row: &[Cell]) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for nodes in &self.routing {
            stack.push(0usize);
            while let Some(idx) = stack.pop() {
                match &nodes[idx] {
                    RouteNode::Internal { rule, left, right } => {
                        let cell = row[rule.feature];
                        if cell.is_missing() {
                            stack.push(*right as usize);
                            stack.push(*left as usize);
                        } else if rule.goes_left_f64(cell_code(cell)) {
                            stack.push(*left as usize);
                        } else {
                            stack.push(*right as usize);
                        }
                    }
                    RouteNode::Leaf { leaf } => {
                        if let Some(l) = leaf {
                            out.push(*l);
                        }
                    }
                }
            }
        }
        out
    }

    /// `(leaf index, log ω_l + log p̂_l(x_C))` for leaves with nonzero weight.
    pub fn joint_log_terms(&self, row: &[Cell]) -> Vec<(u32, f64)> {
        self.matching_leaves(row)
            .into_iter()
            .filter_map(|l| {
                let leaf = &self.leaves[l as usize];
                let lt = leaf.weight.ln() + leaf.log_density(row);
                (lt > f64::NEG_INFINITY).then_some((l, lt))
            })
            .collect()
    }

    /// `log p̂(x)` for a fully observed row; `-∞` when no leaf supports it.
    pub fn log_density(&self, row: &[Cell]) -> Result<f64> {
        self.check_row(row)?;
        if let Some(j) = row.iter().position(Cell::is_missing) {
            return Err(Error::Data(format!(
                "log-density needs a complete row; column {} is missing",
                self.schema[j].name()
            )));
        }
        let terms: Vec<f64> = self.joint_log_terms(row).into_iter().map(|(_, t)| t).collect();
        Ok(log_sum_exp(&terms))
    }

    pub(crate) fn check_row(&self, row: &[Cell]) -> Result<()> {
        if row.len() != self.schema.len() {
            return Err(Error::Schema(format!(
                "row has {} cells, model has {} features",
                row.len(),
                self.schema.len()
            )));
        }
        Ok(())
    }

    /// Cumulative leaf weights for leaf sampling.
    pub(crate) fn weight_cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.leaves
            .iter()
            .map(|l| {
                acc += l.weight;
                acc
            })
            .collect()
    }

    /// Draws `count` rows: a leaf ∼ ω, then every feature independently from
    /// the leaf's densities.
    pub fn sample_unconditional<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Dataset> {
        if count == 0 {
            return Err(Error::Config("sample count must be ≥ 1".into()));
        }
        if self.leaves.is_empty() {
            return Err(Error::Model("model has no leaves with positive weight".into()));
        }
        let cdf = self.weight_cdf();
        let total = *cdf.last().unwrap();
        let p = self.n_features();
        let mut columns: Vec<Vec<Cell>> = vec![Vec::with_capacity(count); p];
        for _ in 0..count {
            let u = rng.gen::<f64>() * total;
            let l = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let leaf = &self.leaves[l];
            for (col, dens) in columns.iter_mut().zip(&leaf.features) {
                col.push(dens.sample(rng));
            }
        }
        Dataset::from_columns(self.schema.clone(), columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arf::{adversarial_fit, extract_leaves, ArfParams};
    use crate::forest::ForestParams;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn untruncated_is_plain_normal() {
        let t = TruncNormal::new(1.0, 2.0, f64::NEG_INFINITY, f64::INFINITY);
        let x = 0.3;
        let want = (-0.5 * ((x - 1.0) / 2.0f64).powi(2)).exp() / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((t.pdf(x) - want).abs() < 1e-15);
        assert!((t.mean() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn half_normal_at_zero() {
        let v = truncnorm_pdf(0.0, 1.0, 0.0, f64::INFINITY, 0.0);
        assert!((v - 0.797_884_560_802_865_4).abs() < 1e-12, "{v}");
        assert_eq!(truncnorm_pdf(0.0, 1.0, 0.0, f64::INFINITY, -0.1), 0.0);
    }

    #[test]
    fn far_tail_interval_stays_proper() {
        // Interval 30σ to 31σ above the mean: computed through upper tails.
        let t = TruncNormal::new(0.0, 1.0, 30.0, 31.0);
        assert!(!t.is_degenerate());
        let mass = simpson(|x| t.pdf(x), 30.0, 31.0, 20_000);
        assert!((mass - 1.0).abs() < 1e-6, "mass={mass}");
        let q = t.quantile(0.5);
        assert!(q > 30.0 && q < 30.1, "q={q}");
    }

    #[test]
    fn underflowed_normalizer_falls_back_to_uniform() {
        let t = TruncNormal::new(0.0, 1.0, 60.0, 61.0);
        assert!(t.is_degenerate());
        assert!((t.pdf(60.5) - 1.0).abs() < 1e-12);
        assert_eq!(t.quantile(0.25), 60.25);
    }

    #[test]
    fn truncated_mean_matches_quadrature() {
        let t = TruncNormal::new(0.5, 1.5, -1.0, 0.7);
        let m = simpson(|x| x * t.pdf(x), -1.0, 0.7, 20_000);
        assert!((t.mean() - m).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn truncated_pdf_integrates_to_one(
            mu in -5.0f64..5.0,
            sigma in 0.05f64..5.0,
            lo in -6.0f64..6.0,
            width in 0.01f64..10.0,
        ) {
            let hi = lo + width;
            let t = TruncNormal::new(mu, sigma, lo, hi);
            // Integrate where the mass lives; far-tail boxes concentrate it
            // within a few σ/|a| of the nearer bound.
            let a = (lo - mu) / sigma;
            let b = (hi - mu) / sigma;
            let (ilo, ihi) = if t.is_degenerate() {
                (lo, hi)
            } else if a > 8.0 {
                (lo, hi.min(lo + 60.0 * sigma / a))
            } else if b < -8.0 {
                (lo.max(hi - 60.0 * sigma / b.abs()), hi)
            } else {
                (lo.max(mu - 12.0 * sigma), hi.min(mu + 12.0 * sigma))
            };
            let mass = simpson(|x| t.pdf(x), ilo, ihi, 20_000);
            prop_assert!((mass - 1.0).abs() < 1e-6, "mass={}", mass);
        }

        #[test]
        fn quantile_inverts_cdf(
            mu in -3.0f64..3.0,
            sigma in 0.1f64..3.0,
            lo in -4.0f64..4.0,
            width in 0.1f64..6.0,
            u in 0.001f64..0.999,
        ) {
            let hi = lo + width;
            let t = TruncNormal::new(mu, sigma, lo, hi);
            let x = t.quantile(u);
            prop_assert!(x >= lo && x <= hi);
            let cdf = simpson(|s| t.pdf(s), lo, x, 4000);
            prop_assert!((cdf - u).abs() < 1e-6, "cdf={} u={}", cdf, u);
        }

        #[test]
        fn smoothed_categorical_is_a_distribution(
            counts in prop::collection::vec(0usize..6, 1..6),
            alpha in 0.0f64..3.0,
            mask in prop::collection::vec(any::<bool>(), 6),
        ) {
            let k = counts.len();
            let allowed: Vec<u32> = (0..k as u32).filter(|&c| mask[c as usize]).collect();
            let cells: Vec<Cell> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(Cell::Cat(c as u32), n))
                .filter(|c| allowed.contains(&c.as_cat().unwrap()))
                .collect();
            let summary = ColumnSummary::Categorical { counts: counts.clone() };
            let probs = fit_categorical(cells.into_iter(), &FeatureBound::Labels { allowed: allowed.clone() }, k, alpha, &summary);
            prop_assert!(probs.iter().all(|&p| p >= 0.0));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if !allowed.is_empty() {
                for c in 0..k as u32 {
                    if !allowed.contains(&c) {
                        prop_assert_eq!(probs[c as usize], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn two_point_leaf_moments() {
        let d = Dataset::from_numeric(&["x"], vec![vec![1.0, 3.0]]).unwrap();
        let t = fit_numeric(
            &[1.0, 3.0],
            &FeatureBound::Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
            &d,
            0,
            &ColumnSummary::of(&d, 0),
        );
        assert_eq!(t.mu, 2.0);
        assert!((t.sigma - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_value_leaf_uses_sigma_floor() {
        let d = Dataset::from_numeric(&["x"], vec![vec![0.0, 10.0, 5.0]]).unwrap();
        let bound = FeatureBound::Interval {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        };
        let t = fit_numeric(&[5.0, 5.0], &bound, &d, 0, &ColumnSummary::of(&d, 0));
        assert_eq!(t.mu, 5.0);
        assert!((t.sigma - 1e-3 * 5.0).abs() < 1e-15);
    }

    #[test]
    fn zero_observation_leaf_uses_column_values_in_box() {
        let d = Dataset::from_numeric(&["x"], vec![vec![0.0, 1.0, 2.0, 3.0, 10.0]]).unwrap();
        let bound = FeatureBound::Interval { lo: 0.5, hi: 3.0 };
        let t = fit_numeric(&[], &bound, &d, 0, &ColumnSummary::of(&d, 0));
        assert_eq!(t.mu, 2.0);
        assert_eq!((t.lo, t.hi), (0.5, 3.0));
    }

    #[test]
    fn categorical_frequencies() {
        let cells = [Cell::Cat(0), Cell::Cat(0), Cell::Cat(1), Cell::Cat(0), Cell::Missing];
        let summary = ColumnSummary::Categorical { counts: vec![3, 1] };
        let probs = fit_categorical(
            cells.into_iter(),
            &FeatureBound::Labels { allowed: vec![0, 1] },
            2,
            0.0,
            &summary,
        );
        assert_eq!(probs, vec![0.75, 0.25]);
    }

    fn single_leaf_model(mu: f64, sigma: f64) -> DensityModel {
        DensityModel {
            schema: vec![ColumnSchema::numeric("x")],
            n_trees: 1,
            leaves: vec![DensityLeaf {
                leaf_id: 0,
                tree: 0,
                weight: 1.0,
                bounds: vec![FeatureBound::Interval {
                    lo: f64::NEG_INFINITY,
                    hi: f64::INFINITY,
                }],
                features: vec![FeatureDensity::Numeric(TruncNormal::new(
                    mu,
                    sigma,
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                ))],
            }],
            routing: vec![vec![RouteNode::Leaf { leaf: Some(0) }]],
            columns: vec![ColumnSummary::Numeric {
                observed: 1,
                min: mu,
                max: mu,
                mean: mu,
                sd: f64::NAN,
            }],
            smoothing: 0.0,
        }
    }

    #[test]
    fn single_leaf_standard_normal_log_density() {
        let m = single_leaf_model(0.0, 1.0);
        let v = m.log_density(&[Cell::Num(0.0)]).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!(m.log_density(&[Cell::Missing]).is_err());
    }

    #[test]
    fn unconditional_samples_clt_and_point_mass() {
        let m = single_leaf_model(2.0, 0.5);
        let s = m.sample_unconditional(100_000, &mut rng_from_seed(1)).unwrap();
        let xs = s.observed_f64(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 2.0).abs() < 3.0 * 0.5 / (1e5f64).sqrt(), "mean={mean}");

        let m = single_leaf_model(7.0, 1e-9);
        let s = m.sample_unconditional(1000, &mut rng_from_seed(2)).unwrap();
        assert!(s.observed_f64(0).iter().all(|x| (x - 7.0).abs() < 4e-9));
    }

    /// Two clusters around (−1, 1) and (1, −1).
    pub(crate) fn two_clusters(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let mut x1 = Vec::with_capacity(n);
        let mut x2 = Vec::with_capacity(n);
        for i in 0..n {
            let s = if i % 2 == 0 { -1.0 } else { 1.0 };
            x1.push(s + 0.2 * (rng.gen::<f64>() - 0.5));
            x2.push(-s + 0.2 * (rng.gen::<f64>() - 0.5));
        }
        Dataset::from_numeric(&["x1", "x2"], vec![x1, x2]).unwrap()
    }

    fn fitted(d: &Dataset, trees: usize, seed: u64) -> DensityModel {
        let params = ArfParams {
            forest: ForestParams {
                n_trees: trees,
                min_node_size: 5,
                mtry: None,
            },
            ..Default::default()
        };
        let (f, _) = adversarial_fit(d, &params, &mut rng_from_seed(seed)).unwrap();
        let g = extract_leaves(&f, d);
        fit_leaf_densities(&f, &g, d, &DensityOptions::default()).unwrap()
    }

    #[test]
    fn two_cluster_samples_stay_in_quadrants() {
        let d = two_clusters(200, 3);
        let m = fitted(&d, 20, 4);
        let s = m.sample_unconditional(2000, &mut rng_from_seed(5)).unwrap();
        let ok = (0..s.n_rows())
            .filter(|&i| {
                let a = s.cell(i, 0).as_f64().unwrap();
                let b = s.cell(i, 1).as_f64().unwrap();
                a * b < 0.0
            })
            .count();
        assert!(ok as f64 / 2000.0 >= 0.95, "ok={ok}");
    }

    #[test]
    fn mixture_equals_enumeration_and_factorizes() {
        let mut rng = rng_from_seed(6);
        let d = two_clusters(120, 7);
        let m = fitted(&d, 3, 8);
        let total_w: f64 = m.leaves.iter().map(|l| l.weight).sum();
        assert!((total_w - 1.0).abs() < 1e-12);
        for _ in 0..50 {
            let row = [
                Cell::Num(rng.gen_range(-1.5..1.5)),
                Cell::Num(rng.gen_range(-1.5..1.5)),
            ];
            let terms: Vec<f64> = m
                .leaves
                .iter()
                .filter(|l| l.bounds.iter().zip(&row).all(|(b, &c)| b.admits(c)))
                .map(|l| {
                    l.weight.ln()
                        + l.features
                            .iter()
                            .zip(&row)
                            .map(|(f, &c)| f.log_prob(c))
                            .sum::<f64>()
                })
                .collect();
            let brute = log_sum_exp(&terms);
            let got = m.log_density(&row).unwrap();
            if brute == f64::NEG_INFINITY {
                assert_eq!(got, f64::NEG_INFINITY);
            } else {
                assert!((got - brute).abs() < 1e-9 * brute.abs().max(1.0), "{got} vs {brute}");
            }
            for l in &m.leaves {
                let sum: f64 = l.features.iter().zip(&row).map(|(f, &c)| {
                    if l.bounds.iter().zip(&row).all(|(b, &c)| b.admits(c)) { f.log_prob(c) } else { 0.0 }
                }).sum();
                if l.bounds.iter().zip(&row).all(|(b, &c)| b.admits(c)) {
                    assert_eq!(l.log_density(&row), sum);
                }
            }
        }
    }

    #[test]
    fn samples_respect_leaf_bounds() {
        let d = two_clusters(100, 9);
        let m = fitted(&d, 5, 10);
        let mut rng = rng_from_seed(11);
        for leaf in &m.leaves {
            for _ in 0..20 {
                let row: Vec<Cell> = leaf.features.iter().map(|f| f.sample(&mut rng)).collect();
                for (b, c) in leaf.bounds.iter().zip(&row) {
                    if let (FeatureBound::Interval { lo, hi }, Cell::Num(x)) = (b, c) {
                        assert!(*x >= *lo && *x <= *hi);
                    }
                }
            }
        }
    }
}
