//! Adversarial training loop and leaf geometry.
//!
//! Synthetic data starts as the product of the real marginals. Each round
//! fits a discriminator, then regenerates synthetic rows by resampling
//! columns independently inside its leaves, until the discriminator's OOB
//! accuracy drops below `0.5 + δ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, oob_accuracy, prune_real_leaves, rows_by_node, Forest, ForestParams, Node, SplitKind};
use crate::tabular::{Cell, ColumnKind, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArfParams {
    pub forest: ForestParams,
    /// Convergence tolerance: stop once OOB accuracy < 0.5 + δ.
    pub delta: f64,
    /// Resampling rounds after the initial fit.
    pub max_iters: usize,
}

impl Default for ArfParams {
    fn default() -> Self {
        ArfParams {
            forest: ForestParams::default(),
            delta: 0.0,
            max_iters: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArfFitReport {
    /// Number of forests fit (initial fit included).
    pub iterations: usize,
    pub accuracy_trace: Vec<f64>,
    pub converged: bool,
    pub delta: f64,
}

/// Per-feature constraint of a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureBound {
    /// Observed values satisfy `lo < x ≤ hi`; either end may be infinite.
    Interval {
        #[serde(with = "crate::serde_ext::ext_f64")]
        lo: f64,
        #[serde(with = "crate::serde_ext::ext_f64")]
        hi: f64,
    },
    /// Allowed label indices, ascending.
    Labels { allowed: Vec<u32> },
}

impl FeatureBound {
    /// Whether an observed cell satisfies the bound. Missing cells always do.
    pub fn admits(&self, cell: Cell) -> bool {
        match (self, cell) {
            (_, Cell::Missing) => true,
            (FeatureBound::Interval { lo, hi }, Cell::Num(x)) => x > *lo && x <= *hi,
            (FeatureBound::Labels { allowed }, Cell::Cat(c)) => allowed.binary_search(&c).is_ok(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafGeometry {
    pub leaf_id: u32,
    pub tree: usize,
    pub bounds: Vec<FeatureBound>,
    /// ω_l = n_tl / (T · n), counting every real row routed to the leaf.
    pub weight: f64,
    /// Real rows routed to the leaf, ascending.
    pub row_ids: Vec<u32>,
}

impl LeafGeometry {
    pub fn contains(&self, row: &[Cell]) -> bool {
        self.bounds.iter().zip(row).all(|(b, &c)| b.admits(c))
    }
}

/// Product-of-marginals synthetic data: every column is bootstrapped
/// independently from the real column, missing cells included.
pub fn naive_synth<R: Rng>(real: &Dataset, rng: &mut R) -> Dataset {
    let n = real.n_rows();
    let columns = (0..real.n_cols())
        .map(|j| {
            let col = real.column(j);
            (0..n).map(|_| col[rng.gen_range(0..n)]).collect()
        })
        .collect();
    Dataset::from_columns(real.schema().to_vec(), columns).expect("same schema as input")
}

/// Synthetic data drawn within the forest's leaves.
///
/// A leaf is drawn with probability ω_l (pick a tree uniformly, then one of
/// its in-bag real rows uniformly; that row's leaf has probability
/// n_tl / n_t), then each column is bootstrapped from the leaf's real rows.
pub fn leaf_resample<R: Rng>(forest: &Forest, real: &Dataset, rng: &mut R) -> Result<Dataset> {
    let n = real.n_rows();
    let p = real.n_cols();
    // Per tree: leaves as row-id lists, and the owning leaf of every real
    // in-bag row.
    let mut leaf_rows: Vec<Vec<&[u32]>> = Vec::with_capacity(forest.n_trees());
    let mut flat: Vec<Vec<u32>> = Vec::with_capacity(forest.n_trees());
    for tree in &forest.trees {
        let mut leaves = Vec::new();
        let mut owner = Vec::new();
        for node in &tree.nodes {
            if let Node::Leaf { row_ids, .. } = node {
                if row_ids.is_empty() {
                    continue;
                }
                if row_ids.iter().any(|&r| r as usize >= n) {
                    return Err(Error::Data(
                        "forest leaves reference rows outside the real data".into(),
                    ));
                }
                owner.extend(std::iter::repeat_n(leaves.len() as u32, row_ids.len()));
                leaves.push(row_ids.as_slice());
            }
        }
        leaf_rows.push(leaves);
        flat.push(owner);
    }
    if flat.iter().all(Vec::is_empty) {
        return Err(Error::Data("forest has no real rows in any leaf".into()));
    }
    let usable: Vec<usize> = (0..flat.len()).filter(|&t| !flat[t].is_empty()).collect();

    let mut columns: Vec<Vec<Cell>> = vec![Vec::with_capacity(n); p];
    for _ in 0..n {
        let t = usable[rng.gen_range(0..usable.len())];
        let leaf = leaf_rows[t][flat[t][rng.gen_range(0..flat[t].len())] as usize];
        for (j, col) in columns.iter_mut().enumerate() {
            let r = leaf[rng.gen_range(0..leaf.len())] as usize;
            col.push(real.cell(r, j));
        }
    }
    Dataset::from_columns(real.schema().to_vec(), columns)
}

/// Runs the adversarial loop.
///
/// Returns the forest whose OOB accuracy first fell below `0.5 + δ`; when
/// `max_iters` resampling rounds pass without that, the last forest is
/// returned with `converged = false`. The returned forest is pruned so every
/// leaf holds at least `min_node_size` real rows.
pub fn adversarial_fit<R: Rng>(
    real: &Dataset,
    params: &ArfParams,
    rng: &mut R,
) -> Result<(Forest, ArfFitReport)> {
    if real.n_rows() < 2 {
        return Err(Error::Data("adversarial fit needs at least 2 rows".into()));
    }
    if !(params.delta >= 0.0) {
        return Err(Error::Config(format!("delta must be ≥ 0, got {}", params.delta)));
    }
    let threshold = 0.5 + params.delta;
    let mut synth = naive_synth(real, rng);
    let mut forest = fit_forest(real, &synth, &params.forest, rng)?;
    let mut acc = oob_accuracy(&forest, real, &synth)?;
    let mut trace = vec![acc];
    log::debug!("arf iteration 1: oob accuracy {acc:.4}");
    let mut rounds = 0;
    while acc >= threshold && rounds < params.max_iters {
        synth = leaf_resample(&forest, real, rng)?;
        forest = fit_forest(real, &synth, &params.forest, rng)?;
        acc = oob_accuracy(&forest, real, &synth)?;
        trace.push(acc);
        rounds += 1;
        log::debug!("arf iteration {}: oob accuracy {acc:.4}", rounds + 1);
    }
    prune_real_leaves(&mut forest, real, &synth, params.forest.min_node_size)?;
    let report = ArfFitReport {
        iterations: trace.len(),
        converged: acc < threshold,
        accuracy_trace: trace,
        delta: params.delta,
    };
    Ok((forest, report))
}

/// One geometry record per leaf per tree, in leaf-id order.
pub fn extract_leaves(forest: &Forest, real: &Dataset) -> Vec<LeafGeometry> {
    let schema = real.schema();
    let root_bounds: Vec<FeatureBound> = schema
        .iter()
        .map(|c| match c.kind() {
            ColumnKind::Numeric => FeatureBound::Interval {
                lo: f64::NEG_INFINITY,
                hi: f64::INFINITY,
            },
            ColumnKind::Categorical => FeatureBound::Labels {
                allowed: (0..c.n_categories() as u32).collect(),
            },
        })
        .collect();
    let t_count = forest.n_trees() as f64;
    let mut out = Vec::with_capacity(forest.n_leaves());
    let n_t = real.n_rows() as f64;
    for (t, tree) in forest.trees.iter().enumerate() {
        let mut routed = rows_by_node(tree, real);
        let mut stack = vec![(0usize, root_bounds.clone())];
        while let Some((idx, bounds)) = stack.pop() {
            match &tree.nodes[idx] {
                Node::Internal { rule, left, right } => {
                    let mut lb = bounds.clone();
                    let mut rb = bounds;
                    match (&rule.kind, &mut lb[rule.feature], &mut rb[rule.feature]) {
                        (
                            SplitKind::Numeric { threshold, .. },
                            FeatureBound::Interval { hi, .. },
                            FeatureBound::Interval { lo, .. },
                        ) => {
                            *hi = hi.min(*threshold);
                            *lo = lo.max(*threshold);
                        }
                        (
                            SplitKind::Categorical { .. },
                            FeatureBound::Labels { allowed: la },
                            FeatureBound::Labels { allowed: ra },
                        ) => {
                            la.retain(|&c| rule.goes_left(Cell::Cat(c)));
                            ra.retain(|&c| !rule.goes_left(Cell::Cat(c)));
                        }
                        _ => unreachable!("split kind matches column kind"),
                    }
                    stack.push((*right as usize, rb));
                    stack.push((*left as usize, lb));
                }
                Node::Leaf { leaf_id, .. } => {
                    let row_ids = std::mem::take(&mut routed[idx]);
                    let weight = if n_t > 0.0 {
                        row_ids.len() as f64 / (t_count * n_t)
                    } else {
                        0.0
                    };
                    out.push(LeafGeometry {
                        leaf_id: *leaf_id,
                        tree: t,
                        bounds,
                        weight,
                        row_ids,
                    });
                }
            }
        }
    }
    out.sort_by_key(|g| g.leaf_id);
    out
}
