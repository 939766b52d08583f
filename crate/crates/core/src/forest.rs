//! Real-vs-synthetic random forest classifier with MIA missing-value splits.
//!
//! Rows are the stack of `n` real rows (label 1, ids `0..n`) followed by `n`
//! synthetic rows (label 0, ids `n..2n`). Each tree is grown on a bootstrap
//! sample of the stacked rows; duplicated rows count with multiplicity.
//!
//! A numeric split `x ≤ s` additionally decides where missing values go.
//! Both assignments are scored for every candidate threshold and the better
//! one is kept. Categorical features treat missingness as one more label.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::tabular::{Cell, ColumnKind, Dataset};

/// Categorical searches enumerate every bipartition up to this many labels.
pub const MAX_EXHAUSTIVE_LABELS: usize = 10;

/// Scores closer than this count as tied; the earlier candidate wins.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SplitKind {
    Numeric {
        threshold: f64,
        missing_goes: Side,
    },
    /// `left_labels` and `right_labels` partition the labels observed at the
    /// node. Missing values and labels in neither set follow `missing_side`.
    Categorical {
        left_labels: Vec<u32>,
        right_labels: Vec<u32>,
        missing_side: Side,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub feature: usize,
    pub kind: SplitKind,
}

impl SplitRule {
    /// Routing on the internal encoding: NaN is missing, categories are
    /// stored as their label index.
    #[inline]
    pub(crate) fn goes_left_f64(&self, x: f64) -> bool {
        match &self.kind {
            SplitKind::Numeric {
                threshold,
                missing_goes,
            } => {
                if x.is_nan() {
                    *missing_goes == Side::Left
                } else {
                    x <= *threshold
                }
            }
            SplitKind::Categorical {
                left_labels,
                right_labels,
                missing_side,
            } => {
                if x.is_nan() {
                    return *missing_side == Side::Left;
                }
                let c = x as u32;
                if left_labels.contains(&c) {
                    true
                } else if right_labels.contains(&c) {
                    false
                } else {
                    *missing_side == Side::Left
                }
            }
        }
    }

    pub fn goes_left(&self, cell: Cell) -> bool {
        self.goes_left_f64(cell_code(cell))
    }
}

#[inline]
pub(crate) fn cell_code(cell: Cell) -> f64 {
    match cell {
        Cell::Num(x) => x,
        Cell::Cat(c) => c as f64,
        Cell::Missing => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Internal {
        rule: SplitRule,
        left: u32,
        right: u32,
    },
    /// `row_ids` lists the in-bag real rows reaching the leaf, with bootstrap
    /// multiplicity; `n_real == row_ids.len()`.
    Leaf {
        leaf_id: u32,
        n_real: u32,
        n_synth: u32,
        row_ids: Vec<u32>,
    },
}

/// Flat arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf node reached by a row given as a code lookup.
    #[inline]
    pub(crate) fn leaf_node(&self, code: impl Fn(usize) -> f64) -> usize {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Internal { rule, left, right } => {
                    idx = if rule.goes_left_f64(code(rule.feature)) {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return idx,
            }
        }
    }

    pub fn leaf_id_for(&self, row: &[Cell]) -> u32 {
        match &self.nodes[self.leaf_node(|j| cell_code(row[j]))] {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Internal { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Minimum number of (real + synthetic) training rows in every leaf.
    pub min_node_size: usize,
    /// Features tried per split; `None` means ⌈√p⌉.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            min_node_size: 10,
            mtry: None,
        }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    /// Number of real rows `n`; stacked row ids `< n` are real.
    pub n_real_rows: usize,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Bootstrap row ids per tree.
    pub bags: Vec<Vec<u32>>,
    /// `n_t`: real rows in each tree's bag (with multiplicity).
    pub n_real_in_bag: Vec<u32>,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.trees.iter().map(Tree::n_leaves).sum()
    }

    /// One leaf id per tree.
    pub fn route(&self, row: &[Cell]) -> Vec<u32> {
        self.trees.iter().map(|t| t.leaf_id_for(row)).collect()
    }
}

/// Column-major stacked training matrix: NaN marks missing cells and
/// categorical cells hold their label index.
pub(crate) struct FeatureMatrix {
    pub columns: Vec<Vec<f64>>,
    pub kinds: Vec<ColumnKind>,
}

impl FeatureMatrix {
    pub fn stacked(real: &Dataset, synth: &Dataset) -> Self {
        let columns = (0..real.n_cols())
            .map(|j| {
                real.column(j)
                    .iter()
                    .chain(synth.column(j))
                    .map(|&c| cell_code(c))
                    .collect()
            })
            .collect();
        FeatureMatrix {
            columns,
            kinds: real.schema().iter().map(|c| c.kind()).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

#[inline]
fn child_score(c0: usize, c1: usize) -> f64 {
    // n_c · Gini(c) = n_c − (c0² + c1²) / n_c
    let n = (c0 + c1) as f64;
    n - ((c0 * c0 + c1 * c1) as f64) / n
}

/// Weighted Gini impurity of a binary partition given per-side class counts.
#[inline]
pub fn weighted_gini(left: [usize; 2], right: [usize; 2]) -> f64 {
    let n = (left[0] + left[1] + right[0] + right[1]) as f64;
    (child_score(left[0], left[1]) + child_score(right[0], right[1])) / n
}

/// Best threshold on sorted `(value, is_real)` pairs with missing-class
/// counts `miss`. Thresholds are midpoints between consecutive distinct
/// values; at each threshold "missing left" is scored before "missing
/// right" and only strict improvements replace the incumbent. When missing
/// values are present, a final candidate at the largest observed value
/// separates observed from missing rows.
fn numeric_split(
    obs: &mut [(f64, bool)],
    miss: [usize; 2],
    min_node_size: usize,
) -> Option<(f64, Side, f64)> {
    if obs.is_empty() {
        return None;
    }
    obs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut tot = [0usize; 2];
    for &(_, y) in obs.iter() {
        tot[y as usize] += 1;
    }
    let n_miss = miss[0] + miss[1];
    let n = obs.len() + n_miss;
    let min = min_node_size.max(1);
    let mut best: Option<(f64, Side, f64)> = None;
    let mut l = [0usize; 2];
    for i in 0..obs.len() - 1 {
        l[obs[i].1 as usize] += 1;
        let (a, b) = (obs[i].0, obs[i + 1].0);
        if a == b {
            continue;
        }
        let r = [tot[0] - l[0], tot[1] - l[1]];
        let mut consider = |left: [usize; 2], right: [usize; 2], side: Side| {
            let nl = left[0] + left[1];
            if nl < min || n - nl < min {
                return;
            }
            let score = weighted_gini(left, right);
            if best.is_none_or(|(_, _, s)| score < s - TIE_EPS) {
                let mut s = a + (b - a) / 2.0;
                if s >= b {
                    s = a;
                }
                best = Some((s, side, score));
            }
        };
        consider([l[0] + miss[0], l[1] + miss[1]], r, Side::Left);
        if n_miss > 0 {
            consider(l, [r[0] + miss[0], r[1] + miss[1]], Side::Right);
        }
    }
    // Last candidate: every observed value left, every missing value right.
    if n_miss > 0 && obs.len() >= min && n_miss >= min {
        let score = weighted_gini(tot, miss);
        if best.is_none_or(|(_, _, s)| score < s - TIE_EPS) {
            best = Some((obs[obs.len() - 1].0, Side::Right, score));
        }
    }
    best
}

/// Pseudo-label index used for "missing" in categorical searches.
const NA_LABEL: u32 = u32::MAX;

/// Best bipartition of the labels present at a node (missing counted as its
/// own label when present).
fn categorical_split(
    counts: &[(u32, [usize; 2])],
    min_node_size: usize,
) -> Option<(Vec<u32>, Vec<u32>, Side, f64)> {
    let k = counts.len();
    if k < 2 {
        return None;
    }
    let n: usize = counts.iter().map(|(_, c)| c[0] + c[1]).sum();
    let min = min_node_size.max(1);
    let mut best: Option<(Vec<bool>, f64)> = None;
    let mut try_partition = |in_left: Vec<bool>| {
        let mut left = [0usize; 2];
        let mut right = [0usize; 2];
        for (&(_, c), &is_left) in counts.iter().zip(&in_left) {
            let side = if is_left { &mut left } else { &mut right };
            side[0] += c[0];
            side[1] += c[1];
        }
        let nl = left[0] + left[1];
        if nl < min || n - nl < min {
            return;
        }
        let score = weighted_gini(left, right);
        if best.as_ref().is_none_or(|(_, s)| score < *s - TIE_EPS) {
            best = Some((in_left, score));
        }
    };
    if k <= MAX_EXHAUSTIVE_LABELS {
        // The last label always sits on the right, so each bipartition is
        // visited once.
        for mask in 1u32..(1u32 << (k - 1)) {
            try_partition((0..k).map(|i| i < k - 1 && mask >> i & 1 == 1).collect());
        }
    } else {
        let mut order: Vec<usize> = (0..k).collect();
        let frac = |i: usize| {
            let c = counts[i].1;
            c[1] as f64 / (c[0] + c[1]) as f64
        };
        order.sort_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(a.cmp(&b)));
        for cut in 1..k {
            let mut in_left = vec![false; k];
            for &i in &order[..cut] {
                in_left[i] = true;
            }
            try_partition(in_left);
        }
    }
    let (in_left, score) = best?;
    let mut left_labels = Vec::new();
    let mut right_labels = Vec::new();
    let mut missing_side = None;
    let (mut n_left, mut n_right) = (0usize, 0usize);
    for (&(label, c), &is_left) in counts.iter().zip(&in_left) {
        if is_left {
            n_left += c[0] + c[1];
        } else {
            n_right += c[0] + c[1];
        }
        if label == NA_LABEL {
            missing_side = Some(if is_left { Side::Left } else { Side::Right });
        } else if is_left {
            left_labels.push(label);
        } else {
            right_labels.push(label);
        }
    }
    let missing_side = missing_side.unwrap_or(if n_right > n_left {
        Side::Right
    } else {
        Side::Left
    });
    Some((left_labels, right_labels, missing_side, score))
}

fn is_pure(labels: impl Iterator<Item = bool>) -> bool {
    let mut seen = [false; 2];
    for y in labels {
        seen[y as usize] = true;
        if seen[0] && seen[1] {
            return false;
        }
    }
    true
}

/// Best MIA split of one feature over the rows of a node.
///
/// `values[i]` and `is_real[i]` describe the i-th row of the node. Returns
/// the rule and its weighted Gini impurity, or `None` when the node is pure
/// or no candidate leaves both children with `min_node_size` rows.
pub fn best_split_mia(
    feature: usize,
    values: &[Cell],
    is_real: &[bool],
    min_node_size: usize,
) -> Option<(SplitRule, f64)> {
    assert_eq!(values.len(), is_real.len());
    if values.is_empty() || is_pure(is_real.iter().copied()) {
        return None;
    }
    let categorical = values.iter().any(|c| matches!(c, Cell::Cat(_)));
    let codes: Vec<f64> = values.iter().map(|&c| cell_code(c)).collect();
    let kind = if categorical {
        ColumnKind::Categorical
    } else {
        ColumnKind::Numeric
    };
    let mut scratch = SplitScratch::default();
    split_feature(feature, kind, &codes, is_real, min_node_size, &mut scratch)
}

#[derive(Default)]
struct SplitScratch {
    obs: Vec<(f64, bool)>,
    cat: Vec<[usize; 2]>,
}

fn split_feature(
    feature: usize,
    kind: ColumnKind,
    codes: &[f64],
    is_real: &[bool],
    min_node_size: usize,
    scratch: &mut SplitScratch,
) -> Option<(SplitRule, f64)> {
    match kind {
        ColumnKind::Numeric => {
            scratch.obs.clear();
            let mut miss = [0usize; 2];
            for (&x, &y) in codes.iter().zip(is_real) {
                if x.is_nan() {
                    miss[y as usize] += 1;
                } else {
                    scratch.obs.push((x, y));
                }
            }
            let (threshold, missing_goes, score) =
                numeric_split(&mut scratch.obs, miss, min_node_size)?;
            Some((
                SplitRule {
                    feature,
                    kind: SplitKind::Numeric {
                        threshold,
                        missing_goes,
                    },
                },
                score,
            ))
        }
        ColumnKind::Categorical => {
            scratch.cat.clear();
            let mut miss = [0usize; 2];
            for (&x, &y) in codes.iter().zip(is_real) {
                if x.is_nan() {
                    miss[y as usize] += 1;
                } else {
                    let c = x as usize;
                    if scratch.cat.len() <= c {
                        scratch.cat.resize(c + 1, [0, 0]);
                    }
                    scratch.cat[c][y as usize] += 1;
                }
            }
            let mut counts: Vec<(u32, [usize; 2])> = scratch
                .cat
                .iter()
                .enumerate()
                .filter(|(_, c)| c[0] + c[1] > 0)
                .map(|(i, &c)| (i as u32, c))
                .collect();
            if miss[0] + miss[1] > 0 {
                counts.push((NA_LABEL, miss));
            }
            let (left_labels, right_labels, missing_side, score) =
                categorical_split(&counts, min_node_size)?;
            Some((
                SplitRule {
                    feature,
                    kind: SplitKind::Categorical {
                        left_labels,
                        right_labels,
                        missing_side,
                    },
                },
                score,
            ))
        }
    }
}

fn grow_tree<R: Rng>(
    x: &FeatureMatrix,
    n_real: usize,
    mut rows: Vec<u32>,
    params: &ForestParams,
    rng: &mut R,
) -> Tree {
    let p = x.columns.len();
    let mtry = params.resolved_mtry(p);
    let min = params.min_node_size.max(1);
    let mut nodes: Vec<Node> = vec![Node::Leaf {
        leaf_id: 0,
        n_real: 0,
        n_synth: 0,
        row_ids: Vec::new(),
    }];
    let mut stack = vec![(0usize, 0usize, rows.len())];
    let mut scratch = SplitScratch::default();
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    let real = |r: u32| (r as usize) < n_real;

    while let Some((node, start, end)) = stack.pop() {
        let slice = &mut rows[start..end];
        let mut best: Option<(SplitRule, f64)> = None;
        if slice.len() >= 2 * min && !is_pure(slice.iter().map(|&r| real(r))) {
            labels.clear();
            labels.extend(slice.iter().map(|&r| real(r)));
            for j in sample_indices(rng, p, mtry).into_iter() {
                codes.clear();
                codes.extend(slice.iter().map(|&r| x.columns[j][r as usize]));
                if let Some((rule, score)) =
                    split_feature(j, x.kinds[j], &codes, &labels, min, &mut scratch)
                {
                    if best.as_ref().is_none_or(|(_, s)| score < *s) {
                        best = Some((rule, score));
                    }
                }
            }
        }
        match best {
            Some((rule, _)) => {
                let col = &x.columns[rule.feature];
                let mut mid = 0usize;
                for i in 0..slice.len() {
                    if rule.goes_left_f64(col[slice[i] as usize]) {
                        slice.swap(i, mid);
                        mid += 1;
                    }
                }
                let left = nodes.len();
                nodes.push(Node::Leaf {
                    leaf_id: 0,
                    n_real: 0,
                    n_synth: 0,
                    row_ids: Vec::new(),
                });
                nodes.push(Node::Leaf {
                    leaf_id: 0,
                    n_real: 0,
                    n_synth: 0,
                    row_ids: Vec::new(),
                });
                nodes[node] = Node::Internal {
                    rule,
                    left: left as u32,
                    right: (left + 1) as u32,
                };
                // Right first so the left subtree is expanded first.
                stack.push((left + 1, start + mid, end));
                stack.push((left, start, start + mid));
            }
            None => {
                let mut row_ids: Vec<u32> = slice.iter().copied().filter(|&r| real(r)).collect();
                row_ids.sort_unstable();
                let n_real_leaf = row_ids.len() as u32;
                nodes[node] = Node::Leaf {
                    leaf_id: 0,
                    n_real: n_real_leaf,
                    n_synth: slice.len() as u32 - n_real_leaf,
                    row_ids,
                };
            }
        }
    }
    Tree { nodes }
}

/// Fits the real-vs-synthetic discriminator.
///
/// Tree `t` draws from its own generator derived from one draw of `rng`,
/// so the forest is identical whether trees are grown serially or in
/// parallel.
pub fn fit_forest<R: Rng>(
    real: &Dataset,
    synth: &Dataset,
    params: &ForestParams,
    rng: &mut R,
) -> Result<Forest> {
    if !real.same_schema(synth) {
        return Err(Error::Schema(
            "real and synthetic data have different schemas".into(),
        ));
    }
    if real.n_rows() != synth.n_rows() {
        return Err(Error::Data(format!(
            "synthetic data has {} rows, expected {}",
            synth.n_rows(),
            real.n_rows()
        )));
    }
    if params.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let x = FeatureMatrix::stacked(real, synth);
    let n = real.n_rows();
    let total = x.n_rows();
    let base_seed: u64 = rng.gen();

    let grow = |t: usize| {
        let mut trng = derived_rng(base_seed, &[t as u64]);
        let bag: Vec<u32> = (0..total)
            .map(|_| trng.gen_range(0..total) as u32)
            .collect();
        let n_real_in_bag = bag.iter().filter(|&&r| (r as usize) < n).count() as u32;
        let tree = grow_tree(&x, n, bag.clone(), params, &mut trng);
        (tree, bag, n_real_in_bag)
    };

    #[cfg(feature = "parallel")]
    let grown: Vec<_> = {
        use rayon::prelude::*;
        (0..params.n_trees).into_par_iter().map(grow).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let grown: Vec<_> = (0..params.n_trees).map(grow).collect();

    let mut trees = Vec::with_capacity(grown.len());
    let mut bags = Vec::with_capacity(grown.len());
    let mut n_real_in_bag = Vec::with_capacity(grown.len());
    let mut next_leaf = 0u32;
    for (mut tree, bag, nr) in grown {
        for node in &mut tree.nodes {
            if let Node::Leaf { leaf_id, .. } = node {
                *leaf_id = next_leaf;
                next_leaf += 1;
            }
        }
        trees.push(tree);
        bags.push(bag);
        n_real_in_bag.push(nr);
    }
    Ok(Forest {
        params: *params,
        n_real_rows: n,
        n_features: real.n_cols(),
        trees,
        bags,
        n_real_in_bag,
    })
}

/// Ids of the rows of `data` reaching each node (only leaf entries are
/// filled).
pub(crate) fn rows_by_node(tree: &Tree, data: &Dataset) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new(); tree.nodes.len()];
    for i in 0..data.n_rows() {
        out[tree.leaf_node(|j| cell_code(data.cell(i, j)))].push(i as u32);
    }
    out
}

fn empty_leaf() -> Node {
    Node::Leaf {
        leaf_id: 0,
        n_real: 0,
        n_synth: 0,
        row_ids: Vec::new(),
    }
}

/// Collapses leaves reached by fewer than `min_real` real rows: a small
/// leaf is replaced by its sibling, and a node whose children are both small
/// leaves becomes a leaf. `rows` are the real rows reaching `idx`.
fn prune_node(nodes: &mut [Node], idx: usize, rows: &[u32], x: &FeatureMatrix, min_real: usize) {
    let small = |nodes: &[Node], k: usize, count: usize| matches!(nodes[k], Node::Leaf { .. }) && count < min_real;
    loop {
        let Node::Internal { rule, left, right } = &nodes[idx] else {
            return;
        };
        let (l, r) = (*left as usize, *right as usize);
        let (lrows, rrows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&i| rule.goes_left_f64(x.columns[rule.feature][i as usize]));
        match (small(nodes, l, lrows.len()), small(nodes, r, rrows.len())) {
            (true, true) => {
                nodes[idx] = empty_leaf();
                return;
            }
            (true, false) => nodes[idx] = nodes[r].clone(),
            (false, true) => nodes[idx] = nodes[l].clone(),
            (false, false) => {
                prune_node(nodes, l, &lrows, x, min_real);
                prune_node(nodes, r, &rrows, x, min_real);
                if !small(nodes, l, lrows.len()) && !small(nodes, r, rrows.len()) {
                    return;
                }
            }
        }
    }
}

/// Prunes a copy of `tree` and returns its reachable nodes in preorder.
fn prune_tree(tree: &Tree, x: &FeatureMatrix, n_real: usize, min_real: usize) -> Tree {
    let mut work: Vec<Node> = tree
        .nodes
        .iter()
        .map(|n| match n {
            Node::Leaf { .. } => empty_leaf(),
            internal => internal.clone(),
        })
        .collect();
    let rows: Vec<u32> = (0..n_real as u32).collect();
    prune_node(&mut work, 0, &rows, x, min_real);
    let tree = Tree { nodes: work };

    let mut nodes = Vec::new();
    let mut stack = vec![(0usize, None::<(usize, bool)>)];
    while let Some((idx, parent)) = stack.pop() {
        let at = nodes.len();
        if let Some((p, is_left)) = parent {
            if let Node::Internal { left, right, .. } = &mut nodes[p] {
                *(if is_left { left } else { right }) = at as u32;
            }
        }
        let node = tree.nodes[idx].clone();
        if let Node::Internal { left, right, .. } = node {
            stack.push((right as usize, Some((at, false))));
            stack.push((left as usize, Some((at, true))));
        }
        nodes.push(node);
    }
    Tree { nodes }
}

/// Prunes every tree so that each leaf holds at least `min_real` real rows
/// (all of `real` routed, not only the bag), then recomputes leaf ids and the
/// in-bag leaf contents from `synth` and the stored bags.
pub fn prune_real_leaves(forest: &mut Forest, real: &Dataset, synth: &Dataset, min_real: usize) -> Result<()> {
    if real.n_rows() != forest.n_real_rows || !real.same_schema(synth) || synth.n_rows() != real.n_rows() {
        return Err(Error::Data("pruning data does not match the forest".into()));
    }
    let x = FeatureMatrix::stacked(real, synth);
    let n = real.n_rows();
    let prune = |(tree, bag): (&Tree, &Vec<u32>)| {
        let mut tree = prune_tree(tree, &x, n, min_real);
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); tree.nodes.len()];
        for &r in bag {
            members[tree.leaf_node(|j| x.columns[j][r as usize])].push(r);
        }
        for (node, rows) in tree.nodes.iter_mut().zip(members) {
            if let Node::Leaf { .. } = node {
                let mut row_ids: Vec<u32> = rows.iter().copied().filter(|&r| (r as usize) < n).collect();
                row_ids.sort_unstable();
                *node = Node::Leaf {
                    leaf_id: 0,
                    n_real: row_ids.len() as u32,
                    n_synth: (rows.len() - row_ids.len()) as u32,
                    row_ids,
                };
            }
        }
        tree
    };
    #[cfg(feature = "parallel")]
    let trees: Vec<Tree> = {
        use rayon::prelude::*;
        forest.trees.par_iter().zip(forest.bags.par_iter()).map(prune).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let trees: Vec<Tree> = forest.trees.iter().zip(&forest.bags).map(prune).collect();

    let mut next_leaf = 0u32;
    forest.trees = trees;
    for tree in &mut forest.trees {
        for node in &mut tree.nodes {
            if let Node::Leaf { leaf_id, .. } = node {
                *leaf_id = next_leaf;
                next_leaf += 1;
            }
        }
    }
    Ok(())
}

/// Out-of-bag accuracy of the discriminator on the stacked training rows.
///
/// Each tree votes with the majority class of its leaf (no vote on a tied
/// leaf). A row whose real/synthetic votes tie earns half credit. Rows that
/// are in-bag for every tree are skipped.
pub fn oob_accuracy(forest: &Forest, real: &Dataset, synth: &Dataset) -> Result<f64> {
    let x = FeatureMatrix::stacked(real, synth);
    let total = x.n_rows();
    if forest.bags.iter().any(|b| b.iter().any(|&r| r as usize >= total)) {
        return Err(Error::Data(
            "forest was trained on a different number of rows".into(),
        ));
    }
    let n = real.n_rows();
    // votes[i] = (trees voting real, trees voting synthetic, any oob tree)
    let mut votes = vec![(0u32, 0u32, false); total];
    let mut in_bag = vec![false; total];
    for (tree, bag) in forest.trees.iter().zip(&forest.bags) {
        in_bag.iter_mut().for_each(|b| *b = false);
        for &r in bag {
            in_bag[r as usize] = true;
        }
        for i in (0..total).filter(|&i| !in_bag[i]) {
            let leaf = tree.leaf_node(|j| x.columns[j][i]);
            let v = &mut votes[i];
            v.2 = true;
            if let Node::Leaf {
                n_real, n_synth, ..
            } = &tree.nodes[leaf]
            {
                match n_real.cmp(n_synth) {
                    std::cmp::Ordering::Greater => v.0 += 1,
                    std::cmp::Ordering::Less => v.1 += 1,
                    std::cmp::Ordering::Equal => {}
                }
            }
        }
    }
    let mut credit = 0.0;
    let mut counted = 0usize;
    for (i, &(vr, vs, any)) in votes.iter().enumerate() {
        if !any {
            continue;
        }
        counted += 1;
        let truth_real = i < n;
        credit += match vr.cmp(&vs) {
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Greater if truth_real => 1.0,
            std::cmp::Ordering::Less if !truth_real => 1.0,
            _ => 0.0,
        };
    }
    if counted == 0 {
        return Err(Error::NoOobVotes);
    }
    Ok(credit / counted as f64)
}
