//! CART classification trees with mean-decrease-impurity importances.
//!
//! Split thresholds are midpoints between consecutive distinct values and
//! samples with `x <= threshold` go left. Candidate splits whose impurity
//! decreases agree within [`TIE_EPS`] are ties, resolved toward the lower
//! feature index and then the lower threshold. A node is split only when its
//! best decrease is strictly positive (beyond the tie tolerance).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Impurity decreases closer than this are treated as equal.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Gini,
    Entropy,
    /// Same impurity as `Entropy`.
    LogLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitter {
    Best,
    Random,
}

/// Per-node feature subsampling. `None` in [`HyperParams`] means all features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    Sqrt,
    Log2,
}

impl FeatureSubset {
    pub fn count(self, d: usize) -> usize {
        match self {
            FeatureSubset::Sqrt => ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1)),
            FeatureSubset::Log2 => ((d as f64).log2().floor() as usize).clamp(1, d.max(1)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub criterion: Criterion,
    pub splitter: Splitter,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: Option<FeatureSubset>,
    pub max_leaf_nodes: Option<usize>,
    pub min_weight_fraction_leaf: f64,
    pub rng_seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            criterion: Criterion::Gini,
            splitter: Splitter::Best,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            max_leaf_nodes: None,
            min_weight_fraction_leaf: 0.0,
            rng_seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(invalid!("min_samples_split must be >= 2, got {}", self.min_samples_split));
        }
        if self.min_samples_leaf < 1 {
            return Err(invalid!("min_samples_leaf must be >= 1"));
        }
        if let Some(m) = self.max_leaf_nodes {
            if m < 2 {
                return Err(invalid!("max_leaf_nodes must be >= 2, got {m}"));
            }
        }
        if !(0.0..=0.5).contains(&self.min_weight_fraction_leaf) {
            return Err(invalid!(
                "min_weight_fraction_leaf must be in [0, 0.5], got {}",
                self.min_weight_fraction_leaf
            ));
        }
        Ok(())
    }

    /// Smallest admissible leaf for a training set of `n` samples.
    pub fn min_leaf(&self, n: usize) -> usize {
        let frac = (self.min_weight_fraction_leaf * n as f64 - 1e-9).ceil().max(0.0) as usize;
        self.min_samples_leaf.max(frac)
    }
}

/// Node impurity of a class-count vector.
pub fn impurity(counts: &[usize], criterion: Criterion) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(invalid!("impurity of an empty node"));
    }
    Ok(impurity_unchecked(counts, n, criterion))
}

fn impurity_unchecked(counts: &[usize], n: usize, criterion: Criterion) -> f64 {
    let n = n as f64;
    match criterion {
        Criterion::Gini => 1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>(),
        Criterion::Entropy | Criterion::LogLoss => -counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                p * p.log2()
            })
            .sum::<f64>(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Training samples per class (aligned with `TreeModel::classes`).
    pub counts: Vec<usize>,
    pub impurity: f64,
    pub depth: usize,
    pub split: Option<Split>,
}

impl Node {
    pub fn n_samples(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub nodes: Vec<Node>,
    pub importances: Vec<f64>,
}

/// Tree shape independent of node numbering.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Leaf(Vec<usize>),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Shape>,
        right: Box<Shape>,
    },
}

impl TreeModel {
    /// Assemble a model from nodes (root at index 0); importances are derived.
    pub fn from_nodes(classes: Vec<u32>, n_features: usize, nodes: Vec<Node>) -> Self {
        let importances = mdi_importances(&nodes, n_features);
        TreeModel {
            classes,
            n_features,
            nodes,
            importances,
        }
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_splits()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    fn leaf_for(&self, row: &[f64]) -> &Node {
        let mut node = &self.nodes[0];
        while let Some(s) = &node.split {
            node = if row[s.feature] <= s.threshold {
                &self.nodes[s.left]
            } else {
                &self.nodes[s.right]
            };
        }
        node
    }

    /// Majority class at a leaf; ties go to the smallest label.
    fn leaf_label(&self, node: &Node) -> u32 {
        let mut best = 0;
        for (i, &c) in node.counts.iter().enumerate() {
            if c > node.counts[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<u32> {
        if row.len() != self.n_features {
            return Err(invalid!("row has {} features, model expects {}", row.len(), self.n_features));
        }
        Ok(self.leaf_label(self.leaf_for(row)))
    }

    /// Predict a row-major matrix with `self.n_features` columns.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<u32>> {
        if self.n_features == 0 || x.len() % self.n_features != 0 {
            return Err(invalid!(
                "matrix of {} values is not a multiple of {} features",
                x.len(),
                self.n_features
            ));
        }
        Ok(x
            .chunks(self.n_features)
            .map(|r| self.leaf_label(self.leaf_for(r)))
            .collect())
    }

    /// Predict selected rows of a row-major matrix.
    pub fn predict_rows(&self, x: &[f64], rows: &[usize]) -> Vec<u32> {
        let d = self.n_features;
        rows.iter()
            .map(|&r| self.leaf_label(self.leaf_for(&x[r * d..(r + 1) * d])))
            .collect()
    }

    pub fn shape(&self) -> Shape {
        fn go(m: &TreeModel, i: usize) -> Shape {
            let n = &m.nodes[i];
            match &n.split {
                None => Shape::Leaf(n.counts.clone()),
                Some(s) => Shape::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: Box::new(go(m, s.left)),
                    right: Box::new(go(m, s.right)),
                },
            }
        }
        go(self, 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialises")
    }
}

/// Weighted impurity decrease per split, accumulated per feature, normalised.
fn mdi_importances(nodes: &[Node], n_features: usize) -> Vec<f64> {
    let mut imp = vec![0.0; n_features];
    let Some(root) = nodes.first() else { return imp };
    let total = root.n_samples() as f64;
    for node in nodes {
        if let Some(s) = &node.split {
            let (l, r) = (&nodes[s.left], &nodes[s.right]);
            let dec = node.n_samples() as f64 * node.impurity
                - l.n_samples() as f64 * l.impurity
                - r.n_samples() as f64 * r.impurity;
            imp[s.feature] += dec / total;
        }
    }
    let sum: f64 = imp.iter().sum();
    if sum > 0.0 {
        imp.iter_mut().for_each(|v| *v /= sum);
    }
    imp
}

/// Training view: row-major matrix plus encoded labels.
pub struct Dataset<'a> {
    x: &'a [f64],
    n_features: usize,
    /// Class index per row.
    y: Vec<usize>,
    classes: Vec<u32>,
}

impl<'a> Dataset<'a> {
    pub fn new(x: &'a [f64], n_features: usize, labels: &[u32]) -> Result<Self> {
        if n_features == 0 {
            return Err(invalid!("dataset has no features"));
        }
        if labels.is_empty() {
            return Err(invalid!("dataset has no samples"));
        }
        if x.len() != labels.len() * n_features {
            return Err(invalid!(
                "{} values for {} rows x {n_features} features",
                x.len(),
                labels.len()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("feature matrix contains non-finite values"));
        }
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        let y = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label present"))
            .collect();
        Ok(Dataset {
            x,
            n_features,
            y,
            classes,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn matrix(&self) -> &'a [f64] {
        self.x
    }

    pub fn label(&self, row: usize) -> u32 {
        self.classes[self.y[row]]
    }

    #[inline]
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_features + feature]
    }

    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for &r in rows {
            c[self.y[r]] += 1;
        }
        c
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    feature: usize,
    threshold: f64,
    /// Unweighted decrease `imp - nL/n impL - nR/n impR`.
    decrease: f64,
}

impl Candidate {
    /// Whether `self` should replace `best` under the decrease/tie rules.
    fn beats(&self, best: &Option<Candidate>) -> bool {
        let Some(b) = best else { return true };
        if self.decrease > b.decrease + TIE_EPS {
            return true;
        }
        if self.decrease < b.decrease - TIE_EPS {
            return false;
        }
        (self.feature, self.threshold)
            .partial_cmp(&(b.feature, b.threshold))
            .is_some_and(Ordering::is_lt)
    }
}

struct Builder<'d, 'a, R> {
    data: &'d Dataset<'a>,
    hp: &'d HyperParams,
    min_leaf: usize,
    n_candidates: usize,
    rng: R,
    order: Vec<usize>,
}

struct Pending {
    rows: Vec<usize>,
    node: usize,
    split: Candidate,
    priority: f64,
    seq: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // max-heap: larger weighted decrease first, then earlier creation
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl<R: Rng> Builder<'_, '_, R> {
    fn find_split(&mut self, rows: &[usize], counts: &[usize], imp: f64, depth: usize) -> Option<Candidate> {
        let n = rows.len();
        if imp <= TIE_EPS
            || n < self.hp.min_samples_split
            || n < 2 * self.min_leaf
            || self.hp.max_depth.is_some_and(|m| depth >= m)
        {
            return None;
        }
        let d = self.data.n_features;
        let subsample = self.n_candidates < d;
        if subsample {
            self.order.clear();
            self.order.extend(0..d);
        }
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        let mut drawn = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        while visited < self.n_candidates && drawn < d {
            let f = if subsample {
                // partial Fisher-Yates draw without replacement
                let j = self.rng.random_range(drawn..d);
                self.order.swap(drawn, j);
                self.order[drawn]
            } else {
                drawn
            };
            drawn += 1;

            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.data.value(r, f), self.data.y[r])));
            let (lo, hi) = pairs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(*v), hi.max(*v)));
            if hi <= lo {
                // constant here; does not count toward the feature budget
                continue;
            }
            visited += 1;
            let cand = match self.hp.splitter {
                Splitter::Best => self.best_threshold(f, &mut pairs, counts, imp),
                Splitter::Random => {
                    let t = lo + self.rng.random::<f64>() * (hi - lo);
                    let t = if t >= hi { lo } else { t };
                    self.evaluate_threshold(f, t, &pairs, imp)
                }
            };
            if let Some(c) = cand {
                if c.beats(&best) {
                    best = Some(c);
                }
            }
        }
        best.filter(|b| b.decrease > TIE_EPS)
    }

    fn best_threshold(&self, f: usize, pairs: &mut [(f64, usize)], counts: &[usize], imp: f64) -> Option<Candidate> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = pairs.len();
        let k = counts.len();
        let mut left = vec![0usize; k];
        let mut right = counts.to_vec();
        let mut best: Option<Candidate> = None;
        for i in 0..n - 1 {
            let c = pairs[i].1;
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (pairs[i].0, pairs[i + 1].0);
            if v == next {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            if nl < self.min_leaf || nr < self.min_leaf {
                continue;
            }
            let mut t = v / 2.0 + next / 2.0;
            if t >= next || t < v {
                t = v;
            }
            let dec = imp
                - nl as f64 / n as f64 * impurity_unchecked(&left, nl, self.hp.criterion)
                - nr as f64 / n as f64 * impurity_unchecked(&right, nr, self.hp.criterion);
            let cand = Candidate {
                feature: f,
                threshold: t,
                decrease: dec,
            };
            if cand.beats(&best) {
                best = Some(cand);
            }
        }
        best
    }

    fn evaluate_threshold(&self, f: usize, t: f64, pairs: &[(f64, usize)], imp: f64) -> Option<Candidate> {
        let k = self.data.classes.len();
        let mut left = vec![0usize; k];
        let mut right = vec![0usize; k];
        for &(v, c) in pairs {
            if v <= t {
                left[c] += 1;
            } else {
                right[c] += 1;
            }
        }
        let nl: usize = left.iter().sum();
        let nr: usize = right.iter().sum();
        if nl < self.min_leaf || nr < self.min_leaf {
            return None;
        }
        let n = pairs.len() as f64;
        Some(Candidate {
            feature: f,
            threshold: t,
            decrease: imp
                - nl as f64 / n * impurity_unchecked(&left, nl, self.hp.criterion)
                - nr as f64 / n * impurity_unchecked(&right, nr, self.hp.criterion),
        })
    }
}

/// Fit on every row of `data`.
pub fn fit(data: &Dataset<'_>, hp: &HyperParams) -> Result<TreeModel> {
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    fit_rows(data, &rows, hp)
}

/// Fit on the subset `rows` of `data`. Class indices stay those of `data`.
pub fn fit_rows(data: &Dataset<'_>, rows: &[usize], hp: &HyperParams) -> Result<TreeModel> {
    hp.validate()?;
    if rows.is_empty() {
        return Err(invalid!("cannot fit a tree on zero samples"));
    }
    let n_total = rows.len();
    let d = data.n_features;
    let mut b = Builder {
        data,
        hp,
        min_leaf: hp.min_leaf(n_total),
        n_candidates: hp.max_features.map_or(d, |m| m.count(d)),
        rng: crate::seed::rng(hp.rng_seed),
        order: Vec::with_capacity(d),
    };

    let mut nodes: Vec<Node> = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut seq = 0;

    let mut push_node = |b: &mut Builder<'_, '_, _>,
                         nodes: &mut Vec<Node>,
                         heap: &mut BinaryHeap<Pending>,
                         rows: Vec<usize>,
                         depth: usize| {
        let counts = data.counts(&rows);
        let imp = impurity_unchecked(&counts, rows.len(), hp.criterion);
        let split = b.find_split(&rows, &counts, imp, depth);
        let id = nodes.len();
        nodes.push(Node {
            counts,
            impurity: imp,
            depth,
            split: None,
        });
        if let Some(split) = split {
            heap.push(Pending {
                priority: split.decrease * rows.len() as f64 / n_total as f64,
                rows,
                node: id,
                split,
                seq,
            });
            seq += 1;
        }
        id
    };

    let _ = push_node(&mut b, &mut nodes, &mut heap, rows.to_vec(), 0);
    let mut n_leaves = 1;
    while let Some(p) = heap.pop() {
        if hp.max_leaf_nodes.is_some_and(|m| n_leaves >= m) {
            break;
        }
        let (l_rows, r_rows): (Vec<usize>, Vec<usize>) = p
            .rows
            .iter()
            .partition(|&&r| data.value(r, p.split.feature) <= p.split.threshold);
        let depth = nodes[p.node].depth + 1;
        let left = push_node(&mut b, &mut nodes, &mut heap, l_rows, depth);
        let right = push_node(&mut b, &mut nodes, &mut heap, r_rows, depth);
        nodes[p.node].split = Some(Split {
            feature: p.split.feature,
            threshold: p.split.threshold,
            left,
            right,
        });
        n_leaves += 1;
    }
    Ok(TreeModel::from_nodes(data.classes.clone(), d, nodes))
}
