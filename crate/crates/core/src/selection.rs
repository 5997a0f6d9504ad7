//! Stratified k-fold cross-validation, weighted F1 and exhaustive grid search.

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::Exec;
use crate::tree::{fit_rows, Criterion, Dataset, FeatureSubset, HyperParams, Splitter};

/// Disjoint test folds covering every sample exactly once.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Folds {
    test: Vec<Vec<usize>>,
    n: usize,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.test.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn test(&self, i: usize) -> &[usize] {
        &self.test[i]
    }

    /// Every index not in fold `i`, ascending.
    pub fn train(&self, i: usize) -> Vec<usize> {
        let mut in_test = vec![false; self.n];
        for &t in &self.test[i] {
            in_test[t] = true;
        }
        (0..self.n).filter(|&j| !in_test[j]).collect()
    }
}

/// Per class (ascending label), shuffle that class's indices and deal them
/// round-robin over the folds. The dealing position carries over between
/// classes so overall fold sizes also differ by at most one.
pub fn stratified_folds(y: &[u32], k: usize, seed: u64) -> Result<Folds> {
    if k < 2 {
        return Err(invalid!("need at least 2 folds, got {k}"));
    }
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut rng = crate::seed::rng(seed);
    let mut test = vec![Vec::new(); k];
    let mut pos = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        if members.len() < k {
            return Err(invalid!(
                "class {c} has {} members, fewer than {k} folds",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        for m in members {
            test[pos % k].push(m);
            pos += 1;
        }
    }
    for f in &mut test {
        f.sort_unstable();
    }
    Ok(Folds { test, n: y.len() })
}

/// Support-weighted mean of per-class F1 over the union of labels.
pub fn f1_weighted(y_true: &[u32], y_pred: &[u32]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(invalid!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        ));
    }
    if y_true.is_empty() {
        return Err(invalid!("f1 of zero samples"));
    }
    let mut labels: Vec<u32> = y_true.iter().chain(y_pred).copied().collect();
    labels.sort_unstable();
    labels.dedup();
    let idx = |l: &u32| labels.binary_search(l).expect("label in union");
    let k = labels.len();
    let (mut tp, mut pred, mut support) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (t, p) in y_true.iter().zip(y_pred) {
        let (ti, pi) = (idx(t), idx(p));
        support[ti] += 1;
        pred[pi] += 1;
        if ti == pi {
            tp[ti] += 1;
        }
    }
    // summed as an exact fraction and rounded once, so the result does not
    // depend on class order; float fallback if the fraction overflows
    let exact = (0..k)
        .filter(|&c| tp[c] > 0)
        .try_fold(Ratio::<u128>::zero(), |acc, c| {
            // 2PR/(P+R) == 2TP / (pred + support), weighted by support
            let term = Ratio::new(2 * (tp[c] * support[c]) as u128, (pred[c] + support[c]) as u128);
            acc.checked_add(&term)
        })
        .and_then(|sum| sum.checked_div(&Ratio::from_integer(y_true.len() as u128)))
        .and_then(|r| r.to_f64());
    Ok(exact.unwrap_or_else(|| {
        let n = y_true.len() as f64;
        (0..k)
            .filter(|&c| tp[c] > 0)
            .map(|c| 2.0 * tp[c] as f64 / (pred[c] + support[c]) as f64 * support[c] as f64 / n)
            .sum()
    }))
}

/// Hyperparameter axes. Serialised with the scikit-learn parameter names;
/// `null` stands for "unlimited" / "all features".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub criterion: Vec<Criterion>,
    pub splitter: Vec<Splitter>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub max_features: Vec<Option<FeatureSubset>>,
    pub max_leaf_nodes: Vec<Option<usize>>,
    pub min_weight_fraction_leaf: Vec<f64>,
}

impl Default for GridSpec {
    /// The full 8748-point grid.
    fn default() -> Self {
        GridSpec {
            criterion: vec![Criterion::Gini, Criterion::Entropy, Criterion::LogLoss],
            splitter: vec![Splitter::Best, Splitter::Random],
            max_depth: vec![None, Some(10), Some(20), Some(30), Some(50), Some(100)],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 4],
            max_features: vec![None, Some(FeatureSubset::Sqrt), Some(FeatureSubset::Log2)],
            max_leaf_nodes: vec![None, Some(10), Some(20)],
            min_weight_fraction_leaf: vec![0.0, 0.1, 0.2],
        }
    }
}

impl GridSpec {
    /// Eight deterministic points for desk-scale runs. Kept small on purpose:
    /// the best of many noisy CV scores on ~90 samples sits well above chance
    /// even when the classes carry no signal.
    pub fn desk() -> Self {
        GridSpec {
            criterion: vec![Criterion::Gini, Criterion::Entropy],
            splitter: vec![Splitter::Best],
            max_depth: vec![None, Some(3)],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1, 5],
            max_features: vec![None],
            max_leaf_nodes: vec![None],
            min_weight_fraction_leaf: vec![0.0],
        }
    }

    /// A grid holding exactly `hp` (seed ignored).
    pub fn single(hp: &HyperParams) -> Self {
        GridSpec {
            criterion: vec![hp.criterion],
            splitter: vec![hp.splitter],
            max_depth: vec![hp.max_depth],
            min_samples_split: vec![hp.min_samples_split],
            min_samples_leaf: vec![hp.min_samples_leaf],
            max_features: vec![hp.max_features],
            max_leaf_nodes: vec![hp.max_leaf_nodes],
            min_weight_fraction_leaf: vec![hp.min_weight_fraction_leaf],
        }
    }

    fn radices(&self) -> [usize; 8] {
        [
            self.criterion.len(),
            self.splitter.len(),
            self.max_depth.len(),
            self.min_samples_split.len(),
            self.min_samples_leaf.len(),
            self.max_features.len(),
            self.max_leaf_nodes.len(),
            self.min_weight_fraction_leaf.len(),
        ]
    }

    pub fn len(&self) -> usize {
        self.radices().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        const NAMES: [&str; 8] = [
            "criterion",
            "splitter",
            "max_depth",
            "min_samples_split",
            "min_samples_leaf",
            "max_features",
            "max_leaf_nodes",
            "min_weight_fraction_leaf",
        ];
        if let Some(i) = self.radices().iter().position(|&r| r == 0) {
            return Err(Error::Config(format!("grid axis `{}` is empty", NAMES[i])));
        }
        for i in 0..self.len() {
            self.point(i, 0)
                .validate()
                .map_err(|e| Error::Config(format!("grid point {i}: {e}")))?;
        }
        Ok(())
    }

    /// Grid point `index` in lexicographic order over the axes as listed
    /// (last axis varies fastest).
    pub fn point(&self, index: usize, rng_seed: u64) -> HyperParams {
        let r = self.radices();
        let mut digit = [0usize; 8];
        let mut rest = index;
        for a in (0..8).rev() {
            digit[a] = rest % r[a];
            rest /= r[a];
        }
        HyperParams {
            criterion: self.criterion[digit[0]],
            splitter: self.splitter[digit[1]],
            max_depth: self.max_depth[digit[2]],
            min_samples_split: self.min_samples_split[digit[3]],
            min_samples_leaf: self.min_samples_leaf[digit[4]],
            max_features: self.max_features[digit[5]],
            max_leaf_nodes: self.max_leaf_nodes[digit[6]],
            min_weight_fraction_leaf: self.min_weight_fraction_leaf[digit[7]],
            rng_seed,
        }
    }

    pub fn points(&self, rng_seed: u64) -> Vec<HyperParams> {
        (0..self.len()).map(|i| self.point(i, rng_seed)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid_index: usize,
    pub hp: HyperParams,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub best: CvResult,
    pub all: Vec<CvResult>,
}

/// Score `hp` on each fold: fit on the other folds, weighted F1 on this one.
pub fn cross_validate(data: &Dataset<'_>, folds: &Folds, hp: &HyperParams) -> Result<Vec<f64>> {
    (0..folds.k())
        .map(|i| fold_score(data, folds, hp, i))
        .collect()
}

fn fold_score(data: &Dataset<'_>, folds: &Folds, hp: &HyperParams, i: usize) -> Result<f64> {
    let model = fit_rows(data, &folds.train(i), hp)?;
    let test = folds.test(i);
    let truth: Vec<u32> = test.iter().map(|&r| data.label(r)).collect();
    f1_weighted(&truth, &model.predict_rows(data.matrix(), test))
}

/// Evaluate every grid point on the same folds. The best point has the
/// highest mean score; ties go to the earliest enumeration index.
pub fn grid_search(
    data: &Dataset<'_>,
    grid: &GridSpec,
    folds: &Folds,
    tree_seed: u64,
    exec: &Exec,
) -> Result<GridResult> {
    if folds.n_samples() != data.n_rows() {
        return Err(invalid!(
            "folds cover {} samples, dataset has {}",
            folds.n_samples(),
            data.n_rows()
        ));
    }
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let k = folds.k();
    let points = grid.points(tree_seed);
    let scores = exec.map_range(points.len() * k, |t| {
        fold_score(data, folds, &points[t / k], t % k)
    });
    let mut all = Vec::with_capacity(points.len());
    let mut it = scores.into_iter();
    for (index, hp) in points.into_iter().enumerate() {
        let fold_scores = it
            .by_ref()
            .take(k)
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| Error::GridPoint {
                index,
                source: Box::new(e),
            })?;
        let mean_score = fold_scores.iter().sum::<f64>() / k as f64;
        all.push(CvResult {
            grid_index: index,
            hp,
            fold_scores,
            mean_score,
        });
    }
    let mut best = 0;
    for (i, r) in all.iter().enumerate() {
        if r.mean_score > all[best].mean_score {
            best = i;
        }
    }
    Ok(GridResult {
        best: all[best].clone(),
        all,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unequal_class_counts_split_evenly() {
        let mut y = vec![1u32; 84];
        y.extend(vec![5u32; 81]);
        y.extend(vec![10u32; 87]);
        for seed in 0..5 {
            let folds = stratified_folds(&y, 3, seed).unwrap();
            for i in 0..3 {
                let count = |c: u32| folds.test(i).iter().filter(|&&j| y[j] == c).count();
                assert_eq!((count(1), count(5), count(10)), (28, 27, 29));
            }
        }
    }

    #[test]
    fn small_fold_examples() {
        let y = [7, 7, 7, 9, 9, 9];
        let folds = stratified_folds(&y, 3, 1).unwrap();
        for i in 0..3 {
            let mut labels: Vec<u32> = folds.test(i).iter().map(|&j| y[j]).collect();
            labels.sort();
            assert_eq!(labels, [7, 9]);
        }
        assert!(stratified_folds(&[1, 1, 1, 2, 2], 3, 0).is_err());
        assert!(stratified_folds(&[1, 1], 1, 0).is_err());
    }

    #[test]
    fn folds_partition_indices() {
        let y: Vec<u32> = (0..50).map(|i| [1, 5, 10][i % 3] as u32).collect();
        let folds = stratified_folds(&y, 3, 9).unwrap();
        let mut all: Vec<usize> = (0..3).flat_map(|i| folds.test(i).to_vec()).collect();
        all.sort();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        for i in 0..3 {
            assert_eq!(folds.train(i).len() + folds.test(i).len(), 50);
        }
    }

    #[test]
    fn f1_examples() {
        let y = [1, 5, 10, 10, 5];
        assert_eq!(f1_weighted(&y, &y).unwrap(), 1.0);
        let v = f1_weighted(&[1, 1, 5, 5, 10], &[1, 5, 5, 5, 10]).unwrap();
        assert!((v - (2.0 * (2.0 / 3.0) + 2.0 * 0.8 + 1.0) / 5.0).abs() < 1e-12);
        assert!((v - 0.786_666_666_666_666_7).abs() < 1e-9);
        // class 10 never predicted: contributes 0
        let v = f1_weighted(&[1, 10], &[1, 1]).unwrap();
        assert!((v - 0.5 * (2.0 / 3.0)).abs() < 1e-12);
        assert!(f1_weighted(&[1], &[1, 1]).is_err());
        assert!(f1_weighted(&[], &[]).is_err());
    }

    #[test]
    fn full_grid_size_and_order() {
        let g = GridSpec::default();
        assert_eq!(g.len(), 3 * 2 * 6 * 3 * 3 * 3 * 3 * 3);
        assert_eq!(g.len(), 8748);
        let p0 = g.point(0, 0);
        assert_eq!(p0.criterion, Criterion::Gini);
        assert_eq!(p0.min_weight_fraction_leaf, 0.0);
        assert_eq!(g.point(1, 0).min_weight_fraction_leaf, 0.1);
        assert_eq!(g.point(3, 0).max_leaf_nodes, Some(10));
        let last = g.point(8747, 0);
        assert_eq!(last.criterion, Criterion::LogLoss);
        assert_eq!(last.max_depth, Some(100));
        assert_eq!(last.min_weight_fraction_leaf, 0.2);
        assert_eq!(GridSpec::desk().len(), 8);
        g.validate().unwrap();
    }

    #[test]
    fn grid_json_uses_library_names() {
        let json = serde_json::to_value(GridSpec::default()).unwrap();
        assert_eq!(json["criterion"], serde_json::json!(["gini", "entropy", "log_loss"]));
        assert_eq!(json["max_depth"], serde_json::json!([null, 10, 20, 30, 50, 100]));
        assert_eq!(json["max_features"], serde_json::json!([null, "sqrt", "log2"]));
        let back: GridSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, GridSpec::default());
        assert!(serde_json::from_str::<GridSpec>(r#"{"criterion":["gini"],"bogus":[1]}"#).is_err());
    }

    fn toy() -> (Vec<f64>, Vec<u32>) {
        let x: Vec<f64> = (0..30).map(|i| i as f64 + if i % 2 == 0 { 0.25 } else { 0.0 }).collect();
        let y: Vec<u32> = (0..30).map(|i| [1, 5, 10][i / 10]).collect();
        (x, y)
    }

    #[test]
    fn single_point_grid_returns_it() {
        let (x, y) = toy();
        let data = Dataset::new(&x, 1, &y).unwrap();
        let folds = stratified_folds(&y, 3, 0).unwrap();
        let hp = HyperParams::default();
        let r = grid_search(&data, &GridSpec::single(&hp), &folds, 0, &Exec::SEQUENTIAL).unwrap();
        assert_eq!(r.all.len(), 1);
        let cv = cross_validate(&data, &folds, &hp).unwrap();
        assert_eq!(r.best.fold_scores, cv);
        assert_eq!(r.best.mean_score, cv.iter().sum::<f64>() / 3.0);
    }

    #[test]
    fn ties_go_to_earliest_point_and_best_dominates() {
        let (x, y) = toy();
        let data = Dataset::new(&x, 1, &y).unwrap();
        let folds = stratified_folds(&y, 3, 0).unwrap();
        // entropy and log_loss are the same criterion: identical scores
        let grid = GridSpec {
            criterion: vec![Criterion::LogLoss, Criterion::Entropy],
            ..GridSpec::single(&HyperParams::default())
        };
        let r = grid_search(&data, &grid, &folds, 0, &Exec::SEQUENTIAL).unwrap();
        assert_eq!(r.all[0].fold_scores, r.all[1].fold_scores);
        assert_eq!(r.best.grid_index, 0);

        let mixed = GridSpec {
            splitter: vec![Splitter::Best, Splitter::Random],
            max_features: vec![None, Some(FeatureSubset::Sqrt)],
            max_leaf_nodes: vec![None, Some(10)],
            ..GridSpec::desk()
        };
        let r = grid_search(&data, &mixed, &folds, 3, &Exec::default()).unwrap();
        assert!(r.all.iter().all(|c| c.mean_score <= r.best.mean_score));
        let seq = grid_search(&data, &mixed, &folds, 3, &Exec::SEQUENTIAL).unwrap();
        assert_eq!(seq.all, r.all);
    }
}
