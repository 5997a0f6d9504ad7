//! Feature ranking over the best-scoring trees of an elimination run.
//!
//! Each ranked tree `i` in which feature `f` is informative contributes
//!
//! ```text
//! ( mean(cv_i) / max(cv_i) + informative_i / features_i + 1 / dt_rank_i + 1 / f_rank_i ) / 4
//! ```
//!
//! to `f`'s score; trees in which `f` has zero importance contribute nothing.
//! `dt_rank` is the tree's position by mean CV score among the ranked trees
//! and `f_rank` is `f`'s position by importance within the tree.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elimination::{ExperimentRecord, ExperimentRun};
use crate::error::{Error, Result};
use crate::spectral::FeatureId;

/// Share of the run that is ranked under [`RankScope::Selected`].
pub const TOP_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankScope {
    /// The top decile of trees by mean CV score.
    #[default]
    Selected,
    /// Every tree of the run.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRank {
    /// Index into `ExperimentRun::records`.
    pub iteration: usize,
    pub dt_rank: usize,
    pub mean_f1: f64,
    pub n_features: usize,
    pub stability_ratio: f64,
    pub informative_ratio: f64,
}

fn stability(rec: &ExperimentRecord) -> f64 {
    let max = rec.fold_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        rec.mean_f1 / max
    } else {
        0.0
    }
}

/// Trees ordered by descending mean CV score, then fewer features, then
/// earlier iteration; the first `take` get `dt_rank` 1..=take.
fn ordered_trees(run: &ExperimentRun, take: usize) -> Vec<TreeRank> {
    let mut order: Vec<&ExperimentRecord> = run.records.iter().collect();
    order.sort_by(|a, b| {
        b.mean_f1
            .total_cmp(&a.mean_f1)
            .then(a.n_features.cmp(&b.n_features))
            .then(a.iteration.cmp(&b.iteration))
    });
    order
        .into_iter()
        .take(take)
        .enumerate()
        .map(|(i, r)| TreeRank {
            iteration: r.iteration,
            dt_rank: i + 1,
            mean_f1: r.mean_f1,
            n_features: r.n_features,
            stability_ratio: stability(r),
            informative_ratio: if r.n_features == 0 {
                0.0
            } else {
                r.n_informative as f64 / r.n_features as f64
            },
        })
        .collect()
}

/// `ceil(0.1 * |run|)` best trees.
pub fn select_top_decile(run: &ExperimentRun) -> Vec<TreeRank> {
    let n = (TOP_FRACTION * run.records.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    ordered_trees(run, n.min(run.records.len()))
}

pub fn rank_trees(run: &ExperimentRun, scope: RankScope) -> Vec<TreeRank> {
    match scope {
        RankScope::Selected => select_top_decile(run),
        RankScope::All => ordered_trees(run, run.records.len()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub iteration: usize,
    pub dt_rank: usize,
    pub f_rank: usize,
    pub stability_term: f64,
    pub informative_term: f64,
    pub tree_term: f64,
    pub feature_term: f64,
    /// Quarter of the four terms; the entry's score is the sum of these.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub feature: String,
    pub channel: Option<u8>,
    pub freq_hz: Option<u16>,
    pub rank_value: f64,
    pub contributions: Vec<Contribution>,
}

impl RankEntry {
    pub fn n_contributing_trees(&self) -> usize {
        self.contributions.len()
    }
}

/// 1-based importance positions of informative features (descending
/// importance, ties in active order).
fn feature_positions(rec: &ExperimentRecord) -> Vec<(&str, usize)> {
    let mut informative: Vec<(usize, &str, f64)> = rec
        .importances
        .iter()
        .enumerate()
        .filter(|(_, (_, v))| **v > 0.0)
        .map(|(i, (k, v))| (i, k.as_str(), *v))
        .collect();
    informative.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    informative
        .into_iter()
        .enumerate()
        .map(|(pos, (_, name, _))| (name, pos + 1))
        .collect()
}

/// Score every feature of the run over the `ranked` trees. Entries come back
/// by descending score, ties in the run's initial feature order.
pub fn feature_rank(run: &ExperimentRun, ranked: &[TreeRank]) -> Result<Vec<RankEntry>> {
    let names = run.feature_names();
    let mut contributions: Vec<Vec<Contribution>> = vec![Vec::new(); names.len()];
    for tree in ranked {
        let rec = run.records.get(tree.iteration).ok_or_else(|| {
            Error::InvalidInput(format!("ranked tree {} is not in the run", tree.iteration))
        })?;
        for (name, f_rank) in feature_positions(rec) {
            let idx = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidInput(format!("feature {name} is not in the run")))?;
            let c = Contribution {
                iteration: tree.iteration,
                dt_rank: tree.dt_rank,
                f_rank,
                stability_term: tree.stability_ratio,
                informative_term: tree.informative_ratio,
                tree_term: 1.0 / tree.dt_rank as f64,
                feature_term: 1.0 / f_rank as f64,
                value: 0.0,
            };
            let value = (c.stability_term + c.informative_term + c.tree_term + c.feature_term) / 4.0;
            contributions[idx].push(Contribution { value, ..c });
        }
    }
    let mut entries: Vec<(usize, RankEntry)> = names
        .iter()
        .zip(contributions)
        .enumerate()
        .map(|(i, (name, contributions))| {
            let id = name.parse::<FeatureId>().ok();
            (
                i,
                RankEntry {
                    feature: name.clone(),
                    channel: id.map(|f| f.channel),
                    freq_hz: id.map(|f| f.freq_hz),
                    rank_value: contributions.iter().fold(0.0, |acc, c| acc + c.value),
                    contributions,
                },
            )
        })
        .collect();
    entries.sort_by(|a, b| b.1.rank_value.total_cmp(&a.1.rank_value).then(a.0.cmp(&b.0)));
    Ok(entries.into_iter().map(|(_, e)| e).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub zero: usize,
    pub below_one: usize,
    pub one_to_three: usize,
    pub above_three: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopFeature {
    pub position: usize,
    pub feature: String,
    pub channel: Option<u8>,
    pub freq_hz: Option<u16>,
    pub rank_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub n_ranked_trees: usize,
    pub histogram: RankHistogram,
    pub top: Vec<TopFeature>,
}

/// Bucket counts `{0, (0,1), [1,3], >3}` and the ten best features.
pub fn rank_report(entries: &[RankEntry], n_ranked_trees: usize) -> RankReport {
    let mut h = RankHistogram {
        zero: 0,
        below_one: 0,
        one_to_three: 0,
        above_three: 0,
    };
    for e in entries {
        let v = e.rank_value;
        if v == 0.0 {
            h.zero += 1;
        } else if v < 1.0 {
            h.below_one += 1;
        } else if v <= 3.0 {
            h.one_to_three += 1;
        } else {
            h.above_three += 1;
        }
    }
    RankReport {
        n_ranked_trees,
        histogram: h,
        top: entries
            .iter()
            .take(10)
            .enumerate()
            .map(|(i, e)| TopFeature {
                position: i + 1,
                feature: e.feature.clone(),
                channel: e.channel,
                freq_hz: e.freq_hz,
                rank_value: e.rank_value,
            })
            .collect(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `ranks.csv`, `ranks.json`, `rank_histogram.csv`, `top10.csv` and
/// `rank_report.json` into `dir`.
pub fn write_rank_outputs(dir: &Path, ranked: &[TreeRank], entries: &[RankEntry], report: &RankReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("feature,channel,freq_hz,rank_value,n_contributing_trees\n");
    for e in entries {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.feature,
            opt(e.channel),
            opt(e.freq_hz),
            e.rank_value,
            e.n_contributing_trees()
        ));
    }
    let p = dir.join("ranks.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;

    #[derive(Serialize)]
    struct RanksJson<'a> {
        trees: &'a [TreeRank],
        entries: &'a [RankEntry],
    }
    crate::elimination::write_json(&dir.join("ranks.json"), &RanksJson { trees: ranked, entries })?;

    let h = &report.histogram;
    let hist = format!(
        "bucket,count\nzero,{}\nbelow_one,{}\none_to_three,{}\nabove_three,{}\n",
        h.zero, h.below_one, h.one_to_three, h.above_three
    );
    let p = dir.join("rank_histogram.csv");
    std::fs::write(&p, hist).map_err(|e| Error::io(&p, e))?;

    let mut top = String::from("position,feature,channel,freq_hz,rank_value\n");
    for t in &report.top {
        top.push_str(&format!(
            "{},{},{},{},{}\n",
            t.position,
            t.feature,
            opt(t.channel),
            opt(t.freq_hz),
            t.rank_value
        ));
    }
    let p = dir.join("top10.csv");
    std::fs::write(&p, top).map_err(|e| Error::io(&p, e))?;
    crate::elimination::write_json(&dir.join("rank_report.json"), report)
}
