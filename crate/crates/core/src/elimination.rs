//! Iterative elimination: grid-search a tree on the active features, refit the
//! winner on all rows, drop its most (or least) important feature, repeat
//! down to a single feature.
//!
//! A run directory holds `records.jsonl` (one record per iteration, appended
//! as soon as the iteration finishes), `manifest.json` and `summary.csv`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::Exec;
use crate::selection::{grid_search, stratified_folds, GridSpec};
use crate::spectral::FeatureTable;
use crate::tree::{fit, Dataset, HyperParams};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalDirection {
    /// Drop the most important feature.
    #[default]
    Top,
    /// Drop the least important feature.
    Bottom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EliminationConfig {
    pub grid: GridSpec,
    pub remove: RemovalDirection,
    pub n_folds: usize,
}

impl Default for EliminationConfig {
    fn default() -> Self {
        EliminationConfig {
            grid: GridSpec::default(),
            remove: RemovalDirection::Top,
            n_folds: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub iteration: usize,
    pub feature_names: Vec<String>,
    pub n_features: usize,
    pub grid_index: usize,
    pub best_hp: HyperParams,
    pub fold_scores: Vec<f64>,
    pub mean_f1: f64,
    /// Refit importances, in active-feature order.
    pub importances: IndexMap<String, f64>,
    pub removed_feature: String,
    pub n_informative: usize,
}

impl ExperimentRecord {
    pub fn informative_features(&self) -> Vec<&str> {
        informative_features(self)
    }
}

/// Features with non-zero importance in `record`.
pub fn informative_features(record: &ExperimentRecord) -> Vec<&str> {
    record
        .importances
        .iter()
        .filter(|(_, v)| **v > 0.0)
        .map(|(k, _)| k.as_str())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub fold_seed: u64,
    pub tree_seed: u64,
    pub dataset_fingerprint: String,
    pub n_rows: usize,
    pub feature_names: Vec<String>,
    pub config: EliminationConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub manifest: RunManifest,
    pub records: Vec<ExperimentRecord>,
}

impl ExperimentRun {
    /// Initial feature order (the canonical order of the source table).
    pub fn feature_names(&self) -> &[String] {
        &self.manifest.feature_names
    }
}

pub fn manifest_for(table: &FeatureTable, config: &EliminationConfig, seed: u64) -> RunManifest {
    RunManifest {
        seed,
        fold_seed: crate::seed::derive(seed, "folds"),
        tree_seed: crate::seed::derive(seed, "tree"),
        dataset_fingerprint: table.fingerprint(),
        n_rows: table.n_rows(),
        feature_names: table.feature_names().to_vec(),
        config: config.clone(),
    }
}

/// Run the whole elimination in memory.
pub fn run_elimination(table: &FeatureTable, config: &EliminationConfig, seed: u64, exec: &Exec) -> Result<ExperimentRun> {
    run_elimination_from(table, config, seed, exec, Vec::new(), |_| Ok(()))
}

/// Run the elimination, replaying `prior` records first (they must be a
/// prefix of this run) and handing each new record to `on_record`.
pub fn run_elimination_from<F>(
    table: &FeatureTable,
    config: &EliminationConfig,
    seed: u64,
    exec: &Exec,
    prior: Vec<ExperimentRecord>,
    mut on_record: F,
) -> Result<ExperimentRun>
where
    F: FnMut(&ExperimentRecord) -> Result<()>,
{
    config.grid.validate()?;
    let manifest = manifest_for(table, config, seed);
    let labels = table.labels();
    let folds = stratified_folds(&labels, config.n_folds, manifest.fold_seed)?;
    let names = table.feature_names();

    let mut active: Vec<usize> = (0..table.n_features()).collect();
    for (i, rec) in prior.iter().enumerate() {
        let expected: Vec<&str> = active.iter().map(|&j| names[j].as_str()).collect();
        if rec.iteration != i || rec.feature_names != expected {
            return Err(Error::Config(format!(
                "checkpoint record {i} does not match this dataset and configuration"
            )));
        }
        let pos = active
            .iter()
            .position(|&j| names[j] == rec.removed_feature)
            .ok_or_else(|| Error::Config(format!("checkpoint record {i} removes unknown feature")))?;
        active.remove(pos);
    }

    let mut records = prior;
    while !active.is_empty() {
        let iteration = records.len();
        let x: Vec<f64> = table
            .rows()
            .iter()
            .flat_map(|r| active.iter().map(move |&j| r[j]))
            .collect();
        let data = Dataset::new(&x, active.len(), &labels)?;
        let gs = grid_search(&data, &config.grid, &folds, manifest.tree_seed, exec)?;
        let model = fit(&data, &gs.best.hp)?;
        let imp = model.importances();
        let pick = removal_index(imp, config.remove);
        let importances: IndexMap<String, f64> = active
            .iter()
            .zip(imp)
            .map(|(&j, &v)| (names[j].clone(), v))
            .collect();
        let rec = ExperimentRecord {
            iteration,
            feature_names: active.iter().map(|&j| names[j].clone()).collect(),
            n_features: active.len(),
            grid_index: gs.best.grid_index,
            best_hp: gs.best.hp,
            fold_scores: gs.best.fold_scores,
            mean_f1: gs.best.mean_score,
            n_informative: imp.iter().filter(|v| **v > 0.0).count(),
            importances,
            removed_feature: names[active[pick]].clone(),
        };
        log::info!(
            "iteration {iteration}: {} features, {} informative, best mean F1 {:.4}, removing {}",
            rec.n_features,
            rec.n_informative,
            rec.mean_f1,
            rec.removed_feature
        );
        on_record(&rec)?;
        records.push(rec);
        active.remove(pick);
    }
    Ok(ExperimentRun { manifest, records })
}

/// Position to remove. Ties go to the lowest position, which is the lowest
/// canonical index because active features stay in canonical order. An
/// all-zero vector removes position 0 in either direction.
fn removal_index(importances: &[f64], direction: RemovalDirection) -> usize {
    let mut pick = 0;
    for (i, &v) in importances.iter().enumerate() {
        let better = match direction {
            RemovalDirection::Top => v > importances[pick],
            RemovalDirection::Bottom => v < importances[pick],
        };
        if better {
            pick = i;
        }
    }
    pick
}

/// Run into `dir`, writing records as they complete. With `resume`, complete
/// records already in `dir` are kept (a trailing partial line is dropped) and
/// the run continues after them.
pub fn run_to_dir(
    table: &FeatureTable,
    config: &EliminationConfig,
    seed: u64,
    exec: &Exec,
    dir: &Path,
    resume: bool,
) -> Result<ExperimentRun> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = manifest_for(table, config, seed);
    let manifest_path = dir.join(MANIFEST_FILE);
    let records_path = dir.join(RECORDS_FILE);

    let prior = if resume && records_path.exists() {
        let existing = read_manifest(&manifest_path)?;
        if existing != manifest {
            return Err(Error::Config(format!(
                "{}: cannot resume, manifest differs from the current dataset/config/seed",
                manifest_path.display()
            )));
        }
        let (records, valid_len) = read_records_prefix(&records_path)?;
        let f = OpenOptions::new()
            .write(true)
            .open(&records_path)
            .map_err(|e| Error::io(&records_path, e))?;
        f.set_len(valid_len).map_err(|e| Error::io(&records_path, e))?;
        log::info!("resuming after {} complete records", records.len());
        records
    } else {
        File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
        Vec::new()
    };
    write_json(&manifest_path, &manifest)?;

    let mut out = OpenOptions::new()
        .append(true)
        .open(&records_path)
        .map_err(|e| Error::io(&records_path, e))?;
    let run = run_elimination_from(table, config, seed, exec, prior, |rec| {
        let mut line = serde_json::to_string(rec)?;
        line.push('\n');
        out.write_all(line.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&records_path, e))
    })?;
    write_summary(&run, &dir.join(SUMMARY_FILE))?;
    Ok(run)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Complete, parseable records and the byte length they occupy.
fn read_records_prefix(path: &Path) -> Result<(Vec<ExperimentRecord>, u64)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut records = Vec::new();
    let mut valid = 0u64;
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        match serde_json::from_str::<ExperimentRecord>(line.trim_end()) {
            Ok(r) => records.push(r),
            Err(_) => break,
        }
        valid += n as u64;
    }
    Ok((records, valid))
}

/// Load a finished (or partial) run directory.
pub fn read_run(dir: &Path) -> Result<ExperimentRun> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(RECORDS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.clone(),
                line: i as u64 + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<ExperimentRecord>>>()?;
    if records.is_empty() {
        return Err(invalid!("{}: run has no records", path.display()));
    }
    Ok(ExperimentRun { manifest, records })
}

pub fn write_summary(run: &ExperimentRun, path: &Path) -> Result<()> {
    let mut s = String::from("iteration,n_features,n_informative,mean_f1\n");
    for r in &run.records {
        s.push_str(&format!("{},{},{},{}\n", r.iteration, r.n_features, r.n_informative, r.mean_f1));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
