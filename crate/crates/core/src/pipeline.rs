//! Command-level orchestration: configuration, directory layouts and the
//! files each command reads and writes.
//!
//! A recordings directory holds one CSV per trial plus `trials.csv`, which
//! maps file names to trial metadata.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::elimination::{self, EliminationConfig, ExperimentRun, RemovalDirection};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::preproc::{preprocess, PreprocessSpec};
use crate::rank::{feature_rank, rank_report, rank_trees, write_rank_outputs, RankReport, RankScope};
use crate::recording::{read_csv, write_csv, Recording};
use crate::selection::GridSpec;
use crate::spectral::{featurize, load_feature_csv, save_feature_csv, FeatureTable, MetaLayout, TrialMeta, WelchParams};
use crate::stats::{run_stats, write_run_stats, RunStats};
use crate::synth::{generate_recordings, restrict_to_desk, SynthSpec};

pub const TRIALS_FILE: &str = "trials.csv";
pub const FEATURES_FILE: &str = "features.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    Full,
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridChoice {
    Preset(GridPreset),
    Custom(GridSpec),
}

impl GridChoice {
    pub fn spec(&self) -> GridSpec {
        match self {
            GridChoice::Preset(GridPreset::Full) => GridSpec::default(),
            GridChoice::Preset(GridPreset::Desk) => GridSpec::desk(),
            GridChoice::Custom(g) => g.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Recordings directory or feature CSV, depending on the command.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Needed only for recordings without a time column.
    pub sample_rate_hz: Option<f64>,
    pub preprocess: PreprocessSpec,
    pub welch: WelchParams,
    pub feature_layout: MetaLayout,
    pub grid: GridChoice,
    pub remove: RemovalDirection,
    pub n_folds: usize,
    pub rank_scope: RankScope,
    pub ci_level: f64,
    pub seed: u64,
    pub synth: SynthSpec,
    /// Restrict synthetic feature tables to this many features (planted
    /// lines plus evenly spread distractors).
    pub synth_features: Option<usize>,
    /// Print the published reference figures next to the report.
    pub published_reference: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            output: None,
            sample_rate_hz: None,
            preprocess: PreprocessSpec::default(),
            welch: WelchParams::default(),
            feature_layout: MetaLayout::Full,
            grid: GridChoice::Preset(GridPreset::Full),
            remove: RemovalDirection::Top,
            n_folds: 3,
            rank_scope: RankScope::Selected,
            ci_level: 0.95,
            seed: 0,
            synth: SynthSpec::default(),
            synth_features: None,
            published_reference: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(fs) = self.sample_rate_hz {
            self.preprocess.filter.validate(fs).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.preprocess.baseline_window_s > 0.0) {
            return Err(Error::Config("preprocess.baseline_window_s must be > 0".into()));
        }
        self.welch.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.grid.spec().validate()?;
        if self.n_folds < 2 {
            return Err(Error::Config(format!("n_folds must be >= 2, got {}", self.n_folds)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level must be in (0, 1), got {}", self.ci_level)));
        }
        self.synth.validate().map_err(|e| Error::Config(format!("synth: {e}")))?;
        Ok(())
    }

    pub fn elimination(&self) -> EliminationConfig {
        EliminationConfig {
            grid: self.grid.spec(),
            remove: self.remove,
            n_folds: self.n_folds,
        }
    }

    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("no input path given".into()))
    }

    fn output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| Error::Config("no output directory given".into()))
    }
}

/// One row of `trials.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub file: String,
    pub subject_id: u32,
    pub rest_period_min: u32,
    pub experiment: u32,
    pub sequence: u32,
}

impl TrialEntry {
    pub fn new(file: String, m: TrialMeta) -> Self {
        TrialEntry {
            file,
            subject_id: m.subject_id,
            rest_period_min: m.rest_period_min,
            experiment: m.experiment,
            sequence: m.sequence,
        }
    }

    pub fn meta(&self) -> TrialMeta {
        TrialMeta {
            subject_id: self.subject_id,
            rest_period_min: self.rest_period_min,
            experiment: self.experiment,
            sequence: self.sequence,
        }
    }
}

pub fn read_trials(dir: &Path) -> Result<Vec<TrialEntry>> {
    let path = dir.join(TRIALS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(&path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<TrialEntry>().enumerate() {
        let entry = row.map_err(|e| Error::Parse {
            path: path.clone(),
            line: i as u64 + 2,
            message: e.to_string(),
        })?;
        entry.meta().validate().map_err(|e| Error::Parse {
            path: path.clone(),
            line: i as u64 + 2,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no input trials", path.display())));
    }
    Ok(out)
}

pub fn write_trials(dir: &Path, trials: &[TrialEntry]) -> Result<()> {
    let path = dir.join(TRIALS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    for t in trials {
        w.serialize(t).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Trial CSVs in `dir`, sorted by name, excluding `trials.csv`.
fn recording_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_csv = p.extension().is_some_and(|e| e == "csv");
        let is_index = p.file_name().is_some_and(|n| n == TRIALS_FILE);
        if p.is_file() && is_csv && !is_index {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no input trials", dir.display())));
    }
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedFile {
    pub file: String,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub params: PreprocessSpec,
    pub files: Vec<PreprocessedFile>,
}

/// Baseline correction, band limiting and notch filtering for every trial
/// CSV in the input directory. `trials.csv` is carried over when present.
pub fn cmd_preprocess(cfg: &RunConfig, exec: &Exec) -> Result<PreprocessManifest> {
    let (input, output) = (cfg.input()?, cfg.output()?);
    let files = recording_files(input)?;
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let done = exec.map(&files, |path| -> Result<PreprocessedFile> {
        let rec = read_csv(path, cfg.sample_rate_hz)?;
        let clean = preprocess(&rec, &cfg.preprocess, &Exec::SEQUENTIAL)
            .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let name = path.file_name().expect("listed file").to_string_lossy().into_owned();
        write_csv(&clean, &output.join(&name))?;
        Ok(PreprocessedFile {
            file: name,
            n_samples: clean.n_samples(),
            sample_rate_hz: clean.sample_rate_hz(),
        })
    });
    let manifest = PreprocessManifest {
        params: cfg.preprocess.clone(),
        files: done.into_iter().collect::<Result<_>>()?,
    };
    let index = input.join(TRIALS_FILE);
    if index.exists() {
        let to = output.join(TRIALS_FILE);
        std::fs::copy(&index, &to).map_err(|e| Error::io(&to, e))?;
    }
    elimination::write_json(&output.join("preprocess_manifest.json"), &manifest)?;
    log::info!("preprocessed {} trials", manifest.files.len());
    Ok(manifest)
}

fn load_trials(dir: &Path, sample_rate_hz: Option<f64>, exec: &Exec) -> Result<Vec<(Recording, TrialMeta)>> {
    let entries = read_trials(dir)?;
    exec.map(&entries, |t| read_csv(&dir.join(&t.file), sample_rate_hz).map(|r| (r, t.meta())))
        .into_iter()
        .collect()
}

/// Welch features for every trial listed in the input directory's
/// `trials.csv`, written to `features.csv`.
pub fn cmd_featurize(cfg: &RunConfig, exec: &Exec) -> Result<FeatureTable> {
    let (input, output) = (cfg.input()?, cfg.output()?);
    let trials = load_trials(input, cfg.sample_rate_hz, exec)?;
    let table = featurize(&trials, &cfg.welch, exec)?.with_layout(cfg.feature_layout);
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    save_feature_csv(&table, &output.join(FEATURES_FILE))?;
    log::info!("featurized {} trials into {} features", table.n_rows(), table.n_features());
    Ok(table)
}

/// Synthetic recordings (`recordings/` with `trials.csv`), the spec used,
/// and their feature table.
pub fn cmd_synth(cfg: &RunConfig, exec: &Exec) -> Result<FeatureTable> {
    let output = cfg.output()?;
    let spec = SynthSpec {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let trials = generate_recordings(&spec, exec)?;
    let rec_dir = output.join("recordings");
    std::fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let width = trials.len().to_string().len();
    let entries: Vec<TrialEntry> = (0..trials.len())
        .map(|i| TrialEntry::new(format!("trial_{i:0width$}.csv"), trials[i].1))
        .collect();
    let written = exec.map_range(trials.len(), |i| write_csv(&trials[i].0, &rec_dir.join(&entries[i].file)));
    written.into_iter().collect::<Result<Vec<()>>>()?;
    write_trials(&rec_dir, &entries)?;
    elimination::write_json(&output.join("synth_spec.json"), &spec)?;
    let mut table = featurize(&trials, &cfg.welch, exec)?;
    if let Some(n) = cfg.synth_features {
        table = restrict_to_desk(&table, &spec, n)?;
    }
    let table = table.with_layout(cfg.feature_layout);
    save_feature_csv(&table, &output.join(FEATURES_FILE))?;
    log::info!("synthesized {} trials, {} features", table.n_rows(), table.n_features());
    Ok(table)
}

/// The elimination run over the feature CSV at `input`, into `output`.
pub fn cmd_run(cfg: &RunConfig, exec: &Exec, resume: bool) -> Result<ExperimentRun> {
    let (input, output) = (cfg.input()?, cfg.output()?);
    let table = load_feature_csv(input)?;
    let run = elimination::run_to_dir(&table, &cfg.elimination(), cfg.seed, exec, output, resume)?;
    elimination::write_summary(&run, &output.join(elimination::SUMMARY_FILE))?;
    Ok(run)
}

/// Rank tables for the run in `run_dir`, written to `output`.
pub fn cmd_rank(cfg: &RunConfig, run_dir: &Path) -> Result<RankReport> {
    let output = cfg.output.as_deref().unwrap_or(run_dir);
    let run = elimination::read_run(run_dir)?;
    let ranked = rank_trees(&run, cfg.rank_scope);
    let entries = feature_rank(&run, &ranked)?;
    let report = rank_report(&entries, ranked.len());
    write_rank_outputs(output, &ranked, &entries, &report)?;
    Ok(report)
}

/// Published reference figures for the original recordings and full grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub best_mean_f1: (f64, f64),
    pub median_mean_f1: (f64, f64),
    pub rank_zero: (usize, usize),
    pub rank_below_one: (usize, usize),
    pub rank_above_three: (usize, usize),
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub stats: RunStats,
    pub reference: Option<ReferenceComparison>,
}

/// Statistics for the run in `run_dir`, written to `output`. With
/// `published_reference`, the published figures are listed next to this run's
/// (ours, published) without any pass/fail judgement.
pub fn cmd_report(cfg: &RunConfig, run_dir: &Path) -> Result<Report> {
    let output = cfg.output.as_deref().unwrap_or(run_dir);
    let run = elimination::read_run(run_dir)?;
    let stats = run_stats(&run, cfg.ci_level)?;
    write_run_stats(&stats, output)?;
    let reference = if cfg.published_reference {
        let ranked = rank_trees(&run, cfg.rank_scope);
        let hist = rank_report(&feature_rank(&run, &ranked)?, ranked.len()).histogram;
        let cmp = ReferenceComparison {
            best_mean_f1: (stats.scores.best_mean_f1, 0.4974),
            median_mean_f1: (stats.scores.median_mean_f1, 0.42),
            rank_zero: (hist.zero, 97),
            rank_below_one: (hist.below_one, 827),
            rank_above_three: (hist.above_three, 3),
            note: "published figures come from the original recordings with the full grid; \
                   the published median is a lower bound"
                .into(),
        };
        elimination::write_json(&output.join("reference_comparison.json"), &cmp)?;
        Some(cmp)
    } else {
        None
    };
    Ok(Report { stats, reference })
}
