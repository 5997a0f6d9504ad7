//! Welch PSD estimation and the per-trial PSD feature table.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::Exec;
use crate::recording::Recording;

pub const N_CHANNELS: u8 = 3;
pub const MAX_FREQ_HZ: u16 = 450;
pub const N_FEATURES: usize = N_CHANNELS as usize * MAX_FREQ_HZ as usize;
pub const META_COLUMNS: [&str; 4] = ["subject_id", "rest_period_min", "experiment", "sequence"];
pub const REST_CLASSES: [u32; 3] = [1, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Taper {
    Hann,
    Rectangular,
}

impl Taper {
    /// Periodic (DFT-even) window of length `n`.
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Taper::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Taper::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Taper,
    /// Remove each segment's mean before windowing.
    pub detrend: bool,
}

impl Default for WelchParams {
    fn default() -> Self {
        WelchParams {
            segment_len: 1000,
            overlap: 0.5,
            window: Taper::Hann,
            detrend: true,
        }
    }
}

impl WelchParams {
    fn step(&self) -> usize {
        let noverlap = (self.overlap * self.segment_len as f64).floor() as usize;
        self.segment_len - noverlap
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 {
            return Err(invalid!("segment length must be at least 2, got {}", self.segment_len));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(invalid!("overlap must be in [0, 1), got {}", self.overlap));
        }
        Ok(())
    }

    /// Number of full segments that fit in `n` samples.
    pub fn n_segments(&self, n: usize) -> usize {
        if n < self.segment_len {
            0
        } else {
            (n - self.segment_len) / self.step() + 1
        }
    }
}

/// One-sided PSD per channel on the grid `k * fs / segment_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct Psd {
    pub channel_names: Vec<String>,
    pub freqs_hz: Vec<f64>,
    /// `power[channel][bin]`, V^2/Hz.
    pub power: Vec<Vec<f64>>,
}

impl Psd {
    pub fn resolution_hz(&self) -> f64 {
        self.freqs_hz.get(1).copied().unwrap_or(0.0) - self.freqs_hz[0]
    }

    /// Integrated power of one channel, `sum(P) * df`.
    pub fn total_power(&self, channel: usize) -> f64 {
        self.power[channel].iter().sum::<f64>() * self.resolution_hz()
    }

    /// Bin index holding exactly `f_hz`, if the grid contains it.
    pub fn bin_of(&self, f_hz: f64) -> Option<usize> {
        let df = self.resolution_hz();
        if df <= 0.0 {
            return None;
        }
        let k = (f_hz / df).round();
        if k < 0.0 || (k * df - f_hz).abs() > 1e-9 * f_hz.max(1.0) {
            return None;
        }
        let k = k as usize;
        (k < self.freqs_hz.len()).then_some(k)
    }
}

struct WelchPlan {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    scale: f64,
}

impl WelchPlan {
    fn new(params: &WelchParams, fs: f64) -> Self {
        let window = params.window.coefficients(params.segment_len);
        let wss: f64 = window.iter().map(|w| w * w).sum();
        WelchPlan {
            fft: FftPlanner::new().plan_fft_forward(params.segment_len),
            window,
            scale: 1.0 / (fs * wss),
        }
    }

    fn channel(&self, x: &[f64], params: &WelchParams) -> Vec<f64> {
        let l = params.segment_len;
        let n_bins = l / 2 + 1;
        let n_seg = params.n_segments(x.len());
        let mut acc = vec![0.0; n_bins];
        let mut buf = vec![Complex::new(0.0, 0.0); l];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for s in 0..n_seg {
            let seg = &x[s * params.step()..s * params.step() + l];
            let mean = if params.detrend {
                seg.iter().sum::<f64>() / l as f64
            } else {
                0.0
            };
            for ((b, v), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new((v - mean) * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b.norm_sqr();
            }
        }
        let norm = self.scale / n_seg as f64;
        for (k, a) in acc.iter_mut().enumerate() {
            // fold negative frequencies onto the one-sided grid
            let one_sided = if k == 0 || (l % 2 == 0 && k == l / 2) { 1.0 } else { 2.0 };
            *a *= norm * one_sided;
        }
        acc
    }
}

/// Welch's averaged, windowed periodogram (one-sided density).
pub fn welch_psd(rec: &Recording, params: &WelchParams, exec: &Exec) -> Result<Psd> {
    params.validate()?;
    if rec.n_samples() < params.segment_len {
        return Err(invalid!(
            "recording of {} samples is shorter than one {}-sample segment",
            rec.n_samples(),
            params.segment_len
        ));
    }
    let fs = rec.sample_rate_hz();
    let plan = WelchPlan::new(params, fs);
    let power = exec.map(rec.channels(), |c| plan.channel(c, params));
    let df = fs / params.segment_len as f64;
    Ok(Psd {
        channel_names: rec.names().to_vec(),
        freqs_hz: (0..params.segment_len / 2 + 1).map(|k| k as f64 * df).collect(),
        power,
    })
}

/// A PSD feature `ch{channel}_{freq_hz}Hz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureId {
    pub channel: u8,
    pub freq_hz: u16,
}

impl FeatureId {
    pub fn new(channel: u8, freq_hz: u16) -> Result<Self> {
        if !(1..=N_CHANNELS).contains(&channel) || !(1..=MAX_FREQ_HZ).contains(&freq_hz) {
            return Err(invalid!("feature ch{channel}_{freq_hz}Hz is outside ch1..3 x 1..450 Hz"));
        }
        Ok(FeatureId { channel, freq_hz })
    }

    /// Position in the full channel-major, frequency-minor ordering.
    pub fn canonical_index(&self) -> usize {
        (self.channel as usize - 1) * MAX_FREQ_HZ as usize + (self.freq_hz as usize - 1)
    }

    /// All 1350 features in canonical order.
    pub fn all() -> impl Iterator<Item = FeatureId> {
        (1..=N_CHANNELS).flat_map(|c| (1..=MAX_FREQ_HZ).map(move |f| FeatureId { channel: c, freq_hz: f }))
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}_{}Hz", self.channel, self.freq_hz)
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Schema(format!("`{s}` is not a feature name of the form ch{{i}}_{{freq}}Hz"));
        let rest = s.strip_prefix("ch").ok_or_else(bad)?;
        let (ch, rest) = rest.split_once('_').ok_or_else(bad)?;
        let freq = rest.strip_suffix("Hz").ok_or_else(bad)?;
        if ch.starts_with('0') || freq.starts_with('0') {
            return Err(bad());
        }
        let channel: u8 = ch.parse().map_err(|_| bad())?;
        let freq_hz: u16 = freq.parse().map_err(|_| bad())?;
        FeatureId::new(channel, freq_hz).map_err(|_| bad())
    }
}

/// Trial metadata carried alongside the PSD features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub subject_id: u32,
    pub rest_period_min: u32,
    pub experiment: u32,
    pub sequence: u32,
}

impl TrialMeta {
    pub fn validate(&self) -> Result<()> {
        if !REST_CLASSES.contains(&self.rest_period_min) {
            return Err(Error::Schema(format!(
                "rest_period_min must be one of 1, 5, 10; got {}",
                self.rest_period_min
            )));
        }
        if self.sequence > 2 {
            return Err(Error::Schema(format!("sequence must be 0, 1 or 2; got {}", self.sequence)));
        }
        Ok(())
    }
}

/// Which metadata columns a feature CSV carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaLayout {
    /// `subject_id,rest_period_min,experiment,sequence` then features.
    #[default]
    Full,
    /// `rest_period_min` then features. Other metadata read as 0.
    LabelOnly,
}

/// Observations x named PSD features, with class label `rest_period_min`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    features: Vec<FeatureId>,
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    meta: Vec<TrialMeta>,
    layout: MetaLayout,
}

impl FeatureTable {
    pub fn new(features: Vec<FeatureId>, rows: Vec<Vec<f64>>, meta: Vec<TrialMeta>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Schema("feature table has no feature columns".into()));
        }
        if let Some(w) = features.windows(2).find(|w| w[0].canonical_index() >= w[1].canonical_index()) {
            return Err(Error::Schema(format!(
                "feature columns out of canonical order or duplicated at {} / {}",
                w[0], w[1]
            )));
        }
        if rows.len() != meta.len() {
            return Err(Error::Schema(format!("{} rows but {} metadata records", rows.len(), meta.len())));
        }
        for (i, (row, m)) in rows.iter().zip(&meta).enumerate() {
            if row.len() != features.len() {
                return Err(Error::Schema(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    features.len()
                )));
            }
            if let Some((j, v)) = row.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::Schema(format!("row {i}, column {}: invalid PSD value {v}", features[j])));
            }
            m.validate()?;
        }
        let names = features.iter().map(ToString::to_string).collect();
        Ok(FeatureTable {
            features,
            names,
            rows,
            meta,
            layout: MetaLayout::Full,
        })
    }

    pub fn from_rows(rows: Vec<(TrialMeta, Vec<f64>)>) -> Result<Self> {
        let (meta, rows) = rows.into_iter().unzip();
        Self::new(FeatureId::all().collect(), rows, meta)
    }

    pub fn with_layout(mut self, layout: MetaLayout) -> Self {
        self.layout = layout;
        self
    }

    pub fn layout(&self) -> MetaLayout {
        self.layout
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn meta(&self) -> &[TrialMeta] {
        &self.meta
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.meta.iter().map(|m| m.rest_period_min).collect()
    }

    /// Counts per class in `REST_CLASSES` order.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for m in &self.meta {
            if let Some(i) = REST_CLASSES.iter().position(|k| *k == m.rest_period_min) {
                c[i] += 1;
            }
        }
        c
    }

    /// Keep only `keep` (any order, canonical order in the result).
    pub fn select(&self, keep: &[FeatureId]) -> Result<Self> {
        let mut keep = keep.to_vec();
        keep.sort();
        keep.dedup();
        let cols = keep
            .iter()
            .map(|f| {
                self.features
                    .iter()
                    .position(|g| g == f)
                    .ok_or_else(|| Error::Schema(format!("table has no column {f}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| cols.iter().map(|&j| r[j]).collect())
            .collect();
        Ok(Self::new(keep, rows, self.meta.clone())?.with_layout(self.layout))
    }

    /// Row-major matrix of the feature values.
    pub fn matrix(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    fn header(&self) -> Vec<String> {
        let meta: &[&str] = match self.layout {
            MetaLayout::Full => &META_COLUMNS,
            MetaLayout::LabelOnly => &META_COLUMNS[1..2],
        };
        meta.iter().map(|s| s.to_string()).chain(self.names.iter().cloned()).collect()
    }

    /// Canonical CSV bytes (also the basis of the dataset fingerprint).
    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        // writing into a Vec cannot fail
        w.write_record(self.header()).expect("in-memory csv");
        for (m, row) in self.meta.iter().zip(&self.rows) {
            let mut rec: Vec<String> = match self.layout {
                MetaLayout::Full => vec![
                    m.subject_id.to_string(),
                    m.rest_period_min.to_string(),
                    m.experiment.to_string(),
                    m.sequence.to_string(),
                ],
                MetaLayout::LabelOnly => vec![m.rest_period_min.to_string()],
            };
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }

    pub fn fingerprint(&self) -> String {
        crate::hex_digest(&self.to_csv_bytes())
    }
}

/// Build one table row from a 3-channel PSD on a grid covering 1..450 Hz.
pub fn extract_features(psd: &Psd, meta: TrialMeta) -> Result<(TrialMeta, Vec<f64>)> {
    meta.validate()?;
    if psd.power.len() != N_CHANNELS as usize {
        return Err(invalid!(
            "PSD has {} channels, expected {N_CHANNELS}",
            psd.power.len()
        ));
    }
    let mut bins = Vec::with_capacity(MAX_FREQ_HZ as usize);
    for f in 1..=MAX_FREQ_HZ {
        let k = psd.bin_of(f64::from(f)).ok_or_else(|| {
            invalid!(
                "PSD grid (df = {} Hz, max {} Hz) has no bin at {f} Hz",
                psd.resolution_hz(),
                psd.freqs_hz.last().copied().unwrap_or(0.0)
            )
        })?;
        bins.push(k);
    }
    let row = psd
        .power
        .iter()
        .flat_map(|p| bins.iter().map(move |&k| p[k]))
        .collect();
    Ok((meta, row))
}

/// Welch + extraction over many trials; rows keep trial order.
pub fn featurize(trials: &[(Recording, TrialMeta)], params: &WelchParams, exec: &Exec) -> Result<FeatureTable> {
    let rows = exec
        .map(trials, |(rec, meta)| {
            welch_psd(rec, params, &Exec::SEQUENTIAL).and_then(|p| extract_features(&p, *meta))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::from_rows(rows)
}

pub fn save_feature_csv(table: &FeatureTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_csv_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_feature_csv(path: &Path) -> Result<FeatureTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&bytes, path)
}

fn parse_feature_csv(bytes: &[u8], path: &Path) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();

    let (layout, n_meta) = if header.len() >= 4 && header[..4] == META_COLUMNS {
        (MetaLayout::Full, 4)
    } else if header.first().map(String::as_str) == Some(META_COLUMNS[1]) {
        (MetaLayout::LabelOnly, 1)
    } else {
        let missing: Vec<&str> = META_COLUMNS
            .iter()
            .copied()
            .filter(|m| !header.iter().any(|h| h == m))
            .collect();
        return Err(Error::Schema(format!(
            "{}: header must start with {} or rest_period_min; missing {}",
            path.display(),
            META_COLUMNS.join(","),
            missing.join(",")
        )));
    };

    let mut features = Vec::new();
    let mut bad = Vec::new();
    for h in &header[n_meta..] {
        match h.parse::<FeatureId>() {
            Ok(f) => features.push(f),
            Err(_) => bad.push(h.as_str()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Schema(format!(
            "{}: unrecognised columns: {}",
            path.display(),
            bad.join(",")
        )));
    }

    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(perr(format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        let int = |j: usize| -> Result<u32> {
            let s = rec[j].trim();
            s.parse::<u32>()
                .or_else(|_| {
                    // integral floats such as `5.0`
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v <= f64::from(u32::MAX))
                        .map(|v| v as u32)
                        .ok_or(())
                })
                .map_err(|_| perr(format!("column {}: not an integer: `{s}`", header[j])))
        };
        let m = match layout {
            MetaLayout::Full => TrialMeta {
                subject_id: int(0)?,
                rest_period_min: int(1)?,
                experiment: int(2)?,
                sequence: int(3)?,
            },
            MetaLayout::LabelOnly => TrialMeta {
                subject_id: 0,
                rest_period_min: int(0)?,
                experiment: 0,
                sequence: 0,
            },
        };
        m.validate().map_err(|e| perr(e.to_string()))?;
        let row = (n_meta..header.len())
            .map(|j| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| perr(format!("column {}: not a number: `{}`", header[j], &rec[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        meta.push(m);
        rows.push(row);
    }
    Ok(FeatureTable::new(features, rows, meta)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .with_layout(layout))
}
