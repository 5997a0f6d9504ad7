//! Synthetic recordings with planted class-dependent spectra, and brute-force
//! reference implementations used to cross-check the tree and the metric.
//!
//! Each trial channel is band-shaped Gaussian noise (Butterworth band around
//! the class centre, jittered per trial) plus a white floor, scaled to a
//! variance of `1 / snr`, plus sinusoids at the planted frequencies whose
//! amplitude depends on the class.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::Exec;
use crate::preproc::Sos;
use crate::recording::Recording;
use crate::seed;
use crate::spectral::{FeatureId, FeatureTable, TrialMeta, N_CHANNELS, REST_CLASSES};
use crate::tree::{Criterion, HyperParams, Node, Split, Splitter, TreeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub rest_period_min: u32,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    /// Amplitude multiplier of every planted line for this class.
    pub line_gain: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedLine {
    pub channel: u8,
    pub freq_hz: u16,
}

impl PlantedLine {
    pub fn feature(&self) -> FeatureId {
        FeatureId {
            channel: self.channel,
            freq_hz: self.freq_hz,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_subjects: u32,
    pub trials_per_class: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Power of a unit-gain planted line over the noise variance.
    pub snr: f64,
    /// Std of the white floor relative to the shaped noise.
    pub noise_floor: f64,
    pub center_jitter_hz: f64,
    /// Relative std of the per-trial line amplitude.
    pub gain_jitter: f64,
    pub profiles: Vec<ClassProfile>,
    pub planted: Vec<PlantedLine>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let profile = |rest, center, gain| ClassProfile {
            rest_period_min: rest,
            center_hz: center,
            bandwidth_hz: 40.0,
            line_gain: gain,
        };
        SynthSpec {
            n_subjects: 3,
            trials_per_class: 30,
            sample_rate_hz: 1000.0,
            duration_s: 8.0,
            snr: 10.0,
            noise_floor: 0.3,
            center_jitter_hz: 5.0,
            gain_jitter: 0.1,
            profiles: vec![profile(1, 70.0, 1.0), profile(5, 85.0, 2.0), profile(10, 100.0, 3.0)],
            planted: vec![
                PlantedLine { channel: 1, freq_hz: 160 },
                PlantedLine { channel: 2, freq_hz: 230 },
                PlantedLine { channel: 3, freq_hz: 310 },
            ],
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Same spec with every class sharing the first profile's spectrum and gain.
    pub fn identical_profiles(mut self) -> Self {
        let first = self.profiles[0].clone();
        for p in &mut self.profiles {
            *p = ClassProfile {
                rest_period_min: p.rest_period_min,
                ..first.clone()
            };
        }
        self
    }

    pub fn n_trials(&self) -> usize {
        self.trials_per_class * self.profiles.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.trials_per_class == 0 {
            return Err(invalid!("n_subjects and trials_per_class must be positive"));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(invalid!("sample_rate_hz must be positive"));
        }
        let nyq = self.sample_rate_hz / 2.0;
        if nyq <= 450.0 {
            return Err(invalid!("sample rate {} Hz cannot resolve 450 Hz", self.sample_rate_hz));
        }
        if !(self.duration_s > 0.0) || ((self.duration_s * self.sample_rate_hz).round() as usize) < 1000 {
            return Err(invalid!("duration_s must give at least 1000 samples"));
        }
        if !(self.snr > 0.0) {
            return Err(invalid!("snr must be > 0, got {}", self.snr));
        }
        for (name, v) in [
            ("noise_floor", self.noise_floor),
            ("center_jitter_hz", self.center_jitter_hz),
            ("gain_jitter", self.gain_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let rests: BTreeSet<u32> = self.profiles.iter().map(|p| p.rest_period_min).collect();
        if rests.len() != self.profiles.len() || rests != REST_CLASSES.iter().copied().collect() {
            return Err(invalid!("profiles must cover rest classes 1, 5 and 10 exactly once"));
        }
        for p in &self.profiles {
            let lo = p.center_hz - p.bandwidth_hz / 2.0 - 3.0 * self.center_jitter_hz;
            let hi = p.center_hz + p.bandwidth_hz / 2.0 + 3.0 * self.center_jitter_hz;
            if !(p.bandwidth_hz > 0.0) || lo <= 0.0 || hi >= nyq {
                return Err(invalid!(
                    "profile for class {} must stay inside (0, {nyq}) Hz",
                    p.rest_period_min
                ));
            }
            if !(p.line_gain >= 0.0 && p.line_gain.is_finite()) {
                return Err(invalid!("line_gain must be finite and >= 0"));
            }
        }
        let mut seen = BTreeSet::new();
        for l in &self.planted {
            FeatureId::new(l.channel, l.freq_hz)?;
            if !seen.insert((l.channel, l.freq_hz)) {
                return Err(invalid!("planted line ch{}_{}Hz listed twice", l.channel, l.freq_hz));
            }
        }
        Ok(())
    }

    pub fn planted_features(&self) -> Vec<FeatureId> {
        let mut f: Vec<FeatureId> = self.planted.iter().map(PlantedLine::feature).collect();
        f.sort_by_key(FeatureId::canonical_index);
        f
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_variance(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    x
}

fn trial(spec: &SynthSpec, profile: &ClassProfile, trial_seed: u64) -> Result<Recording> {
    let fs = spec.sample_rate_hz;
    let n = (spec.duration_s * fs).round() as usize;
    let noise_sd = if spec.snr.is_infinite() { 0.0 } else { spec.snr.recip().sqrt() };
    let mut channels = Vec::with_capacity(N_CHANNELS as usize);
    for ch in 1..=N_CHANNELS {
        let mut rng = seed::rng(seed::derive_index(trial_seed, ch as u64));
        let jitter = spec.center_jitter_hz * rng.sample::<f64, _>(StandardNormal);
        let center = profile.center_hz + jitter;
        let lo = (center - profile.bandwidth_hz / 2.0).max(1.0);
        let hi = (center + profile.bandwidth_hz / 2.0).min(fs / 2.0 - 1.0);
        let white = gaussian(&mut rng, n);
        let shaped = Sos::butter_lowpass(2, hi, fs)?.filter(&Sos::butter_highpass(2, lo, fs)?.filter(&white));
        let floor = gaussian(&mut rng, n);
        let shaped = unit_variance(shaped);
        let mut x: Vec<f64> = shaped
            .iter()
            .zip(&floor)
            .map(|(s, w)| noise_sd * (s + spec.noise_floor * w))
            .collect();
        for line in spec.planted.iter().filter(|l| l.channel == ch) {
            let gain = profile.line_gain * (1.0 + spec.gain_jitter * rng.sample::<f64, _>(StandardNormal));
            let phase = rng.random::<f64>() * 2.0 * PI;
            let amp = 2f64.sqrt() * gain;
            let w = 2.0 * PI * line.freq_hz as f64 / fs;
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * (w * i as f64 + phase).sin();
            }
        }
        channels.push(x);
    }
    Recording::from_channels(channels, fs)
}

/// All trials, class by class in the profile order, each seeded from the spec
/// seed and its position.
pub fn generate_recordings(spec: &SynthSpec, exec: &Exec) -> Result<Vec<(Recording, TrialMeta)>> {
    spec.validate()?;
    let base = seed::derive(spec.seed, "trial");
    let out = exec.map_range(spec.n_trials(), |i| {
        let profile = &spec.profiles[i / spec.trials_per_class];
        let within = i % spec.trials_per_class;
        let meta = TrialMeta {
            subject_id: (within as u32 % spec.n_subjects) + 1,
            rest_period_min: profile.rest_period_min,
            experiment: 1,
            sequence: (within / spec.n_subjects as usize % 3) as u32,
        };
        trial(spec, profile, seed::derive_index(base, i as u64)).map(|r| (r, meta))
    });
    out.into_iter().collect()
}

/// The planted features plus `n_total - planted` distractors spread evenly
/// over the remaining canonical feature list, in canonical order.
pub fn desk_features(spec: &SynthSpec, n_total: usize) -> Result<Vec<FeatureId>> {
    let planted = spec.planted_features();
    if n_total < planted.len() {
        return Err(invalid!("{n_total} features cannot hold {} planted lines", planted.len()));
    }
    let others: Vec<FeatureId> = FeatureId::all().filter(|f| !planted.contains(f)).collect();
    let k = n_total - planted.len();
    let mut keep: Vec<FeatureId> = (0..k)
        .map(|j| others[((2 * j + 1) * others.len()) / (2 * k)])
        .chain(planted)
        .collect();
    keep.sort_by_key(FeatureId::canonical_index);
    Ok(keep)
}

/// Restrict a full table to [`desk_features`].
pub fn restrict_to_desk(table: &FeatureTable, spec: &SynthSpec, n_total: usize) -> Result<FeatureTable> {
    table.select(&desk_features(spec, n_total)?)
}

/// Largest instance accepted by [`exhaustive_tree_oracle`].
pub const ORACLE_MAX_ROWS: usize = 30;
pub const ORACLE_MAX_FEATURES: usize = 4;

fn oracle_impurity(counts: &[usize], criterion: Criterion) -> f64 {
    let n: usize = counts.iter().sum();
    let mut acc = 0.0;
    for &c in counts {
        if c == 0 {
            continue;
        }
        let p = c as f64 / n as f64;
        acc += match criterion {
            Criterion::Gini => p * (1.0 - p),
            Criterion::Entropy | Criterion::LogLoss => -p * p.ln() / 2f64.ln(),
        };
    }
    acc
}

struct OracleCtx<'a> {
    x: &'a [f64],
    d: usize,
    y: &'a [usize],
    k: usize,
    hp: &'a HyperParams,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl OracleCtx<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.k];
        rows.iter().for_each(|&r| c[self.y[r]] += 1);
        c
    }

    /// Preorder numbering: a node's children are appended after its subtree
    /// position is reserved.
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let imp = oracle_impurity(&counts, self.hp.criterion);
        let id = self.nodes.len();
        self.nodes.push(Node {
            counts: counts.clone(),
            impurity: imp,
            depth,
            split: None,
        });
        let n = rows.len();
        let allowed = n >= self.hp.min_samples_split && self.hp.max_depth.is_none_or(|m| depth < m);
        if !allowed {
            return id;
        }
        // (decrease, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..self.d {
            let values: BTreeSet<u64> = rows.iter().map(|&r| self.x[r * self.d + f].to_bits()).collect();
            let mut sorted: Vec<f64> = values.into_iter().map(f64::from_bits).collect();
            sorted.sort_by(f64::total_cmp);
            for w in sorted.windows(2) {
                let mut t = w[0] / 2.0 + w[1] / 2.0;
                if t >= w[1] || t < w[0] {
                    t = w[0];
                }
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i * self.d + f] <= t);
                if l.len() < self.min_leaf || r.len() < self.min_leaf {
                    continue;
                }
                let dec = imp
                    - l.len() as f64 / n as f64 * oracle_impurity(&self.counts(&l), self.hp.criterion)
                    - r.len() as f64 / n as f64 * oracle_impurity(&self.counts(&r), self.hp.criterion);
                let better = match best {
                    None => true,
                    Some((bd, bf, bt)) => {
                        dec > bd + crate::tree::TIE_EPS
                            || (dec >= bd - crate::tree::TIE_EPS && (f < bf || (f == bf && t < bt)))
                    }
                };
                if better {
                    best = Some((dec, f, t));
                }
            }
        }
        let Some((dec, f, t)) = best else { return id };
        if dec <= crate::tree::TIE_EPS {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i * self.d + f] <= t);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id].split = Some(Split {
            feature: f,
            threshold: t,
            left,
            right,
        });
        id
    }
}

/// Greedy CART by direct enumeration of every (feature, midpoint) split at
/// every node. Accepts the deterministic subset of hyperparameters: best
/// splitter, all features, no leaf budget.
pub fn exhaustive_tree_oracle(x: &[f64], d: usize, y: &[u32], hp: &HyperParams) -> Result<TreeModel> {
    let n = y.len();
    if n == 0 || n > ORACLE_MAX_ROWS || d == 0 || d > ORACLE_MAX_FEATURES {
        return Err(invalid!(
            "oracle handles 1..={ORACLE_MAX_ROWS} rows and 1..={ORACLE_MAX_FEATURES} features, got {n} x {d}"
        ));
    }
    if x.len() != n * d {
        return Err(invalid!("{} values for {n} x {d}", x.len()));
    }
    if hp.splitter != Splitter::Best || hp.max_features.is_some() || hp.max_leaf_nodes.is_some() {
        return Err(invalid!("oracle requires the best splitter with no feature subsampling or leaf budget"));
    }
    hp.validate()?;
    let classes: Vec<u32> = y.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let yi: Vec<usize> = y.iter().map(|v| classes.binary_search(v).unwrap()).collect();
    let mut ctx = OracleCtx {
        x,
        d,
        y: &yi,
        k: classes.len(),
        hp,
        min_leaf: hp.min_leaf(n),
        nodes: Vec::new(),
    };
    ctx.grow((0..n).collect(), 0);
    let nodes = ctx.nodes;
    Ok(TreeModel::from_nodes(classes, d, nodes))
}

/// Predict by walking `model` from the root; majority class, ties to the
/// smallest label.
pub fn oracle_predict(model: &TreeModel, row: &[f64]) -> u32 {
    let mut node = &model.nodes[0];
    while let Some(s) = &node.split {
        node = &model.nodes[if row[s.feature] <= s.threshold { s.left } else { s.right }];
    }
    let max = node.counts.iter().max().copied().unwrap_or(0);
    model
        .classes
        .iter()
        .zip(&node.counts)
        .filter(|(_, &c)| c == max)
        .map(|(&l, _)| l)
        .min()
        .unwrap_or(0)
}

/// Support-weighted F1 from an explicit confusion matrix over the union of
/// labels, via per-class precision and recall in exact fractions.
pub fn metric_oracle(y_true: &[u32], y_pred: &[u32]) -> f64 {
    assert_eq!(y_true.len(), y_pred.len(), "label vectors differ in length");
    let labels: Vec<u32> = y_true
        .iter()
        .chain(y_pred)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = labels.len();
    let mut cm = vec![vec![0u64; k]; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        let ti = labels.iter().position(|l| l == t).unwrap();
        let pi = labels.iter().position(|l| l == p).unwrap();
        cm[ti][pi] += 1;
    }
    let n = y_true.len() as u128;
    let mut score = Ratio::<u128>::zero();
    for c in 0..k {
        let tp = cm[c][c] as u128;
        let support: u128 = cm[c].iter().map(|&v| v as u128).sum();
        let predicted: u128 = (0..k).map(|r| cm[r][c] as u128).sum();
        if tp == 0 {
            continue;
        }
        let precision = Ratio::new(tp, predicted);
        let recall = Ratio::new(tp, support);
        let f1 = Ratio::from_integer(2) * precision * recall / (precision + recall);
        score += f1 * Ratio::new(support, n);
    }
    score.to_f64().expect("finite ratio")
}
