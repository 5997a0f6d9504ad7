//! Baseline correction and zero-phase IIR cleanup of raw EMG.
//!
//! Filters are cascades of second-order sections designed with the bilinear
//! transform (cutoff pre-warped), so a Butterworth cascade here has exactly the
//! digital magnitude `1 / (1 + (tan(pi f/fs) / tan(pi fc/fs))^(2n))` for the
//! low-pass and its mirror for the high-pass. Filtering runs forward then
//! backward over a reflect-padded copy, which squares the magnitude and cancels
//! the phase.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::Exec;
use crate::recording::Recording;

/// Relative envelope level at which an impulse response counts as finished.
const IMPULSE_DECAY: f64 = 1e-3;
/// Reflect padding, in multiples of the effective impulse length.
const PAD_IMPULSES: usize = 3;

/// One second-order section, `a0` normalised to 1. First-order sections set
/// `b2 = a2 = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn from_unnormalised(b: [f64; 3], a: [f64; 3]) -> Self {
        Biquad {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }

    fn lowpass(k: f64, q: f64) -> Self {
        let k2 = k * k;
        Self::from_unnormalised([k2, 2.0 * k2, k2], [1.0 + k / q + k2, 2.0 * (k2 - 1.0), 1.0 - k / q + k2])
    }

    fn highpass(k: f64, q: f64) -> Self {
        let k2 = k * k;
        Self::from_unnormalised([1.0, -2.0, 1.0], [1.0 + k / q + k2, 2.0 * (k2 - 1.0), 1.0 - k / q + k2])
    }

    fn lowpass_first_order(k: f64) -> Self {
        Self::from_unnormalised([k, k, 0.0], [1.0 + k, k - 1.0, 0.0])
    }

    fn highpass_first_order(k: f64) -> Self {
        Self::from_unnormalised([1.0, -1.0, 0.0], [1.0 + k, k - 1.0, 0.0])
    }

    /// Complex gain at normalised angular frequency `w` (radians/sample).
    pub fn response(&self, w: f64) -> (f64, f64) {
        // H = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2), z = e^{jw}
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = self.b1 * s1 + self.b2 * s2;
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = self.a1 * s1 + self.a2 * s2;
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }

    fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    fn pole_radius(&self) -> f64 {
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.sqrt()
        } else {
            let s = disc.sqrt();
            ((-self.a1 + s) / 2.0).abs().max(((-self.a1 - s) / 2.0).abs())
        }
    }
}

/// Cascade of biquads.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Butterworth high-pass of the given order at `cut_hz`.
    pub fn butter_highpass(order: usize, cut_hz: f64, fs: f64) -> Result<Self> {
        check_cutoff(cut_hz, fs)?;
        Ok(Self::butter(order, cut_hz, fs, Biquad::highpass, Biquad::highpass_first_order)?)
    }

    /// Butterworth low-pass of the given order at `cut_hz`.
    pub fn butter_lowpass(order: usize, cut_hz: f64, fs: f64) -> Result<Self> {
        check_cutoff(cut_hz, fs)?;
        Ok(Self::butter(order, cut_hz, fs, Biquad::lowpass, Biquad::lowpass_first_order)?)
    }

    fn butter(
        order: usize,
        cut_hz: f64,
        fs: f64,
        second: fn(f64, f64) -> Biquad,
        first: fn(f64) -> Biquad,
    ) -> Result<Self> {
        if order == 0 || order > 16 {
            return Err(invalid!("filter order must be in 1..=16, got {order}"));
        }
        let k = (PI * cut_hz / fs).tan();
        let mut sections: Vec<Biquad> = (0..order / 2)
            .map(|i| {
                let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
                second(k, 1.0 / (2.0 * theta.sin()))
            })
            .collect();
        if order % 2 == 1 {
            sections.push(first(k));
        }
        Ok(Sos { sections })
    }

    /// Second-order notch at `f0_hz` with quality factor `q` (-3 dB width f0/q).
    pub fn notch(f0_hz: f64, q: f64, fs: f64) -> Result<Self> {
        check_cutoff(f0_hz, fs)?;
        if !(q > 0.0 && q.is_finite()) {
            return Err(invalid!("notch quality factor must be positive, got {q}"));
        }
        let k = (PI * f0_hz / fs).tan();
        let k2 = k * k;
        let b = [1.0 + k2, 2.0 * (k2 - 1.0), 1.0 + k2];
        let a = [1.0 + k / q + k2, 2.0 * (k2 - 1.0), 1.0 - k / q + k2];
        Ok(Sos {
            sections: vec![Biquad::from_unnormalised(b, a)],
        })
    }

    /// Single-pass magnitude at `f_hz`.
    pub fn magnitude(&self, f_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f_hz / fs;
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response(w);
                (re * re + im * im).sqrt()
            })
            .product()
    }

    /// Samples for the slowest pole's envelope to fall to `IMPULSE_DECAY`.
    pub fn impulse_len(&self) -> usize {
        let r = self
            .sections
            .iter()
            .map(Biquad::pole_radius)
            .fold(0.0_f64, f64::max);
        if r <= 0.0 {
            return 3;
        }
        if r >= 1.0 {
            return usize::MAX / 8;
        }
        ((IMPULSE_DECAY.ln() / r.ln()).ceil() as usize).max(3)
    }

    /// Causal filtering, state initialised to the steady state for a constant
    /// input equal to `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let Some(&x0) = y.first() else { break };
            // transposed direct form II
            let out0 = s.dc_gain() * x0;
            let mut z2 = s.b2 * x0 - s.a2 * out0;
            let mut z1 = out0 - s.b0 * x0;
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * out + z2;
                z2 = s.b2 * input - s.a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Zero-phase forward-backward filtering with odd reflection padding of
    /// `3 x impulse_len` samples (capped at `len - 1`).
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self
            .impulse_len()
            .saturating_mul(PAD_IMPULSES)
            .min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y.drain(..pad);
        y.truncate(n);
        y
    }
}

fn check_cutoff(f_hz: f64, fs: f64) -> Result<()> {
    if !(fs > 0.0) {
        return Err(invalid!("sample rate must be positive, got {fs}"));
    }
    if !(f_hz > 0.0 && f_hz < fs / 2.0) {
        return Err(invalid!(
            "frequency {f_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs / 2.0
        ));
    }
    Ok(())
}

/// Band-limiting and notch parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSpec {
    pub highpass_cut_hz: f64,
    pub lowpass_cut_hz: Option<f64>,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            highpass_cut_hz: 20.0,
            lowpass_cut_hz: Some(450.0),
            notch_hz: 50.0,
            notch_q: 30.0,
            order: 4,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        check_cutoff(self.highpass_cut_hz, fs)?;
        if let Some(lp) = self.lowpass_cut_hz {
            check_cutoff(lp, fs)?;
            if lp <= self.highpass_cut_hz {
                return Err(invalid!(
                    "low-pass cutoff {lp} Hz must exceed high-pass cutoff {} Hz",
                    self.highpass_cut_hz
                ));
            }
        }
        check_cutoff(self.notch_hz, fs)?;
        if !(self.notch_q > 0.0) {
            return Err(invalid!("notch_q must be positive, got {}", self.notch_q));
        }
        if self.order == 0 || self.order > 16 {
            return Err(invalid!("filter order must be in 1..=16, got {}", self.order));
        }
        Ok(())
    }
}

/// Subtract from each channel the mean of its first `window_seconds`.
pub fn baseline_correct(rec: &Recording, window_seconds: f64) -> Result<Recording> {
    if !(window_seconds > 0.0) {
        return Err(invalid!("baseline window must be positive, got {window_seconds}"));
    }
    let len = (window_seconds * rec.sample_rate_hz()).round() as usize;
    if len == 0 || len > rec.n_samples() {
        return Err(invalid!(
            "baseline window of {window_seconds} s ({len} samples) exceeds recording of {} samples",
            rec.n_samples()
        ));
    }
    rec.with_channels(
        rec.channels()
            .iter()
            .map(|c| {
                let mean = c[..len].iter().sum::<f64>() / len as f64;
                c.iter().map(|v| v - mean).collect()
            })
            .collect(),
    )
}

/// Zero-phase Butterworth high-pass and, when configured, low-pass.
pub fn bandlimit(rec: &Recording, spec: &FilterSpec, exec: &Exec) -> Result<Recording> {
    let fs = rec.sample_rate_hz();
    spec.validate(fs)?;
    let hp = Sos::butter_highpass(spec.order, spec.highpass_cut_hz, fs)?;
    let lp = spec
        .lowpass_cut_hz
        .map(|f| Sos::butter_lowpass(spec.order, f, fs))
        .transpose()?;
    rec.map_channels(exec, |c| {
        let y = hp.filtfilt(c);
        Ok(match &lp {
            Some(lp) => lp.filtfilt(&y),
            None => y,
        })
    })
}

/// Zero-phase second-order notch.
pub fn notch(rec: &Recording, notch_hz: f64, q: f64, exec: &Exec) -> Result<Recording> {
    let sos = Sos::notch(notch_hz, q, rec.sample_rate_hz())?;
    rec.map_channels(exec, |c| Ok(sos.filtfilt(c)))
}

/// Full cleanup chain: baseline, then band-limit, then notch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSpec {
    pub baseline_window_s: f64,
    pub filter: FilterSpec,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            baseline_window_s: 5.0,
            filter: FilterSpec::default(),
        }
    }
}

pub fn preprocess(rec: &Recording, spec: &PreprocessSpec, exec: &Exec) -> Result<Recording> {
    let r = baseline_correct(rec, spec.baseline_window_s)?;
    let r = bandlimit(&r, &spec.filter, exec)?;
    notch(&r, spec.filter.notch_hz, spec.filter.notch_q, exec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1000.0;

    fn sine(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / FS).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn mid(x: &[f64]) -> &[f64] {
        &x[x.len() / 4..3 * x.len() / 4]
    }

    // analytic digital Butterworth magnitude after bilinear transform
    fn butter_hp_oracle(f: f64, fc: f64, order: i32) -> f64 {
        let r = (PI * fc / FS).tan() / (PI * f / FS).tan();
        1.0 / (1.0 + r.powi(2 * order)).sqrt()
    }

    fn butter_lp_oracle(f: f64, fc: f64, order: i32) -> f64 {
        let r = (PI * f / FS).tan() / (PI * fc / FS).tan();
        1.0 / (1.0 + r.powi(2 * order)).sqrt()
    }

    // notch |H| from its analog prototype s^2+1 / s^2 + s/q + 1 at the warped frequency
    fn notch_oracle(f: f64, f0: f64, q: f64) -> f64 {
        let x = (PI * f / FS).tan() / (PI * f0 / FS).tan();
        let num = (1.0 - x * x).abs();
        let den = ((1.0 - x * x).powi(2) + (x / q).powi(2)).sqrt();
        num / den
    }

    #[test]
    fn designed_magnitudes_match_analytic_forms() {
        for order in 1..=6 {
            let hp = Sos::butter_highpass(order, 20.0, FS).unwrap();
            let lp = Sos::butter_lowpass(order, 450.0, FS).unwrap();
            for f in [1.0, 5.0, 10.0, 19.0, 20.0, 40.0, 100.0, 300.0, 449.0, 490.0] {
                let o = order as i32;
                assert!((hp.magnitude(f, FS) - butter_hp_oracle(f, 20.0, o)).abs() < 1e-9, "hp {order} {f}");
                assert!((lp.magnitude(f, FS) - butter_lp_oracle(f, 450.0, o)).abs() < 1e-9, "lp {order} {f}");
            }
        }
        let n = Sos::notch(50.0, 30.0, FS).unwrap();
        for f in [10.0, 40.0, 49.0, 50.0, 51.0, 60.0, 200.0] {
            assert!((n.magnitude(f, FS) - notch_oracle(f, 50.0, 30.0)).abs() < 1e-9, "notch {f}");
        }
    }

    #[test]
    fn highpass_sine_probes() {
        let hp = Sos::butter_highpass(4, 20.0, FS).unwrap();
        let x10 = sine(10.0, 10_000);
        let y10 = hp.filtfilt(&x10);
        let att = 20.0 * (rms(mid(&y10)) / rms(mid(&x10))).log10();
        assert!(att <= -20.0, "10 Hz attenuation {att} dB");
        // forward-backward squares the single-pass gain
        let expected = 2.0 * 20.0 * butter_hp_oracle(10.0, 20.0, 4).log10();
        assert!((att - expected).abs() < 0.1, "{att} vs {expected}");

        let x100 = sine(100.0, 10_000);
        let y100 = hp.filtfilt(&x100);
        let g = 20.0 * (rms(mid(&y100)) / rms(mid(&x100))).log10();
        assert!(g.abs() <= 1.0, "100 Hz gain {g} dB");
    }

    #[test]
    fn highpass_removes_dc() {
        let hp = Sos::butter_highpass(4, 20.0, FS).unwrap();
        let y = hp.filtfilt(&vec![2.5; 5000]);
        assert!(y.iter().all(|v| v.abs() <= 2.5e-6), "{:?}", y.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn notch_probes() {
        let n = Sos::notch(50.0, 30.0, FS).unwrap();
        let x = sine(50.0, 20_000);
        let y = n.filtfilt(&x);
        let att = 20.0 * (rms(mid(&y)) / rms(mid(&x))).log10();
        assert!(att <= -20.0, "50 Hz attenuation {att} dB");
        for f in [40.0, 60.0, 100.0] {
            let x = sine(f, 20_000);
            let y = n.filtfilt(&x);
            let g = 20.0 * (rms(mid(&y)) / rms(mid(&x))).log10();
            assert!(g >= -3.0 && g <= 1.0, "{f} Hz gain {g} dB");
        }
        assert_eq!(n.filtfilt(&vec![0.0; 100]), vec![0.0; 100]);
    }

    #[test]
    fn zero_phase_peak_lag_is_zero() {
        let hp = Sos::butter_highpass(4, 20.0, FS).unwrap();
        let x = sine(100.0, 4000);
        let y = hp.filtfilt(&x);
        let xc = |lag: isize| -> f64 {
            (1000..3000)
                .map(|i| x[i] * y[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-5..=5)
            .max_by(|a, b| xc(*a).partial_cmp(&xc(*b)).unwrap())
            .unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn baseline_examples() {
        let rec = Recording::from_channels(vec![vec![3.7; 6000]], FS).unwrap();
        let out = baseline_correct(&rec, 5.0).unwrap();
        assert!(out.channel(0).iter().all(|v| v.abs() < 1e-12));

        let rec = Recording::from_channels(vec![vec![1.0, 2.0, 3.0, 4.0]], 1.0).unwrap();
        assert_eq!(baseline_correct(&rec, 4.0).unwrap().channel(0), [-1.5, -0.5, 0.5, 1.5]);

        let rec = Recording::from_channels(vec![vec![0.0; 3000]], FS).unwrap();
        assert!(baseline_correct(&rec, 5.0).is_err());
        assert!(baseline_correct(&rec, 0.0).is_err());
    }

    #[test]
    fn cutoffs_at_or_above_nyquist_are_rejected() {
        assert!(Sos::butter_lowpass(4, 500.0, FS).is_err());
        assert!(Sos::butter_highpass(4, 0.0, FS).is_err());
        assert!(Sos::notch(600.0, 30.0, FS).is_err());
        assert!(Sos::notch(50.0, 0.0, FS).is_err());
        let spec = FilterSpec {
            lowpass_cut_hz: Some(500.0),
            ..FilterSpec::default()
        };
        assert!(spec.validate(FS).is_err());
        assert!(FilterSpec::default().validate(FS).is_ok());
    }

    #[test]
    fn operations_preserve_shape() {
        let rec = Recording::new(
            vec!["a".into(), "b".into()],
            vec![sine(60.0, 7000), sine(120.0, 7000)],
            FS,
        )
        .unwrap();
        let out = preprocess(&rec, &PreprocessSpec::default(), &Exec::default()).unwrap();
        assert_eq!(out.names(), rec.names());
        assert_eq!(out.n_samples(), rec.n_samples());
    }
}
