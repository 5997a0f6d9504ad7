//! Multi-channel EMG recordings and their CSV representation.
//!
//! On disk a recording is a CSV with header `t,ch1,ch2,...` (time in seconds,
//! samples in volts). Headerless files carry channel columns only and need the
//! sample rate from the caller.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    names: Vec<String>,
    channels: Vec<Vec<f64>>,
    sample_rate_hz: f64,
}

impl Recording {
    pub fn new(names: Vec<String>, channels: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(invalid!("sample rate must be positive, got {sample_rate_hz}"));
        }
        if channels.is_empty() {
            return Err(invalid!("recording has no channels"));
        }
        if names.len() != channels.len() {
            return Err(invalid!(
                "{} channel names for {} channels",
                names.len(),
                channels.len()
            ));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(invalid!("recording has no samples"));
        }
        if let Some((i, _)) = channels.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(invalid!("channel {} has length {}, expected {n}", names[i], channels[i].len()));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(invalid!("duplicate channel name {a}"));
            }
        }
        Ok(Recording {
            names,
            channels,
            sample_rate_hz,
        })
    }

    /// Channels named `ch1..chK`.
    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        let names = (1..=channels.len()).map(|i| format!("ch{i}")).collect();
        Self::new(names, channels, sample_rate_hz)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    /// Same names and rate, new sample data. Lengths are re-validated.
    pub fn with_channels(&self, channels: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.names.clone(), channels, self.sample_rate_hz)
    }

    /// Apply `f` to each channel independently.
    pub fn map_channels<F>(&self, exec: &crate::par::Exec, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync + Send,
    {
        let out = exec
            .map(&self.channels, |c| f(c))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        self.with_channels(out)
    }

    /// Contiguous sample window `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.n_samples() {
            return Err(invalid!(
                "window [{start}, {}) exceeds recording length {}",
                start + len,
                self.n_samples()
            ));
        }
        self.with_channels(
            self.channels
                .iter()
                .map(|c| c[start..start + len].to_vec())
                .collect(),
        )
    }
}

/// Read a recording CSV. A header row starting with `t` is expected unless
/// `sample_rate_hz` is given, in which case a headerless file is accepted too.
/// When both a time column and `sample_rate_hz` are present the flag wins.
pub fn read_csv(path: &Path, sample_rate_hz: Option<f64>) -> Result<Recording> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path, sample_rate_hz)
}

pub(crate) fn parse_csv(text: &str, path: &Path, sample_rate_hz: Option<f64>) -> Result<Recording> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (first_no, first) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;
    let first_fields: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = first_fields[0].parse::<f64>().is_err();

    let (names, has_time, mut pending) = if has_header {
        if first_fields[0] != "t" {
            return Err(parse_err(
                first_no as u64 + 1,
                format!("expected header starting with `t`, found `{}`", first_fields[0]),
            ));
        }
        let names: Vec<String> = first_fields[1..].iter().map(|s| s.to_string()).collect();
        (names, true, None)
    } else {
        if sample_rate_hz.is_none() {
            return Err(parse_err(
                first_no as u64 + 1,
                "headerless recording requires an explicit sample rate".into(),
            ));
        }
        let names = (1..=first_fields.len()).map(|i| format!("ch{i}")).collect();
        (names, false, Some((first_no, first)))
    };
    if names.is_empty() {
        return Err(parse_err(first_no as u64 + 1, "no channel columns".into()));
    }

    let width = names.len() + usize::from(has_time);
    let mut times = Vec::new();
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut push_row = |no: usize, line: &str| -> Result<()> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(parse_err(
                no as u64 + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(no as u64 + 1, format!("not a number: `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_err(no as u64 + 1, format!("non-finite value `{f}`")));
            }
            if has_time && j == 0 {
                times.push(v);
            } else {
                channels[j - usize::from(has_time)].push(v);
            }
        }
        Ok(())
    };
    if let Some((no, line)) = pending.take() {
        push_row(no, line)?;
    }
    for (no, line) in lines {
        push_row(no, line)?;
    }

    let fs = match sample_rate_hz {
        Some(fs) => fs,
        None => {
            if times.len() < 2 {
                return Err(parse_err(
                    first_no as u64 + 1,
                    "cannot infer sample rate from fewer than two rows".into(),
                ));
            }
            let span = times[times.len() - 1] - times[0];
            if span <= 0.0 {
                return Err(parse_err(first_no as u64 + 1, "time column is not increasing".into()));
            }
            // round to a micro-hertz so printed time stamps reproduce the rate exactly
            ((times.len() - 1) as f64 / span * 1e6).round() / 1e6
        }
    };
    Recording::new(names, channels, fs).map_err(|e| match e {
        Error::InvalidInput(m) => parse_err(first_no as u64 + 1, m),
        other => other,
    })
}

pub fn write_csv(rec: &Recording, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(rec, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_to(rec: &Recording, w: &mut impl Write) -> std::io::Result<()> {
    write!(w, "t")?;
    for n in &rec.names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for i in 0..rec.n_samples() {
        write!(w, "{}", i as f64 / rec.sample_rate_hz)?;
        for c in &rec.channels {
            write!(w, ",{}", c[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}
