//! Normality tests on score series and least-squares fits with a
//! mean-response confidence band.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::elimination::ExperimentRun;
use crate::error::{invalid, Error, Result};

/// Significance level used for the headline decision.
pub const ALPHA: f64 = 0.05;

/// Significance levels (percent) of the Anderson-Darling table.
pub const AD_LEVELS_PCT: [f64; 5] = [15.0, 10.0, 5.0, 2.5, 1.0];
const AD_BASE_CRITICAL: [f64; 5] = [0.576, 0.656, 0.787, 0.918, 1.092];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalityTest {
    KolmogorovSmirnov,
    ShapiroWilk,
    AndersonDarling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelDecision {
    pub significance_pct: f64,
    pub critical_value: f64,
    pub reject: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub test: NormalityTest,
    pub n: usize,
    pub statistic: f64,
    /// Small-sample corrected statistic, where the test defines one.
    pub adjusted_statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Kolmogorov-distribution p-value of `sqrt(n) D`, ignoring that the
    /// parameters were estimated.
    pub asymptotic_p_value: Option<f64>,
    pub critical_values: Vec<LevelDecision>,
    pub reject_at_5pct: bool,
    pub note: Option<String>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Mean and sample standard deviation (n - 1).
fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_sample(x: &[f64], min_n: usize, what: &str) -> Result<()> {
    if x.len() < min_n {
        return Err(invalid!("{what} needs at least {min_n} observations, got {}", x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("{what} sample contains non-finite values"));
    }
    Ok(())
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn degenerate(what: &str) -> Error {
    Error::Numeric(format!("{what}: sample has zero variance"))
}

/// Survival function of the limiting Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        s += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Lilliefors p-value for `D` with estimated normal parameters: the
/// Dallal-Wilkinson tail approximation, with the polynomial fit of the
/// modified statistic above 0.1.
pub fn lilliefors_p(d: f64, n: usize) -> f64 {
    let nf = n as f64;
    let (kd, nd) = if n > 100 { (d * (nf / 100.0).powf(0.49), 100.0) } else { (d, nf) };
    let p = (-7.01256 * kd * kd * (nd + 2.78019) + 2.99587 * kd * (nd + 2.78019).sqrt() - 0.122119
        + 0.974598 / nd.sqrt()
        + 1.67997 / nd)
        .exp();
    if p <= 0.1 {
        return p;
    }
    let kk = (nf.sqrt() - 0.01 + 0.85 / nf.sqrt()) * d;
    let p = if kk <= 0.302 {
        1.0
    } else if kk <= 0.5 {
        2.76773 - 19.828315 * kk + 80.709644 * kk.powi(2) - 138.55152 * kk.powi(3) + 81.218052 * kk.powi(4)
    } else if kk <= 0.9 {
        -4.901232 + 40.662806 * kk - 97.490286 * kk.powi(2) + 94.029866 * kk.powi(3) - 32.355711 * kk.powi(4)
    } else if kk <= 1.31 {
        6.198765 - 19.558097 * kk + 23.186922 * kk.powi(2) - 12.234627 * kk.powi(3) + 2.423045 * kk.powi(4)
    } else {
        0.0
    };
    p.clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov distance to the normal fitted by sample mean and
/// standard deviation.
pub fn ks_normality(sample: &[f64]) -> Result<NormalityReport> {
    check_sample(sample, 5, "kolmogorov_smirnov")?;
    let (mean, sd) = mean_sd(sample);
    if !(sd > 0.0) {
        return Err(degenerate("kolmogorov_smirnov"));
    }
    let x = sorted(sample);
    let n = x.len() as f64;
    let norm = std_normal();
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = norm.cdf((v - mean) / sd);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let p = lilliefors_p(d, x.len());
    Ok(NormalityReport {
        test: NormalityTest::KolmogorovSmirnov,
        n: x.len(),
        statistic: d,
        adjusted_statistic: None,
        p_value: Some(p),
        asymptotic_p_value: Some(kolmogorov_sf(n.sqrt() * d)),
        critical_values: Vec::new(),
        reject_at_5pct: p < ALPHA,
        note: Some(
            "parameters estimated from the sample; decision uses the Lilliefors p-value, \
             asymptotic_p_value is the plain Kolmogorov tail"
                .into(),
        ),
    })
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro-Wilk W with Royston's approximation for coefficients and p-value.
pub fn shapiro_wilk(sample: &[f64]) -> Result<NormalityReport> {
    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(invalid!("shapiro_wilk needs 3..=5000 observations, got {n}"));
    }
    check_sample(sample, 3, "shapiro_wilk")?;
    let x = sorted(sample);
    let range = x[n - 1] - x[0];
    if !(range > 0.0) {
        return Err(degenerate("shapiro_wilk"));
    }
    let nf = n as f64;
    let norm = std_normal();
    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -0.5f64.sqrt();
        a[2] = 0.5f64.sqrt();
    } else {
        let m: Vec<f64> = (1..=n).map(|i| norm.inverse_cdf((i as f64 - 0.375) / (nf + 0.25))).collect();
        let mm: f64 = m.iter().map(|v| v * v).sum();
        let u = 1.0 / nf.sqrt();
        let an = m[n - 1] / mm.sqrt() + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        if n > 5 {
            let an1 = m[n - 2] / mm.sqrt() + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            let phi = (mm - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2)) / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            for i in 2..n - 2 {
                a[i] = m[i] / phi.sqrt();
            }
            a[n - 1] = an;
            a[n - 2] = an1;
            a[0] = -an;
            a[1] = -an1;
        } else {
            let phi = (mm - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an * an);
            for i in 1..n - 1 {
                a[i] = m[i] / phi.sqrt();
            }
            a[n - 1] = an;
            a[0] = -an;
        }
    }
    // centre and scale by the range for conditioning
    let mean = x.iter().sum::<f64>() / nf;
    let xs: Vec<f64> = x.iter().map(|v| (v - mean) / range).collect();
    let num: f64 = a.iter().zip(&xs).map(|(a, v)| a * v).sum();
    let ssq: f64 = xs.iter().map(|v| v * v).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = poly(&[-2.273, 0.459], nf);
        let y = (1.0 - w).ln();
        if y >= gamma {
            1e-99
        } else {
            let y = -(gamma - y).ln();
            let mu = poly(&[0.5440, -0.39978, 0.025054, -6.714e-4], nf);
            let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
            norm.sf((y - mu) / sigma)
        }
    } else {
        let ln_n = nf.ln();
        let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n);
        let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp();
        norm.sf(((1.0 - w).ln() - mu) / sigma)
    };
    Ok(NormalityReport {
        test: NormalityTest::ShapiroWilk,
        n,
        statistic: w,
        adjusted_statistic: None,
        p_value: Some(p),
        asymptotic_p_value: None,
        critical_values: Vec::new(),
        reject_at_5pct: p < ALPHA,
        note: None,
    })
}

/// Anderson-Darling A² against the normal with estimated parameters.
/// Critical values are the standard table divided by `1 + 4/n - 25/n²`, so
/// comparing them with A² is the same as comparing A*² with the table.
pub fn anderson_darling(sample: &[f64]) -> Result<NormalityReport> {
    check_sample(sample, 8, "anderson_darling")?;
    let (mean, sd) = mean_sd(sample);
    if !(sd > 0.0) {
        return Err(degenerate("anderson_darling"));
    }
    let x = sorted(sample);
    let n = x.len();
    let nf = n as f64;
    let norm = std_normal();
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let s: f64 = (0..n)
        .map(|i| (2.0 * i as f64 + 1.0) * (norm.cdf(z[i]).ln() + norm.sf(z[n - 1 - i]).ln()))
        .sum();
    let a2 = -nf - s / nf;
    let factor = 1.0 + 4.0 / nf - 25.0 / (nf * nf);
    let a2_star = a2 * factor;
    // the p-value approximation is fitted on the 0.75/n + 2.25/n² correction
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a > 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a > 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    let critical_values: Vec<LevelDecision> = AD_LEVELS_PCT
        .iter()
        .zip(AD_BASE_CRITICAL)
        .map(|(&level, base)| {
            let cv = base / factor;
            LevelDecision {
                significance_pct: level,
                critical_value: cv,
                reject: a2 > cv,
            }
        })
        .collect();
    let reject = critical_values
        .iter()
        .find(|c| c.significance_pct == 100.0 * ALPHA)
        .is_some_and(|c| c.reject);
    Ok(NormalityReport {
        test: NormalityTest::AndersonDarling,
        n,
        statistic: a2,
        adjusted_statistic: Some(a2_star),
        p_value: Some(p.clamp(0.0, 1.0)),
        asymptotic_p_value: None,
        critical_values,
        reject_at_5pct: reject,
        note: None,
    })
}

/// All three tests on one sample.
pub fn normality_battery(sample: &[f64]) -> Result<Vec<NormalityReport>> {
    Ok(vec![ks_normality(sample)?, shapiro_wilk(sample)?, anderson_darling(sample)?])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub fit: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_std: f64,
    pub n: usize,
    pub x_mean: f64,
    pub sxx: f64,
    pub ci_level: f64,
    pub t_critical: f64,
    /// Band evaluated at each distinct `x`, ascending.
    pub band: Vec<BandPoint>,
}

impl RegressionFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    pub fn half_width(&self, x: f64) -> f64 {
        self.t_critical
            * self.residual_std
            * (1.0 / self.n as f64 + (x - self.x_mean).powi(2) / self.sxx).sqrt()
    }

    pub fn interval(&self, x: f64) -> BandPoint {
        let (fit, h) = (self.predict(x), self.half_width(x));
        BandPoint {
            x,
            fit,
            lo: fit - h,
            hi: fit + h,
        }
    }

    pub fn band_csv(&self) -> String {
        let mut s = String::from("x,fit,lo,hi\n");
        for p in &self.band {
            s.push_str(&format!("{},{},{},{}\n", p.x, p.fit, p.lo, p.hi));
        }
        s
    }
}

/// Ordinary least squares of `y` on `x` with a two-sided mean-response band
/// at confidence `level`.
pub fn ols_with_ci(x: &[f64], y: &[f64], level: f64) -> Result<RegressionFit> {
    let n = x.len();
    if n != y.len() {
        return Err(invalid!("x has {n} values, y has {}", y.len()));
    }
    if n < 3 {
        return Err(invalid!("regression needs at least 3 points, got {n}"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid!("confidence level must be in (0, 1), got {level}"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid!("regression input contains non-finite values"));
    }
    let nf = n as f64;
    let x_mean = x.iter().sum::<f64>() / nf;
    let y_mean = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - x_mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(invalid!("all x values are equal"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - x_mean) * (b - y_mean)).sum();
    let syy: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    // residuals at rounding level are an exact fit
    let sse = if sse <= 1e-24 * syy.max(f64::MIN_POSITIVE) { 0.0 } else { sse };
    let residual_std = (sse / (nf - 2.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::Numeric(e.to_string()))?;
    let t_critical = t.inverse_cdf(0.5 + level / 2.0);
    let mut fit = RegressionFit {
        slope,
        intercept,
        residual_std,
        n,
        x_mean,
        sxx,
        ci_level: level,
        t_critical,
        band: Vec::new(),
    };
    let mut xs = sorted(x);
    xs.dedup();
    fit.band = xs.into_iter().map(|v| fit.interval(v)).collect();
    Ok(fit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n_trees: usize,
    pub best_mean_f1: f64,
    pub best_iteration: usize,
    pub median_mean_f1: f64,
    pub mean_mean_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub scores: ScoreSummary,
    pub normality: Vec<NormalityReport>,
    /// Feature count against mean F1.
    pub all_features: Option<RegressionFit>,
    /// Informative-feature count against mean F1.
    pub informative_features: Option<RegressionFit>,
    pub notes: Vec<String>,
}

fn median(x: &[f64]) -> f64 {
    let s = sorted(x);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Normality battery on the per-tree mean F1 series plus both regressions.
/// A test or fit that cannot run on this series is left out with a note.
pub fn run_stats(run: &ExperimentRun, level: f64) -> Result<RunStats> {
    if run.records.is_empty() {
        return Err(invalid!("run has no records"));
    }
    let f1: Vec<f64> = run.records.iter().map(|r| r.mean_f1).collect();
    let (best_iteration, best) = run
        .records
        .iter()
        .map(|r| (r.iteration, r.mean_f1))
        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    let mut notes = Vec::new();
    let mut normality = Vec::new();
    for test in [ks_normality, shapiro_wilk, anderson_darling] {
        match test(&f1) {
            Ok(r) => normality.push(r),
            Err(e) => notes.push(format!("normality test skipped: {e}")),
        }
    }
    let mut regress = |name: &str, x: Vec<f64>| match ols_with_ci(&x, &f1, level) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("{name} regression skipped: {e}"));
            None
        }
    };
    let all_features = regress("all_features", run.records.iter().map(|r| r.n_features as f64).collect());
    let informative_features = regress(
        "informative_features",
        run.records.iter().map(|r| r.n_informative as f64).collect(),
    );
    Ok(RunStats {
        scores: ScoreSummary {
            n_trees: f1.len(),
            best_mean_f1: best,
            best_iteration,
            median_mean_f1: median(&f1),
            mean_mean_f1: f1.iter().sum::<f64>() / f1.len() as f64,
        },
        normality,
        all_features,
        informative_features,
        notes,
    })
}

/// `stats.json` plus one band CSV per fitted regression.
pub fn write_run_stats(stats: &RunStats, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::elimination::write_json(&dir.join("stats.json"), stats)?;
    for (name, fit) in [
        ("band_all_features.csv", &stats.all_features),
        ("band_informative_features.csv", &stats.informative_features),
    ] {
        if let Some(fit) = fit {
            let p = dir.join(name);
            std::fs::write(&p, fit.band_csv()).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn normal_quantiles(n: usize) -> Vec<f64> {
        let norm = std_normal();
        (1..=n).map(|i| norm.inverse_cdf((i as f64 - 0.5) / n as f64)).collect()
    }

    #[test]
    fn normal_quantiles_are_not_rejected() {
        let x = normal_quantiles(100);
        let ks = ks_normality(&x).unwrap();
        assert!(ks.statistic < 0.03);
        assert!(!ks.reject_at_5pct);
        let sw = shapiro_wilk(&x).unwrap();
        assert!(sw.statistic > 0.99);
        assert!(!sw.reject_at_5pct);
        let ad = anderson_darling(&x).unwrap();
        assert!(ad.critical_values.iter().all(|c| !c.reject));
        assert_eq!(
            ad.critical_values.iter().map(|c| c.significance_pct).collect::<Vec<_>>(),
            AD_LEVELS_PCT.to_vec()
        );
    }

    #[test]
    fn skewed_and_bimodal_samples_are_rejected() {
        let mut rng = crate::seed::rng(5);
        let exp: Vec<f64> = (0..100).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        assert!(shapiro_wilk(&exp).unwrap().reject_at_5pct);
        let bimodal: Vec<f64> = (0..200)
            .map(|i| {
                let c = if i % 2 == 0 { -3.0 } else { 3.0 };
                c + 0.5 * (rng.random::<f64>() - 0.5)
            })
            .collect();
        let ad = anderson_darling(&bimodal).unwrap();
        assert!(ad.critical_values.last().unwrap().reject);
        for seed in 0..10 {
            let mut rng = crate::seed::rng(seed);
            let u: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
            assert!(ks_normality(&u).unwrap().reject_at_5pct, "seed {seed}");
        }
    }

    #[test]
    fn guards() {
        assert!(ks_normality(&[1.0; 10]).is_err());
        assert!(shapiro_wilk(&[1.0, 2.0]).is_err());
        assert!(shapiro_wilk(&[1.0; 5]).is_err());
        assert!(anderson_darling(&[1.0, 2.0, 3.0]).is_err());
        assert!(ols_with_ci(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0], 0.95).is_err());
    }

    #[test]
    fn ols_hand_case_and_band_shape() {
        let f = ols_with_ci(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], 0.95).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!((f.intercept + 2.0 / 3.0).abs() < 1e-12);
        let mid = f.half_width(f.x_mean);
        for x in [0.0, 1.0, 1.9, 2.1, 3.0, 10.0] {
            assert!(f.half_width(x) >= mid);
        }
        let exact = ols_with_ci(&[1.0, 2.0, 3.0, 7.0], &[3.0, 5.0, 7.0, 15.0], 0.95).unwrap();
        assert_eq!(exact.residual_std, 0.0);
        assert!(exact.band.iter().all(|p| p.lo == p.hi));
        assert_eq!(f.band_csv().lines().count(), 4);
    }

    #[test]
    fn ols_shift_equivariance() {
        let x = [1.0, 3.0, 4.0, 8.0, 9.0];
        let y = [0.2, 0.5, 0.4, 0.9, 0.7];
        let a = ols_with_ci(&x, &y, 0.95).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        let b = ols_with_ci(&shifted, &y, 0.95).unwrap();
        for (v, s) in x.iter().zip(&shifted) {
            assert!((a.predict(*v) - b.predict(*s)).abs() < 1e-9);
            assert!((a.half_width(*v) - b.half_width(*s)).abs() < 1e-9);
        }
    }

    fn sample(name: &str) -> Vec<f64> {
        match name {
            "sq50" => (1..=50).map(|i| (i as f64 / 50.0).powi(2)).collect(),
            "sin40" => (0..40).map(|i| (i as f64 * 1.7).sin() + 0.1 * i as f64).collect(),
            "unif500" => (1..=500).map(|i| (i as f64 - 0.5) / 500.0).collect(),
            "norm500" => normal_quantiles(500),
            "n3" => vec![1.0, 2.0, 4.0],
            "n4" => vec![1.0, 2.0, 4.0, 8.0],
            "n7" => vec![0.3, 1.1, 1.9, 2.0, 2.2, 5.0, 5.1],
            "n11" => (0..11).map(|i| (((i * 7) % 11) as f64).powf(1.5)).collect(),
            _ => unreachable!(),
        }
    }

    // Reference values from scipy.stats (shapiro, kstest, kstwobign, anderson)
    // and statsmodels (lilliefors approx, normal_ad).
    #[test]
    fn agrees_with_reference_implementation() {
        let sw = [
            ("sq50", 0.8981247995739511, 0.00041688514914582707),
            ("sin40", 0.9750172806714328, 0.5105502628812675),
            ("unif500", 0.9547227650600401, 2.946101712610329e-11),
            ("norm500", 0.9999014795516046, 1.0),
            ("n3", 0.9642857142857142, 0.6368868450289689),
            ("n4", 0.9202026788806026, 0.5380837777759025),
            ("n7", 0.8662961030869308, 0.17222363189006668),
            ("n11", 0.9373226988327212, 0.4895532310530287),
        ];
        for (name, w, p) in sw {
            let r = shapiro_wilk(&sample(name)).unwrap();
            assert!((r.statistic - w).abs() < 1e-5, "{name} W {} vs {w}", r.statistic);
            let rp = r.p_value.unwrap();
            assert!((rp - p).abs() < 1e-4 * p.max(1e-3), "{name} p {rp} vs {p}");
        }
        let ks = [
            ("sq50", 0.13174122900503954, 0.029982878406690106, 0.3506657884751515),
            ("sin40", 0.08860299293201673, 0.5869339071835324, 0.9120202658013623),
            ("unif500", 0.05797362927897787, 0.0003851658749733547, 0.06940222834448467),
            ("n7", 0.2817781278209488, 0.09834548931093325, 0.6347217663984697),
            ("n11", 0.13128940243192855, 0.8530876217350105, 0.991402743529998),
        ];
        for (name, d, lp, kp) in ks {
            let r = ks_normality(&sample(name)).unwrap();
            assert!((r.statistic - d).abs() < 1e-9, "{name} D {} vs {d}", r.statistic);
            let rp = r.p_value.unwrap();
            if lp <= 0.1 {
                assert!((rp - lp).abs() < 1e-6 * lp, "{name} p {rp} vs {lp}");
            } else {
                // above 0.1 the two approximations differ; both are far from 5%
                assert!(rp > 0.1, "{name} p {rp}");
            }
            assert!((r.asymptotic_p_value.unwrap() - kp).abs() < 1e-9, "{name} kolmogorov p");
        }
        let ad = [
            ("sq50", 1.6169591365951845, 0.00032421405575739406, [0.538, 0.613, 0.736, 0.858, 1.021]),
            ("sin40", 0.31888125016843816, 0.5224434489847252, [0.531, 0.605, 0.726, 0.847, 1.007]),
            ("unif500", 5.52599837335157, 1.223203184212753e-13, [0.571, 0.651, 0.781, 0.911, 1.083]),
            ("norm500", 0.002847164906938815, 0.999998053392253, [0.571, 0.651, 0.781, 0.911, 1.083]),
            ("n11", 0.26401091559018397, 0.6221450247450713, [0.498, 0.567, 0.68, 0.793, 0.944]),
        ];
        for (name, a2, p, cv) in ad {
            let r = anderson_darling(&sample(name)).unwrap();
            assert!((r.statistic - a2).abs() < 1e-8 * a2.max(1.0), "{name} A2 {} vs {a2}", r.statistic);
            assert!((r.p_value.unwrap() - p).abs() < 1e-6 * p.max(1e-6), "{name} p {:?} vs {p}", r.p_value);
            for (c, want) in r.critical_values.iter().zip(cv) {
                assert!((c.critical_value - want).abs() <= 5e-4 + 1e-12, "{name} cv {} vs {want}", c.critical_value);
            }
        }
    }

    #[test]
    fn kolmogorov_tail_values() {
        // 1.3581 is the familiar 5% point
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }
}
