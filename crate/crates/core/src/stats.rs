//! Small estimators shared by the Monte Carlo reports. All reductions run
//! sequentially in index order so results are bitwise stable.

use crate::hashing::{hash_words, tags, unit_f64};
use crate::scalar::CompensatedSum;
use serde::{Deserialize, Serialize};

/// Width of every reported confidence interval, in standard errors.
pub const Z: f64 = 3.0;

/// A proportion with a confidence interval.
///
/// Nonzero counts use the Wilson score interval at `Z`; a zero count uses
/// the rule-of-three bound `[0, 3/n]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub std_error: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        assert!(trials > 0 && successes <= trials);
        let n = trials as f64;
        let p = successes as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        let (lo, hi) = if successes == 0 {
            (0.0, (3.0 / n).min(1.0))
        } else {
            let z2 = Z * Z;
            let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
            let half = Z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
            ((centre - half).max(0.0), (centre + half).min(1.0))
        };
        Self { successes, trials, estimate: p, lo, hi, std_error: se }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    /// Whether `p` lies within `Z` binomial standard errors of the truth `p`.
    pub fn within_sigma_of(&self, p: f64) -> bool {
        let sigma = (p * (1.0 - p) / self.trials as f64).sqrt();
        (self.estimate - p).abs() <= Z * sigma
    }
}

/// Mean with a normal-approximation interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub lo: f64,
    pub hi: f64,
}

impl MeanEstimate {
    pub fn half_width(&self) -> f64 {
        Z * self.std_error
    }
}

/// Sample mean and its standard error; `None` for an empty sample.
pub fn mean_estimate(xs: &[f64]) -> Option<MeanEstimate> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len();
    let mean = xs.iter().copied().collect::<CompensatedSum<f64>>().value() / n as f64;
    let se = if n > 1 {
        let ss = xs.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum<f64>>().value();
        (ss / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanEstimate { n, mean, std_error: se, lo: mean - Z * se, hi: mean + Z * se })
}

/// Compensated sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<CompensatedSum<f64>>().value() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Percentile bootstrap interval for a statistic, with resample indices drawn
/// from the counter hash under `seed`. Resamples on which the statistic is
/// undefined (NaN) are dropped.
pub fn bootstrap_ci<F>(xs: &[f64], resamples: usize, seed: u64, level: f64, stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples as u64)
        .map(|r| {
            for (i, b) in buf.iter_mut().enumerate() {
                let u = unit_f64(hash_words(&[tags::BOOTSTRAP, seed, r, i as u64]));
                *b = xs[((u * n as f64) as usize).min(n - 1)];
            }
            stat(&buf)
        })
        .filter(|s| !s.is_nan())
        .collect();
    if stats.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let k = stats.len();
    let pick = |q: f64| stats[((q * (k - 1) as f64).round() as usize).min(k - 1)];
    (pick(tail), pick(1.0 - tail))
}

/// Bootstrap standard deviation of a statistic, undefined resamples dropped.
pub fn bootstrap_se<F>(xs: &[f64], resamples: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    if n == 0 || resamples < 2 {
        return f64::NAN;
    }
    let mut buf = vec![0.0; n];
    let stats: Vec<f64> = (0..resamples as u64)
        .map(|r| {
            for (i, b) in buf.iter_mut().enumerate() {
                let u = unit_f64(hash_words(&[tags::BOOTSTRAP, seed, r, i as u64]));
                *b = xs[((u * n as f64) as usize).min(n - 1)];
            }
            stat(&buf)
        })
        .filter(|s| !s.is_nan())
        .collect();
    if stats.len() < 2 {
        return f64::NAN;
    }
    mean_estimate(&stats).map(|m| m.std_error * (stats.len() as f64).sqrt()).unwrap_or(f64::NAN)
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_error = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Some(LinearFit { slope, intercept, slope_std_error })
}
