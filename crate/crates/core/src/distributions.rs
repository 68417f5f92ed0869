//! Parametric laws for sensor states and the Kolmogorov–Smirnov tests used
//! to decide which state a window of sensor readings is in.
//!
//! A sensor state is a probability law. Readings drawn while the sensor is in
//! a state follow that law, so "is this window consistent with state `s`?"
//! becomes a goodness-of-fit question, and "did the sensor's law change
//! between two windows?" becomes a two-sample question. Both are answered
//! with the Kolmogorov–Smirnov statistic and its asymptotic p-value
//!
//! ```text
//! p ≈ 2 Σ_{k≥1} (−1)^{k−1} exp(−2 k² n D²)
//! ```
//!
//! where `n` is the sample size (or `n_a n_b / (n_a + n_b)` for two samples).
//! Point masses cannot be tested this way; a window fits `degenerate(v)` iff
//! every reading is within [`DEGENERATE_TOLERANCE`] of `v`.
//!
//! Sampling uses ChaCha8 seeded from a `u64`, so a `(law, seed, n)` triple
//! always yields the same readings on a given platform.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution as _;
use statrs::function::erf::erfc;
use thiserror::Error;

/// Absolute tolerance of the exact-match test against a point mass.
pub const DEGENERATE_TOLERANCE: f64 = 1e-9;

/// Significance level used when the caller has no preference.
pub const DEFAULT_ALPHA: f64 = 0.01;

const SERIES_TERM_CUTOFF: f64 = 1e-10;
const SERIES_MAX_TERMS: u32 = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("empty sample")]
    EmptySample,
    #[error("significance level must lie strictly between 0 and 1, got {0}")]
    InvalidAlpha(f64),
    #[error("state set is empty")]
    NoStates,
    #[error("cannot parse distribution `{spec}`: {reason}")]
    Syntax { spec: String, reason: String },
}

/// Law of a sensor's readings while it is in one state.
///
/// Values are built through [`Distribution::normal`], [`Distribution::uniform`]
/// and [`Distribution::degenerate`], which reject invalid parameters, so every
/// `Distribution` in circulation is well formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    #[non_exhaustive]
    Normal { mean: f64, std_dev: f64 },
    #[non_exhaustive]
    Uniform { lo: f64, hi: f64 },
    #[non_exhaustive]
    Degenerate { value: f64 },
}

fn finite(name: &str, x: f64) -> Result<f64, DistributionError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(DistributionError::InvalidParameters(format!(
            "{name} must be finite, got {x}"
        )))
    }
}

impl Distribution {
    pub fn normal(mean: f64, std_dev: f64) -> Result<Self, DistributionError> {
        let mean = finite("mean", mean)?;
        let std_dev = finite("stddev", std_dev)?;
        if std_dev <= 0.0 {
            return Err(DistributionError::InvalidParameters(format!(
                "stddev must be strictly positive, got {std_dev}"
            )));
        }
        Ok(Self::Normal { mean, std_dev })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistributionError> {
        let lo = finite("lo", lo)?;
        let hi = finite("hi", hi)?;
        if lo >= hi {
            return Err(DistributionError::InvalidParameters(format!(
                "uniform needs lo < hi, got lo = {lo}, hi = {hi}"
            )));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn degenerate(value: f64) -> Result<Self, DistributionError> {
        Ok(Self::Degenerate {
            value: finite("value", value)?,
        })
    }

    /// Draws one reading.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Normal { mean, std_dev } => rand_distr::Normal::new(mean, std_dev)
                .expect("validated at construction")
                .sample(rng),
            Self::Uniform { lo, hi } => rand_distr::Uniform::new(lo, hi)
                .expect("validated at construction")
                .sample(rng),
            Self::Degenerate { value } => value,
        }
    }

    /// Draws `n` readings from a ChaCha8 stream seeded with `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, std_dev } => {
                0.5 * erfc(-(x - mean) / (std_dev * std::f64::consts::SQRT_2))
            }
            Self::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Degenerate { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Normal { mean, .. } => mean,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Degenerate { value } => value,
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Normal { mean, std_dev } => write!(f, "normal({mean}, {std_dev})"),
            Self::Uniform { lo, hi } => write!(f, "uniform({lo}, {hi})"),
            Self::Degenerate { value } => write!(f, "degenerate({value})"),
        }
    }
}

impl FromStr for Distribution {
    type Err = DistributionError;

    /// Parses `normal(mean, stddev)`, `uniform(lo, hi)` or `degenerate(v)`.
    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let syntax = |reason: &str| DistributionError::Syntax {
            spec: spec.to_owned(),
            reason: reason.to_owned(),
        };
        let trimmed = spec.trim();
        let open = trimmed.find('(').ok_or_else(|| syntax("expected `(`"))?;
        let inner = trimmed[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| syntax("expected closing `)`"))?;
        let args = inner
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| syntax(&format!("`{}` is not a number", a.trim())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let family = trimmed[..open].trim();
        match (family, args.as_slice()) {
            ("normal", &[mean, sd]) => Self::normal(mean, sd),
            ("uniform", &[lo, hi]) => Self::uniform(lo, hi),
            ("degenerate", &[v]) => Self::degenerate(v),
            ("normal" | "uniform", _) => Err(syntax("expected two arguments")),
            ("degenerate", _) => Err(syntax("expected one argument")),
            _ => Err(syntax("unknown family, expected normal, uniform or degenerate")),
        }
    }
}

impl serde::Serialize for Distribution {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let spec = String::deserialize(deserializer)?;
        spec.parse().map_err(serde::de::Error::custom)
    }
}

/// Outcome of a goodness-of-fit or two-sample test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub sample_size: usize,
}

/// Asymptotic Kolmogorov tail probability `Q(sqrt(n) D)`.
fn kolmogorov_tail(effective_n: f64, d: f64) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let exponent = -2.0 * effective_n * d * d;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=SERIES_MAX_TERMS {
        let term = (exponent * f64::from(k * k)).exp();
        sum += sign * term;
        if term < SERIES_TERM_CUTOFF {
            return (2.0 * sum).clamp(0.0, 1.0);
        }
        sign = -sign;
    }
    // Only reached for n D² below ~1e-3, where the tail is 1 to machine precision.
    1.0
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample Kolmogorov–Smirnov test of `values` against `dist`.
///
/// Against a point mass the exact-match rule applies instead: the statistic
/// is the largest absolute deviation from the point and the p-value is 1 if
/// that is within [`DEGENERATE_TOLERANCE`], 0 otherwise.
pub fn gof_test(values: &[f64], dist: &Distribution) -> Result<TestResult, DistributionError> {
    if values.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    let n = values.len();
    if let Distribution::Degenerate { value } = *dist {
        let worst = values.iter().map(|x| (x - value).abs()).fold(0.0, f64::max);
        let p_value = if worst <= DEGENERATE_TOLERANCE { 1.0 } else { 0.0 };
        return Ok(TestResult {
            statistic: worst,
            p_value,
            sample_size: n,
        });
    }
    let xs = sorted(values);
    let nf = n as f64;
    let d = xs.iter().enumerate().fold(0.0_f64, |acc, (i, &x)| {
        let f = dist.cdf(x);
        let above = (i + 1) as f64 / nf - f;
        let below = f - i as f64 / nf;
        acc.max(above).max(below)
    });
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_tail(nf, d),
        sample_size: n,
    })
}

/// Two-sample Kolmogorov–Smirnov test. Symmetric in its arguments.
///
/// `sample_size` reports the pooled size `n_a + n_b`.
pub fn two_sample_test(a: &[f64], b: &[f64]) -> Result<TestResult, DistributionError> {
    if a.is_empty() || b.is_empty() {
        return Err(DistributionError::EmptySample);
    }
    let xs = sorted(a);
    let ys = sorted(b);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let effective_n = na * nb / (na + nb);
    Ok(TestResult {
        statistic: d,
        p_value: kolmogorov_tail(effective_n, d),
        sample_size: xs.len() + ys.len(),
    })
}

/// Verdict of matching a window against a sensor's state set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StateMatch<L> {
    State(L),
    /// Every state was rejected.
    Anomalous,
}

impl<L> StateMatch<L> {
    pub fn state(&self) -> Option<&L> {
        match self {
            Self::State(l) => Some(l),
            Self::Anomalous => None,
        }
    }

    pub fn is_anomalous(&self) -> bool {
        matches!(self, Self::Anomalous)
    }
}

/// Full result of testing a window against every state of a sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFit<L> {
    pub verdict: StateMatch<L>,
    /// p-value per state, in state-set order.
    pub p_values: Vec<f64>,
    /// Bonferroni-corrected per-state level, `alpha / |states|`.
    pub level: f64,
}

impl<L> StateFit<L> {
    pub fn best_p_value(&self) -> f64 {
        self.p_values.iter().copied().fold(0.0, f64::max)
    }
}

pub fn check_alpha(alpha: f64) -> Result<f64, DistributionError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(DistributionError::InvalidAlpha(alpha))
    }
}

/// Tests `values` against each state and keeps the best non-rejected one.
///
/// Each state is tested at `alpha / |states|`. Among states whose p-value
/// reaches that level the one with the highest p-value wins, earlier states
/// winning ties. If none reaches it the window is [`StateMatch::Anomalous`].
pub fn fit_states<L: Clone>(
    values: &[f64],
    states: &[(L, Distribution)],
    alpha: f64,
) -> Result<StateFit<L>, DistributionError> {
    check_alpha(alpha)?;
    if states.is_empty() {
        return Err(DistributionError::NoStates);
    }
    let p_values = states
        .iter()
        .map(|(_, dist)| gof_test(values, dist).map(|r| r.p_value))
        .collect::<Result<Vec<_>, _>>()?;
    let level = alpha / states.len() as f64;
    let mut best: Option<usize> = None;
    for (i, &p) in p_values.iter().enumerate() {
        if p >= level && best.is_none_or(|b| p > p_values[b]) {
            best = Some(i);
        }
    }
    let verdict = match best {
        Some(i) => StateMatch::State(states[i].0.clone()),
        None => StateMatch::Anomalous,
    };
    Ok(StateFit {
        verdict,
        p_values,
        level,
    })
}

/// Which state of `states` the readings are in, or [`StateMatch::Anomalous`].
pub fn match_state<L: Clone>(
    values: &[f64],
    states: &[(L, Distribution)],
    alpha: f64,
) -> Result<StateMatch<L>, DistributionError> {
    fit_states(values, states, alpha).map(|fit| fit.verdict)
}
