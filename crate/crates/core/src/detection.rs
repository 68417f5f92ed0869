//! Window-based detection of effects and anomalous sensors on traces.
//!
//! A single reading says little about which law produced it, so every
//! decision here is taken on a window of consecutive readings of one
//! sensor. Windows start every `stride` ticks and span `length` ticks.

use thiserror::Error;

use crate::distributions::{
    check_alpha, fit_states, two_sample_test, DistributionError, StateMatch, TestResult,
    DEFAULT_ALPHA,
};
use crate::model::{SensorId, StateLabel, SystemModel};
use crate::simulation::{Tick, Trace};

pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_STRIDE: usize = 25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("sensor `{0}` is not in the trace")]
    UnknownSensor(SensorId),
    #[error("sensor `{0}` is not in the model")]
    SensorNotInModel(SensorId),
    #[error("windows [{start}, {end}) do not fit in a trace covering ticks [{first}, {last_exclusive})")]
    WindowOutOfRange {
        start: Tick,
        end: Tick,
        first: Tick,
        last_exclusive: Tick,
    },
    #[error("window length and stride must be at least 1")]
    InvalidWindow,
    #[error("trace covers {observed} ticks from {observed_start} but the reference covers {reference} from {reference_start}")]
    LengthMismatch {
        observed: usize,
        observed_start: Tick,
        reference: usize,
        reference_start: Tick,
    },
    #[error(transparent)]
    Statistics(#[from] DistributionError),
}

/// Window geometry and significance level shared by the detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
    pub alpha: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            length: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        if self.length == 0 || self.stride == 0 {
            return Err(DetectionError::InvalidWindow);
        }
        check_alpha(self.alpha)?;
        Ok(())
    }

    /// Start offsets of every full window over `len` positions.
    pub fn starts(&self, len: usize) -> impl Iterator<Item = usize> {
        let last = len.checked_sub(self.length);
        (0..).step_by(self.stride.max(1)).take_while(move |&s| last.is_some_and(|l| s <= l))
    }
}

/// Readings of one sensor over `[start, start + values.len())`.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub sensor: SensorId,
    pub start: Tick,
    pub values: Vec<f64>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Every full window of `sensor` in `trace`.
pub fn windows(trace: &Trace, sensor: &str, config: &WindowConfig) -> Result<Vec<Window>, DetectionError> {
    config.validate()?;
    let values = trace
        .values(sensor)
        .ok_or_else(|| DetectionError::UnknownSensor(sensor.into()))?;
    let first = first_tick(trace);
    Ok(config
        .starts(values.len())
        .map(|s| Window {
            sensor: sensor.into(),
            start: first + s as Tick,
            values: values[s..s + config.length].to_vec(),
        })
        .collect())
}

fn first_tick(trace: &Trace) -> Tick {
    trace.records().first().map_or(0, |r| r.tick)
}

/// The common state of a run of labels, if they are all equal.
pub fn constant_state<'a>(labels: &[&'a StateLabel]) -> Option<&'a StateLabel> {
    let (first, rest) = labels.split_first()?;
    rest.iter().all(|l| l == first).then_some(*first)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectTest {
    /// True iff the two windows differ at level `alpha`.
    pub effect: bool,
    pub result: TestResult,
}

/// Tests whether `sensor`'s law differs between `[t - w, t)` and `[t, t + w)`.
pub fn detect_effect(
    trace: &Trace,
    sensor: &str,
    t: Tick,
    w: usize,
    alpha: f64,
) -> Result<EffectTest, DetectionError> {
    check_alpha(alpha)?;
    if w == 0 {
        return Err(DetectionError::InvalidWindow);
    }
    let values = trace
        .values(sensor)
        .ok_or_else(|| DetectionError::UnknownSensor(sensor.into()))?;
    let first = first_tick(trace);
    let w_ticks = w as Tick;
    let out_of_range = || DetectionError::WindowOutOfRange {
        start: t.saturating_sub(w_ticks),
        end: t + w_ticks,
        first,
        last_exclusive: first + values.len() as Tick,
    };
    if t < first + w_ticks || t + w_ticks > first + values.len() as Tick {
        return Err(out_of_range());
    }
    let split = (t - first) as usize;
    let result = two_sample_test(&values[split - w..split], &values[split..split + w])?;
    Ok(EffectTest {
        effect: result.p_value < alpha,
        result,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyEntry {
    pub sensor: SensorId,
    pub window_start: Tick,
    pub verdict: StateMatch<StateLabel>,
    /// p-value of each state, in the sensor's state order.
    pub p_values: Vec<(StateLabel, f64)>,
}

impl AnomalyEntry {
    pub fn best_p_value(&self) -> f64 {
        self.p_values.iter().map(|(_, p)| *p).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    pub config: WindowConfig,
    /// Sorted by (sensor, window start).
    pub entries: Vec<AnomalyEntry>,
}

impl AnomalyReport {
    pub fn anomalous(&self) -> impl Iterator<Item = &AnomalyEntry> {
        self.entries.iter().filter(|e| e.verdict.is_anomalous())
    }

    pub fn anomalous_rate(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.anomalous().count() as f64 / self.entries.len() as f64
        }
    }
}

/// Matches every window of every traced model sensor against its state set.
pub fn scan_anomalies(
    trace: &Trace,
    model: &SystemModel,
    config: &WindowConfig,
) -> Result<AnomalyReport, DetectionError> {
    config.validate()?;
    let mut entries = Vec::new();
    for sensor_id in trace.sensors() {
        let sensor = model
            .sensor(sensor_id.as_str())
            .ok_or_else(|| DetectionError::SensorNotInModel(sensor_id.clone()))?;
        for window in windows(trace, sensor_id.as_str(), config)? {
            let fit = fit_states(&window.values, &sensor.states, config.alpha)?;
            entries.push(AnomalyEntry {
                sensor: sensor_id.clone(),
                window_start: window.start,
                verdict: fit.verdict,
                p_values: sensor
                    .states
                    .iter()
                    .map(|(l, _)| l.clone())
                    .zip(fit.p_values)
                    .collect(),
            });
        }
    }
    entries.sort_by(|a, b| (&a.sensor, a.window_start).cmp(&(&b.sensor, b.window_start)));
    Ok(AnomalyReport {
        config: *config,
        entries,
    })
}

/// A window whose readings do not match the state a fault-free run was in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Deviation {
    pub sensor: SensorId,
    /// First tick of the window.
    pub tick: Tick,
    pub expected: StateLabel,
    pub matched: StateMatch<StateLabel>,
}

/// Compares `trace` window by window with the ground truth of `reference`.
///
/// Only windows in which the reference stays in one state are checked; the
/// expectation is ambiguous elsewhere. Sensors of the trace are checked,
/// so an unobserved sensor is simply one missing from `trace`. The result
/// is sorted by (sensor, tick).
pub fn expected_state_check(
    trace: &Trace,
    reference: &Trace,
    model: &SystemModel,
    config: &WindowConfig,
) -> Result<Vec<Deviation>, DetectionError> {
    config.validate()?;
    if trace.len() != reference.len() || first_tick(trace) != first_tick(reference) {
        return Err(DetectionError::LengthMismatch {
            observed: trace.len(),
            observed_start: first_tick(trace),
            reference: reference.len(),
            reference_start: first_tick(reference),
        });
    }
    let mut deviations = Vec::new();
    for sensor_id in trace.sensors() {
        let sensor = model
            .sensor(sensor_id.as_str())
            .ok_or_else(|| DetectionError::SensorNotInModel(sensor_id.clone()))?;
        let expected = reference
            .states(sensor_id.as_str())
            .ok_or_else(|| DetectionError::UnknownSensor(sensor_id.clone()))?;
        let offset = first_tick(trace);
        for window in windows(trace, sensor_id.as_str(), config)? {
            let s = (window.start - offset) as usize;
            let Some(expected) = constant_state(&expected[s..s + config.length]) else {
                continue;
            };
            let matched = fit_states(&window.values, &sensor.states, config.alpha)?.verdict;
            if matched.state() != Some(expected) {
                deviations.push(Deviation {
                    sensor: sensor_id.clone(),
                    tick: window.start,
                    expected: expected.clone(),
                    matched,
                });
            }
        }
    }
    deviations.sort();
    Ok(deviations)
}
