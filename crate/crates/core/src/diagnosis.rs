//! Consistency-based search for the components behind observed deviations.
//!
//! Only normal behavior is modeled. A set of components is a diagnosis if
//! letting those components misbehave arbitrarily explains every deviation
//! without contradicting anything that was observed to be nominal.
//!
//! Two conditions decide whether a candidate set `H` is consistent:
//!
//! 1. *Coverage.* Every deviating sensor belongs to a member of `H` or is
//!    a causal descendant of one of its sensors.
//! 2. *No contradiction.* The reference script is simulated again with
//!    the rules of every member of `H` removed. In every checked window the
//!    predicted state must equal the observed one, except where the sensor
//!    deviated and is free under `H`, that is written by a rule of `H` or
//!    downstream of such a sensor.
//!
//! A sensor that deviates while all of its observed descendants look
//! nominal may itself be broken. Such a sensor `s` enters the search as an
//! extra candidate `sensor-fault:s` that removes no rules and frees only
//! `s`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::detection::{constant_state, Deviation, WindowConfig};
use crate::model::{CausalEdge, CausalGraph, SensorId, StateLabel, SubsystemId, SystemModel};
use crate::simulation::{simulate, FaultSpec, Script, SimulationError, Tick, Trace};
use crate::distributions::StateMatch;

pub const DEFAULT_MAX_CARDINALITY: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosisError {
    #[error("nothing to diagnose: no deviation on an observed sensor")]
    NothingToDiagnose,
    #[error("max cardinality must be at least 1")]
    InvalidCardinality,
    #[error("observed sensor `{0}` is not in the model")]
    UnknownSensor(SensorId),
    #[error("window length and stride must be at least 1")]
    InvalidWindow,
    #[error("hypothesis {0:?} is not consistent")]
    Inconsistent(Vec<SubsystemId>),
    #[error("unknown component `{0}`")]
    UnknownComponent(SubsystemId),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

/// Everything needed to check a hypothesis against the observations.
#[derive(Debug, Clone)]
pub struct DiagnosisProblem<'a> {
    pub model: &'a SystemModel,
    /// The fault-free script the observed run was meant to follow.
    pub script: &'a Script,
    pub horizon: Tick,
    /// Geometry the deviations were computed with.
    pub window: WindowConfig,
    pub deviations: &'a [Deviation],
    pub observed: BTreeSet<SensorId>,
    pub max_cardinality: usize,
}

impl<'a> DiagnosisProblem<'a> {
    /// A problem observing every sensor, with the default cardinality bound.
    pub fn new(
        model: &'a SystemModel,
        script: &'a Script,
        horizon: Tick,
        window: WindowConfig,
        deviations: &'a [Deviation],
    ) -> Self {
        Self {
            model,
            script,
            horizon,
            window,
            deviations,
            observed: model.sensors().iter().map(|s| s.id.clone()).collect(),
            max_cardinality: DEFAULT_MAX_CARDINALITY,
        }
    }

    pub fn observe(mut self, observed: impl IntoIterator<Item = impl Into<SensorId>>) -> Self {
        self.observed = observed.into_iter().map(Into::into).collect();
        self
    }

    pub fn max_cardinality(mut self, max: usize) -> Self {
        self.max_cardinality = max;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultHypothesis {
    pub components: BTreeSet<SubsystemId>,
    pub cardinality: usize,
    pub consistent: bool,
    /// Deviating sensors the components account for.
    pub explained: BTreeSet<SensorId>,
}

/// A causal path from a hypothesized component to one deviating sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Explanation {
    pub sensor: SensorId,
    /// Empty when a member of the hypothesis owns the sensor.
    pub path: Vec<CausalEdge>,
}

/// Observations grouped per sensor and window start.
struct Evidence<'p> {
    problem: &'p DiagnosisProblem<'p>,
    graph: CausalGraph,
    deviating: BTreeSet<SensorId>,
    windows: BTreeMap<(SensorId, Tick), Option<StateMatch<StateLabel>>>,
}

impl<'p> Evidence<'p> {
    fn gather(problem: &'p DiagnosisProblem<'p>) -> Result<Self, DiagnosisError> {
        if problem.max_cardinality < 1 {
            return Err(DiagnosisError::InvalidCardinality);
        }
        if problem.window.length == 0 || problem.window.stride == 0 {
            return Err(DiagnosisError::InvalidWindow);
        }
        if let Some(s) = problem
            .observed
            .iter()
            .find(|s| problem.model.sensor(s.as_str()).is_none())
        {
            return Err(DiagnosisError::UnknownSensor(s.clone()));
        }
        let relevant: Vec<&Deviation> = problem
            .deviations
            .iter()
            .filter(|d| problem.observed.contains(&d.sensor))
            .collect();
        if relevant.is_empty() {
            return Err(DiagnosisError::NothingToDiagnose);
        }
        let reference = simulate(problem.model, &problem.script.fault_free(), 0, problem.horizon)?;
        let mut windows = BTreeMap::new();
        for sensor in &problem.observed {
            for (start, label) in window_states(&reference, sensor, &problem.window) {
                windows.insert((sensor.clone(), start), label.map(StateMatch::State));
            }
        }
        for d in &relevant {
            windows.insert((d.sensor.clone(), d.tick), Some(d.matched.clone()));
        }
        Ok(Self {
            problem,
            graph: problem.model.derive_causal_graph(),
            deviating: relevant.iter().map(|d| d.sensor.clone()).collect(),
            windows,
        })
    }

    fn is_deviation(&self, sensor: &SensorId, start: Tick) -> bool {
        self.problem
            .deviations
            .iter()
            .any(|d| &d.sensor == sensor && d.tick == start)
    }

    fn candidates(&self) -> Vec<SubsystemId> {
        let mut out: Vec<SubsystemId> =
            self.problem.model.subsystems().iter().map(|s| s.id.clone()).collect();
        for s in &self.deviating {
            let descendants = self.graph.causal_descendants(s.as_str()).unwrap_or_default();
            let quiet = descendants
                .iter()
                .filter(|d| self.problem.observed.contains(*d))
                .all(|d| !self.deviating.contains(d));
            if quiet {
                out.push(SubsystemId::sensor_fault(s));
            }
        }
        out.sort();
        out
    }

    fn sensors_of(&self, component: &SubsystemId) -> Vec<SensorId> {
        match component.faulted_sensor() {
            Some(s) => vec![s],
            None => self
                .problem
                .model
                .subsystem(component.as_str())
                .map(|s| s.sensors.clone())
                .unwrap_or_default(),
        }
    }

    fn covered(&self, components: &BTreeSet<SubsystemId>) -> BTreeSet<SensorId> {
        let mut reach = BTreeSet::new();
        for c in components {
            for s in self.sensors_of(c) {
                reach.extend(self.graph.causal_descendants(s.as_str()).unwrap_or_default());
                reach.insert(s);
            }
        }
        self.deviating.intersection(&reach).cloned().collect()
    }

    fn free(&self, components: &BTreeSet<SubsystemId>) -> BTreeSet<SensorId> {
        let mut free = BTreeSet::new();
        for c in components {
            if let Some(s) = c.faulted_sensor() {
                free.insert(s);
                continue;
            }
            let Some(sub) = self.problem.model.subsystem(c.as_str()) else {
                continue;
            };
            for target in sub.rules.iter().flat_map(|r| &r.effects).map(|e| &e.target) {
                free.extend(self.graph.causal_descendants(target.as_str()).unwrap_or_default());
                free.insert(target.clone());
            }
        }
        free
    }

    fn contradiction_free(&self, components: &BTreeSet<SubsystemId>) -> Result<bool, DiagnosisError> {
        let faults: Vec<FaultSpec> = components
            .iter()
            .filter(|c| c.faulted_sensor().is_none())
            .map(|c| FaultSpec {
                component: c.clone(),
                replacement_rules: vec![],
                activation: 0,
            })
            .collect();
        let script = Script {
            interventions: self.problem.script.interventions.clone(),
            faults,
        };
        let predicted = simulate(self.problem.model, &script, 0, self.problem.horizon)?;
        let free = self.free(components);
        for sensor in &self.problem.observed {
            for (start, label) in window_states(&predicted, sensor, &self.problem.window) {
                let Some(Some(observed)) = self.windows.get(&(sensor.clone(), start)) else {
                    continue;
                };
                let Some(label) = label else { continue };
                let excused = free.contains(sensor) && self.is_deviation(sensor, start);
                if observed.state() != Some(&label) && !excused {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    fn hypothesis(&self, components: BTreeSet<SubsystemId>) -> Result<FaultHypothesis, DiagnosisError> {
        let explained = self.covered(&components);
        let consistent =
            explained.len() == self.deviating.len() && self.contradiction_free(&components)?;
        Ok(FaultHypothesis {
            cardinality: components.len(),
            components,
            consistent,
            explained,
        })
    }
}

/// The state each full window of `sensor` stays in, if it stays in one.
fn window_states(
    trace: &Trace,
    sensor: &SensorId,
    window: &WindowConfig,
) -> Vec<(Tick, Option<StateLabel>)> {
    let Some(labels) = trace.states(sensor.as_str()) else {
        return vec![];
    };
    let first = trace.records().first().map_or(0, |r| r.tick);
    window
        .starts(labels.len())
        .map(|s| {
            let label = constant_state(&labels[s..s + window.length]).cloned();
            (first + s as Tick, label)
        })
        .collect()
}

/// Minimal consistent hypotheses, ranked by cardinality and then by
/// component ids.
///
/// Candidate sets are tried in ascending cardinality up to the problem's
/// bound; supersets of a set already found consistent are skipped.
pub fn diagnose(problem: &DiagnosisProblem<'_>) -> Result<Vec<FaultHypothesis>, DiagnosisError> {
    let evidence = Evidence::gather(problem)?;
    let candidates = evidence.candidates();
    let mut found: Vec<FaultHypothesis> = Vec::new();
    for size in 1..=problem.max_cardinality.min(candidates.len()) {
        for subset in subsets(&candidates, size) {
            if found.iter().any(|h| h.components.is_subset(&subset)) {
                continue;
            }
            let h = evidence.hypothesis(subset)?;
            if h.consistent {
                found.push(h);
            }
        }
    }
    found.sort_by(|a, b| (a.cardinality, &a.components).cmp(&(b.cardinality, &b.components)));
    Ok(found)
}

/// Evaluates one hypothesis without searching.
pub fn check_hypothesis(
    problem: &DiagnosisProblem<'_>,
    components: impl IntoIterator<Item = impl Into<SubsystemId>>,
) -> Result<FaultHypothesis, DiagnosisError> {
    let evidence = Evidence::gather(problem)?;
    let components: BTreeSet<SubsystemId> = components.into_iter().map(Into::into).collect();
    for c in &components {
        let known = match c.faulted_sensor() {
            Some(s) => problem.model.sensor(s.as_str()).is_some(),
            None => problem.model.subsystem(c.as_str()).is_some(),
        };
        if !known {
            return Err(DiagnosisError::UnknownComponent(c.clone()));
        }
    }
    evidence.hypothesis(components)
}

/// All `size`-element subsets of `items`, in lexicographic order.
fn subsets(items: &[SubsystemId], size: usize) -> Vec<BTreeSet<SubsystemId>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..size).collect();
    if size == 0 || size > items.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| items[i].clone()).collect());
        let Some(k) = (0..size).rev().find(|&k| idx[k] < items.len() - size + k) else {
            return out;
        };
        idx[k] += 1;
        for j in k + 1..size {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// One shortest causal path per deviating sensor, from the sensors of the
/// hypothesis. Deviations on sensors the hypothesis was not asked to explain
/// (unobserved ones) are skipped.
pub fn explain(
    hypothesis: &FaultHypothesis,
    model: &SystemModel,
    graph: &CausalGraph,
    deviations: &[Deviation],
) -> Result<Vec<Explanation>, DiagnosisError> {
    let inconsistent = || DiagnosisError::Inconsistent(hypothesis.components.iter().cloned().collect());
    if !hypothesis.consistent {
        return Err(inconsistent());
    }
    let mut sources = BTreeSet::new();
    for c in &hypothesis.components {
        match c.faulted_sensor() {
            Some(s) => {
                sources.insert(s);
            }
            None => {
                let sub = model
                    .subsystem(c.as_str())
                    .ok_or_else(|| DiagnosisError::UnknownComponent(c.clone()))?;
                sources.extend(sub.sensors.iter().cloned());
            }
        }
    }
    let deviating: BTreeSet<&SensorId> = deviations
        .iter()
        .map(|d| &d.sensor)
        .filter(|s| hypothesis.explained.contains(*s))
        .collect();
    deviating
        .into_iter()
        .map(|sensor| {
            let path = graph
                .shortest_path(&sources, sensor.as_str())
                .ok_or_else(inconsistent)?;
            Ok(Explanation {
                sensor: sensor.clone(),
                path,
            })
        })
        .collect()
}
