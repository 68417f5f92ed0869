//! Sensors, subsystems and the system model they form.
//!
//! A [`Sensor`] has a finite, ordered set of states, each a [`Distribution`].
//! A [`Subsystem`] owns a proper subset of the sensors and carries its
//! functional representation as a table of [`Rule`]s: when the subsystem's
//! own sensors are in the states named by a rule's guard, the rule's effects
//! set target sensors (anywhere in the system) to new states after a delay of
//! at least one tick. A subsystem state that matches no rule has no effect.
//!
//! [`SystemModel::build`] checks every invariant once; a built model is never
//! mutated afterwards; [`SystemModel::compose`] returns a new one.

mod compose;
mod graph;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::ids::{SensorId, StateLabel, SubsystemId};
use crate::distributions::Distribution;
use crate::ids::identifier_problem;
pub use graph::{CausalEdge, CausalGraph};

/// Label that [`crate::detection`] uses for windows matching no state; it
/// cannot name a real state.
pub const ANOMALOUS_LABEL: &str = "ANOMALOUS";

/// A partial assignment of states to sensors.
pub type PartialState = BTreeMap<SensorId, StateLabel>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid identifier `{id}`: {reason}")]
    InvalidIdentifier { id: String, reason: &'static str },
    #[error("duplicate sensor id `{0}`")]
    DuplicateSensor(SensorId),
    #[error("duplicate subsystem id `{0}`")]
    DuplicateSubsystem(SubsystemId),
    #[error("sensor `{sensor}` declares state `{label}` twice")]
    DuplicateState { sensor: SensorId, label: StateLabel },
    #[error("sensor `{0}` has no states")]
    NoStates(SensorId),
    #[error("`{ANOMALOUS_LABEL}` is reserved and cannot name a state of sensor `{0}`")]
    ReservedLabel(SensorId),
    #[error("sensor `{sensor}` uses the same distribution for states `{first}` and `{second}`")]
    IdenticalStates {
        sensor: SensorId,
        first: StateLabel,
        second: StateLabel,
    },
    #[error("{context}: unknown sensor `{sensor}`")]
    UnknownSensor { context: String, sensor: SensorId },
    #[error("{context}: sensor `{sensor}` has no state `{state}`")]
    UnknownState {
        context: String,
        sensor: SensorId,
        state: StateLabel,
    },
    #[error("unknown subsystem `{0}`")]
    UnknownSubsystem(SubsystemId),
    #[error("subsystem `{0}` owns no sensors")]
    EmptySubsystem(SubsystemId),
    #[error("subsystem `{subsystem}` lists sensor `{sensor}` twice")]
    RepeatedSensor {
        subsystem: SubsystemId,
        sensor: SensorId,
    },
    #[error("subsystem `{0}` must own a proper subset of the sensors, not all of them")]
    NotProperSubset(SubsystemId),
    #[error("{context}: guard reads sensor `{sensor}`, which the subsystem does not own")]
    GuardOutsideSubsystem { context: String, sensor: SensorId },
    #[error("nondeterministic functional representation: in subsystem `{subsystem}` rules {first} and {second} have overlapping guards")]
    OverlappingGuards {
        subsystem: SubsystemId,
        first: usize,
        second: usize,
    },
    #[error("effect must follow cause: {context} has delay 0")]
    ZeroDelay { context: String },
    #[error("priority order must list every subsystem exactly once: {0}")]
    BadPriority(String),
    #[error("cannot compose `{0}` with itself")]
    SelfComposition(SubsystemId),
    #[error("composition of `{first}` and `{second}` has {size} joint guard states, above the limit of {limit}")]
    CompositionTooLarge {
        first: SubsystemId,
        second: SubsystemId,
        size: usize,
        limit: usize,
    },
}

fn check_id(id: &str) -> Result<(), ModelError> {
    match identifier_problem(id) {
        Some(reason) => Err(ModelError::InvalidIdentifier {
            id: id.to_owned(),
            reason,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub id: SensorId,
    pub states: Vec<(StateLabel, Distribution)>,
    pub initial: StateLabel,
}

impl Sensor {
    pub fn new(
        id: impl Into<SensorId>,
        states: impl IntoIterator<Item = (StateLabel, Distribution)>,
        initial: impl Into<StateLabel>,
    ) -> Self {
        Self {
            id: id.into(),
            states: states.into_iter().collect(),
            initial: initial.into(),
        }
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|(l, _)| l.as_str() == label)
    }

    pub fn distribution(&self, label: &str) -> Option<&Distribution> {
        self.states
            .iter()
            .find(|(l, _)| l.as_str() == label)
            .map(|(_, d)| d)
    }

    pub fn labels(&self) -> impl Iterator<Item = &StateLabel> {
        self.states.iter().map(|(l, _)| l)
    }
}

/// One scheduled consequence of a rule: `target` enters `state` `delay`
/// ticks after the rule fires.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    #[serde(rename = "sensor")]
    pub target: SensorId,
    pub state: StateLabel,
    pub delay: u32,
}

impl Effect {
    pub fn new(target: impl Into<SensorId>, state: impl Into<StateLabel>, delay: u32) -> Self {
        Self {
            target: target.into(),
            state: state.into(),
            delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    /// Required states of some of the subsystem's own sensors.
    #[serde(rename = "when", default)]
    pub guard: PartialState,
    #[serde(rename = "then", default)]
    pub effects: Vec<Effect>,
}

impl Rule {
    pub fn new<S, L>(guard: impl IntoIterator<Item = (S, L)>, effects: Vec<Effect>) -> Self
    where
        S: Into<SensorId>,
        L: Into<StateLabel>,
    {
        Self {
            guard: guard
                .into_iter()
                .map(|(s, l)| (s.into(), l.into()))
                .collect(),
            effects,
        }
    }

    /// True if some subsystem state satisfies both guards.
    pub fn overlaps(&self, other: &Rule) -> bool {
        self.guard
            .iter()
            .all(|(s, l)| other.guard.get(s).is_none_or(|o| o == l))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsystemKind {
    Component,
    Module,
    Product,
}

impl fmt::Display for SubsystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Component => "component",
            Self::Module => "module",
            Self::Product => "product",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsystem {
    pub id: SubsystemId,
    pub kind: SubsystemKind,
    pub sensors: Vec<SensorId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<Rule>,
}

impl Subsystem {
    pub fn new(
        id: impl Into<SubsystemId>,
        kind: SubsystemKind,
        sensors: impl IntoIterator<Item = impl Into<SensorId>>,
        rules: Vec<Rule>,
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            sensors: sensors.into_iter().map(Into::into).collect(),
            rules,
        }
    }

    pub fn owns(&self, sensor: &str) -> bool {
        self.sensors.iter().any(|s| s.as_str() == sensor)
    }
}

/// A total assignment of states to the model's sensors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SystemState(PartialState);

impl SystemState {
    pub fn new(assignment: PartialState) -> Self {
        Self(assignment)
    }

    pub fn get(&self, sensor: &str) -> Option<&StateLabel> {
        self.0.get(sensor)
    }

    pub fn set(&mut self, sensor: SensorId, state: StateLabel) {
        self.0.insert(sensor, state);
    }

    /// True if every entry of `partial` holds in this state.
    pub fn satisfies(&self, partial: &PartialState) -> bool {
        partial.iter().all(|(s, l)| self.0.get(s) == Some(l))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SensorId, &StateLabel)> {
        self.0.iter()
    }

    pub fn as_map(&self) -> &PartialState {
        &self.0
    }

    pub fn into_map(self) -> PartialState {
        self.0
    }
}

impl FromIterator<(SensorId, StateLabel)> for SystemState {
    fn from_iter<I: IntoIterator<Item = (SensorId, StateLabel)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Rule with sensors and states resolved to indices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CompiledRule {
    pub guard: Vec<(usize, usize)>,
    pub effects: Vec<CompiledEffect>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CompiledEffect {
    pub target: usize,
    pub state: usize,
    pub delay: u32,
}

impl CompiledRule {
    pub fn matches(&self, state: &[usize]) -> bool {
        self.guard.iter().all(|&(s, l)| state[s] == l)
    }
}

/// The causal construction: every sensor, and every subsystem in priority
/// order (earlier entries win conflicting writes).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    sensors: Vec<Sensor>,
    subsystems: Vec<Subsystem>,
    index: BTreeMap<SensorId, usize>,
    compiled: Vec<Vec<CompiledRule>>,
}

impl SystemModel {
    /// Builds a model whose priority order is the order of `subsystems`.
    pub fn new(sensors: Vec<Sensor>, subsystems: Vec<Subsystem>) -> Result<Self, ModelError> {
        let order: Vec<SubsystemId> = subsystems.iter().map(|s| s.id.clone()).collect();
        Self::build(sensors, subsystems, &order)
    }

    /// Validates all invariants and builds the model.
    ///
    /// `priority` must list every subsystem id exactly once, highest
    /// priority first.
    pub fn build(
        sensors: Vec<Sensor>,
        subsystems: Vec<Subsystem>,
        priority: &[SubsystemId],
    ) -> Result<Self, ModelError> {
        let mut index = BTreeMap::new();
        for (i, sensor) in sensors.iter().enumerate() {
            check_id(sensor.id.as_str())?;
            if index.insert(sensor.id.clone(), i).is_some() {
                return Err(ModelError::DuplicateSensor(sensor.id.clone()));
            }
            validate_sensor(sensor)?;
        }

        let mut by_id: BTreeMap<SubsystemId, Subsystem> = BTreeMap::new();
        for sub in subsystems {
            check_id(sub.id.as_str())?;
            if by_id.contains_key(&sub.id) {
                return Err(ModelError::DuplicateSubsystem(sub.id));
            }
            by_id.insert(sub.id.clone(), sub);
        }
        if priority.len() != by_id.len() {
            return Err(ModelError::BadPriority(format!(
                "{} entries for {} subsystems",
                priority.len(),
                by_id.len()
            )));
        }
        let mut ordered = Vec::with_capacity(by_id.len());
        for id in priority {
            match by_id.remove(id) {
                Some(sub) => ordered.push(sub),
                None if ordered.iter().any(|s: &Subsystem| &s.id == id) => {
                    return Err(ModelError::BadPriority(format!("`{id}` listed twice")))
                }
                None => return Err(ModelError::UnknownSubsystem(id.clone())),
            }
        }

        let mut model = Self {
            sensors,
            subsystems: Vec::new(),
            index,
            compiled: Vec::new(),
        };
        for sub in &ordered {
            model.validate_membership(sub)?;
        }
        let compiled = ordered
            .iter()
            .map(|sub| model.compile_rules(sub, &sub.rules))
            .collect::<Result<Vec<_>, _>>()?;
        model.subsystems = ordered;
        model.compiled = compiled;
        Ok(model)
    }

    fn validate_membership(&self, sub: &Subsystem) -> Result<(), ModelError> {
        if sub.sensors.is_empty() {
            return Err(ModelError::EmptySubsystem(sub.id.clone()));
        }
        let mut seen = BTreeSet::new();
        for s in &sub.sensors {
            if !self.index.contains_key(s) {
                return Err(ModelError::UnknownSensor {
                    context: format!("subsystem `{}`", sub.id),
                    sensor: s.clone(),
                });
            }
            if !seen.insert(s) {
                return Err(ModelError::RepeatedSensor {
                    subsystem: sub.id.clone(),
                    sensor: s.clone(),
                });
            }
        }
        if seen.len() == self.sensors.len() {
            return Err(ModelError::NotProperSubset(sub.id.clone()));
        }
        Ok(())
    }

    /// Checks a rule table against `sub`'s sensors and resolves it.
    ///
    /// Used for the model's own tables and for replacement tables injected
    /// as faults.
    pub(crate) fn compile_rules(
        &self,
        sub: &Subsystem,
        rules: &[Rule],
    ) -> Result<Vec<CompiledRule>, ModelError> {
        let mut out = Vec::with_capacity(rules.len());
        for (r, rule) in rules.iter().enumerate() {
            let context = format!("subsystem `{}` rule {r}", sub.id);
            let mut guard = Vec::with_capacity(rule.guard.len());
            for (s, l) in &rule.guard {
                if !sub.owns(s.as_str()) {
                    return Err(ModelError::GuardOutsideSubsystem {
                        context,
                        sensor: s.clone(),
                    });
                }
                guard.push(self.resolve(&context, s, l)?);
            }
            let mut effects = Vec::with_capacity(rule.effects.len());
            for (e, effect) in rule.effects.iter().enumerate() {
                let context = format!("{context} effect {e}");
                let (target, state) = self.resolve(&context, &effect.target, &effect.state)?;
                if effect.delay == 0 {
                    return Err(ModelError::ZeroDelay { context });
                }
                effects.push(CompiledEffect {
                    target,
                    state,
                    delay: effect.delay,
                });
            }
            out.push(CompiledRule { guard, effects });
        }
        for i in 0..rules.len() {
            for j in i + 1..rules.len() {
                if rules[i].overlaps(&rules[j]) {
                    return Err(ModelError::OverlappingGuards {
                        subsystem: sub.id.clone(),
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn resolve(
        &self,
        context: &str,
        sensor: &SensorId,
        state: &StateLabel,
    ) -> Result<(usize, usize), ModelError> {
        let s = *self
            .index
            .get(sensor)
            .ok_or_else(|| ModelError::UnknownSensor {
                context: context.to_owned(),
                sensor: sensor.clone(),
            })?;
        let l = self.sensors[s]
            .state_index(state.as_str())
            .ok_or_else(|| ModelError::UnknownState {
                context: context.to_owned(),
                sensor: sensor.clone(),
                state: state.clone(),
            })?;
        Ok((s, l))
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    /// Subsystems in priority order.
    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn sensor(&self, id: &str) -> Option<&Sensor> {
        self.index.get(id).map(|&i| &self.sensors[i])
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn subsystem(&self, id: &str) -> Option<&Subsystem> {
        self.subsystems.iter().find(|s| s.id.as_str() == id)
    }

    pub fn subsystem_index(&self, id: &str) -> Option<usize> {
        self.subsystems.iter().position(|s| s.id.as_str() == id)
    }

    pub fn priority(&self) -> Vec<SubsystemId> {
        self.subsystems.iter().map(|s| s.id.clone()).collect()
    }

    pub(crate) fn compiled(&self, subsystem: usize) -> &[CompiledRule] {
        &self.compiled[subsystem]
    }

    pub fn initial_state(&self) -> SystemState {
        self.sensors
            .iter()
            .map(|s| (s.id.clone(), s.initial.clone()))
            .collect()
    }

    /// Sensors owned by PRODUCT subsystems, in model order.
    pub fn product_sensors(&self) -> Vec<SensorId> {
        self.sensors
            .iter()
            .filter(|s| {
                self.subsystems
                    .iter()
                    .any(|sub| sub.kind == SubsystemKind::Product && sub.owns(s.id.as_str()))
            })
            .map(|s| s.id.clone())
            .collect()
    }

    /// Checks that `state` assigns a valid state to exactly the model's sensors.
    pub fn check_state(&self, state: &SystemState) -> Result<(), ModelError> {
        for (s, l) in state.iter() {
            self.resolve("system state", s, l)?;
        }
        if let Some(missing) = self.sensors.iter().find(|s| state.get(s.id.as_str()).is_none()) {
            return Err(ModelError::UnknownSensor {
                context: "system state is missing".to_owned(),
                sensor: missing.id.clone(),
            });
        }
        Ok(())
    }

    /// Every edge implied by a rule: guard sensor to effect target.
    pub fn derive_causal_graph(&self) -> CausalGraph {
        CausalGraph::from_model(self)
    }
}

fn validate_sensor(sensor: &Sensor) -> Result<(), ModelError> {
    if sensor.states.is_empty() {
        return Err(ModelError::NoStates(sensor.id.clone()));
    }
    for (i, (label, dist)) in sensor.states.iter().enumerate() {
        check_id(label.as_str())?;
        if label.as_str() == ANOMALOUS_LABEL {
            return Err(ModelError::ReservedLabel(sensor.id.clone()));
        }
        for (other, other_dist) in &sensor.states[..i] {
            if other == label {
                return Err(ModelError::DuplicateState {
                    sensor: sensor.id.clone(),
                    label: label.clone(),
                });
            }
            if other_dist == dist {
                return Err(ModelError::IdenticalStates {
                    sensor: sensor.id.clone(),
                    first: other.clone(),
                    second: label.clone(),
                });
            }
        }
    }
    if sensor.state_index(sensor.initial.as_str()).is_none() {
        return Err(ModelError::UnknownState {
            context: "initial state".to_owned(),
            sensor: sensor.id.clone(),
            state: sensor.initial.clone(),
        });
    }
    Ok(())
}
