//! Discrete-time execution of a [`SystemModel`].
//!
//! Each call to [`Simulator::step`] executes one tick `t`:
//!
//! 1. faults whose activation tick has come swap in their replacement tables;
//! 2. effects due at `t` are applied, then pending interventions (which win);
//! 3. every subsystem, in priority order, fires the rule its current state
//!    matches, if any, queueing each effect for `t + delay`;
//! 4. every sensor draws one reading from the law of its current state.
//!
//! When several effects land on one sensor in the same tick, the one from
//! the higher-priority subsystem wins; within a subsystem later rules win,
//! then later firings, then later effects in the rule. Randomness only enters
//! in step 4, so the state trajectory does not depend on the seed.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CompiledRule, ModelError, Rule, SensorId, StateLabel, SubsystemId, SystemModel, SystemState,
};

/// Discrete time index.
pub type Tick = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("intervention scheduled for tick {tick}, but the simulator is already at tick {now}")]
    InterventionInPast { tick: Tick, now: Tick },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

/// Replaces a component's rule table with its observed (faulty) behavior
/// from `activation` on.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub component: SubsystemId,
    pub replacement_rules: Vec<Rule>,
    pub activation: Tick,
}

/// Exogenous forcing of `sensor` into `state` at `tick`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intervention {
    pub tick: Tick,
    pub sensor: SensorId,
    pub state: StateLabel,
}

impl Intervention {
    pub fn new(tick: Tick, sensor: impl Into<SensorId>, state: impl Into<StateLabel>) -> Self {
        Self {
            tick,
            sensor: sensor.into(),
            state: state.into(),
        }
    }
}

/// Timed interventions and faults applied during a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script {
    pub interventions: Vec<Intervention>,
    pub faults: Vec<FaultSpec>,
}

impl Script {
    /// The same interventions without any faults.
    pub fn fault_free(&self) -> Script {
        Script {
            interventions: self.interventions.clone(),
            faults: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    RuleFired {
        subsystem: SubsystemId,
        rule: usize,
    },
    EffectApplied {
        subsystem: SubsystemId,
        rule: usize,
        sensor: SensorId,
        state: StateLabel,
        fired_at: Tick,
    },
    Intervention {
        sensor: SensorId,
        state: StateLabel,
    },
    FaultActivated {
        component: SubsystemId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub tick: Tick,
    pub kind: EventKind,
}

/// Readings and ground-truth states of every sensor at one tick, in trace
/// sensor order.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: Tick,
    pub values: Vec<f64>,
    pub states: Vec<StateLabel>,
}

/// A run: one record per tick plus the event log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    sensors: Vec<SensorId>,
    records: Vec<TickRecord>,
    events: Vec<Event>,
}

impl Trace {
    /// Assembles a trace from records whose columns follow `sensors`.
    ///
    /// # Panics
    ///
    /// If a record's width differs from `sensors.len()`.
    pub fn new(sensors: Vec<SensorId>, records: Vec<TickRecord>, events: Vec<Event>) -> Self {
        for r in &records {
            assert!(
                r.values.len() == sensors.len() && r.states.len() == sensors.len(),
                "record at tick {} has the wrong width",
                r.tick
            );
        }
        Self {
            sensors,
            records,
            events,
        }
    }

    pub fn sensors(&self) -> &[SensorId] {
        &self.sensors
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column(&self, sensor: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.as_str() == sensor)
    }

    /// Readings of one sensor over the whole trace.
    pub fn values(&self, sensor: &str) -> Option<Vec<f64>> {
        let c = self.column(sensor)?;
        Some(self.records.iter().map(|r| r.values[c]).collect())
    }

    /// Ground-truth states of one sensor over the whole trace.
    pub fn states(&self, sensor: &str) -> Option<Vec<&StateLabel>> {
        let c = self.column(sensor)?;
        Some(self.records.iter().map(|r| &r.states[c]).collect())
    }

    pub fn final_state(&self, sensor: &str) -> Option<&StateLabel> {
        let c = self.column(sensor)?;
        self.records.last().map(|r| &r.states[c])
    }
}

#[derive(Debug, Clone)]
struct PendingEffect {
    subsystem: usize,
    rule: usize,
    effect: usize,
    fired_at: Tick,
    target: usize,
    state: usize,
}

impl PendingEffect {
    /// Larger wins.
    fn precedence(&self) -> (std::cmp::Reverse<usize>, usize, Tick, usize) {
        (
            std::cmp::Reverse(self.subsystem),
            self.rule,
            self.fired_at,
            self.effect,
        )
    }
}

#[derive(Debug, Clone)]
struct ArmedFault {
    subsystem: usize,
    activation: Tick,
    rules: Vec<CompiledRule>,
}

/// A running simulation of one model. Owned by a single caller.
#[derive(Debug, Clone)]
pub struct Simulator<'m> {
    model: &'m SystemModel,
    tick: Tick,
    state: Vec<usize>,
    tables: Vec<Vec<CompiledRule>>,
    faults: Vec<ArmedFault>,
    queue: BTreeMap<Tick, Vec<PendingEffect>>,
    interventions: BTreeMap<Tick, Vec<(usize, usize)>>,
    rng: ChaCha8Rng,
    trace: Trace,
}

impl<'m> Simulator<'m> {
    /// All sensors in their initial states at tick 0.
    pub fn new(model: &'m SystemModel, seed: u64) -> Self {
        let state = model
            .sensors()
            .iter()
            .map(|s| s.state_index(s.initial.as_str()).expect("validated"))
            .collect();
        let tables = (0..model.subsystems().len())
            .map(|i| model.compiled(i).to_vec())
            .collect();
        Self {
            model,
            tick: 0,
            state,
            tables,
            faults: Vec::new(),
            queue: BTreeMap::new(),
            interventions: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Trace::new(
                model.sensors().iter().map(|s| s.id.clone()).collect(),
                Vec::new(),
                Vec::new(),
            ),
        }
    }

    /// Builds a simulator with every intervention and fault of `script` scheduled.
    pub fn with_script(
        model: &'m SystemModel,
        seed: u64,
        script: &Script,
    ) -> Result<Self, SimulationError> {
        let mut sim = Self::new(model, seed);
        for i in &script.interventions {
            sim.schedule_intervention(i.tick, &i.sensor, &i.state)?;
        }
        for f in &script.faults {
            sim.inject_fault(f)?;
        }
        Ok(sim)
    }

    pub fn model(&self) -> &'m SystemModel {
        self.model
    }

    /// The tick the next [`step`](Self::step) will execute.
    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn state(&self) -> SystemState {
        self.model
            .sensors()
            .iter()
            .zip(&self.state)
            .map(|(s, &l)| (s.id.clone(), s.states[l].0.clone()))
            .collect()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    /// Forces `sensor` into `state` at the start of the next tick.
    pub fn intervene(&mut self, sensor: &SensorId, state: &StateLabel) -> Result<(), SimulationError> {
        self.schedule_intervention(self.tick, sensor, state)
    }

    pub fn schedule_intervention(
        &mut self,
        tick: Tick,
        sensor: &SensorId,
        state: &StateLabel,
    ) -> Result<(), SimulationError> {
        let target = self.model.resolve("intervention", sensor, state)?;
        if tick < self.tick {
            return Err(SimulationError::InterventionInPast {
                tick,
                now: self.tick,
            });
        }
        self.interventions.entry(tick).or_default().push(target);
        Ok(())
    }

    /// Arms a fault. Activation ticks already passed take effect at the next tick.
    pub fn inject_fault(&mut self, fault: &FaultSpec) -> Result<(), SimulationError> {
        let subsystem = self
            .model
            .subsystem_index(fault.component.as_str())
            .ok_or_else(|| ModelError::UnknownSubsystem(fault.component.clone()))?;
        let rules = self
            .model
            .compile_rules(&self.model.subsystems()[subsystem], &fault.replacement_rules)?;
        self.faults.push(ArmedFault {
            subsystem,
            activation: fault.activation.max(self.tick),
            rules,
        });
        Ok(())
    }

    fn log(&mut self, kind: EventKind) {
        self.trace.events.push(Event {
            tick: self.tick,
            kind,
        });
    }

    /// Executes one tick and returns its record.
    pub fn step(&mut self) -> &TickRecord {
        let now = self.tick;
        let model = self.model;
        let subsystems = model.subsystems();

        let (due, armed): (Vec<_>, Vec<_>) = std::mem::take(&mut self.faults)
            .into_iter()
            .partition(|f| f.activation <= now);
        self.faults = armed;
        for fault in due {
            self.tables[fault.subsystem] = fault.rules;
            self.log(EventKind::FaultActivated {
                component: subsystems[fault.subsystem].id.clone(),
            });
        }

        if let Some(pending) = self.queue.remove(&now) {
            let mut winners: BTreeMap<usize, PendingEffect> = BTreeMap::new();
            for p in pending {
                match winners.get(&p.target) {
                    Some(w) if w.precedence() >= p.precedence() => {}
                    _ => {
                        winners.insert(p.target, p);
                    }
                }
            }
            for (target, p) in winners {
                self.state[target] = p.state;
                let sensor = &model.sensors()[target];
                self.log(EventKind::EffectApplied {
                    subsystem: subsystems[p.subsystem].id.clone(),
                    rule: p.rule,
                    sensor: sensor.id.clone(),
                    state: sensor.states[p.state].0.clone(),
                    fired_at: p.fired_at,
                });
            }
        }
        if let Some(forced) = self.interventions.remove(&now) {
            for (target, state) in forced {
                self.state[target] = state;
                let sensor = &model.sensors()[target];
                self.log(EventKind::Intervention {
                    sensor: sensor.id.clone(),
                    state: sensor.states[state].0.clone(),
                });
            }
        }

        let fired: Vec<(usize, usize)> = self
            .tables
            .iter()
            .enumerate()
            .filter_map(|(sub, table)| table.iter().position(|r| r.matches(&self.state)).map(|r| (sub, r)))
            .collect();
        for (sub, r) in fired {
            for (e, effect) in self.tables[sub][r].effects.iter().enumerate() {
                self.queue
                    .entry(now + Tick::from(effect.delay))
                    .or_default()
                    .push(PendingEffect {
                        subsystem: sub,
                        rule: r,
                        effect: e,
                        fired_at: now,
                        target: effect.target,
                        state: effect.state,
                    });
            }
            self.log(EventKind::RuleFired {
                subsystem: subsystems[sub].id.clone(),
                rule: r,
            });
        }

        let mut values = Vec::with_capacity(self.state.len());
        let mut states = Vec::with_capacity(self.state.len());
        for (sensor, &l) in model.sensors().iter().zip(&self.state) {
            let (label, dist) = &sensor.states[l];
            values.push(dist.draw(&mut self.rng));
            states.push(label.clone());
        }
        self.trace.records.push(TickRecord {
            tick: now,
            values,
            states,
        });
        self.tick += 1;
        self.trace.records.last().expect("just pushed")
    }

    /// Steps until `horizon` ticks have been executed and returns the trace.
    pub fn run(&mut self, horizon: Tick) -> Result<Trace, SimulationError> {
        if horizon == 0 {
            return Err(SimulationError::ZeroHorizon);
        }
        while self.tick < horizon {
            self.step();
        }
        Ok(self.trace.clone())
    }
}

/// Runs `script` on `model` for `horizon` ticks.
pub fn simulate(
    model: &SystemModel,
    script: &Script,
    seed: u64,
    horizon: Tick,
) -> Result<Trace, SimulationError> {
    let mut sim = Simulator::with_script(model, seed, script)?;
    sim.run(horizon)?;
    Ok(sim.into_trace())
}
