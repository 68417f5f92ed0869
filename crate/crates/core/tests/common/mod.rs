//! Shared fixtures and brute-force oracles for the integration tests.
//!
//! The oracles reuse only the model, the simulator and the scenario types;
//! reachability, consistency and plan search are written out again here.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ucm::detection::{Deviation, WindowConfig};
use ucm::model::{PartialState, SensorId, SystemModel};
use ucm::planning::{apply_functionality, PlanningProblem};
use ucm::scenario::{bundled, ScenarioDocument};
use ucm::simulation::{simulate, FaultSpec, Script, Tick, Trace};

pub fn load(name: &str) -> (ScenarioDocument, SystemModel) {
    let doc = bundled(name).unwrap_or_else(|| panic!("no bundled scenario {name}"));
    let model = doc.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    (doc, model)
}

pub fn run(doc: &ScenarioDocument, model: &SystemModel, faults: &[&str], seed: u64) -> Trace {
    simulate(model, &doc.script(faults).unwrap(), seed, doc.horizon).unwrap()
}

/// Sensors reachable from `start` along one or more rule edges.
pub fn reachable(model: &SystemModel, start: &str) -> BTreeSet<String> {
    let mut next: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for sub in model.subsystems() {
        for rule in &sub.rules {
            for cause in rule.guard.keys() {
                for e in &rule.effects {
                    if e.target != *cause {
                        next.entry(cause.as_str()).or_default().insert(e.target.as_str());
                    }
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for &t in next.get(s).into_iter().flatten() {
            if seen.insert(t.to_owned()) {
                queue.push_back(t);
            }
        }
    }
    seen
}

/// Inputs of a diagnosis, spelled out for the oracle.
pub struct Case<'a> {
    pub model: &'a SystemModel,
    pub script: Script,
    pub horizon: Tick,
    pub window: WindowConfig,
    pub deviations: &'a [Deviation],
    pub observed: BTreeSet<String>,
    pub max_cardinality: usize,
}

fn labels_by_window(trace: &Trace, sensor: &str, w: &WindowConfig) -> BTreeMap<Tick, Option<String>> {
    let labels = trace.states(sensor).unwrap();
    let mut out = BTreeMap::new();
    let mut start = 0;
    while start + w.length <= labels.len() {
        let first = labels[start];
        let constant = labels[start..start + w.length].iter().all(|l| *l == first);
        out.insert(start as Tick, constant.then(|| first.to_string()));
        start += w.stride;
    }
    out
}

/// Every minimal consistent candidate set up to the cardinality bound,
/// found by testing all subsets of the candidates.
pub fn oracle_diagnoses(case: &Case<'_>) -> BTreeSet<BTreeSet<String>> {
    let model = case.model;
    let deviating: BTreeSet<String> = case
        .deviations
        .iter()
        .filter(|d| case.observed.contains(d.sensor.as_str()))
        .map(|d| d.sensor.to_string())
        .collect();
    let deviation_at: BTreeMap<(String, Tick), String> = case
        .deviations
        .iter()
        .filter(|d| case.observed.contains(d.sensor.as_str()))
        .map(|d| {
            let label = d.matched.state().map_or("ANOMALOUS".to_owned(), |l| l.to_string());
            ((d.sensor.to_string(), d.tick), label)
        })
        .collect();

    let mut candidates: Vec<String> = model.subsystems().iter().map(|s| s.id.to_string()).collect();
    for s in &deviating {
        let quiet = reachable(model, s)
            .iter()
            .filter(|d| case.observed.contains(*d))
            .all(|d| !deviating.contains(d));
        if quiet {
            candidates.push(format!("sensor-fault:{s}"));
        }
    }

    let reference = simulate(model, &case.script.fault_free(), 0, case.horizon).unwrap();
    let mut observed_labels: BTreeMap<(String, Tick), String> = BTreeMap::new();
    for s in &case.observed {
        for (start, label) in labels_by_window(&reference, s, &case.window) {
            if let Some(l) = label {
                observed_labels.insert((s.clone(), start), l);
            }
        }
    }
    observed_labels.extend(deviation_at.clone());

    let sensors_of = |c: &str| -> Vec<String> {
        match c.strip_prefix("sensor-fault:") {
            Some(s) => vec![s.to_owned()],
            None => model.subsystem(c).unwrap().sensors.iter().map(|s| s.to_string()).collect(),
        }
    };

    let consistent = |set: &BTreeSet<String>| -> bool {
        // Coverage.
        let mut reach = BTreeSet::new();
        for c in set {
            for s in sensors_of(c) {
                reach.extend(reachable(model, &s));
                reach.insert(s);
            }
        }
        if !deviating.iter().all(|d| reach.contains(d)) {
            return false;
        }
        // No contradiction.
        let mut free = BTreeSet::new();
        let mut faults = Vec::new();
        for c in set {
            if let Some(s) = c.strip_prefix("sensor-fault:") {
                free.insert(s.to_owned());
                continue;
            }
            let sub = model.subsystem(c).unwrap();
            for e in sub.rules.iter().flat_map(|r| &r.effects) {
                free.insert(e.target.to_string());
                free.extend(reachable(model, e.target.as_str()));
            }
            faults.push(FaultSpec {
                component: sub.id.clone(),
                replacement_rules: vec![],
                activation: 0,
            });
        }
        let script = Script {
            interventions: case.script.interventions.clone(),
            faults,
        };
        let predicted = simulate(model, &script, 0, case.horizon).unwrap();
        for s in &case.observed {
            for (start, label) in labels_by_window(&predicted, s, &case.window) {
                let (Some(label), Some(seen)) = (label, observed_labels.get(&(s.clone(), start))) else {
                    continue;
                };
                let excused = free.contains(s) && deviation_at.contains_key(&(s.clone(), start));
                if *seen != label && !excused {
                    return false;
                }
            }
        }
        true
    };

    let n = candidates.len();
    let mut all_consistent: Vec<BTreeSet<String>> = Vec::new();
    for mask in 1u64..(1 << n) {
        if (mask.count_ones() as usize) > case.max_cardinality {
            continue;
        }
        let set: BTreeSet<String> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| candidates[i].clone())
            .collect();
        if consistent(&set) {
            all_consistent.push(set);
        }
    }
    all_consistent
        .iter()
        .filter(|s| !all_consistent.iter().any(|o| o != *s && o.is_subset(s)))
        .cloned()
        .collect()
}

/// Cheapest duration of any call sequence of at most `max_len` steps that
/// reaches the goal.
///
/// Works length by length over all call sequences; sequences ending in the
/// same state are merged keeping the cheapest, since what follows depends
/// only on that state.
pub fn oracle_plan_duration(problem: &PlanningProblem, max_len: usize) -> Option<Tick> {
    let calls: Vec<(usize, Option<f64>)> = problem
        .functionalities
        .iter()
        .enumerate()
        .flat_map(|(i, f)| {
            let params: Vec<Option<f64>> = if f.parameter_domain.is_empty() {
                vec![None]
            } else {
                f.parameter_domain.iter().map(|&p| Some(p)).collect()
            };
            params.into_iter().map(move |p| (i, p))
        })
        .collect();
    let goal_met = |s: &PartialState| problem.goal.iter().all(|(k, v)| s.get(k) == Some(v));
    let mut best: Option<Tick> = None;
    let mut layer: BTreeMap<PartialState, Tick> = BTreeMap::from([(problem.initial.clone(), 0)]);
    for depth in 0..=max_len {
        for (s, cost) in &layer {
            if goal_met(s) {
                best = Some(best.map_or(*cost, |b| b.min(*cost)));
            }
        }
        if depth == max_len {
            break;
        }
        let mut next: BTreeMap<PartialState, Tick> = BTreeMap::new();
        for (s, cost) in &layer {
            for &(i, p) in &calls {
                let f = &problem.functionalities[i];
                let reached = apply_functionality(f, p, s).unwrap();
                let c = next.entry(reached).or_insert(Tick::MAX);
                *c = (*c).min(cost + f.duration);
            }
        }
        layer = next;
    }
    best
}

pub fn sensor_set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| (*s).to_owned()).collect()
}

pub fn all_sensors(model: &SystemModel) -> BTreeSet<String> {
    model.sensors().iter().map(|s| s.id.to_string()).collect()
}

pub fn ids(set: &BTreeSet<String>) -> Vec<SensorId> {
    set.iter().map(SensorId::new).collect()
}
