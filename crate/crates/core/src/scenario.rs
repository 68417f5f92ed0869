//! Scenario files and the CSV formats for traces and reports.
//!
//! A scenario is a TOML document describing sensors, subsystems, the
//! functionalities modules offer, a script of interventions, a library of
//! faults and the defaults for detection. The grammar is documented in the
//! guide chapter on the scenario format; [`parse_scenario`] and
//! [`serialize_scenario`] round-trip it.
//!
//! Parsing only checks the shape of the document. [`ScenarioDocument::validate`]
//! builds the model and checks everything that refers to it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{AnomalyReport, Deviation, DetectionError, WindowConfig};
use crate::diagnosis::{Explanation, FaultHypothesis};
use crate::distributions::{Distribution, StateMatch};
use crate::model::{
    ModelError, PartialState, Rule, Sensor, SensorId, StateLabel, Subsystem, SubsystemId,
    SystemModel, ANOMALOUS_LABEL,
};
use crate::planning::{Functionality, Plan, PlanningError, PlanningProblem};
use crate::simulation::{
    FaultSpec, Intervention, Script, SimulationError, Simulator, Tick, TickRecord, Trace,
};

pub const DEFAULT_HORIZON: Tick = 100;

/// Header of the trace CSV.
pub const TRACE_HEADER: [&str; 4] = ["tick", "sensor_id", "value", "state_label"];
pub const ANOMALY_HEADER: [&str; 5] = ["sensor_id", "window_start", "matched_state", "p_best", "anomalous"];
pub const DEVIATION_HEADER: [&str; 4] = ["sensor_id", "window_start", "expected_state", "matched_state"];
pub const DIAGNOSIS_HEADER: [&str; 5] = ["rank", "components", "cardinality", "explained", "paths"];
pub const PLAN_HEADER: [&str; 5] = ["step", "module", "functionality", "parameter", "cumulative_duration"];

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("knife", include_str!("../scenarios/knife.toml")),
    ("thermostat", include_str!("../scenarios/thermostat.toml")),
    ("sensor_chain", include_str!("../scenarios/sensor_chain.toml")),
    ("composition", include_str!("../scenarios/composition.toml")),
    ("workshop", include_str!("../scenarios/workshop.toml")),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Syntax(String),
    #[error("cannot serialize scenario: {0}")]
    Serialize(String),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("script.interventions[{index}]: tick {tick} is not before the horizon {horizon}")]
    TickAfterHorizon { index: usize, tick: Tick, horizon: Tick },
    #[error("script.interventions[{index}]: {source}")]
    Intervention { index: usize, source: ModelError },
    #[error("faults[{index}] `{name}`: {source}")]
    Fault {
        index: usize,
        name: String,
        source: SimulationError,
    },
    #[error("fault `{0}` is declared twice")]
    DuplicateFault(String),
    #[error("no fault named `{0}`")]
    UnknownFault(String),
    #[error("detection: {0}")]
    Detection(DetectionError),
    #[error("sensors/subsystems: {0}")]
    Model(#[from] ModelError),
    #[error("functionalities/planning: {0}")]
    Planning(#[from] PlanningError),
    #[error("line {line}: {reason}")]
    Csv { line: u64, reason: String },
}

/// A sensor state as written in a scenario: `{ label, law }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDoc {
    pub label: StateLabel,
    pub law: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorDoc {
    pub id: SensorId,
    /// Defaults to the first state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<StateLabel>,
    pub states: Vec<StateDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionDefaults {
    pub window: usize,
    pub stride: usize,
    pub alpha: f64,
}

impl Default for DetectionDefaults {
    fn default() -> Self {
        let c = WindowConfig::default();
        Self {
            window: c.length,
            stride: c.stride,
            alpha: c.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningDoc {
    #[serde(default)]
    pub goal: PartialState,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptDoc {
    #[serde(default)]
    pub interventions: Vec<Intervention>,
}

/// A named entry of the fault library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultDoc {
    pub name: String,
    pub component: SubsystemId,
    #[serde(default)]
    pub activation: Tick,
    /// Enabled faults are part of the scenario's script.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub enabled: bool,
    /// Rules the component follows once the fault is active.
    #[serde(default)]
    pub rules: Vec<Rule>,
}

impl FaultDoc {
    pub fn spec(&self) -> FaultSpec {
        FaultSpec {
            component: self.component.clone(),
            replacement_rules: self.rules.clone(),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: Tick,
    /// Subsystem priority, highest first. Defaults to declaration order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub priority: Vec<SubsystemId>,
    #[serde(default)]
    pub detection: DetectionDefaults,
    pub sensors: Vec<SensorDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsystems: Vec<Subsystem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functionalities: Vec<Functionality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planning: Option<PlanningDoc>,
    #[serde(default)]
    pub script: ScriptDoc,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultDoc>,
}

fn default_horizon() -> Tick {
    DEFAULT_HORIZON
}

/// Reads a scenario document. Only the shape is checked here.
pub fn parse_scenario(text: &str) -> Result<ScenarioDocument, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string().trim_end().to_owned()))
}

pub fn serialize_scenario(doc: &ScenarioDocument) -> Result<String, ScenarioError> {
    toml::to_string(doc).map_err(|e| ScenarioError::Serialize(e.to_string()))
}

/// The knife-hardening scenario.
pub fn knife_fixture() -> ScenarioDocument {
    bundled("knife").expect("bundled scenario parses")
}

/// A bundled scenario by name.
pub fn bundled(name: &str) -> Option<ScenarioDocument> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_scenario(text).expect("bundled scenario parses"))
}

impl ScenarioDocument {
    pub fn build_model(&self) -> Result<SystemModel, ScenarioError> {
        let sensors = self
            .sensors
            .iter()
            .map(|s| {
                let initial = s
                    .initial
                    .clone()
                    .or_else(|| s.states.first().map(|st| st.label.clone()))
                    .unwrap_or_else(|| StateLabel::new(ANOMALOUS_LABEL));
                Sensor::new(
                    s.id.clone(),
                    s.states.iter().map(|st| (st.label.clone(), st.law)),
                    initial,
                )
            })
            .collect();
        let model = if self.priority.is_empty() {
            SystemModel::new(sensors, self.subsystems.clone())?
        } else {
            SystemModel::build(sensors, self.subsystems.clone(), &self.priority)?
        };
        Ok(model)
    }

    /// Checks the whole document and returns its model.
    pub fn validate(&self) -> Result<SystemModel, ScenarioError> {
        if self.horizon == 0 {
            return Err(ScenarioError::ZeroHorizon);
        }
        let model = self.build_model()?;
        self.window_config()
            .validate()
            .map_err(ScenarioError::Detection)?;
        for (index, i) in self.script.interventions.iter().enumerate() {
            if i.tick >= self.horizon {
                return Err(ScenarioError::TickAfterHorizon {
                    index,
                    tick: i.tick,
                    horizon: self.horizon,
                });
            }
            model
                .resolve("intervention", &i.sensor, &i.state)
                .map_err(|source| ScenarioError::Intervention { index, source })?;
        }
        let mut names = BTreeSet::new();
        for (index, f) in self.faults.iter().enumerate() {
            if !names.insert(f.name.as_str()) {
                return Err(ScenarioError::DuplicateFault(f.name.clone()));
            }
            Simulator::new(&model, 0)
                .inject_fault(&f.spec())
                .map_err(|source| ScenarioError::Fault {
                    index,
                    name: f.name.clone(),
                    source,
                })?;
        }
        if !self.functionalities.is_empty() || self.planning.is_some() {
            self.planning_problem(&model, None)?;
        }
        Ok(model)
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            length: self.detection.window,
            stride: self.detection.stride,
            alpha: self.detection.alpha,
        }
    }

    pub fn fault(&self, name: &str) -> Option<&FaultDoc> {
        self.faults.iter().find(|f| f.name == name)
    }

    /// The scripted interventions plus every enabled fault and the faults
    /// named in `extra`.
    pub fn script(&self, extra: &[&str]) -> Result<Script, ScenarioError> {
        let mut faults: Vec<FaultSpec> = self
            .faults
            .iter()
            .filter(|f| f.enabled)
            .map(FaultDoc::spec)
            .collect();
        for name in extra {
            let f = self
                .fault(name)
                .ok_or_else(|| ScenarioError::UnknownFault((*name).to_owned()))?;
            if !f.enabled {
                faults.push(f.spec());
            }
        }
        Ok(Script {
            interventions: self.script.interventions.clone(),
            faults,
        })
    }

    /// The planning problem of this scenario, optionally with another goal.
    pub fn planning_problem(
        &self,
        model: &SystemModel,
        goal: Option<PartialState>,
    ) -> Result<PlanningProblem, ScenarioError> {
        let goal = goal
            .or_else(|| self.planning.as_ref().map(|p| p.goal.clone()))
            .unwrap_or_default();
        Ok(PlanningProblem::from_model(model, self.functionalities.clone(), goal)?)
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(writer: csv::Writer<Vec<u8>>) -> String {
    let bytes = writer.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("fields are UTF-8")
}

fn write_row<const N: usize>(w: &mut csv::Writer<Vec<u8>>, row: [&str; N]) {
    w.write_record(row).expect("writing to memory cannot fail");
}

fn csv_error(e: &csv::Error) -> ScenarioError {
    ScenarioError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    }
}

fn read_rows<const N: usize>(
    text: &str,
    header: [&str; N],
) -> Result<Vec<(u64, csv::StringRecord)>, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| csv_error(&e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(ScenarioError::Csv {
            line: 1,
            reason: format!("expected header `{}`", header.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, line: u64, i: usize, name: &str) -> Result<T, ScenarioError> {
    record[i].parse().map_err(|_| ScenarioError::Csv {
        line,
        reason: format!("bad {name} `{}`", &record[i]),
    })
}

/// Writes a trace as `tick,sensor_id,value,state_label` rows sorted by
/// tick and sensor id.
pub fn export_trace(trace: &Trace) -> String {
    let mut w = csv_writer();
    write_row(&mut w, TRACE_HEADER);
    let mut order: Vec<(usize, &SensorId)> = trace.sensors().iter().enumerate().collect();
    order.sort_by_key(|(_, s)| *s);
    for r in trace.records() {
        let tick = r.tick.to_string();
        for &(i, sensor) in &order {
            let value = r.values[i].to_string();
            write_row(&mut w, [&tick, sensor.as_str(), &value, r.states[i].as_str()]);
        }
    }
    finish(w)
}

/// Reads a trace written by [`export_trace`]. Columns come back in sensor
/// id order and the event log is empty.
pub fn import_trace(text: &str) -> Result<Trace, ScenarioError> {
    let mut ticks: BTreeMap<Tick, BTreeMap<SensorId, (f64, StateLabel)>> = BTreeMap::new();
    for (line, record) in read_rows(text, TRACE_HEADER)? {
        let tick: Tick = field(&record, line, 0, "tick")?;
        let value: f64 = field(&record, line, 2, "value")?;
        let sensor = SensorId::new(&record[1]);
        let previous = ticks
            .entry(tick)
            .or_default()
            .insert(sensor, (value, StateLabel::new(&record[3])));
        if previous.is_some() {
            return Err(ScenarioError::Csv {
                line,
                reason: format!("repeated row for tick {tick} and sensor `{}`", &record[1]),
            });
        }
    }
    let sensors: Vec<SensorId> = ticks
        .values()
        .flat_map(|row| row.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut records = Vec::with_capacity(ticks.len());
    let mut expected = ticks.keys().next().copied();
    for (tick, row) in ticks {
        if Some(tick) != expected || row.len() != sensors.len() {
            return Err(ScenarioError::Csv {
                line: 0,
                reason: format!("tick {tick} is missing or incomplete"),
            });
        }
        expected = Some(tick + 1);
        let (values, states) = row.into_values().unzip();
        records.push(TickRecord {
            tick,
            values,
            states,
        });
    }
    Ok(Trace::new(sensors, records, vec![]))
}

fn match_label(m: &StateMatch<StateLabel>) -> &str {
    match m {
        StateMatch::State(l) => l.as_str(),
        StateMatch::Anomalous => ANOMALOUS_LABEL,
    }
}

fn parse_match(text: &str) -> StateMatch<StateLabel> {
    if text == ANOMALOUS_LABEL {
        StateMatch::Anomalous
    } else {
        StateMatch::State(StateLabel::new(text))
    }
}

pub fn anomalies_csv(report: &AnomalyReport) -> String {
    let mut w = csv_writer();
    write_row(&mut w, ANOMALY_HEADER);
    for e in &report.entries {
        let start = e.window_start.to_string();
        let p = e.best_p_value().to_string();
        let flag = if e.verdict.is_anomalous() { "1" } else { "0" };
        write_row(&mut w, [e.sensor.as_str(), &start, match_label(&e.verdict), &p, flag]);
    }
    finish(w)
}

pub fn deviations_csv(deviations: &[Deviation]) -> String {
    let mut w = csv_writer();
    write_row(&mut w, DEVIATION_HEADER);
    for d in deviations {
        let start = d.tick.to_string();
        write_row(&mut w, [d.sensor.as_str(), &start, d.expected.as_str(), match_label(&d.matched)]);
    }
    finish(w)
}

pub fn parse_deviations(text: &str) -> Result<Vec<Deviation>, ScenarioError> {
    read_rows(text, DEVIATION_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(Deviation {
                sensor: SensorId::new(&r[0]),
                tick: field(&r, line, 1, "window start")?,
                expected: StateLabel::new(&r[2]),
                matched: parse_match(&r[3]),
            })
        })
        .collect()
}

/// Renders a path as `a -[via/delay]-> b -[via/delay]-> c`.
pub fn render_path(e: &Explanation) -> String {
    let Some(first) = e.path.first() else {
        return e.sensor.to_string();
    };
    let mut out = first.cause.to_string();
    for edge in &e.path {
        out.push_str(&format!(" -[{}/{}]-> ", edge.via, edge.delay));
        out.push_str(edge.effect.as_str());
    }
    out
}

/// One row per hypothesis; `explanations[i]` belongs to `hypotheses[i]`.
pub fn diagnosis_csv(hypotheses: &[FaultHypothesis], explanations: &[Vec<Explanation>]) -> String {
    let mut w = csv_writer();
    write_row(&mut w, DIAGNOSIS_HEADER);
    for (i, h) in hypotheses.iter().enumerate() {
        let rank = (i + 1).to_string();
        let components = join(h.components.iter().map(SubsystemId::as_str));
        let cardinality = h.cardinality.to_string();
        let explained = join(h.explained.iter().map(SensorId::as_str));
        let paths = explanations
            .get(i)
            .map(|es| es.iter().map(render_path).collect::<Vec<_>>().join("; "))
            .unwrap_or_default();
        write_row(&mut w, [&rank, &components, &cardinality, &explained, &paths]);
    }
    finish(w)
}

fn join<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.collect::<Vec<_>>().join(";")
}

pub fn plan_csv(plan: &Plan, problem: &PlanningProblem) -> String {
    let mut w = csv_writer();
    write_row(&mut w, PLAN_HEADER);
    let mut elapsed = 0;
    for (i, step) in plan.steps.iter().enumerate() {
        elapsed += problem
            .functionality(step.module.as_str(), &step.functionality)
            .map_or(0, |f| f.duration);
        let index = (i + 1).to_string();
        let parameter = step.parameter.map(|p| p.to_string()).unwrap_or_default();
        let cumulative = elapsed.to_string();
        write_row(&mut w, [&index, step.module.as_str(), &step.functionality, &parameter, &cumulative]);
    }
    finish(w)
}
