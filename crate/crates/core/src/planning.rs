//! Production planning over product states.
//!
//! Modules offer functionalities that rewrite the state of the product
//! sensors. [`plan`] finds the cheapest chain of functionality calls that
//! takes the product from its initial state to a goal, by uniform-cost
//! search over the finite product state space.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PartialState, SensorId, StateLabel, SubsystemId, SubsystemKind, SystemModel};
use crate::simulation::{Intervention, Tick};

/// Placeholder replaced by the call's parameter in command states.
pub const PARAMETER_PLACEHOLDER: &str = "{param}";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanningError {
    #[error("functionality `{0}`: module is not in the model")]
    UnknownModule(String),
    #[error("functionality `{name}`: `{module}` is a {kind}, not a module")]
    NotAModule {
        name: String,
        module: SubsystemId,
        kind: SubsystemKind,
    },
    #[error("functionality `{0}` is declared twice")]
    DuplicateFunctionality(String),
    #[error("functionality `{0}`: duration must be at least 1")]
    ZeroDuration(String),
    #[error("functionality `{0}`: parameter domain has repeated or non-finite values")]
    BadDomain(String),
    #[error("{context}: `{sensor}` is not a product sensor")]
    NotProductSensor { context: String, sensor: SensorId },
    #[error("{context}: sensor `{sensor}` has no state `{state}`")]
    UnknownState {
        context: String,
        sensor: SensorId,
        state: StateLabel,
    },
    #[error("functionality `{name}`: transition parameter {parameter} is outside the domain")]
    TransitionParameter { name: String, parameter: f64 },
    #[error("functionality `{name}`: transitions {first} and {second} can both apply")]
    Nondeterministic {
        name: String,
        first: usize,
        second: usize,
    },
    #[error("{0}: initial state must give every product sensor a state")]
    PartialInitial(String),
    #[error("functionality `{name}` called with parameter {parameter:?} outside its domain")]
    ParameterOutsideDomain {
        name: String,
        parameter: Option<f64>,
    },
    #[error("no functionality `{0}`")]
    UnknownFunctionality(String),
}

/// One row of a functionality's transition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    #[serde(rename = "when", default)]
    pub guard: PartialState,
    /// Applies to this parameter only; `None` applies to every parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<f64>,
    #[serde(rename = "then", default)]
    pub output: PartialState,
}

/// An intervention issued `at` ticks after a call starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub at: Tick,
    pub sensor: SensorId,
    pub state: String,
}

/// A parametrized transformation a module applies to the product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Functionality {
    pub module: SubsystemId,
    pub name: String,
    /// Allowed parameter values in preference order. Empty means the call
    /// takes no parameter.
    #[serde(rename = "parameters", default, skip_serializing_if = "Vec::is_empty")]
    pub parameter_domain: Vec<f64>,
    pub duration: Tick,
    #[serde(default)]
    pub transitions: Vec<Transition>,
    /// Interventions that carry the call out in the simulator.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub commands: Vec<Command>,
}

impl Functionality {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.module, self.name)
    }

    pub fn is_parameterless(&self) -> bool {
        self.parameter_domain.is_empty()
    }

    /// Parameters a call may take: the domain, or a single `None`.
    pub fn parameters(&self) -> Vec<Option<f64>> {
        if self.is_parameterless() {
            vec![None]
        } else {
            self.parameter_domain.iter().copied().map(Some).collect()
        }
    }

    pub fn accepts(&self, parameter: Option<f64>) -> bool {
        match parameter {
            None => self.is_parameterless(),
            Some(p) => self.parameter_domain.contains(&p),
        }
    }

    fn parameter_index(&self, parameter: Option<f64>) -> Option<usize> {
        match parameter {
            None => self.is_parameterless().then_some(0),
            Some(p) => self.parameter_domain.iter().position(|&d| d == p),
        }
    }

    /// Checks the functionality against the product sensors of `model`.
    pub fn validate(&self, model: &SystemModel) -> Result<(), PlanningError> {
        let qualified = self.qualified_name();
        let module = model
            .subsystem(self.module.as_str())
            .ok_or_else(|| PlanningError::UnknownModule(qualified.clone()))?;
        if module.kind != SubsystemKind::Module {
            return Err(PlanningError::NotAModule {
                name: qualified,
                module: self.module.clone(),
                kind: module.kind,
            });
        }
        if self.duration == 0 {
            return Err(PlanningError::ZeroDuration(qualified));
        }
        let distinct: BTreeSet<u64> = self.parameter_domain.iter().map(|p| p.to_bits()).collect();
        if distinct.len() != self.parameter_domain.len()
            || self.parameter_domain.iter().any(|p| !p.is_finite())
        {
            return Err(PlanningError::BadDomain(qualified));
        }
        let products = model.product_sensors();
        for (i, t) in self.transitions.iter().enumerate() {
            let context = format!("functionality `{qualified}` transition {i}");
            for (sensor, state) in t.guard.iter().chain(&t.output) {
                check_product_state(model, &products, &context, sensor, state)?;
            }
            if let Some(p) = t.parameter {
                if !self.parameter_domain.contains(&p) {
                    return Err(PlanningError::TransitionParameter {
                        name: qualified,
                        parameter: p,
                    });
                }
            }
        }
        for (i, a) in self.transitions.iter().enumerate() {
            for (j, b) in self.transitions.iter().enumerate().skip(i + 1) {
                let same_parameter = match (a.parameter, b.parameter) {
                    (Some(x), Some(y)) => x == y,
                    _ => true,
                };
                let guards_meet = a
                    .guard
                    .iter()
                    .all(|(s, l)| b.guard.get(s).is_none_or(|o| o == l));
                if same_parameter && guards_meet {
                    return Err(PlanningError::Nondeterministic {
                        name: qualified,
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Ok(())
    }

    /// The command list of one call with `parameter` substituted.
    pub fn commands_for(&self, parameter: Option<f64>) -> Vec<Command> {
        let text = parameter.map(|p| p.to_string()).unwrap_or_default();
        self.commands
            .iter()
            .map(|c| Command {
                at: c.at,
                sensor: c.sensor.clone(),
                state: c.state.replace(PARAMETER_PLACEHOLDER, &text),
            })
            .collect()
    }
}

fn check_product_state(
    model: &SystemModel,
    products: &[SensorId],
    context: &str,
    sensor: &SensorId,
    state: &StateLabel,
) -> Result<(), PlanningError> {
    if !products.contains(sensor) {
        return Err(PlanningError::NotProductSensor {
            context: context.to_owned(),
            sensor: sensor.clone(),
        });
    }
    let known = model
        .sensor(sensor.as_str())
        .is_some_and(|s| s.state_index(state.as_str()).is_some());
    if known {
        Ok(())
    } else {
        Err(PlanningError::UnknownState {
            context: context.to_owned(),
            sensor: sensor.clone(),
            state: state.clone(),
        })
    }
}

/// Applies one call of `f` to a product state.
///
/// The matching transition's output overwrites the state. Without a
/// matching transition the state is returned unchanged.
pub fn apply_functionality(
    f: &Functionality,
    parameter: Option<f64>,
    state: &PartialState,
) -> Result<PartialState, PlanningError> {
    if !f.accepts(parameter) {
        return Err(PlanningError::ParameterOutsideDomain {
            name: f.qualified_name(),
            parameter,
        });
    }
    let mut next = state.clone();
    let applicable = f.transitions.iter().find(|t| {
        t.parameter.is_none_or(|p| Some(p) == parameter)
            && t.guard.iter().all(|(s, l)| state.get(s) == Some(l))
    });
    if let Some(t) = applicable {
        for (s, l) in &t.output {
            next.insert(s.clone(), l.clone());
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanningProblem {
    pub functionalities: Vec<Functionality>,
    /// A state for every product sensor.
    pub initial: PartialState,
    pub goal: PartialState,
}

impl PlanningProblem {
    /// Validates the problem against the product sensors of `model`.
    pub fn new(
        model: &SystemModel,
        functionalities: Vec<Functionality>,
        initial: PartialState,
        goal: PartialState,
    ) -> Result<Self, PlanningError> {
        let products = model.product_sensors();
        let mut names = BTreeSet::new();
        for f in &functionalities {
            f.validate(model)?;
            if !names.insert(f.qualified_name()) {
                return Err(PlanningError::DuplicateFunctionality(f.qualified_name()));
            }
        }
        for (s, l) in &initial {
            check_product_state(model, &products, "initial state", s, l)?;
        }
        if products.iter().any(|p| !initial.contains_key(p)) {
            return Err(PlanningError::PartialInitial("planning problem".into()));
        }
        for (s, l) in &goal {
            check_product_state(model, &products, "goal", s, l)?;
        }
        Ok(Self {
            functionalities,
            initial,
            goal,
        })
    }

    /// The problem with the initial product state read from `model`.
    pub fn from_model(
        model: &SystemModel,
        functionalities: Vec<Functionality>,
        goal: PartialState,
    ) -> Result<Self, PlanningError> {
        let initial = model
            .product_sensors()
            .into_iter()
            .map(|s| {
                let initial = model.sensor(s.as_str()).expect("owned sensor").initial.clone();
                (s, initial)
            })
            .collect();
        Self::new(model, functionalities, initial, goal)
    }

    pub fn is_goal(&self, state: &PartialState) -> bool {
        self.goal.iter().all(|(s, l)| state.get(s) == Some(l))
    }

    pub fn functionality(&self, module: &str, name: &str) -> Option<&Functionality> {
        self.functionalities
            .iter()
            .find(|f| f.module.as_str() == module && f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub module: SubsystemId,
    pub functionality: String,
    pub parameter: Option<f64>,
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}(", self.module, self.functionality)?;
        if let Some(p) = self.parameter {
            write!(f, "{p}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub total_duration: Tick,
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, step) in self.steps.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{step}")?;
        }
        write!(f, "] in {} ticks", self.total_duration)
    }
}

type Action<'a> = (&'a SubsystemId, &'a str, usize);

/// A minimum-duration plan, or `None` if the goal is unreachable.
///
/// Among plans of equal duration the shorter wins, then the one whose
/// calls come first by (module, functionality, position of the parameter
/// in its domain), compared step by step.
pub fn plan(problem: &PlanningProblem) -> Option<Plan> {
    let mut actions: Vec<(Action<'_>, &Functionality, Option<f64>)> = problem
        .functionalities
        .iter()
        .flat_map(|f| {
            f.parameters()
                .into_iter()
                .enumerate()
                .map(move |(i, p)| ((&f.module, f.name.as_str(), i), f, p))
        })
        .collect();
    actions.sort_by(|a, b| a.0.cmp(&b.0));

    let mut frontier = BinaryHeap::new();
    let mut closed: BTreeSet<PartialState> = BTreeSet::new();
    let mut best_key: BTreeMap<PartialState, (Tick, usize, Vec<usize>)> = BTreeMap::new();
    frontier.push(Reverse((0, 0, Vec::<usize>::new(), problem.initial.clone())));
    while let Some(Reverse((cost, _, path, state))) = frontier.pop() {
        if !closed.insert(state.clone()) {
            continue;
        }
        if problem.is_goal(&state) {
            return Some(Plan {
                steps: path
                    .iter()
                    .map(|&a| {
                        let (_, f, p) = &actions[a];
                        PlanStep {
                            module: f.module.clone(),
                            functionality: f.name.clone(),
                            parameter: *p,
                        }
                    })
                    .collect(),
                total_duration: cost,
            });
        }
        for (a, (_, f, p)) in actions.iter().enumerate() {
            let next = apply_functionality(f, *p, &state).expect("domain parameter");
            if closed.contains(&next) {
                continue;
            }
            let mut next_path = path.clone();
            next_path.push(a);
            let key = (cost + f.duration, next_path.len(), next_path.clone());
            if best_key.get(&next).is_some_and(|k| *k <= key) {
                continue;
            }
            best_key.insert(next.clone(), key);
            frontier.push(Reverse((cost + f.duration, next_path.len(), next_path, next)));
        }
    }
    None
}

/// True iff every step is a valid call and the steps reach the goal in
/// exactly `plan.total_duration` ticks.
pub fn validate_plan(plan: &Plan, problem: &PlanningProblem) -> bool {
    let mut state = problem.initial.clone();
    let mut duration = 0;
    for step in &plan.steps {
        let Some(f) = problem.functionality(step.module.as_str(), &step.functionality) else {
            return false;
        };
        match apply_functionality(f, step.parameter, &state) {
            Ok(next) => state = next,
            Err(_) => return false,
        }
        duration += f.duration;
    }
    duration == plan.total_duration && problem.is_goal(&state)
}

/// Interventions that carry out `plan` in the simulator from `start`.
pub fn plan_to_script(
    plan: &Plan,
    problem: &PlanningProblem,
    start: Tick,
) -> Result<Vec<Intervention>, PlanningError> {
    let mut at = start;
    let mut interventions = Vec::new();
    for step in &plan.steps {
        let f = problem
            .functionality(step.module.as_str(), &step.functionality)
            .ok_or_else(|| {
                PlanningError::UnknownFunctionality(format!("{}.{}", step.module, step.functionality))
            })?;
        if f.parameter_index(step.parameter).is_none() {
            return Err(PlanningError::ParameterOutsideDomain {
                name: f.qualified_name(),
                parameter: step.parameter,
            });
        }
        for c in f.commands_for(step.parameter) {
            interventions.push(Intervention::new(at + c.at, c.sensor, c.state));
        }
        at += f.duration;
    }
    interventions.sort_by_key(|i| i.tick);
    Ok(interventions)
}
