mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use ucm::detection::{detect_effect, scan_anomalies, WindowConfig};
use ucm::distributions::{two_sample_test, Distribution, StateMatch};
use ucm::model::{Effect, PartialState, Rule, Sensor, Subsystem, SubsystemKind, SystemModel};
use ucm::planning::{plan, validate_plan, Functionality, PlanningProblem, Transition};
use ucm::scenario::BUNDLED;
use ucm::simulation::{simulate, EventKind, Intervention, Script, Trace};

const SENSORS: usize = 4;
const LABELS: [&str; 2] = ["Lo", "Hi"];

fn sensor(i: usize) -> Sensor {
    Sensor::new(
        format!("s{i}"),
        [
            ("Lo".into(), Distribution::normal(0.0, 1.0).unwrap()),
            ("Hi".into(), Distribution::normal(10.0, 1.0).unwrap()),
        ],
        "Lo",
    )
}

/// A subsystem over one or two sensors with one rule per joint state.
fn arb_subsystem(id: usize) -> impl Strategy<Value = Subsystem> {
    (
        proptest::sample::subsequence((0..SENSORS).collect::<Vec<_>>(), 1..=2),
        proptest::collection::vec(
            proptest::option::of(proptest::collection::vec((0..SENSORS, 0..2usize, 1..4u32), 1..3)),
            4,
        ),
    )
        .prop_map(move |(owned, tables)| {
            let mut rules = Vec::new();
            for (code, effects) in tables.into_iter().enumerate().take(1 << owned.len()) {
                let Some(effects) = effects else { continue };
                let guard: Vec<(String, &str)> = owned
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| (format!("s{s}"), LABELS[(code >> k) & 1]))
                    .collect();
                let effects = effects
                    .into_iter()
                    .map(|(t, l, d)| Effect::new(format!("s{t}"), LABELS[l], d))
                    .collect();
                rules.push(Rule::new(guard, effects));
            }
            Subsystem::new(
                format!("c{id}"),
                SubsystemKind::Component,
                owned.iter().map(|s| format!("s{s}")),
                rules,
            )
        })
}

fn arb_model() -> impl Strategy<Value = SystemModel> {
    (1..=3usize)
        .prop_flat_map(|n| (0..n).map(arb_subsystem).collect::<Vec<_>>())
        .prop_map(|subs| SystemModel::new((0..SENSORS).map(sensor).collect(), subs).unwrap())
}

fn arb_script() -> impl Strategy<Value = Script> {
    proptest::collection::vec((0..30u64, 0..SENSORS, 0..2usize), 0..5).prop_map(|items| Script {
        interventions: items
            .into_iter()
            .map(|(t, s, l)| Intervention::new(t, format!("s{s}"), LABELS[l]))
            .collect(),
        faults: vec![],
    })
}

fn check_causal_order(trace: &Trace, model: &SystemModel) {
    let mut fired_per_tick: BTreeMap<u64, usize> = BTreeMap::new();
    for e in trace.events() {
        match &e.kind {
            EventKind::EffectApplied { fired_at, .. } => assert!(e.tick > *fired_at, "{e:?}"),
            EventKind::RuleFired { .. } => *fired_per_tick.entry(e.tick).or_default() += 1,
            _ => {}
        }
    }
    assert!(fired_per_tick.values().all(|&n| n <= model.subsystems().len()));
}

#[test]
fn bundled_traces_respect_causal_order() {
    for (name, _) in BUNDLED {
        let (doc, model) = common::load(name);
        let fault_names: Vec<&str> = doc.faults.iter().map(|f| f.name.as_str()).collect();
        check_causal_order(&common::run(&doc, &model, &[], doc.seed), &model);
        check_causal_order(&common::run(&doc, &model, &fault_names, doc.seed), &model);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn effects_follow_their_causes(model in arb_model(), script in arb_script(), seed in any::<u64>()) {
        let trace = simulate(&model, &script, seed, 40).unwrap();
        check_causal_order(&trace, &model);
    }

    #[test]
    fn runs_are_reproducible(model in arb_model(), script in arb_script(), seed in any::<u64>()) {
        let a = simulate(&model, &script, seed, 40).unwrap();
        let b = simulate(&model, &script, seed, 40).unwrap();
        prop_assert_eq!(&a, &b);
        let c = simulate(&model, &script, seed.wrapping_add(1), 40).unwrap();
        for s in a.sensors() {
            prop_assert_eq!(a.states(s.as_str()), c.states(s.as_str()));
        }
    }

    #[test]
    fn graph_delays_are_positive(model in arb_model()) {
        let graph = model.derive_causal_graph();
        prop_assert!(graph.edges().iter().all(|e| e.delay >= 1 && e.cause != e.effect));
        prop_assert_eq!(graph, model.derive_causal_graph());
    }

    #[test]
    fn two_sample_test_is_symmetric(
        a in proptest::collection::vec(-50.0..50.0f64, 1..60),
        b in proptest::collection::vec(-50.0..50.0f64, 1..60),
    ) {
        let ab = two_sample_test(&a, &b).unwrap();
        let ba = two_sample_test(&b, &a).unwrap();
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn detect_effect_is_symmetric(seed in any::<u64>(), onset in 20..80u64) {
        let model = SystemModel::new((0..SENSORS).map(sensor).collect(), vec![]).unwrap();
        let script = Script {
            interventions: vec![Intervention::new(onset, "s0", "Hi")],
            faults: vec![],
        };
        let trace = simulate(&model, &script, seed, 100).unwrap();
        let mirrored = Trace::new(
            trace.sensors().to_vec(),
            trace
                .records()
                .iter()
                .rev()
                .enumerate()
                .map(|(t, r)| ucm::simulation::TickRecord { tick: t as u64, ..r.clone() })
                .collect(),
            vec![],
        );
        let forward = detect_effect(&trace, "s0", 50, 20, 0.01).unwrap();
        let backward = detect_effect(&mirrored, "s0", 50, 20, 0.01).unwrap();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn matched_states_clear_the_corrected_level(model in arb_model(), script in arb_script(), seed in any::<u64>()) {
        let trace = simulate(&model, &script, seed, 120).unwrap();
        let config = WindowConfig { length: 30, stride: 15, alpha: 0.05 };
        let report = scan_anomalies(&trace, &model, &config).unwrap();
        for e in &report.entries {
            let level = config.alpha / e.p_values.len() as f64;
            match &e.verdict {
                StateMatch::State(label) => {
                    let p = e.p_values.iter().find(|(l, _)| l == label).unwrap().1;
                    prop_assert!(p >= level);
                }
                StateMatch::Anomalous => prop_assert!(e.p_values.iter().all(|(_, p)| *p < level)),
            }
        }
    }
}

fn product_model() -> SystemModel {
    let three = |id: &str, labels: [&str; 3]| {
        Sensor::new(
            id,
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| ((*l).into(), Distribution::degenerate(i as f64).unwrap())),
            labels[0],
        )
    };
    SystemModel::new(
        vec![
            three("p", ["A", "B", "C"]),
            three("q", ["A", "B", "C"]),
            three("cmd", ["A", "B", "C"]),
        ],
        vec![
            Subsystem::new("m0", SubsystemKind::Module, ["cmd"], vec![]),
            Subsystem::new("m1", SubsystemKind::Module, ["cmd"], vec![]),
            Subsystem::new("part", SubsystemKind::Product, ["p", "q"], vec![]),
        ],
    )
    .unwrap()
}

fn arb_functionality(index: usize) -> impl Strategy<Value = Functionality> {
    let row = (0..9usize, proptest::option::of(0..3usize), proptest::option::of(0..3usize));
    (
        proptest::collection::vec(row, 0..5),
        1..20u64,
        proptest::bool::ANY,
    )
        .prop_map(move |(rows, duration, parametrized)| {
            let labels = ["A", "B", "C"];
            let mut seen = std::collections::BTreeSet::new();
            let mut transitions = Vec::new();
            for (code, p_out, q_out) in rows {
                if !seen.insert(code) {
                    continue;
                }
                let guard: PartialState =
                    [("p".into(), labels[code % 3].into()), ("q".into(), labels[code / 3].into())].into();
                let mut output = PartialState::new();
                if let Some(p) = p_out {
                    output.insert("p".into(), labels[p].into());
                }
                if let Some(q) = q_out {
                    output.insert("q".into(), labels[q].into());
                }
                transitions.push(Transition {
                    guard,
                    parameter: parametrized.then_some(if code % 2 == 0 { 1.0 } else { 2.0 }),
                    output,
                });
            }
            Functionality {
                module: format!("m{}", index % 2).into(),
                name: format!("f{index}"),
                parameter_domain: if parametrized { vec![1.0, 2.0] } else { vec![] },
                duration,
                transitions,
                commands: vec![],
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn planner_matches_enumeration(
        fs in (1..=4usize).prop_flat_map(|n| (0..n).map(arb_functionality).collect::<Vec<_>>()),
        goal_code in 0..9usize,
        partial in proptest::bool::ANY,
    ) {
        let model = product_model();
        let labels = ["A", "B", "C"];
        let mut goal: PartialState = [("p".into(), labels[goal_code % 3].into())].into();
        if !partial {
            goal.insert("q".into(), labels[goal_code / 3].into());
        }
        let problem = PlanningProblem::from_model(&model, fs, goal).unwrap();
        let found = plan(&problem);
        if let Some(p) = &found {
            prop_assert!(validate_plan(p, &problem));
        }
        // Nine states: any reachable goal is reachable in at most eight calls,
        // and the cheapest route never repeats a state.
        prop_assert_eq!(found.map(|p| p.total_duration), common::oracle_plan_duration(&problem, 8));
    }
}
