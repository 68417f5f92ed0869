mod common;

use std::collections::BTreeSet;

use common::{load, run, sensor_set};
use ucm::detection::{expected_state_check, scan_anomalies, WindowConfig};
use ucm::diagnosis::{diagnose, explain, DiagnosisProblem};
use ucm::distributions::StateMatch;
use ucm::model::SubsystemId;
use ucm::planning::{plan, plan_to_script, validate_plan, PlanStep};
use ucm::simulation::{simulate, EventKind, Intervention, Script};

fn names(h: &BTreeSet<SubsystemId>) -> Vec<&str> {
    h.iter().map(|c| c.as_str()).collect()
}

#[test]
fn oven_heats_two_ticks_after_burner() {
    let (_, model) = load("knife");
    let script = Script {
        interventions: vec![
            Intervention::new(0, "lid_cmd", "Close"),
            Intervention::new(5, "burner_set", "Set100"),
        ],
        faults: vec![],
    };
    let trace = simulate(&model, &script, 1, 12).unwrap();
    let oven = trace.states("oven_temp").unwrap();
    assert!(oven[..7].iter().all(|l| *l == "Ambient"));
    assert!(oven[7..].iter().all(|l| *l == "Hot"));
}

#[test]
fn fault_free_run_hardens_the_knife() {
    let (doc, model) = load("knife");
    let trace = run(&doc, &model, &[], doc.seed);
    assert_eq!(trace.final_state("knife_hardness").unwrap(), "Hard");
    assert_eq!(trace.final_state("knife_temp").unwrap(), "Cold");
}

#[test]
fn stuck_lid_leaves_the_knife_soft() {
    let (doc, model) = load("knife");
    let trace = run(&doc, &model, &["lid_stuck"], doc.seed);
    assert!(trace.states("oven_temp").unwrap().iter().all(|l| *l == "Ambient"));
    assert!(trace.states("lid_state").unwrap().iter().all(|l| *l == "Open"));
    assert_eq!(trace.final_state("knife_hardness").unwrap(), "Soft");
    assert!(trace
        .events()
        .iter()
        .any(|e| matches!(&e.kind, EventKind::FaultActivated { component } if component == "lid_actuator")));
}

#[test]
fn seeds_change_readings_but_not_states() {
    let (doc, model) = load("knife");
    let a = run(&doc, &model, &[], 1);
    let b = run(&doc, &model, &[], 2);
    for s in a.sensors() {
        assert_eq!(a.states(s.as_str()), b.states(s.as_str()));
    }
    assert_ne!(a.values("oven_temp"), b.values("oven_temp"));
    assert_eq!(a, run(&doc, &model, &[], 1));
}

#[test]
fn fault_free_scan_is_quiet_on_steady_windows() {
    let (doc, model) = load("knife");
    let trace = run(&doc, &model, &[], doc.seed);
    let report = scan_anomalies(&trace, &model, &doc.window_config()).unwrap();
    assert_eq!(report.entries.len(), 8 * 15);
    let reference = run(&doc, &model, &[], doc.seed + 1);
    let deviations = expected_state_check(&trace, &reference, &model, &doc.window_config()).unwrap();
    assert!(deviations.is_empty(), "{deviations:?}");
}

#[test]
fn pinned_reading_between_states_is_anomalous() {
    let (doc, model) = load("knife");
    let trace = run(&doc, &model, &[], doc.seed);
    let records = trace
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.values[trace.column("oven_temp").unwrap()] = 400.0;
            r
        })
        .collect();
    let pinned = ucm::simulation::Trace::new(trace.sensors().to_vec(), records, vec![]);
    let report = scan_anomalies(&pinned, &model, &WindowConfig::default()).unwrap();
    assert!(report
        .entries
        .iter()
        .filter(|e| e.sensor == "oven_temp")
        .all(|e| e.verdict == StateMatch::Anomalous));
}

#[test]
fn lid_fault_deviations_lie_downstream() {
    let (doc, model) = load("knife");
    let reference = run(&doc, &model, &[], doc.seed);
    let faulty = run(&doc, &model, &["lid_stuck"], doc.seed + 1);
    let deviations = expected_state_check(&faulty, &reference, &model, &doc.window_config()).unwrap();
    let sensors: BTreeSet<&str> = deviations.iter().map(|d| d.sensor.as_str()).collect();
    assert_eq!(
        sensors,
        BTreeSet::from(["knife_hardness", "knife_temp", "lid_state", "oven_temp"])
    );
    let mut downstream = common::reachable(&model, "lid_state");
    downstream.extend(common::reachable(&model, "lid_cmd"));
    downstream.extend(["lid_cmd".to_owned(), "lid_state".to_owned()]);
    assert!(sensors.iter().all(|s| downstream.contains(*s)));
    let oven: Vec<_> = deviations.iter().filter(|d| d.sensor == "oven_temp").collect();
    assert!(oven
        .iter()
        .all(|d| d.expected == "Hot" && d.matched == StateMatch::State("Ambient".into())));
    // Hot from tick 22 in the reference: the first steady window starts at 25.
    assert_eq!(oven.first().unwrap().tick, 25);
}

fn lid_fault_diagnosis(observed: &[&str]) -> Vec<Vec<String>> {
    let (doc, model) = load("knife");
    let reference = run(&doc, &model, &[], doc.seed);
    let faulty = run(&doc, &model, &["lid_stuck"], doc.seed + 1);
    let deviations = expected_state_check(&faulty, &reference, &model, &doc.window_config()).unwrap();
    let script = doc.script(&[]).unwrap();
    let problem = DiagnosisProblem::new(&model, &script, doc.horizon, doc.window_config(), &deviations)
        .observe(observed.iter().copied());
    diagnose(&problem)
        .unwrap()
        .iter()
        .map(|h| names(&h.components).into_iter().map(str::to_owned).collect())
        .collect()
}

#[test]
fn lid_fault_with_oven_sensor() {
    let all: Vec<&str> = vec![
        "burner_set", "flame", "lid_cmd", "lid_state", "oven_temp", "knife_temp",
        "knife_hardness", "quench_cmd",
    ];
    let ranked = lid_fault_diagnosis(&all);
    assert_eq!(ranked, vec![vec!["lid_actuator".to_owned()]]);
}

#[test]
fn lid_fault_without_oven_sensor() {
    let observed = ["burner_set", "flame", "lid_cmd", "quench_cmd", "knife_hardness"];
    let ranked = lid_fault_diagnosis(&observed);
    let rank_one: BTreeSet<String> = ranked
        .iter()
        .filter(|h| h.len() == 1)
        .map(|h| h[0].clone())
        .collect();
    assert!(rank_one.contains("lid_actuator"), "{ranked:?}");
    assert_eq!(
        rank_one,
        sensor_set(&["cooler", "lid_actuator", "oven", "oven_chamber", "sensor-fault:knife_hardness"])
    );
}

#[test]
fn lid_fault_explanation() {
    let (doc, model) = load("knife");
    let reference = run(&doc, &model, &[], doc.seed);
    let faulty = run(&doc, &model, &["lid_stuck"], doc.seed + 1);
    let deviations = expected_state_check(&faulty, &reference, &model, &doc.window_config()).unwrap();
    let script = doc.script(&[]).unwrap();
    let problem = DiagnosisProblem::new(&model, &script, doc.horizon, doc.window_config(), &deviations);
    let top = diagnose(&problem).unwrap().remove(0);
    let graph = model.derive_causal_graph();
    let paths = explain(&top, &model, &graph, &deviations).unwrap();
    let hardness = paths.iter().find(|p| p.sensor == "knife_hardness").unwrap();
    let hops: Vec<(&str, &str, &str, u32)> = hardness
        .path
        .iter()
        .map(|e| (e.cause.as_str(), e.effect.as_str(), e.via.as_str(), e.delay))
        .collect();
    assert_eq!(
        hops,
        vec![
            ("lid_state", "oven_temp", "oven_chamber", 1),
            ("oven_temp", "knife_temp", "oven", 2),
            ("knife_temp", "knife_hardness", "cooler", 1),
        ]
    );
    let lid = paths.iter().find(|p| p.sensor == "lid_state").unwrap();
    assert!(lid.path.is_empty());
}

#[test]
fn planner_reproduces_the_script() {
    let (doc, model) = load("knife");
    let problem = doc.planning_problem(&model, None).unwrap();
    let p = plan(&problem).unwrap();
    assert_eq!(
        p.steps,
        vec![
            PlanStep {
                module: "oven".into(),
                functionality: "heat".into(),
                parameter: Some(100.0),
            },
            PlanStep {
                module: "cooler".into(),
                functionality: "quench".into(),
                parameter: None,
            },
        ]
    );
    assert_eq!(p.total_duration, 260);
    assert!(validate_plan(&p, &problem));
    let replay = plan_to_script(&p, &problem, 10).unwrap();
    assert_eq!(replay, doc.script.interventions);
    let trace = simulate(
        &model,
        &Script {
            interventions: replay,
            faults: vec![],
        },
        0,
        doc.horizon,
    )
    .unwrap();
    assert_eq!(trace.final_state("knife_hardness").unwrap(), "Hard");
}

#[test]
fn reversed_plan_fails_and_missing_oven_has_no_plan() {
    let (doc, model) = load("knife");
    let problem = doc.planning_problem(&model, None).unwrap();
    let mut p = plan(&problem).unwrap();
    p.steps.reverse();
    assert!(!validate_plan(&p, &problem));
    let mut bad = plan(&problem).unwrap();
    bad.steps[0].parameter = Some(60.0);
    assert!(!validate_plan(&bad, &problem));

    let mut no_oven = problem.clone();
    no_oven.functionalities.retain(|f| f.module != "oven");
    assert!(plan(&no_oven).is_none());

    let mut done = problem.clone();
    done.goal = done.initial.clone();
    let empty = plan(&done).unwrap();
    assert!(empty.steps.is_empty() && empty.total_duration == 0);
}
