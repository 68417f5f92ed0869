//! `ucm`: simulate, detect, diagnose and plan from scenario files.
//!
//! Exit status is 0 on success, 1 when the question has no answer (the
//! reason is printed to stderr as `reason=...`), and 2 on usage, input or
//! parse errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ucm::detection::{expected_state_check, scan_anomalies, WindowConfig};
use ucm::diagnosis::{diagnose, explain, DiagnosisError, DiagnosisProblem, DEFAULT_MAX_CARDINALITY};
use ucm::model::{PartialState, SystemModel};
use ucm::planning::plan;
use ucm::scenario::{
    anomalies_csv, deviations_csv, diagnosis_csv, export_trace, import_trace, parse_deviations, parse_scenario,
    plan_csv, ScenarioDocument,
};
use ucm::simulation::{simulate, Tick};

#[derive(Parser)]
#[command(name = "ucm", version, about = "Simulate, monitor, diagnose and plan cyber-physical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's script and write the trace as CSV.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<Tick>,
        /// Activate a fault declared in the scenario (repeatable).
        #[arg(long = "fault", value_name = "NAME")]
        faults: Vec<String>,
    },
    /// Compare a trace with a reference run and write the deviations.
    Detect {
        scenario: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Reference trace; defaults to a fault-free run of the scenario.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-window state matches of the trace.
        #[arg(long)]
        anomalies: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Rank minimal fault hypotheses that explain the deviations.
    Diagnose {
        scenario: PathBuf,
        #[arg(long)]
        deviations: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict the observed sensors (repeatable); defaults to all.
        #[arg(long = "observe", value_name = "SENSOR")]
        observe: Vec<String>,
        #[arg(long = "max-card", default_value_t = DEFAULT_MAX_CARDINALITY)]
        max_card: usize,
        #[arg(long)]
        horizon: Option<Tick>,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Find the quickest sequence of functionalities reaching a goal.
    Plan {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Goal as `sensor=State` (repeatable); replaces the scenario goal.
        #[arg(long = "goal", value_name = "SENSOR=STATE", value_parser = parse_goal)]
        goal: Vec<(String, String)>,
    },
}

#[derive(Args)]
struct WindowFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

impl WindowFlags {
    fn resolve(&self, doc: &ScenarioDocument) -> Result<WindowConfig> {
        let mut config = doc.window_config();
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        if let Some(w) = self.window {
            config.length = w;
        }
        if let Some(s) = self.stride {
            config.stride = s;
        }
        config.validate()?;
        Ok(config)
    }
}

fn parse_goal(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_owned(), v.to_owned())),
        _ => Err(format!("expected sensor=State, got `{s}`")),
    }
}

enum Outcome {
    Done,
    NoAnswer(&'static str),
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn load(path: &Path) -> Result<(ScenarioDocument, SystemModel)> {
    let doc = parse_scenario(&read(path)?).with_context(|| format!("{}", path.display()))?;
    let model = doc.validate().with_context(|| format!("{}", path.display()))?;
    Ok((doc, model))
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Simulate {
            scenario,
            out,
            seed,
            horizon,
            faults,
        } => {
            let (doc, model) = load(&scenario)?;
            let names: Vec<&str> = faults.iter().map(String::as_str).collect();
            let script = doc.script(&names)?;
            let horizon = horizon.unwrap_or(doc.horizon);
            if horizon == 0 {
                bail!("--horizon must be at least 1");
            }
            let trace = simulate(&model, &script, seed.unwrap_or(doc.seed), horizon)?;
            write(&out, &export_trace(&trace))?;
            println!("{} ticks of {} sensors", trace.len(), trace.sensors().len());
        }
        Command::Detect {
            scenario,
            trace,
            reference,
            out,
            anomalies,
            seed,
            window,
        } => {
            let (doc, model) = load(&scenario)?;
            let config = window.resolve(&doc)?;
            let observed = import_trace(&read(&trace)?).with_context(|| format!("{}", trace.display()))?;
            let reference = match reference {
                Some(path) => import_trace(&read(&path)?).with_context(|| format!("{}", path.display()))?,
                None => simulate(
                    &model,
                    &doc.script(&[])?.fault_free(),
                    seed.unwrap_or(doc.seed),
                    observed.len() as Tick,
                )?,
            };
            if let Some(path) = anomalies {
                write(&path, &anomalies_csv(&scan_anomalies(&observed, &model, &config)?))?;
            }
            let deviations = expected_state_check(&observed, &reference, &model, &config)?;
            write(&out, &deviations_csv(&deviations))?;
            println!("{} deviating windows", deviations.len());
        }
        Command::Diagnose {
            scenario,
            deviations,
            out,
            observe,
            max_card,
            horizon,
            window,
        } => {
            let (doc, model) = load(&scenario)?;
            let config = window.resolve(&doc)?;
            let deviations =
                parse_deviations(&read(&deviations)?).with_context(|| format!("{}", deviations.display()))?;
            let script = doc.script(&[])?;
            let mut problem = DiagnosisProblem::new(&model, &script, horizon.unwrap_or(doc.horizon), config, &deviations)
                .max_cardinality(max_card);
            if !observe.is_empty() {
                problem = problem.observe(observe);
            }
            let ranked = match diagnose(&problem) {
                Ok(ranked) => ranked,
                Err(DiagnosisError::NothingToDiagnose) => return Ok(Outcome::NoAnswer("NOTHING_TO_DIAGNOSE")),
                Err(e) => return Err(e.into()),
            };
            if ranked.is_empty() {
                return Ok(Outcome::NoAnswer("NO_CONSISTENT_HYPOTHESIS"));
            }
            let graph = model.derive_causal_graph();
            let explanations = ranked
                .iter()
                .map(|h| explain(h, &model, &graph, &deviations))
                .collect::<Result<Vec<_>, _>>()?;
            write(&out, &diagnosis_csv(&ranked, &explanations))?;
            for (rank, h) in ranked.iter().enumerate() {
                let names: Vec<&str> = h.components.iter().map(|c| c.as_str()).collect();
                println!("{}. {}", rank + 1, names.join(", "));
            }
        }
        Command::Plan { scenario, out, goal } => {
            let (doc, model) = load(&scenario)?;
            let goal: Option<PartialState> =
                (!goal.is_empty()).then(|| goal.into_iter().map(|(k, v)| (k.into(), v.into())).collect());
            let problem = doc.planning_problem(&model, goal)?;
            let Some(found) = plan(&problem) else {
                return Ok(Outcome::NoAnswer("NO_PLAN"));
            };
            write(&out, &plan_csv(&found, &problem))?;
            println!("{found}");
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NoAnswer(reason)) => {
            eprintln!("reason={reason}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
