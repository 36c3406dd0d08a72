use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use omega_sim::configspace::{detect_bridges_and_barriers, io_mapping_redundancy};
use omega_sim::engine::batch::run_seeds;
use omega_sim::engine::check::{embedded_corpus, mismatches, paper_check, Corpus};
use omega_sim::engine::decompose::{decompose, default_parts, parse_parts, Operation};
use omega_sim::engine::metrics::{behavior_metrics, check_conservation, hazard, safety_report};
use omega_sim::engine::reach::{reachability, REACH_CAP};
use omega_sim::engine::report::{json9, ledger_csv, round_json, summary_json, trace_csv};
use omega_sim::engine::{load, Built, EngineError, Scenario};

/// `println!` that tolerates a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "omega-sim",
    version,
    about = "Simulate and analyse self-configuring systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv, ledger.csv, summary.json and behavior.json.
    Run {
        scenario: PathBuf,
        /// Seed; repeat for a batch, written to one subdirectory per seed.
        #[arg(long)]
        seed: Vec<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads for batches.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Configuration-space analysis: bridge search, hazard key, redundant configurations.
    Analyze {
        scenario: PathBuf,
        /// Bits per step for the bridge search; defaults to the full width.
        #[arg(long)]
        budget: Option<u32>,
        #[arg(long)]
        json: bool,
    },
    /// Reachability from start to goal per budget, with a dwell tolerance.
    Reachability {
        scenario: PathBuf,
        /// Budget in bits per tick; repeatable. Defaults to the scenario's list.
        #[arg(long)]
        budget: Vec<u32>,
        /// Ticks an illegal transition may last.
        #[arg(long)]
        theta: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Hazard keys, reliability and product safety.
    Safety {
        scenario: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Check a decomposition (dec_s, dec_c, dec_p, dec_i) against the scenario's events.
    Decompose {
        scenario: PathBuf,
        operation: Operation,
        /// Parts such as `0-3/4-7`; defaults to two halves.
        #[arg(long)]
        parts: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Reproduce the reference figures from the scenario corpus.
    PaperCheck {
        /// Directory of scenarios to use instead of the built-in corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Failure classes, mapped to exit codes.
enum Failure {
    Scenario(anyhow::Error),
    Run(anyhow::Error),
    Mismatch,
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        if e.is_scenario_error() {
            Failure::Scenario(e.into())
        } else {
            Failure::Run(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

fn read_scenario(path: &Path) -> Result<(Scenario, Built), Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::Scenario)?;
    load(&text).map_err(|e| Failure::Scenario(anyhow::anyhow!("{}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn print_json(v: &Value) {
    say!("{}", serde_json::to_string_pretty(v).expect("plain data"));
}

fn cmd_run(path: &Path, seeds: &[u64], out: &Path, jobs: usize) -> Result<(), Failure> {
    let (sc, built) = read_scenario(path)?;
    let seeds = if seeds.is_empty() {
        vec![sc.run.seed]
    } else {
        seeds.to_vec()
    };
    let results = run_seeds(&sc, &built, &seeds, jobs);
    for (seed, result) in seeds.iter().zip(results) {
        let (trace, summary) = result?;
        if let Err(e) = check_conservation(&trace) {
            return Err(Failure::Run(anyhow::anyhow!("bit accounting failed: {e}")));
        }
        let dir = if seeds.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("seed-{seed}"))
        };
        let behavior = serde_json::to_value(behavior_metrics(&trace)?).expect("plain data");
        write(&dir, "trace.csv", &trace_csv(&trace))?;
        write(&dir, "ledger.csv", &ledger_csv(&trace))?;
        write(&dir, "summary.json", &summary_json(&summary))?;
        write(
            &dir,
            "behavior.json",
            &(serde_json::to_string_pretty(&round_json(behavior)).expect("plain data") + "\n"),
        )?;
        log::info!(
            "seed {seed}: {} ticks, {} reconfigurations",
            trace.rows.len(),
            trace.reconfigurations.len()
        );
    }
    Ok(())
}

fn cmd_analyze(path: &Path, budget: Option<u32>, as_json: bool) -> Result<(), Failure> {
    let (sc, built) = read_scenario(path)?;
    let space = &built.space;
    let budget = budget.unwrap_or(space.total_width() as u32);
    let (mut reachable, mut route, mut min_budget) = (Value::Null, Value::Null, Value::Null);
    if let (Some(s), Some(g)) = (&sc.run.start, &sc.run.goal) {
        let r = detect_bridges_and_barriers(
            space,
            &built.point(s)?,
            &built.point(g)?,
            budget,
            REACH_CAP,
        )
        .map_err(|e| Failure::Run(e.into()))?;
        reachable = json!(r.reachable);
        route = json!(r
            .path
            .iter()
            .map(|p| p.values().to_vec())
            .collect::<Vec<_>>());
        min_budget = json!(r.min_budget);
    }
    let hazard_key = hazard(space, None).map_err(|e| Failure::Run(e.into()))?;
    let groups = if space.is_enumerable(REACH_CAP) {
        let plant = built.plant.clone();
        let report = io_mapping_redundancy(space, REACH_CAP, |p| {
            let mut probe = plant.clone();
            probe.set_active(p.clone()).map(|_| probe.output(0)).ok()
        })
        .map_err(|e| Failure::Run(e.into()))?;
        json!(report.groups)
    } else {
        Value::Null
    };
    let report = json!({
        "reachable": reachable,
        "path": route,
        "min_budget": min_budget,
        "hazard_key": hazard_key,
        "redundancy_groups": groups,
    });
    if as_json {
        print_json(&report);
    } else {
        say!(
            "space: {} dimensions, {} bits",
            space.dims().len(),
            space.total_width()
        );
        say!("reachable at {budget} bits/step: {}", report["reachable"]);
        say!("path: {}", report["path"]);
        say!("minimum budget: {}", report["min_budget"]);
        say!(
            "hazard key: {}",
            hazard_key.map_or("none (no illegal configurations)".into(), |k| format!(
                "{k} bits"
            ))
        );
        let n = report["redundancy_groups"].as_array().map_or(0, Vec::len);
        say!("redundant output groups: {n}");
    }
    Ok(())
}

fn cmd_reachability(
    path: &Path,
    budgets: &[u32],
    theta: Option<u64>,
    as_json: bool,
) -> Result<(), Failure> {
    let (sc, built) = read_scenario(path)?;
    let budgets = if budgets.is_empty() {
        sc.run.budgets.clone()
    } else {
        budgets.to_vec()
    };
    if budgets.is_empty() {
        return Err(Failure::Scenario(anyhow::anyhow!(
            "no budgets: pass --budget or set RUN budgets"
        )));
    }
    let theta = theta.unwrap_or(sc.run.theta);
    let rows = reachability(&sc, &built, &budgets, theta)?;
    if as_json {
        print_json(&json!({ "theta": theta, "rows": rows }));
    } else {
        say!("budget,theta,reachable,path_len,wall_ticks");
        for r in &rows {
            let opt = |x: Option<u64>| x.map_or(String::new(), |v| v.to_string());
            say!(
                "{},{theta},{},{},{}",
                r.budget,
                r.reachable,
                opt(r.path_len.map(|v| v as u64)),
                opt(r.wall_ticks)
            );
        }
    }
    Ok(())
}

fn cmd_safety(path: &Path, as_json: bool) -> Result<(), Failure> {
    let (sc, built) = read_scenario(path)?;
    let s = safety_report(&sc, &built)?;
    if as_json {
        print_json(&json!({ "R": json9(s.r), "h_k": s.h_k, "h_kp": s.h_kp, "S": s.s.map(json9) }));
    } else {
        let bits = |k: Option<u32>| {
            k.map_or("none (no illegal configurations)".into(), |k| {
                format!("{k} bits")
            })
        };
        say!("R     {}", json9(s.r));
        say!("h_k   {}", bits(s.h_k));
        say!("h_kp  {}", bits(s.h_kp));
        say!(
            "S     {}",
            s.s.map_or("undefined".into(), |v| json9(v).to_string())
        );
    }
    Ok(())
}

fn cmd_decompose(
    path: &Path,
    op: Operation,
    parts: Option<&str>,
    as_json: bool,
) -> Result<(), Failure> {
    let (sc, built) = read_scenario(path)?;
    let parts = match parts {
        Some(p) => parse_parts(p).map_err(|e| Failure::Scenario(anyhow::anyhow!(e)))?,
        None => default_parts(op, &built),
    };
    let d = decompose(&sc, &built, op, &parts)?;
    if as_json {
        print_json(&serde_json::to_value(&d.report).expect("plain data"));
    } else {
        let r = &d.report;
        say!(
            "{}: {}",
            r.operation,
            if r.permissible {
                "permissible"
            } else {
                "impermissible"
            }
        );
        say!("reason: {}", r.reason);
        if let Some(eq) = r.trace_equal {
            say!("trace equal: {eq}");
        }
        for (a, b) in d.before.iter().zip(&d.after) {
            say!(
                "transfer at tick {}: {} -> {} ticks",
                a.vtick,
                a.transfer,
                b.transfer
            );
        }
    }
    Ok(())
}

fn read_corpus(dir: &Path) -> anyhow::Result<Corpus> {
    let mut corpus = Corpus::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "scn") {
            let name = path
                .file_name()
                .expect("file")
                .to_string_lossy()
                .into_owned();
            corpus.insert(name, fs::read_to_string(&path)?);
        }
    }
    Ok(corpus)
}

fn cmd_paper_check(dir: Option<&Path>, as_json: bool) -> Result<(), Failure> {
    let corpus = match dir {
        Some(d) => read_corpus(d).map_err(Failure::Scenario)?,
        None => embedded_corpus(),
    };
    let rows = paper_check(&corpus);
    let bad = mismatches(&rows);
    if as_json {
        print_json(&json!({ "mismatches": bad, "rows": rows }));
    } else {
        say!(
            "{:<16} {:<36} {:>16} {:>16}  status",
            "scenario",
            "quantity",
            "expected",
            "observed"
        );
        for r in &rows {
            say!(
                "{:<16} {:<36} {:>16} {:>16}  {}",
                r.scenario,
                r.quantity,
                r.expected,
                r.observed,
                r.status
            );
            if let Some(n) = &r.note {
                say!("{:<16} note: {n}", "");
            }
        }
    }
    if bad > 0 {
        for r in rows.iter().filter(|r| r.status.to_string() == "MISMATCH") {
            eprintln!(
                "mismatch: {} {}: expected {}, observed {}",
                r.scenario, r.quantity, r.expected, r.observed
            );
        }
        return Err(Failure::Mismatch);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OMEGA_SIM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            jobs,
        } => cmd_run(scenario, seed, out, *jobs),
        Command::Analyze {
            scenario,
            budget,
            json,
        } => cmd_analyze(scenario, *budget, *json),
        Command::Reachability {
            scenario,
            budget,
            theta,
            json,
        } => cmd_reachability(scenario, budget, *theta, *json),
        Command::Safety { scenario, json } => cmd_safety(scenario, *json),
        Command::Decompose {
            scenario,
            operation,
            parts,
            json,
        } => cmd_decompose(scenario, *operation, parts.as_deref(), *json),
        Command::PaperCheck { corpus, json } => cmd_paper_check(corpus.as_deref(), *json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch) => ExitCode::from(1),
        Err(Failure::Scenario(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
