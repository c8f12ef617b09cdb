//! Command-line front end: schedule a scenario, simulate the resulting
//! schedule, and verify a recorded run. Artifacts go to files, diagnostics
//! to standard error, and the exit code tells scripts what happened:
//! 0 success, 1 usage error, 2 unreadable or invalid input, 3 mission
//! failure (trace still written), 4 artifact hash mismatch, 5 verification
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mission_core::controller::SynthConfig;
use mission_core::diagnostics::verify_trace;
use mission_core::formats::{
    load_scenario, read_trace, write_trace_for, FormatError, RawScenario, ReportDoc, ScheduleDoc,
};
use mission_core::scenario::Scenario;
use mission_core::scheduler::{brute_force_oracle, solve_exact, Schedule, SchedulerConfig};
use mission_core::sim::{run_mission, MissionStatus, SimConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_MISSION: u8 = 3;
const EXIT_HASH: u8 = 4;
const EXIT_VERDICT: u8 = 5;

#[derive(Parser)]
#[command(name = "mission", version, about = "Deadline task scheduling and funnel-controlled fleet simulation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the optimal task order and service levels for a scenario.
    Schedule(ScheduleArgs),
    /// Execute a schedule under the funnel controllers and record a trace.
    Simulate(SimulateArgs),
    /// Re-derive every certificate for a recorded run and judge it.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScheduleArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Exhaustive reference search instead of branch and bound.
    #[arg(long)]
    oracle: bool,
    /// Drop the travel leg from the start positions to the first task.
    #[arg(long)]
    no_initial_leg: bool,
    /// Objective weight override in [0, 1]; defaults to the scenario's.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output path for the schedule document.
    #[arg(long, default_value = "schedule.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Schedule document produced by `mission schedule`.
    schedule: PathBuf,
    /// Redraw initial positions from the scenario's start box.
    #[arg(long)]
    seed: Option<u64>,
    /// Integrator step size override.
    #[arg(long)]
    dt: Option<f64>,
    /// Directory receiving trace.csv and trace_edges.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Schedule document the run was driven by.
    schedule: PathBuf,
    /// Per-agent trace CSV.
    trace: PathBuf,
    /// Per-edge trace CSV.
    edges: PathBuf,
    /// Output path for the certificate report document.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Schedule(args) => cmd_schedule(&args),
        Cmd::Simulate(args) => cmd_simulate(&args),
        Cmd::Verify(args) => cmd_verify(&args),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn load(path: &Path) -> Result<(RawScenario, Scenario, String), u8> {
    load_scenario(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn print_schedule(doc: &ScheduleDoc) {
    for entry in &doc.entries {
        match entry.window {
            Some((lo, hi)) => eprintln!(
                "  task {} level {} window ({lo}, {hi}] estimated completion {}",
                entry.task, entry.qos, entry.ee
            ),
            None => eprintln!("  task {} rejected", entry.task),
        }
    }
    eprintln!(
        "  reward {} cost {} objective {}",
        doc.reward, doc.cost, doc.objective
    );
}

fn cmd_schedule(args: &ScheduleArgs) -> Result<(), u8> {
    if let Some(a) = args.alpha {
        if !(0.0..=1.0).contains(&a) {
            eprintln!("error: --alpha must lie in [0, 1], got {a}");
            return Err(EXIT_USAGE);
        }
    }
    let (_, scenario, hash) = load(&args.scenario)?;
    let config = SchedulerConfig {
        alpha: args.alpha,
        include_initial_leg: !args.no_initial_leg,
    };
    let schedule: Schedule = if args.oracle {
        brute_force_oracle(&scenario, &config).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_INPUT
        })?
    } else {
        solve_exact(&scenario, &config)
    };
    let doc = ScheduleDoc::from_schedule(&schedule, &scenario, &config, &hash);
    doc.save(&args.out).map_err(|e| {
        eprintln!("error: {}: {e}", args.out.display());
        EXIT_INPUT
    })?;
    eprintln!("schedule for scenario {}", short(&hash));
    print_schedule(&doc);
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), u8> {
    let mut sim = SimConfig::default();
    if let Some(dt) = args.dt {
        if !(dt > 0.0) || !dt.is_finite() {
            eprintln!("error: --dt must be a positive finite step, got {dt}");
            return Err(EXIT_USAGE);
        }
        sim.dt = dt;
    }
    sim.seed = args.seed;

    let (_, scenario, hash) = load(&args.scenario)?;
    let doc = ScheduleDoc::load(&args.schedule).map_err(|e| {
        eprintln!("error: {}: {e}", args.schedule.display());
        EXIT_INPUT
    })?;
    if doc.scenario_hash != hash {
        eprintln!(
            "error: schedule was computed for scenario {}, not {}",
            short(&doc.scenario_hash),
            short(&hash)
        );
        return Err(EXIT_INPUT);
    }
    let schedule = doc.check_against(&scenario).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_INPUT
    })?;

    let synth = SynthConfig::default();
    let trace = run_mission(&scenario, &schedule, &sim, &synth).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_INPUT
    })?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| {
        eprintln!("error: creating {}: {e}", args.out_dir.display());
        EXIT_INPUT
    })?;
    let main_path = args.out_dir.join("trace.csv");
    let edges_path = args.out_dir.join("trace_edges.csv");
    write_trace_for(&main_path, &edges_path, &trace, &scenario, &hash, &sim, &synth).map_err(
        |e| {
            eprintln!("error: writing trace: {e}");
            EXIT_INPUT
        },
    )?;

    for ex in &trace.executions {
        match ex.completion {
            Some(t) => eprintln!(
                "  task {} completed at t = {t} (window ({}, {}]), level {}",
                ex.task, ex.lower, ex.upper, ex.achieved
            ),
            None => eprintln!(
                "  task {} not completed (window ({}, {}])",
                ex.task, ex.lower, ex.upper
            ),
        }
    }
    eprintln!("wrote {} and {}", main_path.display(), edges_path.display());

    match trace.status {
        MissionStatus::Completed => {
            eprintln!("mission completed");
            Ok(())
        }
        MissionStatus::BoundViolation { task, t } => {
            eprintln!("mission failed: funnel bound violated on task {task} at t = {t}");
            Err(EXIT_MISSION)
        }
        MissionStatus::DeadlinePassed { task, t } => {
            eprintln!("mission failed: deadline passed on task {task} at t = {t}");
            Err(EXIT_MISSION)
        }
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), u8> {
    let (_, scenario, hash) = load(&args.scenario)?;
    let doc = ScheduleDoc::load(&args.schedule).map_err(|e| {
        eprintln!("error: {}: {e}", args.schedule.display());
        EXIT_INPUT
    })?;
    let (trace, meta) = read_trace(&args.trace, &args.edges).map_err(|e| match e {
        // A trace that no longer parses cleanly cannot pass verification.
        FormatError::MalformedTrace { .. } => {
            eprintln!("error: {e}");
            EXIT_VERDICT
        }
        other => {
            eprintln!("error: {other}");
            EXIT_INPUT
        }
    })?;

    if doc.scenario_hash != hash || meta.scenario_hash != hash {
        eprintln!(
            "error: artifact triple disagrees on the scenario: file {}, schedule {}, trace {}",
            short(&hash),
            short(&doc.scenario_hash),
            short(&meta.scenario_hash)
        );
        return Err(EXIT_HASH);
    }
    let schedule = doc.check_against(&scenario).map_err(|e| {
        eprintln!("verification failed: {e}");
        EXIT_VERDICT
    })?;

    let report = verify_trace(&trace, &scenario, &schedule, &meta.sim, &meta.synth);
    let pass = report.pass;
    for check in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("  mission check {} failed: {}", check.name, check.detail);
    }
    for cert in &report.tasks {
        let failed: Vec<_> = cert.checks.iter().filter(|c| !c.pass).collect();
        if failed.is_empty() {
            eprintln!("  task {} (case {}): all checks pass", cert.task, cert.case);
        } else {
            for check in failed {
                eprintln!(
                    "  task {} check {} failed: {}",
                    cert.task, check.name, check.detail
                );
            }
        }
    }
    ReportDoc::new(&hash, report).save(&args.out).map_err(|e| {
        eprintln!("error: {}: {e}", args.out.display());
        EXIT_INPUT
    })?;
    eprintln!("wrote {}", args.out.display());
    if pass {
        eprintln!("verdict: pass");
        Ok(())
    } else {
        eprintln!("verdict: fail");
        Err(EXIT_VERDICT)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
