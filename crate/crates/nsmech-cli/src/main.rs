//! Command line for the nsmech engine.
//!
//! Subcommands:
//! - `simulate`: run a scenario file to its horizon, write trajectory CSV
//!   and event JSONL, print a run summary.
//! - `impact`: resolve one impulsive contact problem from a problem file;
//!   stdout is a TOML document that parses back as the same problem.
//! - `check-restitution`: energetic feasibility of a restitution law,
//!   without resolving any impact.
//! - `verify`: randomized self-check suites over the operator algebra.
//!
//! Exit codes: 0 success, 2 invalid input or config, 3 stalled simulation,
//! 4 restitution refused on energy grounds, 5 internal consistency failure
//! (including failed verify suites).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nsmech::error::{Error, Result};
use nsmech::impact::resolve_impact;
use nsmech::output::write_run_outputs;
use nsmech::problem::{
    build_feasibility, build_problem, format_matrix_rows, format_problem_echo,
    format_result_table, parse_problem_file,
};
use nsmech::restitution::check_consistency;
use nsmech::scenario::load_scenario;
use nsmech::verify::{self, Fault, Suite, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "nsmech",
    version,
    about = "Projection-operator dynamics: simulate, resolve impacts, check restitution laws"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to its horizon and write trajectory and event logs.
    Simulate(SimulateArgs),
    /// Resolve one impulsive contact problem from a problem file.
    Impact(ImpactArgs),
    /// Check a restitution law for energetic feasibility.
    CheckRestitution(CheckArgs),
    /// Run randomized self-check suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory that relative output paths are resolved against.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override a scenario key, dotted path syntax; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Proceed past restitution laws that fail the energy feasibility test.
    #[arg(long)]
    allow_inconsistent: bool,
}

#[derive(Args)]
struct ImpactArgs {
    /// Problem file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Also write the output document to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resolve even if the restitution law fails the feasibility test.
    #[arg(long)]
    allow_inconsistent: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Problem file (TOML); `qdot_minus` is not required.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// projections | impacts | energy | qmi-lmi | all
    suite: String,
    /// Base seed for the randomized draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cases per suite.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Corrupt one internal quantity so the checks must fail. For testing
    /// the harness itself.
    #[arg(long, hide = true, value_name = "FAULT")]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    // Die quietly when stdout closes early (piped into `head` and the like)
    // instead of panicking on the broken pipe.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Impact(a) => cmd_impact(a),
        Command::CheckRestitution(a) => cmd_check(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    Error::invalid_input(format!("override '{s}' must have the form KEY=VALUE"))
                })
        })
        .collect()
}

fn cmd_simulate(a: SimulateArgs) -> Result<ExitCode> {
    let overrides = parse_overrides(&a.overrides)?;
    let mut cfg = load_scenario(&a.config, &overrides)?;
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    let mut sim = cfg.build()?;
    sim.allow_inconsistent = a.allow_inconsistent;
    sim.record_trajectory = true;
    let result = sim.run()?;

    let traj = resolve_out(&a.out, cfg.outputs.trajectory.as_deref(), "trajectory.csv");
    let events = resolve_out(&a.out, cfg.outputs.events.as_deref(), "events.jsonl");
    for path in [&traj, &events] {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
    }
    let summary = write_run_outputs(&result, Some(&traj), Some(&events))?;
    println!("trajectory          {}", traj.display());
    println!("events              {}", events.display());
    print!("{summary}");
    Ok(ExitCode::SUCCESS)
}

/// Relative output paths land under the `--out` directory; absolute paths
/// win as given.
fn resolve_out(dir: &Path, file: Option<&Path>, default: &str) -> PathBuf {
    let file = file.unwrap_or_else(|| Path::new(default));
    if file.is_absolute() {
        file.to_path_buf()
    } else {
        dir.join(file)
    }
}

fn cmd_impact(a: ImpactArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.config)?;
    let file = parse_problem_file(&text)?;
    let prob = build_problem(&file)?.with_allow_inconsistent(a.allow_inconsistent);
    let record = resolve_impact(&prob)?;

    let mut doc = String::new();
    doc.push_str("# impulsive contact resolved; this document parses back as a problem file\n");
    doc.push_str(&format!("# qdot_plus = {}\n", brief(record.qdot_plus.iter())));
    doc.push_str(&format!("# i_f       = {}\n", brief(record.i_f.iter())));
    doc.push_str(&format!("# i_lambda  = {}\n", brief(record.i_lambda.iter())));
    doc.push_str(&format!("# w_loss    = {:.6e}\n", record.w_loss));
    doc.push_str(&format!("# gamma     = {:.6e}\n", record.gamma));
    doc.push('\n');
    doc.push_str(&format_problem_echo(&file));
    doc.push('\n');
    doc.push_str(&format_result_table(&record));
    print!("{doc}");

    if let Some(path) = &a.out {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, &doc)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn brief<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let parts: Vec<String> = values.map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_check(a: CheckArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.config)?;
    let file = parse_problem_file(&text)?;
    let (mass, bundle, e) = build_feasibility(&file)?;
    let report = check_consistency(&mass, &bundle, &e)?;
    let verdict = if report.feasible { "feasible" } else { "infeasible" };
    println!("# restitution law over {} constraint row(s): {verdict}", bundle.nc());
    println!("feasible = {}", report.feasible);
    println!("qmi_eigenvalue = {:.16e}", report.qmi_eigenvalue);
    println!("qmi_threshold = {:.16e}", report.qmi_threshold);
    println!("lmi_eigenvalue = {:.16e}", report.lmi_eigenvalue);
    println!("lmi_threshold = {:.16e}", report.lmi_threshold);
    println!("q = {}", format_matrix_rows(&report.q));
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> Result<ExitCode> {
    let suite = Suite::parse(&a.suite)?;
    let fault = match a.inject_fault.as_deref() {
        None => None,
        Some("flip-impulse-sign") => Some(Fault::FlipImpulseSign),
        Some(other) => {
            return Err(Error::invalid_input(format!(
                "unknown fault '{other}'; known faults: flip-impulse-sign"
            )))
        }
    };
    let opts = VerifyOptions { seed: a.seed, count: a.count, fault };
    let reports = verify::run(suite, &opts)?;
    print!("{}", verify::format_reports(&reports));
    if verify::all_passed(&reports) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(5))
    }
}
