use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pearson_stein::experiments::{self, ExperimentConfig};
use pearson_stein::rng::with_threads;
use serde_json::Value;

#[derive(Parser)]
#[command(
    name = "pearson-stein",
    version,
    about = "Density convergence experiments for Pearson diffusions and weighted Gamma sums"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate from z0 and fit the decay rate of density gaps.
    ExpConvergence(RunArgs),
    /// Find (c, d) with LV <= -cV + d for V(y) = sqrt(y^2 + 1).
    Lyapunov(RunArgs),
    /// Weighted Gamma sums against Gamma(alpha) along an n-schedule.
    GammaSuperconvergence(RunArgs),
    /// Run every invariant sweep; exits 1 on any failure.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; optional for `validate`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory for config.json, results.csv and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn load(name: &str, path: Option<&PathBuf>) -> Result<ExperimentConfig, String> {
    let mut value = match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| format!("reading {}: {e}", p.display()))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| format!("parsing {}: {e}", p.display()))?
        }
        None if name == "validate" => Value::Object(Default::default()),
        None => return Err(format!("{name} needs --config <file>")),
    };
    let obj = value
        .as_object_mut()
        .ok_or("config must be a JSON object")?;
    match obj.get("experiment").and_then(Value::as_str) {
        Some(e) if e != name => return Err(format!("config is for `{e}`, not `{name}`")),
        Some(_) => {}
        None => {
            obj.insert("experiment".into(), Value::String(name.into()));
        }
    }
    serde_json::from_value(value).map_err(|e| format!("invalid config: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::ExpConvergence(a) => ("exp-convergence", a),
        Command::Lyapunov(a) => ("lyapunov", a),
        Command::GammaSuperconvergence(a) => ("gamma-superconvergence", a),
        Command::Validate(a) => ("validate", a),
    };
    let config = match load(name, args.config.as_ref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    let dir = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_default();
    let outcome = with_threads(args.threads, || {
        experiments::execute(config, args.seed, args.out.clone())
    })
    .and_then(|r| r);
    match outcome {
        Ok(report) => {
            println!(
                "{name}: {} ({})",
                if report.passed { "PASS" } else { "FAIL" },
                dir.display()
            );
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
