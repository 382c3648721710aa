//! `fvi`: bounds, sandwiches, training and mean-field runs from a config file or flags.

mod commands;
mod config;
mod dataset;
mod error;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use fvi_core::check::{run_all, Level};
use toml::{Table, Value};

use config::{parse_value, read_table, set_path, Command, RunConfig};
use error::CliError;
use record::{RunRecord, Timing, VERSION};

#[derive(Parser)]
#[command(name = "fvi", version, about = "f-divergence variational inference")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate a (importance-weighted) f-variational bound.
    Bound(RunArgs),
    /// Bracket the evidence between an upper and a lower bound, optionally over a sweep.
    Sandwich(RunArgs),
    /// Fit the variational parameters by stochastic gradient descent on a bound.
    Train(RunArgs),
    /// Coordinate ascent over fully factorized densities.
    Meanfield(RunArgs),
    /// Run the acceptance ledger; exits with code 3 on any failure.
    Check {
        #[arg(long, default_value = "quick")]
        level: Level,
        /// Write the reports as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split and normalize a CSV dataset, or generate a synthetic one.
    Dataset(dataset::DatasetArgs),
}

#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
struct RunArgs {
    /// TOML config, or a JSON run record to re-run.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Model parameter `key=value`, repeatable.
    #[arg(long = "model-param", value_name = "KEY=VALUE")]
    model_params: Vec<String>,
    /// Scalar observations, comma separated.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long, value_delimiter = ',')]
    theta: Option<Vec<f64>>,
    /// Divergence spec `name[:key=value,...][/reverse|/forward]`.
    #[arg(long)]
    divergence: Option<String>,
    #[arg(long)]
    upper: Option<String>,
    #[arg(long)]
    lower: Option<String>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "L")]
    l: Option<usize>,
    /// Defaults to `FVI_SEED`, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// `VAR:FROM:TO:POINTS` with `VAR` one of x, theta.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gradient: Option<String>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long = "max-sweeps")]
    max_sweeps: Option<usize>,
    /// Points per mean-field factor grid.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Run record path (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Any config key, `section.key=value` with a TOML value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

fn split_kv(raw: &str) -> Result<(&str, &str), CliError> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{raw}`")))
}

fn env_seed() -> Result<u64, CliError> {
    match std::env::var("FVI_SEED") {
        Ok(s) => s.trim().parse().map_err(|_| {
            CliError::Usage(format!("FVI_SEED must be an unsigned integer, got `{s}`"))
        }),
        Err(_) => Ok(0),
    }
}

/// File config, then flags, then the seed default; the result is what gets echoed.
fn resolve(command: Command, a: &RunArgs) -> Result<RunConfig, CliError> {
    let mut t = match &a.config {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    match t.get("command").and_then(Value::as_str) {
        Some(c) if c != command.as_str() => {
            return Err(CliError::Usage(format!(
                "config is for `{c}`, not `{}`",
                command.as_str()
            )))
        }
        _ => {
            t.insert("command".into(), Value::String(command.as_str().into()));
        }
    }
    let mut set = |path: &str, v: Value| set_path(&mut t, path, v);
    if let Some(m) = &a.model {
        set("model.name", Value::String(m.clone()))?;
    }
    for kv in &a.model_params {
        let (k, v) = split_kv(kv)?;
        set(&format!("model.{k}"), parse_value(v))?;
    }
    if let Some(x) = &a.x {
        let mut d = Table::new();
        d.insert("source".into(), Value::String("inline".into()));
        d.insert("x".into(), floats(x));
        set("data", Value::Table(d))?;
    }
    if let Some(f) = &a.family {
        set("family.name", Value::String(f.clone()))?;
    }
    if let Some(th) = &a.theta {
        set("family.theta", floats(th))?;
    }
    for (key, v) in [
        ("divergence", &a.divergence),
        ("upper", &a.upper),
        ("lower", &a.lower),
    ] {
        if let Some(v) = v {
            set(key, Value::String(v.clone()))?;
        }
    }
    if let Some(k) = a.k {
        set("estimator.K", int(k))?;
    }
    if let Some(l) = a.l {
        set("estimator.L", int(l))?;
    }
    if let Some(s) = a.seed {
        set("estimator.seed", Value::Integer(s as i64))?;
    }
    if let Some(sw) = &a.sweep {
        let parts: Vec<&str> = sw.split(':').collect();
        let [var, from, to, points] = parts[..] else {
            return Err(CliError::Usage(format!(
                "--sweep expects VAR:FROM:TO:POINTS, got `{sw}`"
            )));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--sweep: `{s}` is not a number")))
        };
        let n: usize = points
            .parse()
            .map_err(|_| CliError::Usage(format!("--sweep: `{points}` is not a count")))?;
        let mut s = Table::new();
        s.insert("variable".into(), Value::String(var.into()));
        s.insert("from".into(), Value::Float(num(from)?));
        s.insert("to".into(), Value::Float(num(to)?));
        s.insert("points".into(), int(n));
        set("sweep", Value::Table(s))?;
    }
    if let Some(e) = a.epochs {
        set("train.epochs", int(e))?;
    }
    if let Some(lr) = a.lr {
        set("train.learning_rate", Value::Float(lr))?;
    }
    if let Some(g) = &a.gradient {
        set("train.gradient", Value::String(g.clone()))?;
    }
    if let Some(o) = &a.objective {
        set("train.objective", Value::String(o.clone()))?;
    }
    if let Some(m) = a.max_sweeps {
        set("meanfield.max_sweeps", int(m))?;
    }
    if let Some(g) = a.grid {
        set("meanfield.grid", int(g))?;
    }
    if let Some(tol) = a.tol {
        let section = if command == Command::Train {
            "train.tol"
        } else {
            "meanfield.tol"
        };
        set(section, Value::Float(tol))?;
    }
    if let Some(o) = &a.out {
        set("output.json", Value::String(o.display().to_string()))?;
    }
    if let Some(c) = &a.csv {
        set("output.csv", Value::String(c.display().to_string()))?;
    }
    for kv in &a.set {
        let (k, v) = split_kv(kv)?;
        set(k, parse_value(v))?;
    }
    let has_seed = t
        .get("estimator")
        .and_then(Value::as_table)
        .is_some_and(|e| e.contains_key("seed"));
    if !has_seed {
        set_path(&mut t, "estimator.seed", Value::Integer(env_seed()? as i64))?;
    }
    RunConfig::from_table(t)
}

fn run(command: Command, args: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve(command, args)?;
    let start = Instant::now();
    let outcome = match command {
        Command::Bound => commands::cmd_bound(&cfg),
        Command::Sandwich => commands::cmd_sandwich(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Meanfield => commands::cmd_meanfield(&cfg),
    }?;
    let record = RunRecord {
        command: command.as_str().into(),
        version: VERSION.into(),
        git_revision: option_env!("FVI_GIT_REV").map(String::from),
        results: outcome.results,
        diagnostics: outcome.diagnostics,
        timing: Timing {
            wall_s: start.elapsed().as_secs_f64(),
        },
        config: cfg,
    };
    for w in &record.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    record.write(record.config.output.json.as_deref())
}

fn check(level: Level, out: Option<&std::path::Path>) -> Result<(), CliError> {
    let reports = run_all(level);
    for r in &reports {
        println!("{}", r.line());
    }
    if let Some(p) = out {
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        std::fs::write(p, text + "\n")?;
    }
    let failed: Vec<u8> = reports.iter().filter(|r| !r.passed).map(|r| r.id).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!("criteria {failed:?} failed")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.cmd {
        Cmd::Bound(a) => run(Command::Bound, a),
        Cmd::Sandwich(a) => run(Command::Sandwich, a),
        Cmd::Train(a) => run(Command::Train, a),
        Cmd::Meanfield(a) => run(Command::Meanfield, a),
        Cmd::Check { level, out } => check(*level, out.as_deref()),
        Cmd::Dataset(a) => dataset::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fvi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
