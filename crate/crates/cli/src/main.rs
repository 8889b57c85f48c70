//! `voltheta`: runs scenario files and writes CSV/JSON artifacts with a manifest.
//!
//! Exit codes: 0 all thresholds pass, 1 a threshold failed, 2 the scenario is
//! invalid (nothing is written), 3 the computation failed.

mod catalog;
mod commands;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use scenario::{Command, Validated};

/// Environment variable overriding the output directory (below `--out`).
const OUT_ENV: &str = "VOLTHETA_OUT";

#[derive(Parser)]
#[command(name = "voltheta", version, about = "Scenario runner for Volterra-process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate Gaussian Volterra paths or a rough volatility model.
    Simulate(RunArgs),
    /// Telescoped functional Itô check and singular pairing rates.
    VerifyIto(RunArgs),
    /// Closed-form conditional expectations along simulated paths.
    SolveLinear(RunArgs),
    /// Regression Monte Carlo for a BSDE.
    SolveBsde(RunArgs),
    /// Price a claim under rough Heston or rough Bergomi.
    Price(RunArgs),
    /// Discrete-rebalancing hedging experiment.
    Hedge(RunArgs),
    /// Scaling and moment diagnostics of the Θ field.
    Diagnose(RunArgs),
    /// List bundled scenarios, optionally filtered by a substring.
    List { filter: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Name of a bundled scenario (see `voltheta list`).
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory; overrides $VOLTHETA_OUT and the scenario's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
    /// Replace the scenario seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

enum Failure {
    Schema(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn report(&self, command: Command) -> ExitCode {
        match self {
            Failure::Schema(m) => {
                eprintln!("scenario error: {m}");
                ExitCode::from(2)
            }
            Failure::Numerical(m) => {
                eprintln!("{command} failed: {m}");
                ExitCode::from(3)
            }
            Failure::Io(m) => {
                eprintln!("output error: {m}");
                ExitCode::from(3)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::List { filter } => {
            for s in catalog::matching(filter.as_deref()) {
                println!("{:<22} {:<13} criterion {:>2}  {}", s.name, s.command(), s.criterion, s.description());
            }
            return ExitCode::SUCCESS;
        }
        Sub::Simulate(a) => (Command::Simulate, a),
        Sub::VerifyIto(a) => (Command::VerifyIto, a),
        Sub::SolveLinear(a) => (Command::SolveLinear, a),
        Sub::SolveBsde(a) => (Command::SolveBsde, a),
        Sub::Price(a) => (Command::Price, a),
        Sub::Hedge(a) => (Command::Hedge, a),
        Sub::Diagnose(a) => (Command::Diagnose, a),
    };
    match execute(command, &args) {
        Ok(pass) => ExitCode::from(if pass { 0 } else { 1 }),
        Err(f) => f.report(command),
    }
}

fn execute(command: Command, args: &RunArgs) -> Result<bool, Failure> {
    let (name, text, base_dir) = match (&args.config, &args.scenario) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
            let stem = path.file_stem().map_or_else(|| command.name().to_string(), |s| s.to_string_lossy().into_owned());
            (stem, text, path.parent().map(Path::to_path_buf))
        }
        (None, Some(n)) => {
            let b = catalog::find(n).ok_or_else(|| Failure::Schema(format!("no bundled scenario named `{n}` (see `voltheta list`)")))?;
            (b.name.to_string(), b.text.to_string(), None)
        }
        (None, None) => unreachable!("clap requires --config or --scenario"),
    };
    let mut parsed = scenario::parse(&text).map_err(Failure::Schema)?;
    let seed_overridden = args.seed_override.is_some();
    if let Some(seed) = args.seed_override {
        parsed.seed = seed;
    }
    let out_dir = output_dir(args, &parsed, &name);
    let v = scenario::validate(parsed, command, base_dir).map_err(Failure::Schema)?;
    if args.threads == Some(0) {
        return Err(Failure::Schema("--threads must be at least 1".into()));
    }

    let artifacts = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Numerical(e.to_string()))?
            .install(|| commands::run(&v)),
        None => commands::run(&v),
    }
    .map_err(Failure::Numerical)?;

    let checks: Vec<(String, scenario::Threshold, f64, bool)> = v
        .scenario
        .thresholds
        .iter()
        .map(|(m, t)| {
            let value = artifacts.metrics.get(m).copied().unwrap_or(f64::NAN);
            (m.clone(), *t, value, t.holds(value))
        })
        .collect();
    let pass = checks.iter().all(|c| c.3);
    write_outputs(&out_dir, &v, &name, &text, seed_overridden, &artifacts, &checks, pass)?;

    println!("{command} `{name}` (seed {}) -> {}", v.scenario.seed, out_dir.display());
    for (m, value) in &artifacts.metrics {
        println!("  {m:<26} {value}");
    }
    for (m, t, value, ok) in &checks {
        let bounds = match (t.min, t.max) {
            (Some(a), Some(b)) => format!("in [{a}, {b}]"),
            (Some(a), None) => format!(">= {a}"),
            (None, Some(b)) => format!("<= {b}"),
            (None, None) => String::new(),
        };
        println!("  [{}] {m} = {value} {bounds}", if *ok { "pass" } else { "FAIL" });
    }
    Ok(pass)
}

/// --out, then $VOLTHETA_OUT, then output.dir, then out/<name>.
fn output_dir(args: &RunArgs, s: &scenario::Scenario, name: &str) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| s.output.as_ref().and_then(|o| o.dir.clone()))
        .unwrap_or_else(|| Path::new("out").join(name))
}

fn sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    dir: &Path,
    v: &Validated,
    name: &str,
    text: &str,
    seed_overridden: bool,
    artifacts: &commands::Artifacts,
    checks: &[(String, scenario::Threshold, f64, bool)],
    pass: bool,
) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut files = artifacts.files.clone();
    let mut report = serde_json::to_vec_pretty(&artifacts.report).map_err(|e| Failure::Io(e.to_string()))?;
    report.push(b'\n');
    files.push(("report.json".into(), report));
    let mut listed = Vec::new();
    for (file, bytes) in &files {
        std::fs::write(dir.join(file), bytes).map_err(io)?;
        listed.push(json!({ "name": file, "sha256": sha256(bytes), "bytes": bytes.len() }));
    }
    let manifest = json!({
        "command": v.command.name(),
        "scenario": name,
        "description": v.scenario.description,
        "config_sha256": sha256(text.as_bytes()),
        "seed": v.scenario.seed,
        "seed_overridden": seed_overridden,
        "versions": { "voltheta": voltheta::VERSION, "voltheta-cli": env!("CARGO_PKG_VERSION") },
        "files": listed,
        "metrics": artifacts.metrics,
        "thresholds": checks.iter().map(|(m, t, value, ok)| json!({ "metric": m, "min": t.min, "max": t.max, "value": value, "pass": ok })).collect::<Vec<_>>(),
        "pass": pass,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Io(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes).map_err(io)
}
