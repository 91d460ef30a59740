mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

use commands::{CommandError, Outcome};
use config::{ConfigError, RunConfig};

const EXIT_FAILED_CHECKS: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const THREADS_VAR: &str = "GRUSHIN_MFG_THREADS";

#[derive(Parser, Debug)]
#[command(name = "grushin-mfg", version, about = "Mean-field games with Grushin diffusion on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "K=V", global = true)]
    set: Vec<String>,

    /// Root of the run directories.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,

    /// Reduced acceptance battery (verify only).
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Heisenberg heat kernel: normalization, Gaussian bounds, profiles.
    Kernel,
    /// CC distance from the origin and the x2-axis scaling table.
    Ccdist,
    /// Exact and entropic d1 between two seeded random densities.
    Wasserstein,
    /// Value function along the frozen initial density, both HJB routes.
    Hjb,
    /// Density driven by the frozen-measure value function.
    Kfp,
    /// Fixed point of the mean-field game.
    Mfg,
    /// Linearized system around the equilibrium for a seeded zero-mass rho0.
    Linearize,
    /// Normalized kernel K of dU/dm at (t0, m0).
    MasterKernel,
    /// Residual of the master equation at (t0, m0).
    MasterResidual,
    /// Acceptance battery; exits with status 1 if any criterion fails.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Ccdist => "ccdist",
            Command::Wasserstein => "wasserstein",
            Command::Hjb => "hjb",
            Command::Kfp => "kfp",
            Command::Mfg => "mfg",
            Command::Linearize => "linearize",
            Command::MasterKernel => "master-kernel",
            Command::MasterResidual => "master-residual",
            Command::Verify => "verify",
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &cli.set {
        cfg.apply_override(assignment)?;
    }
    if cli.command == Command::MasterKernel {
        commands::master_kernel_precheck(&cfg)?;
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::new(THREADS_VAR, format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| ConfigError::new(THREADS_VAR, e.to_string()))
}

fn run(command: Command, cfg: &RunConfig, dir: &Path, quick: bool) -> Result<Outcome, CommandError> {
    match command {
        Command::Kernel => commands::kernel(cfg, dir),
        Command::Ccdist => commands::ccdist(cfg, dir),
        Command::Wasserstein => commands::wasserstein(cfg, dir),
        Command::Hjb => commands::hjb(cfg, dir),
        Command::Kfp => commands::kfp(cfg, dir),
        Command::Mfg => commands::mfg(cfg, dir),
        Command::Linearize => commands::linearize(cfg, dir),
        Command::MasterKernel => commands::master_kernel(cfg, dir),
        Command::MasterResidual => commands::master_residual(cfg, dir),
        Command::Verify => commands::verify(cfg, quick),
    }
}

fn config_echo(cfg: &RunConfig) -> Value {
    let map: Map<String, Value> = cfg
        .echo()
        .into_iter()
        .map(|(k, v)| (k.to_string(), Value::String(v)))
        .collect();
    Value::Object(map)
}

fn write_json(path: &Path, value: &Value) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("json value serializes") + "\n")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match configure_threads().and_then(|_| load_config(&cli)) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let label = match (cli.command, cli.quick) {
        (Command::Verify, true) => "verify-quick".to_string(),
        (c, _) => c.name().to_string(),
    };
    let dir = cli.out.join(cfg.hash()).join(&label);
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return ExitCode::from(EXIT_SOLVER);
    }
    let start = Instant::now();
    let outcome = run(cli.command, &cfg, &dir, cli.quick);
    let elapsed = start.elapsed().as_secs_f64();
    let outcome = match outcome {
        Ok(o) => o,
        Err(CommandError::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            let message = match e {
                CommandError::Solver(e) => e.to_string(),
                CommandError::Io(e) => e.to_string(),
                CommandError::Config(_) => unreachable!(),
            };
            let path = dir.join("error.json");
            let diagnostic = json!({
                "command": label,
                "config": config_echo(&cfg),
                "error": message,
            });
            let _ = write_json(&path, &diagnostic);
            eprintln!("error: {message}\ndiagnostics: {}", path.display());
            return ExitCode::from(EXIT_SOLVER);
        }
    };
    let manifest = json!({
        "command": label,
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": cfg.hash(),
        "config": config_echo(&cfg),
        "seed": cfg.seed,
        "passed": outcome.passed,
        "constants": outcome.constants,
    });
    let phases: Map<String, Value> = outcome.phases.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    let timings = json!({ "total_seconds": elapsed, "phases": phases });
    if let Err(e) = write_json(&dir.join("manifest.json"), &manifest).and_then(|_| write_json(&dir.join("timings.json"), &timings)) {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(EXIT_SOLVER);
    }
    println!("{}", dir.join("manifest.json").display());
    if outcome.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED_CHECKS)
    }
}
