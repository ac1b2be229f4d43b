//! `latent-demand`: simulate censored charging demand, train forecasters,
//! evaluate them and run the market-share experiment.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use latent_demand::ErrorKind;

use config::{CompeteConfig, ConfigTree, EvaluateConfig, SimulateConfig, TrainSection};

/// Wraps a message as a core validation error so it maps to exit code 2.
pub(crate) fn invalid(msg: impl Into<String>) -> anyhow::Error {
    latent_demand::Error::Validation(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "latent-demand", version, about = "Censorship-aware EV charging demand toolkit")]
struct Cli {
    /// TOML config with [simulate], [train], [evaluate] and [compete] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides a config key, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for the command's section (beats config and LATENT_DEMAND_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel grid cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Replay trips as an EV fleet and write ledgers, panels and censorship statistics.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trips: Option<PathBuf>,
        #[arg(long)]
        stations: Option<PathBuf>,
        /// Queue policies, comma separated.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<String>,
        /// Penetration rates, comma separated.
        #[arg(long, value_delimiter = ',')]
        penetration: Vec<f64>,
    },
    /// Train one forecaster on a demand panel.
    Train {
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        adjacency: Option<PathBuf>,
        /// gaussian, tobit, qr or censored_qr.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint against the latent demand of a panel.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        panel: Option<PathBuf>,
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Market-share experiment over provider shares, models and seeds.
    Compete {
        #[arg(long)]
        station_panel: Option<PathBuf>,
        #[arg(long)]
        adjacency: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        shares: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in oracle and invariant checks.
    Selftest,
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

fn array<T: Clone>(xs: &[T], f: impl Fn(T) -> toml::Value) -> toml::Value {
    toml::Value::Array(xs.iter().cloned().map(f).collect())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| invalid(format!("cannot start {n} workers: {e}")))?;
    }
    let mut tree = ConfigTree::load(cli.config.as_deref())?;
    for s in &cli.set {
        tree.set(s)?;
    }
    let section = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Compete { .. } => "compete",
        Command::Selftest => return commands::selftest_cmd(),
    };
    let mut put = |key: &str, v: toml::Value| tree.insert(&format!("{section}.{key}"), v);
    if let Some(seed) = cli.seed {
        put("seed", toml::Value::Integer(i64::try_from(seed).map_err(|_| invalid("seed too large"))?))?;
    }
    let int = |n: u64| toml::Value::Integer(n as i64);
    let string = |s: String| toml::Value::String(s);
    let float = toml::Value::Float;
    match &cli.command {
        Command::Simulate {
            out,
            trips,
            stations,
            policy,
            penetration,
        } => {
            if let Some(p) = out {
                put("out_dir", path_value(p))?;
            }
            if let Some(p) = trips {
                put("trips", path_value(p))?;
            }
            if let Some(p) = stations {
                put("stations", path_value(p))?;
            }
            if !policy.is_empty() {
                put("policies", array(policy, string))?;
            }
            if !penetration.is_empty() {
                put("penetration", array(penetration, float))?;
            }
            let cfg: SimulateConfig = tree.section(section)?;
            commands::simulate(&cfg)
        }
        Command::Train {
            panel,
            adjacency,
            model,
            out,
            epochs,
        } => {
            if let Some(p) = panel {
                put("panel", path_value(p))?;
            }
            if let Some(p) = adjacency {
                put("adjacency", path_value(p))?;
            }
            if let Some(m) = model {
                put("model", string(m.clone()))?;
            }
            if let Some(p) = out {
                put("out_dir", path_value(p))?;
            }
            if let Some(e) = epochs {
                put("max_epochs", int(*e as u64))?;
            }
            let cfg: TrainSection = tree.section(section)?;
            commands::train_cmd(&cfg)
        }
        Command::Evaluate {
            checkpoint,
            panel,
            adjacency,
            out,
        } => {
            if let Some(p) = checkpoint {
                put("checkpoint", path_value(p))?;
            }
            if let Some(p) = panel {
                put("panel", path_value(p))?;
            }
            if let Some(p) = adjacency {
                put("adjacency", path_value(p))?;
            }
            if let Some(p) = out {
                put("out_dir", path_value(p))?;
            }
            let cfg: EvaluateConfig = tree.section(section)?;
            commands::evaluate_cmd(&cfg)
        }
        Command::Compete {
            station_panel,
            adjacency,
            shares,
            seeds,
            models,
            out,
        } => {
            if let Some(p) = station_panel {
                put("station_panel", path_value(p))?;
            }
            if let Some(p) = adjacency {
                put("adjacency", path_value(p))?;
            }
            if !shares.is_empty() {
                put("shares", array(shares, float))?;
            }
            if !seeds.is_empty() {
                put("seeds", array(seeds, int))?;
            }
            if !models.is_empty() {
                put("models", array(models, string))?;
            }
            if let Some(p) = out {
                put("out_dir", path_value(p))?;
            }
            let cfg: CompeteConfig = tree.section(section)?;
            let train: TrainSection = tree.section("train")?;
            commands::compete_cmd(&cfg, &train)
        }
        Command::Selftest => unreachable!("handled above"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<latent_demand::Error>() {
            return match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
