//! Command-line front end: `mmhcl prepare|train|evaluate|sweep`.

pub mod commands;
pub mod error;
pub mod run_config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mmhcl::Preset;

pub use error::{CliError, CliResult};
use run_config::{resolve, Ablation, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "mmhcl",
    version,
    about = "Multimodal hypergraph contrastive recommender"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the interactions and build the graph artifacts.
    Prepare(CommonArgs),
    /// Train on a prepared directory and write the best checkpoint.
    Train(CommonArgs),
    /// Score a checkpoint on the test split.
    Evaluate(CommonArgs),
    /// Train and evaluate every point of the config's sweep grid.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable a component; repeatable.
    #[arg(long, value_enum)]
    pub ablate: Vec<Ablation>,
    /// Ranking cutoff for evaluate and sweep.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Share of items to make cold.
    #[arg(long)]
    pub cold_start: Option<f64>,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Checkpoint to evaluate instead of the one in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: mmhcl::Error| e.to_string())
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            ablate: self.ablate.clone(),
            cold_start: self.cold_start,
            preset: self.preset,
        }
    }
}

/// Runs one command and returns what it prints on stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let (Command::Prepare(args)
    | Command::Train(args)
    | Command::Evaluate(args)
    | Command::Sweep(args)) = &cli.command;
    let res = resolve(RunConfig::load(&args.config)?, &args.overrides())?;
    Ok(match &cli.command {
        Command::Prepare(_) => pretty(&commands::prepare(&res)?),
        Command::Train(_) => pretty(&commands::train(&res)?.report),
        Command::Evaluate(a) => pretty(&commands::evaluate(&res, a.k, a.checkpoint.as_deref())?),
        Command::Sweep(a) => {
            commands::sweep(&res, a.k)?;
            std::fs::read_to_string(res.run.output_dir.join(commands::SWEEP_TABLE))
                .map_err(|e| CliError::Data(e.to_string()))?
        }
    })
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}
