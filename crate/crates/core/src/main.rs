use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use halfspace_al::cli::{
    calibrate::cmd_calibrate, experiment::cmd_run, load_config, scaling::cmd_scaling, verify::cmd_verify,
    CliError, ExperimentConfig, Overrides,
};

#[derive(Parser)]
#[command(name = "halfspace-al", version, about = "Active learning of halfspaces under Tsybakov noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the learner for every (epsilon, seed) cell.
    Run(Common),
    /// Fit the label-count exponent over the epsilon grid.
    Scaling(Common),
    /// Check the noise model, marginal and gradient oracle.
    Verify(Common),
    /// Grid-search the step-count and step-size constants at a pilot size.
    Calibrate(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Global label cap per run.
    #[arg(long = "label-cap")]
    label_cap: Option<u64>,
}

type Action = fn(&ExperimentConfig) -> Result<(), CliError>;

fn execute(command: Command) -> Result<(), CliError> {
    let (common, action): (Common, Action) = match command {
        Command::Run(c) => (c, |cfg| cmd_run(cfg).map(drop)),
        Command::Scaling(c) => (c, |cfg| cmd_scaling(cfg).map(drop)),
        Command::Verify(c) => (c, |cfg| cmd_verify(cfg).map(drop)),
        Command::Calibrate(c) => (c, |cfg| cmd_calibrate(cfg).map(drop)),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    }
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
        label_cap: common.label_cap,
    };
    let cfg = load_config(&common.config, &overrides)?;
    action(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
