mod artifacts;
mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{Profile, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "chaintwin", version, about = "Supply chain twin: simulate, detect, classify and predict recovery")]
pub struct Cli {
    /// Output root for all artifacts.
    #[arg(long, env = "CHAINTWIN_OUT", default_value = "chaintwin-out", global = true)]
    pub out: PathBuf,
    /// `key = value` configuration file applied over the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Profile::Desk, global = true)]
    pub profile: Profile,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate replication datasets.
    Simulate {
        /// Scenario id (S0..S4) or `all`.
        #[arg(long, default_value = "all")]
        scenario: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the simulator's saturated zero-buffer output with the exact
    /// Markov-chain throughput.
    Validate {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Label, split and scale the datasets.
    Prep {
        /// Also write every window of the test splits as CSV.
        #[arg(long)]
        windows_csv: bool,
    },
    /// Train the autoencoder on normal-scenario windows.
    TrainAe,
    /// Fit the PCA and one-class SVM stages.
    FitDetector,
    /// Train the disrupted-echelon classifier.
    TrainClassifier,
    /// Train time-to-recovery regressors.
    TrainTtr {
        /// Scenario id (S1..S4) or `all`.
        #[arg(long, default_value = "all")]
        scenario: String,
    },
    /// Run the detector over a split and write per-window scores.
    Detect {
        #[arg(long, default_value = "all")]
        scenario: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Evaluate trained models on the test splits.
    Evaluate,
    /// Sweep the one-class SVM hyperparameters.
    GridSearch,
}

/// Finished with a failed check (exit code 2).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let run = || -> anyhow::Result<()> {
        let mut cfg = RunConfig::for_profile(cli.profile);
        if let Some(path) = &cli.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        commands::run(&cli, cfg)
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<CheckFailed>().is_some() => {
            eprintln!("check failed: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
