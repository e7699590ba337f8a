use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mars_cli::bench::Setup;
use mars_cli::commands::{self, Common};
use mars_cli::error::CliError;
use mars_cli::pipeline::Variant;

#[derive(Parser)]
#[command(
    name = "mars",
    version,
    about = "Meta-learned score priors for functional BNN inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            seed: a.seed,
            out: a.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write meta-training and held-out task CSVs.
    GenEnv(CommonArgs),
    /// Fit interpolators and meta-train the score network.
    TrainScore(CommonArgs),
    /// Run fSVGD on a task with a trained score network.
    Infer {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        model: PathBuf,
        /// Context data to condition on.
        #[arg(long)]
        task: PathBuf,
        /// Points to predict at; the task's own inputs by default.
        #[arg(long)]
        query: Option<PathBuf>,
    },
    /// Compute RMSE and calibration error of a predictions file.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Model whose output scale converts the likelihood std to target units.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compare the full method with one ablated variant.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// ssge, no-spectral or gp-mean.
        #[arg(long)]
        variant: String,
    },
    /// Compare the learned prior with GP-prior and weight-prior baselines.
    Compare(CommonArgs),
    /// Score-estimation benchmark against analytic marginal scores.
    BenchScore {
        #[command(flatten)]
        common: CommonArgs,
        /// gp2d or tp2d.
        #[arg(long, default_value = "gp2d")]
        variant: String,
    },
}

fn run(cli: Cli) -> Result<mars_cli::artifacts::Manifest, CliError> {
    match cli.command {
        Command::GenEnv(c) => commands::gen_env(&c.into()),
        Command::TrainScore(c) => commands::train_score(&c.into()),
        Command::Infer {
            common,
            model,
            task,
            query,
        } => commands::infer(&common.into(), &model, &task, query.as_deref()),
        Command::Eval {
            common,
            predictions,
            targets,
            model,
        } => commands::eval(&common.into(), &predictions, &targets, model.as_deref()),
        Command::Ablate { common, variant } => {
            let v: Variant = variant.parse().map_err(CliError::Usage)?;
            commands::ablate(&common.into(), v)
        }
        Command::Compare(c) => commands::compare(&c.into()),
        Command::BenchScore { common, variant } => {
            let setup: Setup = variant.parse().map_err(CliError::Usage)?;
            commands::bench_score(&common.into(), setup)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&manifest.summary).unwrap_or_default()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
