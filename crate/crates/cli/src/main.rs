use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qflow_cli::config::{Overrides, RunConfig};
use qflow_cli::{bench_cmd, rectify_cmd, sample_cmd, train_cmd, verify_cmd};

/// Quaternion flow matching on SE(3) frames: benchmarks, training,
/// rectification, sampling and verification.
#[derive(Parser)]
#[command(name = "qflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `[run] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Euler steps; overrides `[solver] steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Scheduler rate; overrides `[solver] gamma`.
    #[arg(long)]
    gamma: Option<f64>,
    /// Output directory. Defaults to `[run] out`, then
    /// `$QFLOW_OUT_ROOT/<command>`, then `qflow-runs/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Axis-angle round trips near π through quaternions and matrices.
    BenchRoundtrip {
        #[command(flatten)]
        common: Common,
    },
    /// Train the endpoint model on the toy task or a frame dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint up to `[train] epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Integrate noise to frames with a trained model.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate pairs with a trained model and retrain on them.
    Rectify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Marginal, transport-cost and stability checks on a model and its
    /// rectified successor.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        rectified: Option<PathBuf>,
    },
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    let o = Overrides {
        seed: common.seed,
        steps: common.steps,
        gamma: common.gamma,
        out: common.out.clone(),
    };
    RunConfig::load(common.config.as_deref(), &o)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::BenchRoundtrip { common } => bench_cmd::run(load(&common)?),
        Command::Train { common, resume } => train_cmd::run(load(&common)?, resume.as_deref()).map(|_| true),
        Command::Sample { common, checkpoint } => sample_cmd::run(load(&common)?, &checkpoint).map(|_| true),
        Command::Rectify { common, checkpoint } => rectify_cmd::run(load(&common)?, &checkpoint).map(|_| true),
        Command::Verify {
            common,
            checkpoint,
            rectified,
        } => verify_cmd::run(load(&common)?, checkpoint.as_deref(), rectified.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
