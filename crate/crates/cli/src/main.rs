use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use dtisynth_cli::commands;
use dtisynth_cli::config::Config;
use dtisynth_cli::error::CliError;

#[derive(Parser)]
#[command(
    name = "dtisynth",
    version,
    about = "Manifold-aware Wasserstein CycleGAN for structural-to-DTI synthesis",
    long_about = "Synthesizes diffusion-tensor volumes from structural MRI with a \
                  log-Euclidean manifold-aware Wasserstein CycleGAN: phantom data \
                  generation, training, full-volume synthesis, evaluation, gradient \
                  self-checks, and ablation sweeps. All commands are deterministic \
                  given configuration and seeds."
)]
struct Cli {
    /// Configuration file (all keys optional; defaults listed below)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the [train] seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; computation is single-threaded, so values above 1
    /// are accepted but have no effect
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory for commands that write artifact sets
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic phantom volumes into --out
    Phantom,
    /// Train the configured mode on a phantom data directory
    Train {
        /// Directory holding x_hr.tfv and y_lr.tfv (as written by `phantom`)
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Continue from --out/checkpoint.mack instead of initializing
        #[arg(long)]
        resume: bool,
    },
    /// Run the structural-to-DTI generator from a checkpoint over a volume
    Synthesize {
        /// Checkpoint written by `train`
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Structural input volume (.tfv)
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Tensor volume to write (.tfv)
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Compare a generated tensor volume against its ground truth
    Evaluate {
        /// Generated tensor volume (.tfv)
        #[arg(long, value_name = "FILE")]
        generated: PathBuf,
        /// Ground-truth tensor volume (.tfv)
        #[arg(long = "ground-truth", value_name = "FILE")]
        ground_truth: PathBuf,
        /// Report file to write
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        /// Re-read the written report and verify it parses to identical values
        #[arg(long)]
        check: bool,
    },
    /// Verify every layer and objective against central differences
    Gradcheck {
        /// Relative-error tolerance
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Deliberately corrupt the sigmoid backward pass (negative control)
        #[arg(long, hide = true)]
        corrupt_sigmoid: bool,
    },
    /// Train all three modes over the configured seeds and tabulate
    Ablate,
}

fn run() -> Result<(), CliError> {
    let help = format!(
        "Configuration keys and their defaults (pass a file with --config):\n\n{}",
        Config::default().to_text()
    );
    let matches = Cli::command().after_help(help).get_matches();
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Config(e.to_string()))?;

    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        if t > 1 {
            eprintln!("note: computation is single-threaded; --threads {t} has no effect");
        }
    }
    let mut cfg = Config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }

    match cli.cmd {
        Cmd::Phantom => commands::cmd_phantom(&cfg, &cli.out),
        Cmd::Train { data, resume } => commands::cmd_train(&cfg, &data, &cli.out, resume),
        Cmd::Synthesize { checkpoint, input, output } => {
            commands::cmd_synthesize(&cfg, &checkpoint, &input, &output)
        }
        Cmd::Evaluate { generated, ground_truth, report, check } => {
            commands::cmd_evaluate(&cfg, &generated, &ground_truth, &report, check)
        }
        Cmd::Gradcheck { tolerance, corrupt_sigmoid } => {
            commands::cmd_gradcheck(tolerance, corrupt_sigmoid)
        }
        Cmd::Ablate => commands::cmd_ablate(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
