//! `nucdenoise`: dataset synthesis, noise calibration, training, denoising,
//! evaluation and atom localization from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nucdenoise::{Error, Result};

use commands::{
    CalibrateArgs, DenoiseArgs, EvalArgs, GenerateArgs, Globals, LocalizeArgs, SynthVacuumArgs, TrainArgs,
};
use config::ConfigFile;

#[derive(Debug, Parser)]
#[command(name = "nucdenoise", version, about = "Statistics-guided denoising for HRTEM nucleation imaging")]
struct Cli {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with defaults for the flags; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a dataset of noisy / ground-truth pairs.
    Generate(GenerateArgs),
    /// Simulate vacuum frame sequences for calibration.
    SynthVacuum(SynthVacuumArgs),
    /// Fit noise parameters from vacuum sequences.
    Calibrate(CalibrateArgs),
    /// Train a denoising network on a dataset.
    Train(TrainArgs),
    /// Denoise one image with a checkpoint or the Gaussian baseline.
    Denoise(DenoiseArgs),
    /// Score checkpoints and baselines on a dataset.
    Eval(EvalArgs),
    /// Threshold an image and report atom centroids.
    Localize(LocalizeArgs),
}

fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    let globals = Globals {
        seed: cli.seed.or(file.global("seed")?).unwrap_or(0),
        threads: cli.threads.or(file.global("threads")?),
        config: cli.config.clone(),
    };
    if let Some(n) = globals.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate(a) => commands::generate(&globals, file.merge("generate", a)?),
        Command::SynthVacuum(a) => commands::synth_vacuum(&globals, file.merge("synth-vacuum", a)?),
        Command::Calibrate(a) => commands::calibrate(&globals, file.merge("calibrate", a)?),
        Command::Train(a) => commands::train(&globals, file.merge("train", a)?),
        Command::Denoise(a) => commands::denoise(&globals, file.merge("denoise", a)?),
        Command::Eval(a) => commands::eval(&globals, file.merge("eval", a)?),
        Command::Localize(a) => commands::localize(&globals, file.merge("localize", a)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let text = e.to_string().replace('\n', " ");
            let prefix = format!("{} error: ", e.kind());
            let msg = text.strip_prefix(&prefix).unwrap_or(&text);
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
