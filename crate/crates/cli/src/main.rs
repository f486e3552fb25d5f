//! `acdmsr` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Data(String),
    CheckFailed(String),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Usage(m) => write!(f, "usage error: {m}"),
            CmdError::Data(m) => write!(f, "data error: {m}"),
            CmdError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Data(_) => 2,
            CmdError::CheckFailed(_) => 3,
        }
    }
}

impl From<acdmsr_core::Error> for CmdError {
    fn from(e: acdmsr_core::Error) -> Self {
        match e {
            acdmsr_core::Error::InvalidArg(m) => CmdError::Usage(m),
            other => CmdError::Data(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "acdmsr", version, about = "Conditional diffusion super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate LR images (and optionally synthetic HR textures) for a dataset root
    Degrade {
        /// Dataset root containing hr/ (created when --synth is given)
        #[arg(long)]
        root: PathBuf,
        /// Downsampling factor
        #[arg(long)]
        scale: usize,
        /// Generate this many procedural HR textures first
        #[arg(long)]
        synth: Option<usize>,
        /// Side length of generated textures
        #[arg(long, default_value_t = 32)]
        synth_size: usize,
        /// Channels of generated textures (1 or 3)
        #[arg(long, default_value_t = 3)]
        synth_channels: usize,
        /// Seed for texture generation
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the conditional denoiser
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override data.root
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Override out.dir
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override trainer.steps
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Super-resolve a directory of LR images
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of LR images
        #[arg(long, name = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override sampler.kind (ancestral|first_order|second_order)
        #[arg(long)]
        sampler: Option<String>,
        /// Override sampler.steps
        #[arg(long)]
        steps: Option<usize>,
        /// Override seed
        #[arg(long)]
        seed: Option<u64>,
        /// Dump intermediate states as PPM frames
        #[arg(long)]
        dump_frames: bool,
    },
    /// Quality-vs-step-count benchmark; CSV of (sampler, N, psnr, ssim, wall_ms)
    BenchSteps {
        #[arg(long)]
        config: PathBuf,
        /// Trained checkpoint (omit with --analytic)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated step counts
        #[arg(long)]
        steps_list: String,
        /// Comma-separated sampler kinds (default: all three)
        #[arg(long)]
        samplers: Option<String>,
        /// Run on the analytic Gaussian problem instead of images
        #[arg(long)]
        analytic: bool,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analytic oracle validation suite
    OracleCheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Conditioner or objective ablation; comparison CSV
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// condition | objective
        #[arg(long)]
        mode: String,
        /// Trained checkpoint (condition mode)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own help/version output on stdout with success
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.cmd {
        Cmd::Degrade { root, scale, synth, synth_size, synth_channels, seed } => {
            commands::degrade(&root, scale, synth, synth_size, synth_channels, seed)
        }
        Cmd::Train { config, data_root, out, seed, steps } => {
            commands::train(&config, data_root, out, seed, steps)
        }
        Cmd::Sample { config, checkpoint, input, out, sampler, steps, seed, dump_frames } => {
            commands::sample(&config, &checkpoint, &input, &out, sampler, steps, seed, dump_frames)
        }
        Cmd::BenchSteps { config, checkpoint, steps_list, samplers, analytic, out } => {
            commands::bench_steps(&config, checkpoint, &steps_list, samplers, analytic, &out)
        }
        Cmd::OracleCheck { seed } => commands::oracle_check(seed),
        Cmd::Ablate { config, mode, checkpoint, out } => {
            commands::ablate(&config, &mode, checkpoint, &out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
