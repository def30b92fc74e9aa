//! `objman`: dataset generation, training and evaluation from the command line.
//!
//! Settings resolve in this order, later entries winning: built-in defaults,
//! the `--config` file (or, for evaluation commands without one, the config
//! stored in the checkpoint), `--preset`, `--set key=value`, and finally the
//! dedicated flags such as `--seed`, `--family` and `--count`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or configuration, detected before any work starts.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] objman::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "objman", version, about = "Object segmentation and per-object generative modelling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set loss.gamma=10`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Ablation preset.
    #[arg(long, value_parser = ["monet-like", "no-pc"])]
    pub preset: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// sprites, texture or animals.
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        count: Option<usize>,
        /// Asset library root for the animals family.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Pretrain the inpainting network alone.
    PretrainInpaint {
        #[command(flatten)]
        common: Common,
        /// Held-out scenes for the before/after masked L1.
        #[arg(long, default_value_t = 64)]
        eval_count: usize,
    },
    /// Run the full training schedule.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Pretrained inpainter checkpoint; skips phase 1.
        #[arg(long)]
        inpainter: Option<PathBuf>,
    },
    /// Matched mean IoU on held-out scenes.
    EvalSeg {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; generated held-out scenes when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Compare identity switching of two models on generated sequences.
    EvalIdentity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt_a: PathBuf,
        #[arg(long)]
        ckpt_b: PathBuf,
        #[arg(long, default_value_t = 256)]
        sequences: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
    /// Decode a grid sweeping latent dimensions of one object.
    Traverse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// Input PNG; a generated held-out scene when omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Held-out scene index used without `--image`.
        #[arg(long, default_value_t = 0)]
        scene: usize,
        /// Object (segmentation channel) index, from 0.
        #[arg(long, default_value_t = 0)]
        object: usize,
        /// Latent dimensions, one grid row each; all when omitted.
        #[arg(long, value_delimiter = ',')]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2,-1,0,1,2")]
        values: Vec<f64>,
    },
    /// Re-synthesize a scene after shifting one object's latents.
    Manipulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long, default_value_t = 0)]
        object: usize,
        /// Latent shift; a random standard-normal direction when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        delta: Vec<f64>,
        /// Multiplier applied to the shift.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    use commands as c;
    match cmd {
        Command::GenData { common, family, count, assets } => c::gen_data(&common, family, count, assets),
        Command::PretrainInpaint { common, eval_count } => c::pretrain_inpaint(&common, eval_count),
        Command::Train { common, resume, inpainter } => c::train(&common, resume, inpainter),
        Command::EvalSeg { common, ckpt, data, count } => c::eval_seg(&common, &ckpt, data, count),
        Command::EvalIdentity { common, ckpt_a, ckpt_b, sequences, frames } => {
            c::eval_identity(&common, &ckpt_a, &ckpt_b, sequences, frames)
        }
        Command::Traverse { common, ckpt, image, scene, object, dims, values } => {
            c::traverse(&common, &ckpt, image, scene, object, dims, &values)
        }
        Command::Manipulate { common, ckpt, image, scene, object, delta, scale } => {
            c::manipulate(&common, &ckpt, image, scene, object, delta, scale)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(e.code())
        }
    }
}
