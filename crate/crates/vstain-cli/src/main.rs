//! `vstain`: staged command-line interface for the virtual-staining
//! pipeline. Training runs in three sequential stages (tokenizers,
//! translator, autoregressive synthesizer); every run writes a
//! manifest with the config snapshot, seeds, and checkpoint hashes.

mod cmds;
mod manifest;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "vstain",
    about = "Virtual immunohistochemistry: multi-scale tokenizers, cross-modal translation, next-scale synthesis, clinical scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset with ground-truth counts.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one modality's tokenizer (stage a).
    TrainVqvae {
        #[arg(long)]
        config: Option<PathBuf>,
        /// he | ihc
        #[arg(long)]
        modality: String,
        /// Dataset directory produced by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the cross-modal translator (stage b).
    TrainTranslator {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the next-scale synthesizer and fine-tuned decoder (stage c).
    TrainVar {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize an IHC image from an H&E input.
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding the four stage checkpoints.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Also dump the sampled token pyramid here.
        #[arg(long)]
        tokens: Option<PathBuf>,
        /// greedy | temp:<t> | topk:<k>[:<t>]
        #[arg(long, default_value = "greedy")]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score per-patch nuclei counts from a CSV.
    Score {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare two image directories with PSNR / SSIM / perceptual proxy.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run the ablation arms over the synthetic benchmark.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "7,8,9")]
        seeds: String,
        /// `core` (directional arms), `all`, or comma-separated names.
        #[arg(long, default_value = "core")]
        arms: String,
    },
    /// Print the contents of a token-pyramid file.
    InspectTokens {
        #[arg(long)]
        input: PathBuf,
    },
}

/// Error-to-exit-code contract: 1 config, 2 missing prerequisite
/// checkpoint, 3 numeric failure.
pub enum CliError {
    Config(String),
    MissingPrerequisite(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::MissingPrerequisite(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::MissingPrerequisite(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<vstain_core::pipeline::PipelineError> for CliError {
    fn from(e: vstain_core::pipeline::PipelineError) -> Self {
        match e {
            vstain_core::pipeline::PipelineError::Config(m) => CliError::Config(m),
            vstain_core::pipeline::PipelineError::Numeric(n) => CliError::Numeric(n.to_string()),
            vstain_core::pipeline::PipelineError::Metric(m) => CliError::Numeric(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => cmds::gen_data(config.as_deref(), &out),
        Command::TrainVqvae {
            config,
            modality,
            data,
            out,
        } => cmds::train_vqvae(config.as_deref(), &modality, &data, &out),
        Command::TrainTranslator { config, data, out } => {
            cmds::train_translator(config.as_deref(), &data, &out)
        }
        Command::TrainVar { config, data, out } => cmds::train_var(config.as_deref(), &data, &out),
        Command::Infer {
            config,
            checkpoints,
            input,
            output,
            tokens,
            strategy,
            seed,
        } => cmds::infer(
            config.as_deref(),
            &checkpoints,
            &input,
            &output,
            tokens.as_deref(),
            &strategy,
            seed,
        ),
        Command::Score {
            config,
            input,
            output,
        } => cmds::score(config.as_deref(), &input, &output),
        Command::Eval { pred, gt, output } => cmds::eval(&pred, &gt, &output),
        Command::Ablate {
            config,
            out,
            seeds,
            arms,
        } => cmds::ablate(config.as_deref(), &out, &seeds, &arms),
        Command::InspectTokens { input } => cmds::inspect_tokens(&input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
