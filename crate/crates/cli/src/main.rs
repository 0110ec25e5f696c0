//! `tdan`: topic-driven adversarial sentiment adaptation from the command line.
//!
//! Typical run on a fresh directory:
//!
//! ```text
//! tdan synth        --task S-T --out work
//! tdan ingest       --task S-T --out work
//! tdan train-topics --task S-T --out work
//! tdan extract      --task S-T --out work
//! tdan train        --task S-T --out work
//! tdan eval         --task S-T --out work
//! ```

mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tdan_core::network::Variant;

use workspace::Task;

#[derive(Parser)]
#[command(name = "tdan", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON run config with a `version` field.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seeds every random step; `train.seed` from the config otherwise.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Source and target domain names, e.g. `B-K`.
    #[arg(long, global = true, default_value = "S-T")]
    pub task: Task,
    /// Overrides `model.variant` from the config.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize both domain corpora, build the vocabulary and split the task.
    Ingest,
    /// Fit LDA over the training pools of both domains.
    TrainTopics,
    /// Extract domain-specific words for every document.
    Extract,
    /// Train the network and keep the best dev checkpoint.
    Train,
    /// Score a trained checkpoint on the target test set.
    Eval,
    /// Write attention weights of a trained checkpoint.
    AttnExport {
        /// Documents to export; the first `--limit` test documents by default.
        #[arg(long = "doc")]
        docs: Vec<String>,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Generate a synthetic domain pair with planted words.
    Synth,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(common: &Common, command: Command) -> anyhow::Result<()> {
    let ctx = commands::Context::new(common)?;
    match command {
        Command::Ingest => ctx.ingest(),
        Command::TrainTopics => ctx.train_topics(),
        Command::Extract => ctx.extract(),
        Command::Train => ctx.train(),
        Command::Eval => ctx.eval(),
        Command::AttnExport { docs, limit } => ctx.attn_export(&docs, limit),
        Command::Synth => ctx.synth(),
    }
}
