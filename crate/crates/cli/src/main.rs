use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::CliConfig;

/// Train, serve and evaluate dialogue models with a jointly trained
/// preference estimator.
#[derive(Debug, Parser)]
#[command(name = "prefchat", version)]
struct Cli {
    /// TOML configuration file with [model], [train], [decode], [service]
    /// and [synth] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.peak_lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every randomized step of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Jointly train a model on annotated dialogues.
    Train(TrainArgs),
    /// Run the annotation and chat HTTP service.
    Serve {
        /// Model checkpoint (overrides service.checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Chat with a model on stdin/stdout, one utterance per line.
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Let a model talk to itself from each opening line.
    SelfChat {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Text file with one opening per line.
        #[arg(long)]
        openings: PathBuf,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        /// Output JSONL file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank human responses among shown candidates.
    EvalRank {
        #[arg(long)]
        data: PathBuf,
        /// Model checkpoint; a randomly initialised model when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// preference_score, generation_logprob, length_normalized_logprob or all.
        #[arg(long, default_value = "all")]
        scorer: String,
    },
    /// Generate responses for sampled contexts, for human rating.
    EvalStatic {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        data: PathBuf,
        /// Count rejected dialogues too.
        #[arg(long)]
        include_rejected: bool,
    },
    /// Write the training quadruples of one epoch as JSONL.
    ExportQuadruples {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on random small models.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Assign train/valid/test splits and write one file per split.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated train,valid,test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        fractions: String,
    },
    /// Write a synthetic annotated corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Final checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-epoch checkpoints.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// JSONL file receiving every training event.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Continue from a per-epoch checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = CliConfig::load(cli.config.as_deref(), &cli.overrides)
        .map_err(commands::Failure::Invalid)
        .and_then(|cfg| commands::run(cli.command, cfg, cli.seed));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
