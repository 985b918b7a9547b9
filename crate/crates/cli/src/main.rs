mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pcc_core::retrieval::Strategy;

#[derive(Debug, Parser)]
#[command(name = "pcc", version, about = "Compressed in-context learning for protein question answering")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default 1, which keeps runs bit-exact anyway).
    #[arg(long, global = true, env = "PCC_THREADS")]
    pub threads: Option<usize>,
    /// Dataset directory written by gen-data.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Vocabulary file; rebuilt from the training split when absent.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Random,
    Bm25,
    Dense,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Random => Strategy::Random,
            StrategyArg::Bm25 => Strategy::Bm25,
            StrategyArg::Dense => Strategy::Dense,
        }
    }
}

/// Options shared by commands that pick demonstrations for a split.
#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Split to run on: train, val, test or test_ood.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Number of demonstrations.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset, lexicon and codebook.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the vocabulary from the training split.
    BuildVocab {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy backbone on text-only prompts.
    Pretrain {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LoRA fine-tuning on joint protein prompts. Pretrains first when no
    /// checkpoint is given.
    TrainStage1 {
        /// Pretrained backbone.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the projection over compressed retrieved demonstrations.
    TrainStage2 {
        /// Stage-1 checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        x: Option<usize>,
        /// Shot count used for every training prompt.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compress the training split into a demonstration bank.
    BuildBank {
        /// Stage-2 checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        x: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the demonstrations chosen for each query.
    Retrieve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy answers for a split, zero-shot or with N compressed demos.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[command(flatten)]
        select: SelectArgs,
        #[arg(long)]
        max_new_tokens: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score inference output and write an evaluation report.
    Eval {
        /// Inference JSONL written by `infer`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        /// When given, the report includes the attention table.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metric grid over x and N.
    Sweep {
        /// Stage-2 checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        x_values: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        n_values: Option<Vec<usize>>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long)]
        max_new_tokens: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prompt length with and without compression.
    Budget {
        #[arg(long)]
        x: Option<usize>,
        /// Shot count; all of 1, 2, 4, 8, 16 when absent.
        #[arg(long)]
        n: Option<usize>,
        /// Mean demonstration length; measured on the dataset when absent.
        #[arg(long)]
        demo_len: Option<f64>,
        /// Query length; measured on the dataset when absent.
        #[arg(long, conflicts_with = "target_ratio")]
        query_len: Option<f64>,
        /// Solve for the query length that reaches this ratio.
        #[arg(long)]
        target_ratio: Option<f64>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Last-layer attention over the query segments.
    AttentionReport {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
