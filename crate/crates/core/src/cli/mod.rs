//! The `hpdkit` command line.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{inject_config, parse_config, snapshot};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const THREADS_ENV: &str = "HPDKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hpdkit", version, about = "Compact sentence embeddings by projective distillation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the teacher encoder contrastively on NLI-style triplets.
    TrainTeacher(TrainTeacherArgs),
    /// Fit PCA on teacher embeddings.
    FitPca(FitPcaArgs),
    /// Train a student encoder and projection head against the PCA-reduced teacher.
    Distill(DistillArgs),
    /// Spearman correlation of cosine similarity with STS labels.
    EvalSts(EvalStsArgs),
    /// Build an inverted-file index over corpus embeddings.
    BuildIndex(BuildIndexArgs),
    /// Top-k search of queries against an index.
    Search(SearchArgs),
    /// MRR@10, search time and memory of one or more indices.
    Bench(BenchArgs),
    /// Synthetic data, teacher, PCA, distillation and evaluation in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Flat `key = value` file of flag values; the command line takes precedence.
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Seed for initialization, shuffling and sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving every output artifact.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,
    /// Log progress to stderr.
    #[arg(long)]
    pub verbose: bool,
}

/// Optimizer and schedule settings shared by both training stages.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Validate every this many steps; 0 validates only at the start and end.
    #[arg(long, default_value_t = 50)]
    pub eval_every: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    /// Stop after this many updates.
    #[arg(long)]
    pub max_steps: Option<usize>,
}

/// Where text embeddings come from when a command has to encode sentences.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EncodeArgs {
    /// Encoder checkpoint (`HPDW`).
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary TSV; defaults to the checkpoint path with extension `vocab.tsv`.
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    /// Transform (`HPDT`) applied after the encoder.
    #[arg(long, value_name = "PATH")]
    pub transform: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadInit {
    /// Teacher PCA weights truncated or zero-padded to the student width.
    Pca,
    /// Scaled Gaussian weights, zero bias.
    Random,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainTeacherArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Triplet JSONL (`anchor`, `entailment`, `contradiction`).
    #[arg(long, value_name = "PATH")]
    pub triplets: PathBuf,
    /// Scored-pair TSV used for checkpoint selection.
    #[arg(long, value_name = "PATH")]
    pub validation: Option<PathBuf>,
    /// Encoder width d′.
    #[arg(long, default_value_t = 64)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    /// Tokens kept per sentence.
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    /// Words seen fewer times map to the unknown token.
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Softmax temperature of the contrastive loss.
    #[arg(long, default_value_t = 0.05)]
    pub temperature: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitPcaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Reduced dimension d.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Precomputed teacher embeddings (`HPDE`) to fit on.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["checkpoint", "triplets"])]
    pub embeddings: Option<PathBuf>,
    /// Triplet JSONL whose distinct sentences the teacher embeds.
    #[arg(long, value_name = "PATH", requires = "checkpoint")]
    pub triplets: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistillArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Reduced dimension d; must match the PCA output.
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    /// Teacher checkpoint (`HPDW`).
    #[arg(long, value_name = "PATH", requires = "triplets", conflicts_with = "teacher_embeddings")]
    pub teacher: Option<PathBuf>,
    /// Teacher vocabulary; defaults to the checkpoint path with extension `vocab.tsv`.
    #[arg(long, value_name = "PATH")]
    pub teacher_vocab: Option<PathBuf>,
    /// Triplet JSONL whose distinct sentences are distilled on.
    #[arg(long, value_name = "PATH")]
    pub triplets: Option<PathBuf>,
    /// Stored teacher embeddings (`HPDE`), one row per corpus line.
    #[arg(long, value_name = "PATH", requires = "corpus")]
    pub teacher_embeddings: Option<PathBuf>,
    /// Corpus TSV (`id<TAB>text`) matching the stored teacher embeddings.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,
    /// Teacher PCA (`HPDT`).
    #[arg(long, value_name = "PATH")]
    pub pca: PathBuf,
    /// Scored-pair TSV used for checkpoint selection.
    #[arg(long, value_name = "PATH")]
    pub validation: Option<PathBuf>,
    /// Student encoder width.
    #[arg(long, default_value_t = 32)]
    pub student_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub student_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub student_heads: usize,
    #[arg(long, default_value_t = 64)]
    pub student_ffn_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    #[arg(long, value_enum, default_value_t = HeadInit::Pca)]
    pub head_init: HeadInit,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Also write the projection composed with whitening fitted on the student outputs.
    #[arg(long)]
    pub whiten_after: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalStsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Scored-pair TSV, as `NAME=PATH` or `PATH` (named by file stem). Repeatable.
    #[arg(long, value_name = "[NAME=]PATH", required = true)]
    pub dataset: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeArgs,
    /// Report file name inside the output directory.
    #[arg(long, default_value = "sts.csv")]
    pub output: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildIndexArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Corpus TSV (`id<TAB>text`).
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Precomputed corpus embeddings (`HPDE`), one row per corpus line.
    #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeArgs,
    /// Number of inverted lists.
    #[arg(long, default_value_t = crate::retrieval::DEFAULT_NLIST)]
    pub nlist: usize,
    /// Index file name inside the output directory.
    #[arg(long, default_value = "index.hpdi")]
    pub output: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Index file (`HPDI`).
    #[arg(long, value_name = "PATH")]
    pub index: PathBuf,
    /// Query TSV (`id<TAB>text`).
    #[arg(long, value_name = "PATH")]
    pub queries: PathBuf,
    /// Precomputed query embeddings (`HPDE`), one row per query line.
    #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
    pub query_embeddings: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Inverted lists scanned per query.
    #[arg(long, default_value_t = crate::retrieval::DEFAULT_NPROBE)]
    pub nprobe: usize,
    /// Results file name inside the output directory.
    #[arg(long, default_value = "search.tsv")]
    pub output: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Index file (`HPDI`). Repeatable.
    #[arg(long, value_name = "PATH", required = true)]
    pub index: Vec<PathBuf>,
    /// Query TSV (`id<TAB>text`).
    #[arg(long, value_name = "PATH")]
    pub queries: PathBuf,
    /// Gold TSV (`query_id<TAB>corpus_id`).
    #[arg(long, value_name = "PATH")]
    pub gold: PathBuf,
    /// Precomputed query embeddings, one file per index in the same order.
    #[arg(long, value_name = "PATH", conflicts_with = "checkpoint")]
    pub query_embeddings: Vec<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub encode: EncodeArgs,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = crate::retrieval::DEFAULT_NPROBE)]
    pub nprobe: usize,
    /// Timed passes over the query set; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Also write exhaustive-search rankings for each index.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: CommonArgs,
    /// Reduced dimension d.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Synthetic training triplets.
    #[arg(long, default_value_t = 500)]
    pub triplets: usize,
    /// Synthetic scored pairs in each of the dev and validation splits.
    #[arg(long, default_value_t = 200)]
    pub sts_pairs: usize,
    /// Per-word synonym substitution rate for triplet augmentation; 0 disables it.
    #[arg(long, default_value_t = 0.0)]
    pub augment_rate: f64,
    /// Teacher width d′.
    #[arg(long, default_value_t = 64)]
    pub teacher_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub teacher_layers: usize,
    #[arg(long, default_value_t = 4)]
    pub teacher_heads: usize,
    #[arg(long, default_value_t = 128)]
    pub teacher_ffn_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub teacher_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub teacher_lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub temperature: f64,
    #[arg(long, default_value_t = 32)]
    pub student_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub student_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub student_heads: usize,
    #[arg(long, default_value_t = 64)]
    pub student_ffn_dim: usize,
    #[arg(long, value_enum, default_value_t = HeadInit::Pca)]
    pub head_init: HeadInit,
    /// Distillation epochs.
    #[arg(long, default_value_t = 16)]
    pub epochs: usize,
    /// Distillation learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 25)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 16)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2)]
    pub min_count: usize,
    /// Also write the whitened projection.
    #[arg(long)]
    pub whiten_after: bool,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainTeacher(_) => "train-teacher",
            Command::FitPca(_) => "fit-pca",
            Command::Distill(_) => "distill",
            Command::EvalSts(_) => "eval-sts",
            Command::BuildIndex(_) => "build-index",
            Command::Search(_) => "search",
            Command::Bench(_) => "bench",
            Command::Pipeline(_) => "pipeline",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::TrainTeacher(a) => &a.common,
            Command::FitPca(a) => &a.common,
            Command::Distill(a) => &a.common,
            Command::EvalSts(a) => &a.common,
            Command::BuildIndex(a) => &a.common,
            Command::Search(a) => &a.common,
            Command::Bench(a) => &a.common,
            Command::Pipeline(a) => &a.common,
        }
    }
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// The error and each of its causes, colon-separated.
pub fn describe(e: &Error) -> String {
    let mut s = e.to_string();
    let mut cur: Option<&dyn std::error::Error> = std::error::Error::source(e);
    while let Some(c) = cur {
        s.push_str(": ");
        s.push_str(&c.to_string());
        cur = c.source();
    }
    s
}

fn init_threads() -> Result<()> {
    let Some(v) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn init_logging(verbose: bool) {
    let level = if verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Parse `args` (program name first), run the command and return the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match inject_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.command.common().verbose);
    if let Err(e) = init_threads() {
        eprintln!("error: {}", describe(&e));
        return EXIT_USAGE;
    }
    match commands::dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_default_appears_in_help() {
        let mut root = Cli::command();
        for sub in root.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                let Some(long) = arg.get_long() else { continue };
                assert!(help.contains(&format!("--{long}")), "{} help lacks --{long}", sub.get_name());
                if !arg.get_action().takes_values() {
                    continue;
                }
                for d in arg.get_default_values() {
                    let shown = format!("[default: {}]", d.to_string_lossy());
                    assert!(help.contains(&shown), "{} help lacks {shown} for --{long}", sub.get_name());
                }
            }
        }
    }

    #[test]
    fn numerical_errors_exit_3() {
        let e = Error::Diverged { step: 2, loss: f64::NAN }.context("training");
        assert_eq!(exit_code(&e), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Input("x".into())), EXIT_USAGE);
        assert_eq!(describe(&e), "training: training diverged at step 2: loss = NaN");
    }
}
