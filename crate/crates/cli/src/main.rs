//! `relqa`: preprocess, train, evaluate and apply the answer reranker.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use relqa::eval::FilterPolicy;
use relqa::model::{Block, RelationalMode};
use relqa::numeric::ConvMode;
use relqa::text::EmbeddingFormat;

use crate::config::{InputFormat, RunConfig};
use crate::error::{code, CliError};

#[derive(Parser)]
#[command(
    name = "relqa",
    version,
    about = "Answer sentence reranking with relational overlap embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, index and annotate the data splits.
    Preprocess(ConfigArgs),
    /// Train a model on the preprocessed splits.
    Train(ConfigArgs),
    /// Score a dataset with a checkpoint and report MAP, MRR and P@1.
    Evaluate(EvaluateArgs),
    /// Rank candidate answers for one question.
    Rerank(RerankArgs),
    /// Compare analytic and finite-difference gradients on a random tiny model.
    Gradcheck(GradcheckArgs),
    /// Convert the XML-like TREC QA distribution to canonical TSV.
    ConvertTrec(ConvertArgs),
    /// Write a synthetic dataset, matching embeddings and a config file.
    GenerateFixture(FixtureArgs),
    /// Print the effective configuration.
    PrintConfig(ConfigArgs),
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, found `{other}`")),
    }
}

/// Configuration file plus per-key overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply without one.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    preprocessed_dir: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<InputFormat>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    embedding_format: Option<EmbeddingFormat>,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Relational mode: none, fvec, emb or both.
    #[arg(long)]
    mode: Option<RelationalMode>,
    /// Convolution: wide or narrow.
    #[arg(long)]
    conv: Option<ConvMode>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    overlap_dim: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Seed of the batch shuffling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_parser = parse_bool)]
    freeze_embeddings: Option<bool>,
    /// Question filter: all-positive-or-all-negative, no-positive or none.
    #[arg(long)]
    policy: Option<FilterPolicy>,
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    match s {
        "canonical" => Ok(InputFormat::Canonical),
        "wikiqa" => Ok(InputFormat::Wikiqa),
        other => Err(format!(
            "unknown input format `{other}` (expected canonical or wikiqa)"
        )),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag {
                    cfg.$($field).+ = v.clone().into();
                })*
            };
        }
        set!(
            output_dir => output_dir,
            preprocessed_dir => data.preprocessed_dir,
            train => data.train,
            dev => data.dev,
            test => data.test,
            format => data.format,
            embeddings => data.embeddings,
            embedding_format => data.embedding_format,
            stopwords => data.stopwords,
            mode => model.relational_mode,
            conv => model.conv_mode,
            word_dim => model.word_dim,
            overlap_dim => model.overlap_dim,
            filters => model.filters,
            width => model.width,
            init_seed => model.init_seed,
            batch_size => train.batch_size,
            max_epochs => train.max_epochs,
            patience => train.patience,
            eval_interval => train.eval_interval,
            seed => train.seed,
            freeze_embeddings => train.freeze_embeddings,
            policy => eval.policy,
        );
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Defaults to `checkpoint.bin` in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Preprocessed container or raw TSV; defaults to the preprocessed test split.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write the ranking in trec_eval run format.
    #[arg(long)]
    run_file: Option<PathBuf>,
    /// Write the judgements in trec_eval qrels format.
    #[arg(long)]
    qrels_file: Option<PathBuf>,
    #[arg(long, default_value = "relqa")]
    run_name: String,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// The question; without it the first input line is the question.
    #[arg(long, short)]
    question: Option<String>,
    /// One candidate per line; standard input when absent.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Relational mode to check, or `all`.
    #[arg(long, default_value = "all")]
    mode: String,
    #[arg(long, default_value = "wide")]
    conv: ConvMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Perturb the analytic gradient of this block to confirm failures are caught.
    #[arg(long, value_parser = parse_block)]
    corrupt_block: Option<Block>,
}

fn parse_block(s: &str) -> Result<Block, String> {
    Block::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Block::ALL.iter().map(|b| b.name()).collect();
        format!("unknown block `{s}` (expected one of {})", names.join(", "))
    })
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FixtureArgs {
    /// Directory to write into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    train_questions: usize,
    #[arg(long, default_value_t = 20)]
    dev_questions: usize,
    #[arg(long, default_value_t = 20)]
    test_questions: usize,
    #[arg(long, default_value_t = 5)]
    candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Word vector dimension of the written embeddings and config.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Filter count written to the config.
    #[arg(long, default_value_t = 16)]
    filters: usize,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a.resolve()?),
        Command::Train(a) => commands::train(&a.resolve()?),
        Command::Evaluate(a) => commands::evaluate(
            &a.config.resolve()?,
            &commands::EvaluateOptions {
                checkpoint: a.checkpoint,
                data: a.data,
                run_file: a.run_file,
                qrels_file: a.qrels_file,
                run_name: a.run_name,
            },
        ),
        Command::Rerank(a) => commands::rerank(&a.checkpoint, a.question, a.candidates.as_deref()),
        Command::Gradcheck(a) => {
            let modes = if a.mode == "all" {
                RelationalMode::ALL.to_vec()
            } else {
                vec![a.mode.parse().map_err(CliError::usage)?]
            };
            commands::gradcheck(
                &modes,
                a.conv,
                a.seed,
                a.epsilon,
                a.tolerance,
                a.corrupt_block,
            )
        }
        Command::ConvertTrec(a) => commands::convert_trec(&a.input, &a.output),
        Command::GenerateFixture(a) => commands::generate_fixture(&commands::FixtureOptions {
            out: a.out,
            train_questions: a.train_questions,
            dev_questions: a.dev_questions,
            test_questions: a.test_questions,
            candidates: a.candidates,
            seed: a.seed,
            dim: a.dim,
            filters: a.filters,
        }),
        Command::PrintConfig(a) => {
            print!("{}", a.resolve()?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
