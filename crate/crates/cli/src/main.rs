//! `replug`: ingest, index, train, evaluate and query from the command line.
//! Machine-readable results go to stdout; logs go to stderr.

mod commands;
mod config;
mod error;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use config::{LmKind, ModeArg, Overrides};

#[derive(Parser, Debug)]
#[command(name = "replug", version, about = "Retrieval-augmented language modeling over a black-box LM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk raw NDJSON documents into a corpus directory.
    Ingest(IngestArgs),
    /// Build, search or verify a vector index file.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Train the retriever from LM feedback.
    Train(TrainArgs),
    /// Bits per byte on NDJSON documents.
    EvalLm(EvalLmArgs),
    /// Multiple-choice accuracy.
    EvalMc(EvalMcArgs),
    /// Open-domain QA exact match.
    EvalQa(EvalQaArgs),
    /// Top ensembled next tokens for a context.
    Query(QueryArgs),
    /// BPB sweep over retrieval modes and ensemble sizes (CSV).
    Ablate(AblateArgs),
    /// Serve the mock LM over HTTP on loopback.
    StubLm(StubLmArgs),
    /// Serve deterministic stub embeddings over HTTP on loopback.
    StubEmbed(StubEmbedArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct EngineArgs {
    /// JSON engine config; flags override it and environment variables override flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory (or its manifest.json).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    lm: Option<LmKind>,
    /// LM endpoint for `--lm http`.
    #[arg(long)]
    endpoint: Option<String>,
    /// Mock LM topic rules; defaults to the corpus directory's mock_lm.json.
    #[arg(long)]
    mock_spec: Option<PathBuf>,
    #[arg(long)]
    context_window: Option<usize>,
    /// Index file; built in memory from the encoder when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Encoder checkpoint; seeded random initialization when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    index_mode: Option<ModeArg>,
    #[arg(long)]
    query_window: Option<usize>,
    #[arg(long)]
    in_flight: Option<usize>,
}

impl EngineArgs {
    fn overrides(&self, k: Option<usize>) -> Overrides {
        Overrides {
            corpus: self.corpus.clone(),
            index: self.index.clone(),
            checkpoint: self.checkpoint.clone(),
            lm: self.lm,
            endpoint: self.endpoint.clone(),
            mock_spec: self.mock_spec.clone(),
            context_window: self.context_window,
            k,
            query_window: self.query_window,
            in_flight: self.in_flight,
            seed: self.seed,
            dim: self.dim,
            index_mode: self.index_mode,
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// NDJSON of {"source_id", "text"}.
    #[arg(long = "in", required_unless_present = "harness")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    chunk_len: usize,
    #[arg(long, default_value_t = 32)]
    min_tail: usize,
    #[arg(long, value_enum, default_value_t = TokenizerKind::Whitespace)]
    tokenizer: TokenizerKind,
    /// Raw documents whose source ids must stay out of the corpus (e.g. training data).
    #[arg(long)]
    exclude: Vec<PathBuf>,
    #[arg(long)]
    no_dedup: bool,
    /// Write the bundled synthetic harness instead of reading --in.
    #[arg(long)]
    harness: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizerKind {
    Whitespace,
    Byte,
}

#[derive(Subcommand, Debug)]
enum IndexAction {
    Build {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        out: PathBuf,
    },
    Search {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
    },
    Verify {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `--config` is required here: training hyperparameters come from it.
    #[command(flatten)]
    engine: EngineArgs,
    /// Raw training documents; defaults to train.jsonl in the corpus directory.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Output directory for metrics and checkpoints.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    total_steps: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RetrievalArg {
    /// Retrieve with the encoder.
    Replug,
    /// Uniformly random documents.
    Random,
    /// Bare LM.
    None,
}

#[derive(Args, Debug)]
pub struct EvalLmArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// NDJSON of {"doc_id", "text"} ("source_id" is accepted too).
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = RetrievalArg::Replug)]
    retrieval: RetrievalArg,
}

#[derive(Args, Debug)]
pub struct EvalMcArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// NDJSON of {"id", "question", "choices", "gold"}; gold is a letter ("A", "B", ...).
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    shots: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    n_shots: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = RetrievalArg::Replug)]
    retrieval: RetrievalArg,
}

#[derive(Args, Debug)]
pub struct EvalQaArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// NDJSON of {"id", "question", "golds"}.
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    shots: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    n_shots: usize,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum, default_value_t = RetrievalArg::Replug)]
    retrieval: RetrievalArg,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Text file holding the context.
    #[arg(long)]
    context: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Comma-separated subset of random,replug,lsr.
    #[arg(long, value_delimiter = ',', default_value = "random,replug,lsr")]
    modes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
    k: Vec<usize>,
    /// Evaluation documents; required with --corpus.
    #[arg(long)]
    docs: Option<PathBuf>,
    /// Trained encoder for the lsr mode; required with --corpus.
    #[arg(long)]
    trained: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StubLmArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: String,
}

#[derive(Args, Debug)]
pub struct StubEmbedArgs {
    #[arg(long, default_value = "127.0.0.1:0")]
    bind: String,
    #[arg(long, default_value_t = 16)]
    dim: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Command::Train(t) = &cli.command {
        if t.engine.config.is_none() {
            let mut cmd = Cli::command();
            let sub = cmd.find_subcommand_mut("train").expect("train is a subcommand");
            let _ = sub.error(ErrorKind::MissingRequiredArgument, "the following required arguments were not provided:\n  --config <CONFIG>").print();
            return ExitCode::from(2);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
