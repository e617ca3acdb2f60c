mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use metaret::eval::EvalError;
use metaret::report::ReportError;
use metaret::retrieval::RetrievalError;
use metaret::{CorpusError, EncoderError, FusionError, IndexError};

use config::RunConfig;

/// A configuration or input problem detected by the CLI itself.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "metaret", version, about = "Metadata-aware retrieval experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct GlobalArgs {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Corpus JSONL file
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// `test` or `remote:<model>`
    #[arg(long, global = true, value_name = "SPEC")]
    encoder: Option<String>,
    /// Embedding cache file
    #[arg(long, global = true, value_name = "PATH")]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus and print its composition
    Ingest,
    /// Encode chunk texts, metadata headers and queries (warms the cache)
    Embed,
    /// Build and save the indices of every configured strategy
    Index,
    /// Run one query against one strategy
    Query {
        /// Strategy label, e.g. `unified(0.5)`; defaults to the first configured
        #[arg(long)]
        strategy: Option<String>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        text: String,
    },
    /// Evaluate every configured strategy: metrics.csv, metrics.json
    Eval,
    /// Fusion-weight sweep: sweep.csv, sweep.json, charts
    Sweep,
    /// Metadata-field ablation: ablation.csv, ablation.json, charts
    Ablate,
    /// Pairwise separation analysis: separation.csv, histogram.csv, separation.json, chart
    AnalyzeSpace,
}

/// Config file values with command-line overrides applied.
pub struct Settings {
    pub config: RunConfig,
    pub corpus: PathBuf,
    pub out: PathBuf,
}

fn resolve(global: &GlobalArgs) -> Result<Settings> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(encoder) = &global.encoder {
        config.encoder = encoder.clone();
    }
    if let Some(cache) = &global.cache {
        config.cache = Some(cache.clone());
    }
    if let Some(out) = &global.out {
        config.out = out.clone();
    }
    let corpus = global
        .corpus
        .clone()
        .or_else(|| config.corpus.clone())
        .ok_or_else(|| Invalid("no corpus given (use --corpus or `corpus` in the config)".into()))?;
    if !corpus.is_file() {
        return Err(Invalid(format!("corpus {} not found", corpus.display())).into());
    }
    config.validate()?;
    Ok(Settings {
        out: config.out.clone(),
        config,
        corpus,
    })
}

fn run(cli: Cli) -> Result<()> {
    let settings = resolve(&cli.global)?;
    match cli.command {
        Command::Ingest => commands::ingest(&settings),
        Command::Embed => commands::embed(&settings),
        Command::Index => commands::index(&settings),
        Command::Query { strategy, k, text } => commands::query(&settings, strategy.as_deref(), k, &text),
        Command::Eval => commands::eval(&settings),
        Command::Sweep => commands::sweep(&settings),
        Command::Ablate => commands::ablate(&settings),
        Command::AnalyzeSpace => commands::analyze_space(&settings),
    }
    .with_context(|| format!("metaret failed (seed {})", settings.config.seed))
}

const VALIDATION: u8 = 1;
const REMOTE: u8 = 2;
const INTERNAL: u8 = 3;

fn encoder_code(e: &EncoderError) -> u8 {
    match e {
        EncoderError::RemoteFailure { .. } | EncoderError::DimMismatch { .. } | EncoderError::NonFinite => REMOTE,
        EncoderError::EmptyInput | EncoderError::Config(_) | EncoderError::CacheCorrupt(_) => VALIDATION,
        EncoderError::Io { .. } => INTERNAL,
    }
}

fn index_code(e: &IndexError) -> u8 {
    match e {
        IndexError::IoFailure { .. } => INTERNAL,
        IndexError::CorruptIndex { .. } | IndexError::InvalidK | IndexError::Empty => VALIDATION,
        IndexError::DimMismatch { .. } | IndexError::ZeroVector(_) | IndexError::ZeroQuery => VALIDATION,
        IndexError::DuplicateId(_) => INTERNAL,
    }
}

fn retrieval_code(e: &RetrievalError) -> u8 {
    match e {
        RetrievalError::Encoder(e) => encoder_code(e),
        RetrievalError::Index(e) => index_code(e),
        RetrievalError::NeedsEncoder(_) => INTERNAL,
        RetrievalError::Fusion(_)
        | RetrievalError::Corpus(_)
        | RetrievalError::EmptyMetadata(_)
        | RetrievalError::AliasTable { .. }
        | RetrievalError::Io { .. } => VALIDATION,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Retrieval(e) => retrieval_code(e),
        EvalError::Encoder(e) => encoder_code(e),
        EvalError::Coverage { .. } => INTERNAL,
        EvalError::NoQueries(_) | EvalError::EmptyStratum(_) | EvalError::InvalidParams(_) | EvalError::Fusion(_) => {
            VALIDATION
        }
    }
}

/// 1 for bad input or configuration, 2 for remote failures, 3 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<CorpusError>() || cause.is::<FusionError>() {
            return VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<EncoderError>() {
            return encoder_code(e);
        }
        if let Some(e) = cause.downcast_ref::<IndexError>() {
            return index_code(e);
        }
        if let Some(e) = cause.downcast_ref::<RetrievalError>() {
            return retrieval_code(e);
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return eval_code(e);
        }
        if cause.is::<ReportError>() {
            return INTERNAL;
        }
    }
    INTERNAL
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
