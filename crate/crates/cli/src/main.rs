use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rolecast::gateway::Mode;

mod commands;
mod config;
mod error;

use config::{CorpusKind, EmbeddingBackend, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "rolecast", version, about = "Hero, villain and victim extraction pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run config. Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// live, replay or record.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// k-means seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Record per-pair failures instead of stopping at the first one.
    #[arg(long, global = true)]
    keep_going: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load raw texts into a corpus JSONL.
    Ingest(IngestArgs),
    /// Ask the completion model for each role of each document.
    Extract(ExtractArgs),
    /// Lexicon baseline role assignment.
    Baseline(BaselineArgs),
    /// Score extractions against gold labels.
    Evaluate(EvaluateArgs),
    /// Cluster answers and score clusters by party.
    Cluster(ClusterArgs),
    /// Render text tables from earlier stages.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Directory of .txt files, a .txt file, or documents JSONL.
    path: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<CorpusKind>,
    /// Metadata JSONL keyed by document id.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Minimum paragraph length for speeches.
    #[arg(long)]
    min_words: Option<usize>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Corpus JSONL (default: <out>/corpus/corpus.jsonl).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Completion cache JSONL.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Comma-separated subset of hero,villain,victim.
    #[arg(long, value_delimiter = ',')]
    roles: Option<Vec<rolecast::Role>>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Directory with sentiment.tsv, hero.txt, villain.txt, victim.txt.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Extractions JSONL (default: <out>/extractions/extractions.jsonl).
    #[arg(long)]
    extractions: Option<PathBuf>,
    /// Taxonomy and mapping JSON.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    extractions: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    embedding: Option<EmbeddingBackend>,
    /// Embedding cache JSONL for the gateway backend.
    #[arg(long)]
    embedding_cache: Option<PathBuf>,
    /// Report single-party roles instead of failing.
    #[arg(long)]
    allow_single_party: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    extractions: Option<PathBuf>,
}

fn settings(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = global.mode {
        config.mode = Some(mode);
    }
    if let Some(out) = &global.out {
        config.out = out.clone();
    }
    if let Some(seed) = global.seed {
        config.cluster.seed = seed;
    }
    config.keep_going |= global.keep_going;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = settings(&cli.global)?;
    match cli.command {
        Command::Ingest(a) => {
            if a.path.is_some() {
                config.corpus.path = a.path;
            }
            if let Some(kind) = a.kind {
                config.corpus.kind = kind;
            }
            if a.metadata.is_some() {
                config.corpus.metadata = a.metadata;
            }
            if a.min_words.is_some() {
                config.corpus.min_words = a.min_words;
            }
            commands::ingest(&config)
        }
        Command::Extract(a) => {
            if a.cache.is_some() {
                config.completion_cache = a.cache;
            }
            commands::extract(&config, a.corpus, a.roles)
        }
        Command::Baseline(a) => {
            if a.lexicons.is_some() {
                config.lexicons = a.lexicons;
            }
            commands::baseline(&config, a.corpus)
        }
        Command::Evaluate(a) => {
            if a.taxonomy.is_some() {
                config.taxonomy = a.taxonomy;
            }
            if a.gold.is_some() {
                config.gold = a.gold;
            }
            commands::evaluate(&config, a.extractions)
        }
        Command::Cluster(a) => {
            if let Some(k) = a.k {
                config.cluster.k = k;
            }
            if let Some(backend) = a.embedding {
                config.embedding.backend = backend;
            }
            if a.embedding_cache.is_some() {
                config.embedding.cache = a.embedding_cache;
            }
            config.allow_single_party |= a.allow_single_party;
            commands::cluster(&config, a.extractions, a.corpus)
        }
        Command::Report(a) => commands::report(&config, a.extractions),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rolecast: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
