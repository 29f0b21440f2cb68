use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rolecast::analysis::{
    self, members_csv, partisan_report, render_extremes, render_overlap, role_overlap, AnalysisError, Embedder,
    GatewayEmbedder, HashEmbedder, PartisanOptions, PartisanReport, PartyTable,
};
use rolecast::baseline::{assign_roles, BaselineRecord, Lexicons};
use rolecast::corpus::{load_documents, read_corpus, Corpus, Source, DEFAULT_MIN_WORDS};
use rolecast::eval::{evaluate as score, read_gold, render_table, review_queue, EvalReport, TaxonomyFile};
use rolecast::gateway::{Gateway, GatewayConfig, Mode, OfflineTransport, RecordStore, ReqwestTransport, Transport};
use rolecast::jsonl;
use rolecast::roles::{extract_roles, ExtractOptions, Role, RoleExtraction, RolesError};
use serde::Serialize;

use crate::config::{existing, CorpusKind, EmbeddingBackend, RunConfig};
use crate::error::CliError;

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(path, &text)
}

fn corpus_file(config: &RunConfig, explicit: Option<PathBuf>) -> Result<Corpus, CliError> {
    let path = explicit.unwrap_or_else(|| config.dir("corpus").join("corpus.jsonl"));
    read_corpus(&existing(&path, "corpus")?).map_err(CliError::input)
}

fn extractions_file(config: &RunConfig, explicit: Option<PathBuf>) -> Result<Vec<RoleExtraction>, CliError> {
    let path = explicit.unwrap_or_else(|| config.dir("extractions").join("extractions.jsonl"));
    jsonl::read(&existing(&path, "extractions")?).map_err(CliError::input)
}

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let settings = &config.corpus;
    let path = settings
        .path
        .as_deref()
        .ok_or_else(|| CliError::Input("ingest needs a corpus path".into()))?;
    let path = existing(path, "corpus path")?;
    let metadata = match &settings.metadata {
        Some(m) => Some(existing(m, "metadata")?),
        None => None,
    };
    let source = match settings.kind {
        CorpusKind::Article => Source::Article,
        CorpusKind::Plot => Source::Plot,
        CorpusKind::Speech => Source::Other,
    };
    let mut corpus = load_documents(&path, source, metadata.as_deref()).map_err(CliError::input)?;
    if settings.kind == CorpusKind::Speech {
        let min_words = settings.min_words.unwrap_or(DEFAULT_MIN_WORDS);
        corpus = corpus.split_speeches(min_words).map_err(CliError::input)?;
    }
    write_file(&config.dir("corpus").join("corpus.jsonl"), &corpus.to_jsonl_string())?;
    let stats = corpus.stats();
    let unit = if settings.kind == CorpusKind::Speech {
        "paragraphs"
    } else {
        "documents"
    };
    match stats.mean_word_count {
        Some(mean) => println!("{} {unit}, mean {mean:.1} words", stats.doc_count),
        None => println!("0 {unit}, mean n/a"),
    }
    Ok(())
}

fn gateway(config: &RunConfig, cache: Option<&Path>, embeddings: Option<&Path>) -> Result<Gateway, CliError> {
    let mode = config.mode();
    let gateway_config = GatewayConfig {
        mode,
        ..config.gateway.clone()
    };
    let transport: Arc<dyn Transport> = match mode {
        Mode::Replay => Arc::new(OfflineTransport::new()),
        Mode::Live | Mode::Record => Arc::new(
            ReqwestTransport::new(Duration::from_secs(gateway_config.timeout_secs)).map_err(CliError::Gateway)?,
        ),
    };
    let mut gw = Gateway::new(gateway_config, transport);
    if let Some(path) = cache {
        gw = gw.with_completion_cache(RecordStore::open(path).map_err(CliError::input)?);
    }
    if let Some(path) = embeddings {
        gw = gw.with_embedding_cache(RecordStore::open(path).map_err(CliError::input)?);
    }
    Ok(gw)
}

fn require_cache(config: &RunConfig, cache: Option<&PathBuf>, what: &str) -> Result<(), CliError> {
    if cache.is_none() && config.mode() != Mode::Live {
        return Err(CliError::Input(format!("{} mode needs a {what} path", config.mode())));
    }
    Ok(())
}

pub fn extract(config: &RunConfig, corpus: Option<PathBuf>, roles: Option<Vec<Role>>) -> Result<(), CliError> {
    let corpus = corpus_file(config, corpus)?;
    require_cache(config, config.completion_cache.as_ref(), "completion cache")?;
    let gw = gateway(config, config.completion_cache.as_deref(), None)?;
    let options = ExtractOptions {
        keep_going: config.keep_going,
        ..ExtractOptions::default()
    };
    let roles = roles.unwrap_or_else(|| Role::ALL.to_vec());
    let run = extract_roles(&corpus, &roles, &gw, &options).map_err(|e| match e {
        RolesError::Gateway { doc_id, role, source } => CliError::from_gateway(format!("{doc_id}/{role}"), &source),
        other => CliError::input(other),
    })?;

    let dir = config.dir("extractions");
    write_file(&dir.join("extractions.jsonl"), &jsonl::to_string(&run.extractions))?;
    let failures = dir.join("failures.jsonl");
    if run.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(&failures).map_err(|e| CliError::Input(format!("{}: {e}", failures.display())))?;
        }
    } else {
        write_file(&failures, &jsonl::to_string(&run.failures))?;
        let misses = run.failures.iter().filter(|f| f.cache_miss).count();
        log::warn!(
            "{} pairs failed ({misses} cache misses); see {}",
            run.failures.len(),
            failures.display()
        );
    }
    println!("{} extractions, {} failures", run.extractions.len(), run.failures.len());
    Ok(())
}

pub fn baseline(config: &RunConfig, corpus: Option<PathBuf>) -> Result<(), CliError> {
    let corpus = corpus_file(config, corpus)?;
    let lexicons = match &config.lexicons {
        Some(dir) => Lexicons::load_dir(&existing(dir, "lexicon directory")?).map_err(CliError::input)?,
        None => Lexicons::bundled(),
    };
    let mut records = Vec::new();
    for doc in corpus.documents() {
        let assigned = assign_roles(doc, &lexicons).map_err(CliError::input)?;
        records.extend(assigned.iter().map(BaselineRecord::from));
    }
    write_file(
        &config.dir("extractions").join("baseline.jsonl"),
        &jsonl::to_string(&records),
    )?;
    println!("{} baseline assignments", records.len());
    Ok(())
}

pub fn evaluate(config: &RunConfig, extractions: Option<PathBuf>) -> Result<(), CliError> {
    let extractions = extractions_file(config, extractions)?;
    let taxonomy_path = config
        .taxonomy
        .as_deref()
        .ok_or_else(|| CliError::Input("evaluate needs --taxonomy".into()))?;
    let gold_path = config
        .gold
        .as_deref()
        .ok_or_else(|| CliError::Input("evaluate needs --gold".into()))?;
    let (taxonomy, table) = TaxonomyFile::load(&existing(taxonomy_path, "taxonomy")?).map_err(CliError::input)?;
    let gold = read_gold(&existing(gold_path, "gold labels")?, &taxonomy).map_err(CliError::input)?;
    let report = score(&extractions, &gold, &table, &taxonomy).map_err(CliError::input)?;

    let dir = config.dir("eval");
    let text = render_table(&report);
    write_json(&dir.join("report.json"), &report)?;
    write_file(&dir.join("table.txt"), &text)?;
    write_file(&dir.join("review_queue.csv"), &review_queue(&report))?;
    print!("{text}");
    if !report.unmapped.is_empty() {
        log::warn!(
            "{} answers need review; see {}",
            report.unmapped.len(),
            dir.join("review_queue.csv").display()
        );
    }
    Ok(())
}

fn analysis_error(e: AnalysisError) -> CliError {
    let root = match &e {
        AnalysisError::Role { source, .. } => source.as_ref(),
        other => other,
    };
    match root {
        AnalysisError::Embedding { source, .. } => CliError::from_gateway("embedding", source),
        _ => CliError::input(e),
    }
}

pub fn cluster(config: &RunConfig, extractions: Option<PathBuf>, corpus: Option<PathBuf>) -> Result<(), CliError> {
    let extractions = extractions_file(config, extractions)?;
    let corpus = corpus_file(config, corpus)?;
    let table = match &config.party_table {
        Some(p) => PartyTable::load(&existing(p, "party table")?).map_err(CliError::input)?,
        None => PartyTable::bundled(),
    };
    let options = PartisanOptions {
        cluster: config.cluster.clone(),
        alpha: config.alpha,
        allow_single_party: config.allow_single_party,
    };
    let report = match config.embedding.backend {
        EmbeddingBackend::Hash => {
            let embedder = HashEmbedder {
                dim: config.embedding.dim,
            };
            if embedder.dim == 0 {
                return Err(CliError::Input("embedding dim must be positive".into()));
            }
            run_partisan(&extractions, &corpus, &table, &embedder, &options)?
        }
        EmbeddingBackend::Gateway => {
            require_cache(config, config.embedding.cache.as_ref(), "embedding cache")?;
            let gw = gateway(config, None, config.embedding.cache.as_deref())?;
            let embedder = GatewayEmbedder {
                gateway: &gw,
                model: config.embedding.model.clone(),
            };
            run_partisan(&extractions, &corpus, &table, &embedder, &options)?
        }
    };
    let dir = config.dir("analysis");
    let text = render_extremes(&report);
    write_json(&dir.join("partisan.json"), &report)?;
    write_file(&dir.join("members.csv"), &members_csv(&report))?;
    write_file(&dir.join("extremes.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn run_partisan(
    extractions: &[RoleExtraction],
    corpus: &Corpus,
    table: &PartyTable,
    embedder: &dyn Embedder,
    options: &PartisanOptions,
) -> Result<PartisanReport, CliError> {
    partisan_report(extractions, corpus, table, embedder, options).map_err(analysis_error)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn report(config: &RunConfig, extractions: Option<PathBuf>) -> Result<(), CliError> {
    let mut sections = Vec::new();
    let eval_path = config.dir("eval").join("report.json");
    if eval_path.exists() {
        let eval: EvalReport = read_json(&eval_path)?;
        sections.push(render_table(&eval));
    }
    let partisan_path = config.dir("analysis").join("partisan.json");
    if partisan_path.exists() {
        let partisan: PartisanReport = read_json(&partisan_path)?;
        sections.push(analysis::render_extremes(&partisan));
    }
    let extractions_path = extractions.unwrap_or_else(|| config.dir("extractions").join("extractions.jsonl"));
    if extractions_path.exists() {
        let rows: Vec<RoleExtraction> = jsonl::read(&extractions_path).map_err(CliError::input)?;
        sections.push(render_overlap(&role_overlap(&rows)));
    }
    if sections.is_empty() {
        return Err(CliError::Input(format!(
            "nothing to report under {}; run evaluate, cluster or extract first",
            config.out.display()
        )));
    }
    let text = sections.join("\n");
    write_file(&config.dir("report").join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
