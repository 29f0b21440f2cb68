use std::path::{Path, PathBuf};

use rolecast::analysis::ClusterConfig;
use rolecast::gateway::{GatewayConfig, Mode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    #[default]
    Article,
    Plot,
    /// Whole speeches, split into paragraphs on ingest.
    Speech,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub path: Option<PathBuf>,
    pub kind: CorpusKind,
    pub metadata: Option<PathBuf>,
    pub min_words: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    /// Offline feature hashing.
    #[default]
    Hash,
    /// The gateway's embedding endpoint (and cache).
    Gateway,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub backend: EmbeddingBackend,
    pub dim: usize,
    pub model: String,
    pub cache: Option<PathBuf>,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            backend: EmbeddingBackend::Hash,
            dim: 256,
            model: "text-embedding-3-small".into(),
            cache: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub mode: Option<Mode>,
    pub keep_going: bool,
    pub corpus: CorpusSettings,
    pub gateway: GatewayConfig,
    pub completion_cache: Option<PathBuf>,
    pub embedding: EmbeddingSettings,
    pub lexicons: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub cluster: ClusterConfig,
    pub alpha: f64,
    pub allow_single_party: bool,
    pub party_table: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out: PathBuf::from("out"),
            mode: None,
            keep_going: false,
            corpus: CorpusSettings::default(),
            gateway: GatewayConfig::default(),
            completion_cache: None,
            embedding: EmbeddingSettings::default(),
            lexicons: None,
            taxonomy: None,
            gold: None,
            cluster: ClusterConfig::default(),
            alpha: 0.5,
            allow_single_party: false,
            party_table: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [
            &mut self.corpus.path,
            &mut self.corpus.metadata,
            &mut self.completion_cache,
            &mut self.embedding.cache,
            &mut self.lexicons,
            &mut self.taxonomy,
            &mut self.gold,
            &mut self.party_table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(self.gateway.mode)
    }

    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }
}

/// Fails with an input error unless `path` exists.
pub fn existing(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::Input(format!("{what} not found: {}", path.display())))
    }
}
