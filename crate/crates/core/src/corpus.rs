//! Corpus ingestion: plain-text directories or JSONL files in, an ordered,
//! id-unique [`Corpus`] out. Speeches are segmented into paragraphs and short
//! paragraphs are dropped.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::jsonl::{self, JsonlError};

/// Minimum paragraph length (in words) for speech paragraphs.
pub const DEFAULT_MIN_WORDS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

type Result<T> = std::result::Result<T, CorpusError>;

/// Where a document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Article,
    Plot,
    SpeechParagraph,
    Other,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Article => "article",
            Source::Plot => "plot",
            Source::SpeechParagraph => "speech-paragraph",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    #[serde(rename = "D")]
    Democratic,
    #[serde(rename = "R")]
    Republican,
    #[serde(rename = "other")]
    Other,
}

impl Party {
    pub fn code(self) -> &'static str {
        match self {
            Party::Democratic => "D",
            Party::Republican => "R",
            Party::Other => "other",
        }
    }
}

/// One unit of text: an article, a plot summary or a speech paragraph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub party: Option<Party>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    /// Derived from `body`; never read from input.
    #[serde(skip)]
    word_count: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, body: impl AsRef<str>, source: Source) -> Self {
        let body: String = body.as_ref().nfc().collect();
        let word_count = count_words(&body);
        Document {
            id: id.into(),
            title: String::new(),
            body,
            source,
            speaker: None,
            party: None,
            year: None,
            word_count,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    fn refresh(&mut self) {
        self.body = self.body.nfc().collect();
        self.word_count = count_words(&self.body);
    }

    fn merge_metadata(&mut self, meta: &Metadata) {
        if let Some(title) = &meta.title {
            self.title = title.clone();
        }
        if meta.speaker.is_some() {
            self.speaker = meta.speaker.clone();
        }
        if meta.party.is_some() {
            self.party = meta.party;
        }
        if meta.year.is_some() {
            self.year = meta.year;
        }
    }
}

/// Number of maximal non-whitespace runs.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Sidecar metadata line, keyed by document (or speech) id.
#[derive(Debug, Clone, Default, Deserialize)]
struct Metadata {
    id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    speaker: Option<String>,
    #[serde(default)]
    party: Option<Party>,
    #[serde(default)]
    year: Option<i32>,
}

/// An ordered collection of documents with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub name: String,
    documents: Vec<Document>,
}

impl Corpus {
    /// Builds a corpus, sorting by id and rejecting duplicates.
    pub fn new(name: impl Into<String>, mut documents: Vec<Document>) -> Result<Self> {
        documents.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = documents.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CorpusError::DuplicateId(w[0].id.clone()));
        }
        Ok(Corpus {
            name: name.into(),
            documents,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents
            .binary_search_by(|d| d.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.documents[i])
    }

    /// Replaces every document by its retained paragraphs. Metadata is
    /// inherited by each paragraph.
    pub fn split_speeches(&self, min_words: usize) -> Result<Corpus> {
        let mut out = Vec::new();
        for doc in &self.documents {
            for mut para in split_speech(&doc.body, &doc.id, min_words) {
                para.title = doc.title.clone();
                para.speaker = doc.speaker.clone();
                para.party = doc.party;
                para.year = doc.year;
                out.push(para);
            }
        }
        Corpus::new(self.name.clone(), out)
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }

    /// Serializes as JSONL, one document per line in id order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for doc in &self.documents {
            serde_json::to_writer(&mut out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    /// Absent for an empty corpus.
    pub mean_word_count: Option<f64>,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mean_word_count {
            Some(mean) => write!(f, "{} documents, mean {:.1} words", self.doc_count, mean),
            None => write!(f, "{} documents, mean n/a", self.doc_count),
        }
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let n = corpus.len();
    let total: usize = corpus.documents.iter().map(Document::word_count).sum();
    CorpusStats {
        doc_count: n,
        mean_word_count: (n > 0).then(|| total as f64 / n as f64),
    }
}

/// Splits a speech into paragraphs on blank lines, trims them and keeps those
/// with at least `min_words` words. Ids are `{speech_id}:{k}` with `k` the
/// index among retained paragraphs.
pub fn split_speech(raw_text: &str, speech_id: &str, min_words: usize) -> Vec<Document> {
    let text: String = raw_text.nfc().collect();
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n"));
    }

    paragraphs
        .iter()
        .map(|p| p.trim())
        .filter(|p| count_words(p) >= min_words)
        .enumerate()
        .map(|(k, p)| Document::new(format!("{speech_id}:{k}"), p, Source::SpeechParagraph))
        .collect()
}

/// Loads a directory of `.txt` files (id = file stem) or a JSONL file of
/// documents, then merges an optional sidecar of metadata keyed by id.
pub fn load_documents(path: &Path, source: Source, metadata: Option<&Path>) -> Result<Corpus> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let meta = fs::metadata(path).map_err(io_err)?;
    let mut documents = if meta.is_dir() {
        load_text_dir(path, source)?
    } else if path.extension().is_some_and(|e| e == "txt") {
        let body = fs::read_to_string(path).map_err(io_err)?;
        vec![Document::new(file_stem(path), body, source)]
    } else {
        read_documents_jsonl(path)?
    };

    if let Some(sidecar) = metadata {
        let entries: Vec<Metadata> = jsonl::read(sidecar)?;
        let mut by_id: HashMap<String, Metadata> = HashMap::new();
        for (i, entry) in entries.into_iter().enumerate() {
            if by_id.contains_key(&entry.id) {
                return Err(CorpusError::Malformed {
                    path: sidecar.to_path_buf(),
                    line: i + 1,
                    message: format!("duplicate metadata id {:?}", entry.id),
                });
            }
            by_id.insert(entry.id.clone(), entry);
        }
        for doc in &mut documents {
            if let Some(m) = by_id.get(&doc.id) {
                doc.merge_metadata(m);
            }
        }
    }

    let name = file_stem(path);
    Corpus::new(name, documents)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_text_dir(dir: &Path, source: Source) -> Result<Vec<Document>> {
    let io_err = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "txt") {
            files.insert(file_stem(&p), p);
        }
    }
    files
        .into_iter()
        .map(|(id, p)| {
            let body = fs::read_to_string(&p).map_err(|source| CorpusError::Io {
                path: p.clone(),
                source,
            })?;
            Ok(Document::new(id, body, source))
        })
        .collect()
}

/// Reads a documents JSONL file. Word counts are recomputed from the body.
pub fn read_documents_jsonl(path: &Path) -> Result<Vec<Document>> {
    let mut docs: Vec<Document> = jsonl::read(path)?;
    for d in &mut docs {
        d.refresh();
    }
    Ok(docs)
}

/// Reads and validates a corpus previously written by [`Corpus::write_jsonl`].
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    Corpus::new(file_stem(path), read_documents_jsonl(path)?)
}
