//! Zero-shot role questions: one prompt per (document, role), answered by a
//! completion model through the [`Gateway`], then normalized.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{count_words, Corpus, Document};
use crate::gateway::{Gateway, GatewayError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hero,
    Villain,
    Victim,
}

impl Role {
    /// All roles in canonical order.
    pub const ALL: [Role; 3] = [Role::Hero, Role::Villain, Role::Victim];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Hero => "hero",
            Role::Villain => "villain",
            Role::Victim => "victim",
        }
    }

    pub fn capitalized(self) -> &'static str {
        match self {
            Role::Hero => "Hero",
            Role::Villain => "Villain",
            Role::Victim => "Victim",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hero" => Ok(Role::Hero),
            "villain" => Ok(Role::Villain),
            "victim" => Ok(Role::Victim),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RolesError {
    #[error("cannot build a prompt from empty text")]
    EmptyText,
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("document {doc_id}, role {role}: {source}")]
    Gateway {
        doc_id: String,
        role: Role,
        #[source]
        source: GatewayError,
    },
}

/// One model answer for one (document, role) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleExtraction {
    pub doc_id: String,
    pub role: Role,
    /// Verbatim completion text.
    pub raw_answer: String,
    pub normalized_answer: String,
    pub model: String,
    pub cache_key: String,
    /// Set when the completion was blank.
    #[serde(default)]
    pub empty: bool,
}

impl RoleExtraction {
    pub fn new(doc_id: &str, role: Role, raw: &str, model: &str, cache_key: &str) -> Self {
        let normalized_answer = normalize_answer(raw);
        RoleExtraction {
            doc_id: doc_id.to_string(),
            role,
            raw_answer: raw.to_string(),
            empty: normalized_answer.is_empty(),
            normalized_answer,
            model: model.to_string(),
            cache_key: cache_key.to_string(),
        }
    }
}

/// The question, the text, then the capitalized role as an answer cue.
pub fn build_prompt(role: Role, text: &str) -> Result<String, RolesError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(RolesError::EmptyText);
    }
    Ok(format!(
        "Who is the {} in the following text?\n\nText: {}\n\n{}:",
        role.as_str(),
        text,
        role.capitalized()
    ))
}

fn boilerplate() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:the\s+)?(?:hero|villain|victim)\s+(?:in|of)\s+this\s+text\s+is\b\s*").expect("valid regex")
    })
}

/// Trims, collapses whitespace, drops a "The villain in this text is"
/// style prefix and a trailing period. Applied to a fixpoint so it is
/// idempotent; never strips down to an empty string.
pub fn normalize_answer(raw: &str) -> String {
    let mut current = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let mut next = current.as_str();
        if let Some(m) = boilerplate().find(next) {
            let rest = next[m.end()..].trim_start();
            if rest.chars().any(char::is_alphanumeric) {
                next = rest;
            }
        }
        if let Some(stripped) = next.strip_suffix('.') {
            let stripped = stripped.trim_end();
            if !stripped.is_empty() {
                next = stripped;
            }
        }
        if next == current {
            return current;
        }
        current = next.to_string();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub keep_going: bool,
    /// Documents longer than this are cut at a paragraph boundary.
    pub max_prompt_words: usize,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            keep_going: false,
            max_prompt_words: 3000,
        }
    }
}

/// A (document, role) pair that produced no answer under `keep_going`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub doc_id: String,
    pub role: Role,
    pub cache_miss: bool,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionRun {
    pub extractions: Vec<RoleExtraction>,
    pub failures: Vec<ExtractionFailure>,
}

/// Keeps whole paragraphs while the running word count stays within
/// `max_words`. A first paragraph that is already too long is cut at a word
/// boundary.
pub fn truncate_to_words(body: &str, max_words: usize) -> std::borrow::Cow<'_, str> {
    if count_words(body) <= max_words {
        return body.into();
    }
    let mut kept: Vec<&str> = Vec::new();
    let mut used = 0;
    for para in body.split("\n\n").map(str::trim).filter(|p| !p.is_empty()) {
        let n = count_words(para);
        if used + n > max_words {
            break;
        }
        used += n;
        kept.push(para);
    }
    if kept.is_empty() {
        return body
            .split_whitespace()
            .take(max_words)
            .collect::<Vec<_>>()
            .join(" ")
            .into();
    }
    kept.join("\n\n").into()
}

fn prompt_for(doc: &Document, role: Role, options: &ExtractOptions) -> Result<String, RolesError> {
    let text = truncate_to_words(&doc.body, options.max_prompt_words);
    if text.len() != doc.body.len() {
        log::warn!(
            "document {} truncated from {} to {} words",
            doc.id,
            doc.word_count(),
            count_words(&text)
        );
    }
    build_prompt(role, &text)
}

/// Asks every role question of every document. Output is ordered by
/// document id, then role.
pub fn extract_roles(
    corpus: &Corpus,
    roles: &[Role],
    gateway: &Gateway,
    options: &ExtractOptions,
) -> Result<ExtractionRun, RolesError> {
    if corpus.is_empty() {
        return Err(RolesError::EmptyCorpus);
    }
    let mut roles = roles.to_vec();
    roles.sort();
    roles.dedup();

    let mut pairs = Vec::new();
    let mut requests = Vec::new();
    for doc in corpus.documents() {
        for &role in &roles {
            let prompt = match prompt_for(doc, role, options) {
                Ok(p) => p,
                Err(RolesError::EmptyText) => {
                    log::warn!("document {} has an empty body; skipped", doc.id);
                    continue;
                }
                Err(e) => return Err(e),
            };
            pairs.push((doc.id.as_str(), role));
            requests.push(gateway.config().request(prompt));
        }
    }

    let answers = gateway.complete_many(&requests);
    let mut run = ExtractionRun::default();
    for (((doc_id, role), request), answer) in pairs.into_iter().zip(&requests).zip(answers) {
        match answer {
            Ok(text) => run
                .extractions
                .push(RoleExtraction::new(doc_id, role, &text, &request.model, &request.key())),
            Err(source) if options.keep_going => run.failures.push(ExtractionFailure {
                doc_id: doc_id.to_string(),
                role,
                cache_miss: source.is_cache_miss(),
                error: source.to_string(),
            }),
            Err(source) => {
                return Err(RolesError::Gateway {
                    doc_id: doc_id.to_string(),
                    role,
                    source,
                })
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;
    use crate::gateway::{CompletionRecord, GatewayConfig, RecordStore};
    use proptest::prelude::*;

    #[test]
    fn prompt_layout() {
        assert_eq!(
            build_prompt(Role::Villain, "X").unwrap(),
            "Who is the villain in the following text?\n\nText: X\n\nVillain:"
        );
        assert_eq!(
            build_prompt(Role::Hero, "  X \n").unwrap(),
            "Who is the hero in the following text?\n\nText: X\n\nHero:"
        );
        assert!(matches!(build_prompt(Role::Victim, ""), Err(RolesError::EmptyText)));
        assert!(matches!(
            build_prompt(Role::Victim, " \n\t"),
            Err(RolesError::EmptyText)
        ));
    }

    #[test]
    fn role_parse_and_order() {
        assert_eq!("Villain".parse::<Role>().unwrap(), Role::Villain);
        assert!("sidekick".parse::<Role>().is_err());
        let mut v = vec![Role::Victim, Role::Hero, Role::Villain];
        v.sort();
        assert_eq!(v, Role::ALL);
        assert_eq!(serde_json::to_string(&Role::Victim).unwrap(), "\"victim\"");
    }

    #[test]
    fn normalizes_figure_completions() {
        assert_eq!(
            normalize_answer(
                " The villain in this text is the person who is questioning the use of hydraulic fracturing in New York."
            ),
            "the person who is questioning the use of hydraulic fracturing in New York"
        );
        assert_eq!(normalize_answer(" The New York consumers "), "The New York consumers");
        assert_eq!(
            normalize_answer("The hero in this text is the person who wrote it, who is trying"),
            "the person who wrote it, who is trying"
        );
        assert_eq!(normalize_answer("Hero of this text is  Simba"), "Simba");
    }

    #[test]
    fn normalize_edge_cases() {
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("  \n "), "");
        assert_eq!(normalize_answer("Encana Corp."), "Encana Corp");
        assert_eq!(
            normalize_answer("The villain in this text is."),
            "The villain in this text is"
        );
        assert_eq!(normalize_answer("."), ".");
        assert_eq!(normalize_answer("a\n\n  b\tc"), "a b c");
        let e = RoleExtraction::new("d", Role::Hero, "   ", "m", "k");
        assert!(e.empty);
        assert_eq!(e.normalized_answer, "");
    }

    #[test]
    fn truncation_respects_paragraphs() {
        let body = "a b c\n\nd e f\n\ng h i";
        assert_eq!(truncate_to_words(body, 9), body);
        assert_eq!(truncate_to_words(body, 7), "a b c\n\nd e f");
        assert_eq!(truncate_to_words("one two three four", 2), "one two");
    }

    fn gateway_with(answers: &[(&Document, Role, &str)]) -> Gateway {
        let cfg = GatewayConfig::default();
        let store = RecordStore::in_memory();
        for (doc, role, text) in answers {
            let req = cfg.request(build_prompt(*role, &doc.body).unwrap());
            store
                .append(CompletionRecord {
                    key: req.key(),
                    request: req,
                    response_text: text.to_string(),
                    provider: "fixture".into(),
                    created_at: "2022-06-01T00:00:00Z".into(),
                })
                .unwrap();
        }
        Gateway::offline(cfg).with_completion_cache(store)
    }

    fn two_docs() -> Corpus {
        Corpus::new(
            "t",
            vec![
                Document::new("b", "Scar kills Mufasa.", Source::Plot),
                Document::new("a", "Jafar tricks Aladdin.", Source::Plot),
            ],
        )
        .unwrap()
    }

    #[test]
    fn extraction_order_and_cardinality() {
        let corpus = two_docs();
        let a = corpus.get("a").unwrap();
        let b = corpus.get("b").unwrap();
        let gw = gateway_with(&[
            (a, Role::Hero, " Aladdin"),
            (a, Role::Villain, " Jafar"),
            (a, Role::Victim, " Aladdin"),
            (b, Role::Hero, " Simba"),
            (b, Role::Villain, " Scar."),
            (b, Role::Victim, " Mufasa"),
        ]);
        let run = extract_roles(
            &corpus,
            &[Role::Victim, Role::Hero, Role::Villain],
            &gw,
            &ExtractOptions::default(),
        )
        .unwrap();
        let got: Vec<_> = run
            .extractions
            .iter()
            .map(|e| (e.doc_id.as_str(), e.role, e.normalized_answer.as_str()))
            .collect();
        assert_eq!(
            got,
            [
                ("a", Role::Hero, "Aladdin"),
                ("a", Role::Villain, "Jafar"),
                ("a", Role::Victim, "Aladdin"),
                ("b", Role::Hero, "Simba"),
                ("b", Role::Villain, "Scar"),
                ("b", Role::Victim, "Mufasa"),
            ]
        );
        assert!(run.failures.is_empty());
        assert!(run.extractions.iter().all(|e| e.cache_key.len() == 64));
        assert_eq!(gw.provider_calls(), 0);
    }

    #[test]
    fn cache_miss_is_fatal_unless_keep_going() {
        let corpus = two_docs();
        let a = corpus.get("a").unwrap();
        let gw = gateway_with(&[(a, Role::Hero, "Aladdin")]);
        match extract_roles(&corpus, &[Role::Hero], &gw, &ExtractOptions::default()) {
            Err(RolesError::Gateway { doc_id, role, source }) => {
                assert_eq!(doc_id, "b");
                assert_eq!(role, Role::Hero);
                assert!(source.is_cache_miss());
            }
            r => panic!("{r:?}"),
        }
        let opts = ExtractOptions {
            keep_going: true,
            ..ExtractOptions::default()
        };
        let run = extract_roles(&corpus, &[Role::Hero], &gw, &opts).unwrap();
        assert_eq!(run.extractions.len(), 1);
        assert_eq!(run.failures.len(), 1);
        assert!(run.failures[0].cache_miss);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let gw = gateway_with(&[]);
        assert!(matches!(
            extract_roles(&Corpus::default(), &Role::ALL, &gw, &ExtractOptions::default()),
            Err(RolesError::EmptyCorpus)
        ));
    }

    #[test]
    fn extraction_jsonl_schema() {
        let e = RoleExtraction::new("d1", Role::Victim, " Mufasa", "davinci", "ab");
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"doc_id":"d1","role":"victim","raw_answer":" Mufasa","normalized_answer":"Mufasa","model":"davinci","cache_key":"ab","empty":false}"#
        );
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "(?i)(the )?((hero|villain|victim) (in|of) this text is )?[ a-zA-Z.,\n\t]{0,40}") {
            let once = normalize_answer(&raw);
            prop_assert_eq!(normalize_answer(&once), once.clone());
            prop_assert_eq!(once.trim(), once.as_str());
            prop_assert_eq!(once.is_empty(), raw.trim().is_empty());
        }

        #[test]
        fn normalize_is_idempotent_any_text(raw in "\\PC{0,60}") {
            let once = normalize_answer(&raw);
            prop_assert_eq!(normalize_answer(&once), once);
        }
    }
}
