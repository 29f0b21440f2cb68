//! Dictionary baseline: capitalized-span entity detection, sentence-level
//! sentiment and role-cue scoring, and one entity per role chosen by
//! per-document z-scored totals.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::roles::{normalize_answer, Role, RoleExtraction};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("mention span {start}..{end} is outside the document ({len} bytes)")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("mention sentence index {index} out of range ({count} sentences)")]
    SentenceOutOfBounds { index: usize, count: usize },
    #[error("{file}:{line}: {message}")]
    Lexicon { file: String, line: usize, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const CONNECTORS: [&str; 3] = ["of", "and", "the"];
const TIE_EPSILON: f64 = 1e-9;
pub const DEFAULT_MAX_ENTITIES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub sentence_index: usize,
    /// Byte offsets into the document body, `[start, end)`.
    pub span: (usize, usize),
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub canonical: String,
    pub mentions: Vec<Mention>,
    pub frequency: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicons {
    pub sentiment: HashMap<String, f64>,
    pub hero_cues: HashSet<String>,
    pub villain_cues: HashSet<String>,
    pub victim_cues: HashSet<String>,
}

impl Lexicons {
    /// The small lexicons shipped in `data/lexicons`.
    pub fn bundled() -> Self {
        Lexicons {
            sentiment: parse_sentiment("sentiment.tsv", include_str!("../data/lexicons/sentiment.tsv"))
                .expect("bundled sentiment lexicon is valid"),
            hero_cues: parse_word_list(include_str!("../data/lexicons/hero.txt")),
            villain_cues: parse_word_list(include_str!("../data/lexicons/villain.txt")),
            victim_cues: parse_word_list(include_str!("../data/lexicons/victim.txt")),
        }
    }

    /// Loads `sentiment.tsv`, `hero.txt`, `villain.txt` and `victim.txt`
    /// from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, BaselineError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|source| BaselineError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        Ok(Lexicons {
            sentiment: parse_sentiment("sentiment.tsv", &read("sentiment.tsv")?)?,
            hero_cues: parse_word_list(&read("hero.txt")?),
            villain_cues: parse_word_list(&read("villain.txt")?),
            victim_cues: parse_word_list(&read("victim.txt")?),
        })
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// One lowercase word per line; `#` starts a comment line.
pub fn parse_word_list(text: &str) -> HashSet<String> {
    content_lines(text).map(|(_, l)| l.to_lowercase()).collect()
}

/// `word<TAB>polarity` lines with polarity in `[-1, 1]`.
pub fn parse_sentiment(file: &str, text: &str) -> Result<HashMap<String, f64>, BaselineError> {
    let mut out = HashMap::new();
    for (line, content) in content_lines(text) {
        let err = |message: String| BaselineError::Lexicon {
            file: file.to_string(),
            line,
            message,
        };
        let (word, value) = content
            .split_once('\t')
            .ok_or_else(|| err("expected word<TAB>polarity".into()))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| err(format!("bad polarity {value:?}")))?;
        if !(-1.0..=1.0).contains(&value) {
            return Err(err(format!("polarity {value} outside [-1, 1]")));
        }
        out.insert(word.trim().to_lowercase(), value);
    }
    Ok(out)
}

/// Default stoplist of capitalized function words.
pub fn bundled_stoplist() -> HashSet<String> {
    parse_word_list(include_str!("../data/lexicons/stoplist.txt"))
}

#[derive(Debug, Clone)]
struct Token<'a> {
    text: &'a str,
    start: usize,
    end: usize,
    sentence: usize,
    /// Only whitespace separates this token from the previous one.
    adjacent: bool,
    /// A possessive `'s` was cut off; the token closes any run.
    possessive: bool,
}

/// Sentence byte ranges: a sentence ends after `.`, `?` or `!` followed by
/// whitespace.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    if !text[start..end].trim().is_empty() {
                        spans.push((start, end));
                    }
                    start = end;
                }
            }
        }
    }
    if !text[start..].trim().is_empty() {
        spans.push((start, text.len()));
    }
    spans
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '\'' | '\u{2019}' | '-')
}

fn tokenize(text: &str) -> Vec<Token<'_>> {
    let sentences = sentence_spans(text);
    let mut tokens: Vec<Token> = Vec::new();
    for (s_idx, &(s_start, s_end)) in sentences.iter().enumerate() {
        let sentence = &text[s_start..s_end];
        let mut prev_end: Option<usize> = None;
        let mut iter = sentence.char_indices().peekable();
        while let Some(&(i, c)) = iter.peek() {
            if !is_word_char(c) {
                iter.next();
                continue;
            }
            let start = i;
            let mut end = i;
            while let Some(&(j, c)) = iter.peek() {
                if !is_word_char(c) {
                    break;
                }
                end = j + c.len_utf8();
                iter.next();
            }
            let mut word = &sentence[start..end];
            let lead = word.len() - word.trim_start_matches(['\'', '\u{2019}', '-']).len();
            word = &word[lead..];
            let mut possessive = false;
            for suffix in ["'s", "\u{2019}s"] {
                if word.len() > suffix.len() && word.ends_with(suffix) {
                    word = &word[..word.len() - suffix.len()];
                    possessive = true;
                }
            }
            word = word.trim_end_matches(['\'', '\u{2019}', '-']);
            if word.is_empty() {
                continue;
            }
            let abs_start = s_start + start + lead;
            let abs_end = abs_start + word.len();
            let adjacent = prev_end.is_some_and(|p| text[p..abs_start].chars().all(char::is_whitespace));
            tokens.push(Token {
                text: word,
                start: abs_start,
                end: abs_end,
                sentence: s_idx,
                adjacent,
                possessive,
            });
            prev_end = (!possessive).then_some(abs_end);
        }
    }
    tokens
}

fn is_capitalized(token: &str, stoplist: &HashSet<String>) -> bool {
    token.chars().next().is_some_and(char::is_uppercase) && !stoplist.contains(&token.to_lowercase())
}

/// Every capitalized-run mention in `doc`, in document order, after the
/// sentence-initial filter.
pub fn detect_mentions(doc: &Document, stoplist: &HashSet<String>) -> Vec<Mention> {
    let body = &doc.body;
    let tokens = tokenize(body);
    let lowercase_forms: HashSet<&str> = tokens
        .iter()
        .filter(|t| t.text.chars().next().is_some_and(char::is_lowercase))
        .map(|t| t.text)
        .collect();
    let cap: Vec<bool> = tokens.iter().map(|t| is_capitalized(t.text, stoplist)).collect();
    let linked = |i: usize| {
        i < tokens.len()
            && tokens[i].adjacent
            && tokens[i].sentence == tokens[i - 1].sentence
            && !tokens[i - 1].possessive
    };

    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if !cap[i] {
            i += 1;
            continue;
        }
        let first = i;
        let mut last = i;
        let mut j = i + 1;
        loop {
            if j < tokens.len() && linked(j) && cap[j] {
                last = j;
                j += 1;
                continue;
            }
            // A connector joins two capitalized tokens.
            if j + 1 < tokens.len() && linked(j) && CONNECTORS.contains(&tokens[j].text) && linked(j + 1) && cap[j + 1]
            {
                last = j + 1;
                j += 2;
                continue;
            }
            break;
        }
        i = last + 1;

        let sentence_initial = first == 0 || tokens[first - 1].sentence != tokens[first].sentence;
        if first == last && sentence_initial && lowercase_forms.contains(tokens[first].text.to_lowercase().as_str()) {
            continue;
        }
        let start = tokens[first].start;
        let end = tokens[last].end;
        mentions.push(Mention {
            sentence_index: tokens[first].sentence,
            span: (start, end),
            surface: body[start..end].split_whitespace().collect::<Vec<_>>().join(" "),
        });
    }
    mentions
}

fn is_token_subsequence(short: &[&str], long: &[&str]) -> bool {
    let mut it = long.iter();
    short.iter().all(|s| it.any(|l| l == s))
}

/// Groups mentions into entities. A surface form joins the first (longest)
/// established form that contains it as a token subsequence.
pub fn merge_mentions(mentions: Vec<Mention>) -> Vec<Entity> {
    let surfaces: BTreeSet<&str> = mentions.iter().map(|m| m.surface.as_str()).collect();
    let mut ordered: Vec<&str> = surfaces.into_iter().collect();
    ordered.sort_by(|a, b| {
        let (ta, tb) = (a.split(' ').count(), b.split(' ').count());
        tb.cmp(&ta).then(b.len().cmp(&a.len())).then(a.cmp(b))
    });

    let mut roots: Vec<&str> = Vec::new();
    let mut root_of: HashMap<&str, &str> = HashMap::new();
    for surface in ordered {
        let tokens: Vec<&str> = surface.split(' ').collect();
        let root = roots
            .iter()
            .copied()
            .find(|r| is_token_subsequence(&tokens, &r.split(' ').collect::<Vec<_>>()));
        match root {
            Some(r) => {
                root_of.insert(surface, r);
            }
            None => {
                roots.push(surface);
                root_of.insert(surface, surface);
            }
        }
    }

    let mut grouped: BTreeMap<String, Vec<Mention>> = BTreeMap::new();
    for m in &mentions {
        let root = root_of[m.surface.as_str()].to_string();
        grouped.entry(root).or_default().push(m.clone());
    }
    grouped
        .into_iter()
        .map(|(canonical, mentions)| Entity {
            frequency: mentions.len(),
            canonical,
            mentions,
        })
        .collect()
}

fn rank_entities(entities: &mut [Entity]) {
    entities.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then(b.canonical.chars().count().cmp(&a.canonical.chars().count()))
            .then(a.canonical.cmp(&b.canonical))
    });
}

/// The `max_entities` most frequent entities of `doc`.
pub fn find_entities(doc: &Document, stoplist: &HashSet<String>, max_entities: usize) -> Vec<Entity> {
    let mut entities = merge_mentions(detect_mentions(doc, stoplist));
    rank_entities(&mut entities);
    entities.truncate(max_entities.max(1));
    entities
}

/// Something that proposes candidate entities for a document.
pub trait EntityProvider {
    fn entities(&self, doc: &Document) -> Vec<Entity>;
}

/// The capitalization heuristic behind [`find_entities`].
#[derive(Debug, Clone)]
pub struct CapitalizedSpans {
    pub stoplist: HashSet<String>,
    pub max_entities: usize,
}

impl Default for CapitalizedSpans {
    fn default() -> Self {
        CapitalizedSpans {
            stoplist: bundled_stoplist(),
            max_entities: DEFAULT_MAX_ENTITIES,
        }
    }
}

impl EntityProvider for CapitalizedSpans {
    fn entities(&self, doc: &Document) -> Vec<Entity> {
        find_entities(doc, &self.stoplist, self.max_entities)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EntityScore {
    pub sentiment: f64,
    pub hero_cues: usize,
    pub villain_cues: usize,
    pub victim_cues: usize,
}

/// Sentiment and cue counts over the sentences that mention `entity`.
pub fn score_entity(doc: &Document, entity: &Entity, lexicons: &Lexicons) -> Result<EntityScore, BaselineError> {
    let body = &doc.body;
    let sentences = sentence_spans(body);
    let mut context: BTreeSet<usize> = BTreeSet::new();
    for m in &entity.mentions {
        let (start, end) = m.span;
        if start > end || end > body.len() || !body.is_char_boundary(start) || !body.is_char_boundary(end) {
            return Err(BaselineError::SpanOutOfBounds {
                start,
                end,
                len: body.len(),
            });
        }
        if m.sentence_index >= sentences.len() {
            return Err(BaselineError::SentenceOutOfBounds {
                index: m.sentence_index,
                count: sentences.len(),
            });
        }
        context.insert(m.sentence_index);
    }

    let mut score = EntityScore::default();
    let mut polarity_sum = 0.0;
    let mut hits = 0usize;
    for token in tokenize(body).iter().filter(|t| context.contains(&t.sentence)) {
        let word = token.text.to_lowercase();
        if let Some(p) = lexicons.sentiment.get(&word) {
            polarity_sum += p;
            hits += 1;
        }
        score.hero_cues += usize::from(lexicons.hero_cues.contains(&word));
        score.villain_cues += usize::from(lexicons.villain_cues.contains(&word));
        score.victim_cues += usize::from(lexicons.victim_cues.contains(&word));
    }
    if hits > 0 {
        score.sentiment = polarity_sum / hits as f64;
    }
    Ok(score)
}

fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= f64::EPSILON * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineAssignment {
    pub doc_id: String,
    pub role: Role,
    pub entity: Option<Entity>,
    pub score: f64,
}

/// Scores every entity for every role and picks the best per role.
pub fn assign_with(
    doc: &Document,
    entities: Vec<Entity>,
    lexicons: &Lexicons,
) -> Result<Vec<BaselineAssignment>, BaselineError> {
    if entities.is_empty() {
        return Ok(Role::ALL
            .iter()
            .map(|&role| BaselineAssignment {
                doc_id: doc.id.clone(),
                role,
                entity: None,
                score: 0.0,
            })
            .collect());
    }
    let scores: Vec<EntityScore> = entities
        .iter()
        .map(|e| score_entity(doc, e, lexicons))
        .collect::<Result<_, _>>()?;
    let column = |f: fn(&EntityScore) -> f64| z_scores(&scores.iter().map(f).collect::<Vec<_>>());
    let z_sent = column(|s| s.sentiment);
    let z_hero = column(|s| s.hero_cues as f64);
    let z_villain = column(|s| s.villain_cues as f64);
    let z_victim = column(|s| s.victim_cues as f64);

    let mut out = Vec::with_capacity(3);
    for role in Role::ALL {
        let totals: Vec<f64> = (0..entities.len())
            .map(|i| match role {
                Role::Hero => z_hero[i] + z_sent[i],
                Role::Villain => z_villain[i] - z_sent[i],
                Role::Victim => z_victim[i] - z_sent[i],
            })
            .collect();
        let best = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winner = (0..entities.len())
            .filter(|&i| totals[i] >= best - TIE_EPSILON)
            .min_by(|&a, &b| {
                entities[b]
                    .frequency
                    .cmp(&entities[a].frequency)
                    .then(entities[a].canonical.cmp(&entities[b].canonical))
            })
            .expect("at least one entity");
        out.push(BaselineAssignment {
            doc_id: doc.id.clone(),
            role,
            entity: Some(entities[winner].clone()),
            score: totals[winner],
        });
    }
    Ok(out)
}

/// [`assign_with`] using the bundled stoplist and default entity cap.
pub fn assign_roles(doc: &Document, lexicons: &Lexicons) -> Result<Vec<BaselineAssignment>, BaselineError> {
    assign_with(doc, CapitalizedSpans::default().entities(doc), lexicons)
}

/// Baseline output line: an extraction record plus method and score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    #[serde(flatten)]
    pub extraction: RoleExtraction,
    pub method: String,
    pub score: f64,
}

impl From<&BaselineAssignment> for BaselineRecord {
    fn from(a: &BaselineAssignment) -> Self {
        let answer = a.entity.as_ref().map(|e| e.canonical.as_str()).unwrap_or("");
        let normalized_answer = normalize_answer(answer);
        BaselineRecord {
            extraction: RoleExtraction {
                doc_id: a.doc_id.clone(),
                role: a.role,
                raw_answer: answer.to_string(),
                empty: normalized_answer.is_empty(),
                normalized_answer,
                model: "baseline".into(),
                cache_key: String::new(),
            },
            method: "baseline".into(),
            score: a.score,
        }
    }
}
