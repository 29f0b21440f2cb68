//! Scoring extracted answers against coarse gold classes.
//!
//! Free-form answers go through a curated mapping table keyed by
//! (normalized answer, role). Misses fall back to a keyword matcher that only
//! commits when exactly one class matches; everything else is left
//! unmapped for human review and scored as wrong.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::roles::{Role, RoleExtraction};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("duplicate class id {0:?}")]
    DuplicateClass(String),
    #[error("alias {alias:?} maps to both {first:?} and {second:?}")]
    ConflictingAlias {
        alias: String,
        first: String,
        second: String,
    },
    #[error("{0:?} is not a class of the taxonomy")]
    UnknownClass(String),
    #[error("gold label {label:?} for {doc_id}/{role} has no class in the taxonomy")]
    UnknownLabel { doc_id: String, role: Role, label: String },
    #[error("duplicate gold entry for {0}/{1}")]
    DuplicateGold(String, Role),
    #[error("duplicate extraction for {0}/{1}")]
    DuplicateExtraction(String, Role),
    #[error("mapping table lists ({0:?}, {1}) twice")]
    DuplicateMapping(String, Role),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

/// Coarse evaluation classes plus the rules that coarsen raw labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    classes: Vec<String>,
    /// Lowercased, trimmed label -> class id. Every class id is its own alias.
    aliases: HashMap<String, String>,
    keywords: BTreeMap<String, HashSet<String>>,
}

fn label_key(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn answer_tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Taxonomy {
    pub fn new(
        classes: Vec<String>,
        aliases: BTreeMap<String, Vec<String>>,
        keywords: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, EvalError> {
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                return Err(EvalError::DuplicateClass(c.clone()));
            }
        }
        let mut alias_map: HashMap<String, String> = HashMap::new();
        let mut add = |alias: &str, class: &str| -> Result<(), EvalError> {
            let key = label_key(alias);
            match alias_map.get(&key) {
                Some(existing) if existing != class => Err(EvalError::ConflictingAlias {
                    alias: alias.to_string(),
                    first: existing.clone(),
                    second: class.to_string(),
                }),
                _ => {
                    alias_map.insert(key, class.to_string());
                    Ok(())
                }
            }
        };
        for c in &classes {
            add(c, c)?;
        }
        for (class, labels) in &aliases {
            if !seen.contains(class.as_str()) {
                return Err(EvalError::UnknownClass(class.clone()));
            }
            for label in labels {
                add(label, class)?;
            }
        }
        let mut kw = BTreeMap::new();
        for (class, words) in keywords {
            if !seen.contains(class.as_str()) {
                return Err(EvalError::UnknownClass(class));
            }
            kw.insert(class, words.iter().map(|w| w.to_lowercase()).collect());
        }
        Ok(Taxonomy {
            classes,
            aliases: alias_map,
            keywords: kw,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.iter().any(|c| c == class)
    }

    /// The class a raw gold label coarsens to.
    pub fn coarsen(&self, raw_label: &str) -> Option<&str> {
        self.aliases.get(&label_key(raw_label)).map(String::as_str)
    }

    /// Classes whose keyword set meets the answer's lowercase tokens.
    pub fn keyword_matches(&self, answer: &str) -> Vec<&str> {
        let tokens = answer_tokens(answer);
        self.keywords
            .iter()
            .filter(|(_, words)| words.iter().any(|w| tokens.contains(w)))
            .map(|(c, _)| c.as_str())
            .collect()
    }
}

/// Curated answer -> class decisions. `None` records an explicit
/// "reviewed, fits no class".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingTable {
    entries: HashMap<(String, Role), Option<String>>,
}

impl MappingTable {
    pub fn insert(&mut self, answer: &str, role: Role, class: Option<&str>) {
        self.entries
            .insert((answer.to_string(), role), class.map(str::to_string));
    }

    pub fn get(&self, answer: &str, role: Role) -> Option<Option<&str>> {
        self.entries.get(&(answer.to_string(), role)).map(|c| c.as_deref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mapping {
    Class(String),
    /// No decision. `suggestions` lists keyword matches when there were
    /// several.
    Unmapped {
        suggestions: Vec<String>,
    },
}

impl Mapping {
    pub fn class(&self) -> Option<&str> {
        match self {
            Mapping::Class(c) => Some(c),
            Mapping::Unmapped { .. } => None,
        }
    }
}

pub fn map_answer(answer: &str, role: Role, table: &MappingTable, taxonomy: &Taxonomy) -> Mapping {
    match table.get(answer, role) {
        Some(Some(class)) => return Mapping::Class(class.to_string()),
        Some(None) => {
            return Mapping::Unmapped {
                suggestions: Vec::new(),
            }
        }
        None => {}
    }
    let matches = taxonomy.keyword_matches(answer);
    match matches.as_slice() {
        [only] => Mapping::Class(only.to_string()),
        [] => Mapping::Unmapped {
            suggestions: Vec::new(),
        },
        many => Mapping::Unmapped {
            suggestions: many.iter().map(|c| c.to_string()).collect(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub doc_id: String,
    pub role: Role,
    pub raw_label: String,
    pub class: String,
}

#[derive(Debug, Deserialize)]
struct GoldLine {
    doc_id: String,
    role: Role,
    raw_label: String,
}

/// Reads gold JSONL and coarsens each label through `taxonomy`.
pub fn read_gold(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<GoldLabel>, EvalError> {
    let lines: Vec<GoldLine> = jsonl::read(path)?;
    lines
        .into_iter()
        .map(|g| {
            let class = taxonomy
                .coarsen(&g.raw_label)
                .ok_or_else(|| EvalError::UnknownLabel {
                    doc_id: g.doc_id.clone(),
                    role: g.role,
                    label: g.raw_label.clone(),
                })?
                .to_string();
            Ok(GoldLabel {
                doc_id: g.doc_id,
                role: g.role,
                raw_label: g.raw_label,
                class,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MappingEntryFile {
    answer: String,
    role: Role,
    class: Option<String>,
}

/// On-disk form of taxonomy and mapping table together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub classes: Vec<String>,
    #[serde(default)]
    pub aliases: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub keywords: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    mapping: Vec<MappingEntryFile>,
}

impl TaxonomyFile {
    pub fn parse(text: &str) -> Result<(Taxonomy, MappingTable), EvalError> {
        let file: TaxonomyFile = serde_json::from_str(text).map_err(|e| EvalError::Read {
            path: "<taxonomy>".into(),
            message: e.to_string(),
        })?;
        let taxonomy = Taxonomy::new(file.classes, file.aliases, file.keywords)?;
        let mut table = MappingTable::default();
        for entry in file.mapping {
            if let Some(c) = &entry.class {
                if !taxonomy.contains(c) {
                    return Err(EvalError::UnknownClass(c.clone()));
                }
            }
            if table.get(&entry.answer, entry.role).is_some() {
                return Err(EvalError::DuplicateMapping(entry.answer, entry.role));
            }
            table.insert(&entry.answer, entry.role, entry.class.as_deref());
        }
        Ok((taxonomy, table))
    }

    pub fn load(path: &Path) -> Result<(Taxonomy, MappingTable), EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| match e {
            EvalError::Read { message, .. } => EvalError::Read {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Score {
    pub n: usize,
    pub correct: usize,
    /// `correct / n`; absent when `n == 0`.
    pub accuracy: Option<f64>,
}

impl Score {
    fn add(&mut self, correct: bool) {
        self.n += 1;
        self.correct += usize::from(correct);
        self.accuracy = Some(self.correct as f64 / self.n as f64);
    }

    /// Accuracy as a rounded integer percentage.
    pub fn percent(&self) -> Option<u32> {
        self.accuracy.map(|a| (a * 100.0).round() as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnmappedAnswer {
    pub doc_id: String,
    pub role: Role,
    pub answer: String,
    #[serde(default)]
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissingExtraction {
    pub doc_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_role: BTreeMap<Role, Score>,
    pub overall: Score,
    pub unmapped: Vec<UnmappedAnswer>,
    /// Gold pairs with no extraction; scored as wrong.
    pub missing: Vec<MissingExtraction>,
}

/// Scores extractions on every (document, role) that has a gold label.
pub fn evaluate(
    extractions: &[RoleExtraction],
    gold: &[GoldLabel],
    table: &MappingTable,
    taxonomy: &Taxonomy,
) -> Result<EvalReport, EvalError> {
    let mut by_pair: HashMap<(&str, Role), &RoleExtraction> = HashMap::new();
    for e in extractions {
        if by_pair.insert((e.doc_id.as_str(), e.role), e).is_some() {
            return Err(EvalError::DuplicateExtraction(e.doc_id.clone(), e.role));
        }
    }
    let mut gold_sorted: Vec<&GoldLabel> = gold.iter().collect();
    gold_sorted.sort_by(|a, b| (&a.doc_id, a.role).cmp(&(&b.doc_id, b.role)));
    if let Some(w) = gold_sorted
        .windows(2)
        .find(|w| (&w[0].doc_id, w[0].role) == (&w[1].doc_id, w[1].role))
    {
        return Err(EvalError::DuplicateGold(w[0].doc_id.clone(), w[0].role));
    }

    let mut report = EvalReport {
        per_role: Role::ALL.iter().map(|&r| (r, Score::default())).collect(),
        ..EvalReport::default()
    };
    for g in gold_sorted {
        let correct = match by_pair.get(&(g.doc_id.as_str(), g.role)) {
            None => {
                report.missing.push(MissingExtraction {
                    doc_id: g.doc_id.clone(),
                    role: g.role,
                });
                false
            }
            Some(e) => match map_answer(&e.normalized_answer, g.role, table, taxonomy) {
                Mapping::Class(c) => c == g.class,
                Mapping::Unmapped { suggestions } => {
                    report.unmapped.push(UnmappedAnswer {
                        doc_id: g.doc_id.clone(),
                        role: g.role,
                        answer: e.normalized_answer.clone(),
                        suggestions,
                    });
                    false
                }
            },
        };
        report
            .per_role
            .get_mut(&g.role)
            .expect("all roles present")
            .add(correct);
        report.overall.add(correct);
    }
    Ok(report)
}

/// Review queue CSV: `doc_id,role,answer,suggested_class`, sorted by
/// document id then role.
pub fn review_queue(report: &EvalReport) -> String {
    let mut rows: Vec<&UnmappedAnswer> = report.unmapped.iter().collect();
    rows.sort();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["doc_id", "role", "answer", "suggested_class"])
        .expect("in-memory CSV");
    for r in rows {
        let suggestion = r.suggestions.join("|");
        w.write_record([
            r.doc_id.as_str(),
            r.role.as_str(),
            r.answer.as_str(),
            suggestion.as_str(),
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV of UTF-8 fields")
}

fn percent_cell(score: &Score) -> String {
    score.percent().map(|p| format!("{p}%")).unwrap_or_else(|| "n/a".into())
}

/// Plain-text accuracy table: Character / Accuracy / N, rows in
/// Hero, Victim, Villain order, then All.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>8} {:>4}", "Character", "Accuracy", "N");
    for role in [Role::Hero, Role::Victim, Role::Villain] {
        let s = report.per_role.get(&role).copied().unwrap_or_default();
        let _ = writeln!(out, "{:<10} {:>8} {:>4}", role.capitalized(), percent_cell(&s), s.n);
    }
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>4}",
        "All",
        percent_cell(&report.overall),
        report.overall.n
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn taxonomy() -> Taxonomy {
        let classes = ["public", "government", "environmental-orgs", "oil-and-gas", "other"]
            .map(String::from)
            .to_vec();
        let aliases = BTreeMap::from([
            (
                "government".to_string(),
                vec!["Fed Govt".into(), "Local Govt".into(), " State Govt".into()],
            ),
            ("oil-and-gas".to_string(), vec!["Oil and gas industry".into()]),
            ("public".to_string(), vec!["General or specific public".into()]),
        ]);
        let keywords = BTreeMap::from([
            (
                "oil-and-gas".to_string(),
                vec!["oil".into(), "gas".into(), "industry".into()],
            ),
            ("government".to_string(), vec!["council".into(), "governor".into()]),
        ]);
        Taxonomy::new(classes, aliases, keywords).unwrap()
    }

    fn table() -> MappingTable {
        let mut t = MappingTable::default();
        t.insert("the oil and gas industry", Role::Villain, Some("oil-and-gas"));
        t.insert("Jared Polis", Role::Hero, Some("government"));
        t.insert("-", Role::Villain, None);
        t
    }

    fn ex(doc: &str, role: Role, answer: &str) -> RoleExtraction {
        RoleExtraction::new(doc, role, answer, "m", "")
    }

    fn gold(doc: &str, role: Role, label: &str) -> GoldLabel {
        GoldLabel {
            doc_id: doc.into(),
            role,
            raw_label: label.into(),
            class: taxonomy().coarsen(label).unwrap().into(),
        }
    }

    #[test]
    fn coarsening() {
        let t = taxonomy();
        assert_eq!(t.coarsen("Fed Govt"), Some("government"));
        assert_eq!(t.coarsen("  state   govt "), Some("government"));
        assert_eq!(t.coarsen("public"), Some("public"));
        assert_eq!(t.coarsen("Martians"), None);
    }

    #[test]
    fn taxonomy_validation() {
        let dup = Taxonomy::new(vec!["a".into(), "a".into()], BTreeMap::new(), BTreeMap::new());
        assert!(matches!(dup, Err(EvalError::DuplicateClass(_))));
        let conflict = Taxonomy::new(
            vec!["a".into(), "b".into()],
            BTreeMap::from([("a".into(), vec!["x".into()]), ("b".into(), vec!["X".into()])]),
            BTreeMap::new(),
        );
        assert!(matches!(conflict, Err(EvalError::ConflictingAlias { .. })));
        let unknown = Taxonomy::new(
            vec!["a".into()],
            BTreeMap::from([("zzz".into(), vec!["x".into()])]),
            BTreeMap::new(),
        );
        assert!(matches!(unknown, Err(EvalError::UnknownClass(_))));
    }

    #[test]
    fn map_answer_table_fallback_and_unmapped() {
        let (t, m) = (taxonomy(), table());
        assert_eq!(
            map_answer("the oil and gas industry", Role::Villain, &m, &t),
            Mapping::Class("oil-and-gas".into())
        );
        assert_eq!(
            map_answer("Jared Polis", Role::Hero, &m, &t),
            Mapping::Class("government".into())
        );
        assert_eq!(
            map_answer("The City Council", Role::Hero, &m, &t),
            Mapping::Class("government".into())
        );
        assert_eq!(
            map_answer("Lafayette", Role::Victim, &m, &t),
            Mapping::Unmapped { suggestions: vec![] }
        );
        assert_eq!(
            map_answer("Governor of the gas lobby", Role::Hero, &m, &t),
            Mapping::Unmapped {
                suggestions: vec!["government".into(), "oil-and-gas".into()]
            }
        );
        // An explicit null entry is never overridden by keywords.
        assert_eq!(map_answer("-", Role::Villain, &m, &t).class(), None);
    }

    #[test]
    fn empty_gold_gives_zero_counts() {
        let r = evaluate(&[ex("a", Role::Hero, "x")], &[], &table(), &taxonomy()).unwrap();
        assert_eq!(r.overall.n, 0);
        assert_eq!(r.overall.accuracy, None);
        assert!(r.per_role.values().all(|s| s.n == 0));
        assert_eq!(r.per_role.len(), 3);
    }

    #[test]
    fn single_correct_gold() {
        let r = evaluate(
            &[ex("a", Role::Hero, "Jared Polis")],
            &[gold("a", Role::Hero, "Fed Govt")],
            &table(),
            &taxonomy(),
        )
        .unwrap();
        assert_eq!(r.overall.accuracy, Some(1.0));
        assert_eq!(r.per_role[&Role::Hero].correct, 1);
    }

    #[test]
    fn missing_and_unmapped_count_as_wrong() {
        let r = evaluate(
            &[ex("a", Role::Villain, "Sovereign")],
            &[
                gold("a", Role::Villain, "Local Govt"),
                gold("b", Role::Victim, "public"),
            ],
            &table(),
            &taxonomy(),
        )
        .unwrap();
        assert_eq!((r.overall.n, r.overall.correct), (2, 0));
        assert_eq!(
            r.missing,
            vec![MissingExtraction {
                doc_id: "b".into(),
                role: Role::Victim
            }]
        );
        assert_eq!(r.unmapped.len(), 1);
    }

    #[test]
    fn duplicate_gold_rejected() {
        let g = gold("a", Role::Hero, "Fed Govt");
        let err = evaluate(&[], &[g.clone(), g], &table(), &taxonomy()).unwrap_err();
        assert!(matches!(err, EvalError::DuplicateGold(ref d, Role::Hero) if d == "a"));
    }

    #[test]
    fn review_queue_csv() {
        assert_eq!(
            review_queue(&EvalReport::default()),
            "doc_id,role,answer,suggested_class\n"
        );
        let r = evaluate(
            &[
                ex("b", Role::Hero, "Boulder County Commissioner Elise Jones"),
                ex("a", Role::Hero, "Governor of the gas lobby"),
            ],
            &[gold("b", Role::Hero, "Local Govt"), gold("a", Role::Hero, "Local Govt")],
            &table(),
            &taxonomy(),
        )
        .unwrap();
        assert_eq!(
            review_queue(&r),
            "doc_id,role,answer,suggested_class\n\
             a,hero,Governor of the gas lobby,government|oil-and-gas\n\
             b,hero,Boulder County Commissioner Elise Jones,\n"
        );
    }

    #[test]
    fn table_layout() {
        let r = evaluate(
            &[ex("a", Role::Hero, "Jared Polis"), ex("b", Role::Hero, "x")],
            &[gold("a", Role::Hero, "Fed Govt"), gold("b", Role::Hero, "Fed Govt")],
            &table(),
            &taxonomy(),
        )
        .unwrap();
        assert_eq!(
            render_table(&r),
            "Character  Accuracy    N\n\
             Hero            50%    2\n\
             Victim          n/a    0\n\
             Villain         n/a    0\n\
             All             50%    2\n"
        );
    }

    #[test]
    fn taxonomy_file_round_trip() {
        let text = r#"{
            "classes": ["public", "government"],
            "aliases": {"government": ["Fed Govt"]},
            "keywords": {"government": ["council"]},
            "mapping": [
                {"answer": "Jared Polis", "role": "hero", "class": "government"},
                {"answer": "-", "role": "villain", "class": null}
            ]
        }"#;
        let (t, m) = TaxonomyFile::parse(text).unwrap();
        assert_eq!(t.classes().len(), 2);
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("-", Role::Villain), Some(None));
        let bad = text.replace(r#""class": "government"}"#, r#""class": "aliens"}"#);
        assert!(matches!(TaxonomyFile::parse(&bad), Err(EvalError::UnknownClass(_))));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<RoleExtraction>, Vec<GoldLabel>)> {
        let answers = [
            "Jared Polis",
            "the oil and gas industry",
            "Lafayette",
            "The City Council",
            "-",
        ];
        let labels = [
            "Fed Govt",
            "Oil and gas industry",
            "General or specific public",
            "other",
        ];
        proptest::collection::btree_map(
            (0u8..12, 0usize..3),
            (
                proptest::sample::select(answers.to_vec()),
                proptest::option::of(proptest::sample::select(labels.to_vec())),
            ),
            0..24,
        )
        .prop_map(|cases| {
            let mut exs = Vec::new();
            let mut golds = Vec::new();
            for ((doc, r), (answer, label)) in cases {
                let doc = format!("d{doc:02}");
                let role = Role::ALL[r];
                exs.push(ex(&doc, role, answer));
                if let Some(l) = label {
                    golds.push(gold(&doc, role, l));
                }
            }
            (exs, golds)
        })
    }

    proptest! {
        #[test]
        fn report_invariants((exs, golds) in arb_case(), seed in any::<u64>()) {
            let (t, m) = (taxonomy(), table());
            let r = evaluate(&exs, &golds, &m, &t).unwrap();
            prop_assert_eq!(r.overall.n, golds.len());
            prop_assert_eq!(r.overall.n, r.per_role.values().map(|s| s.n).sum::<usize>());
            prop_assert_eq!(r.overall.correct, r.per_role.values().map(|s| s.correct).sum::<usize>());
            for s in r.per_role.values().chain([&r.overall]) {
                if let Some(a) = s.accuracy {
                    prop_assert!((0.0..=1.0).contains(&a));
                }
            }

            let mut shuffled = exs.clone();
            let len = shuffled.len();
            if len > 1 {
                shuffled.rotate_left((seed as usize) % len);
                shuffled.swap(0, len - 1);
            }
            prop_assert_eq!(&evaluate(&shuffled, &golds, &m, &t).unwrap(), &r);

            for role in Role::ALL {
                let only: Vec<GoldLabel> = golds.iter().filter(|g| g.role == role).cloned().collect();
                let sub = evaluate(&exs, &only, &m, &t).unwrap();
                prop_assert_eq!(sub.per_role[&role], r.per_role[&role]);
            }
        }
    }
}
