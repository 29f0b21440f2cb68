//! Embedding clusters of role answers, partisan log-odds per cluster, and the
//! role-overlap diagnostic.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Party};
use crate::gateway::{test_embedder, EmbeddingRequest, Gateway, GatewayError};
use crate::roles::{Role, RoleExtraction};

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("max_iters must be at least 1")]
    ZeroIters,
    #[error("k = {k} exceeds the number of distinct points ({distinct})")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("point {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("invalid log-odds arguments: {0}")]
    LogOdds(String),
    #[error("documents without a D/R party: {}", .0.join(", "))]
    MissingParty(Vec<String>),
    #[error("extraction refers to unknown document {0:?}")]
    UnknownDocument(String),
    #[error("{role} answers come from a single party (N_R = {total_r}, N_D = {total_d})")]
    SingleParty { role: Role, total_r: usize, total_d: usize },
    #[error("embedding {input:?}: {source}")]
    Embedding {
        input: String,
        #[source]
        source: GatewayError,
    },
    #[error("party table: {0}")]
    PartyTable(String),
    #[error("{role}: {source}")]
    Role {
        role: Role,
        #[source]
        source: Box<AnalysisError>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub normalize_inputs: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 20,
            seed: 0,
            max_iters: 100,
            tol: 1e-4,
            normalize_inputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Objective after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn prepare(points: &[Vec<f64>], normalize: bool) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let dim = points.first().map_or(0, Vec::len);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.len() != dim {
                return Err(AnalysisError::DimensionMismatch {
                    index: i,
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(AnalysisError::NonFinite(i));
            }
            // `+ 0.0` folds -0.0 into 0.0 so distinct-point counting is by value.
            let mut q: Vec<f64> = p.iter().map(|x| x + 0.0).collect();
            if normalize {
                l2_normalize(&mut q);
            }
            Ok(q)
        })
        .collect()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = rng.gen_range(0..n);
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        let mut pick = None;
        let mut last_positive = 0;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last_positive = i;
            if target < w {
                pick = Some(i);
                break;
            }
            target -= w;
        }
        let pick = pick.unwrap_or(last_positive);
        centers.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }
    centers
}

/// Gives every empty cluster the point farthest from its current centroid,
/// taken from clusters that can spare one.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centroids[labels[i]]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let i = far.expect("n >= k leaves a cluster with two or more points");
        sizes[labels[i]] -= 1;
        sizes[j] = 1;
        labels[i] = j;
        centroids[j] = points[i].clone();
    }
}

fn means(points: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

/// k-means with k-means++ seeding and Lloyd iterations.
pub fn kmeans(points: &[Vec<f64>], config: &ClusterConfig) -> Result<ClusterAssignment, AnalysisError> {
    if config.k == 0 {
        return Err(AnalysisError::ZeroK);
    }
    if config.max_iters == 0 {
        return Err(AnalysisError::ZeroIters);
    }
    let points = prepare(points, config.normalize_inputs)?;
    let distinct = distinct_count(&points);
    if distinct < config.k {
        return Err(AnalysisError::TooFewPoints { k: config.k, distinct });
    }
    let (k, dim) = (config.k, points[0].len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_plus_plus(&points, k, &mut rng);
    let mut labels = vec![0; points.len()];
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;

    for _ in 0..config.max_iters {
        labels = points.iter().map(|p| nearest(p, &centroids)).collect();
        repair_empty(&points, &mut labels, &mut centroids);
        let updated = means(&points, &labels, k, dim);
        let inertia: f64 = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &updated[l])).sum();
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * (1.0 + prev),
                "inertia rose from {prev} to {inertia}"
            );
        }
        history.push(inertia);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < config.tol {
            converged = true;
            break;
        }
    }

    Ok(ClusterAssignment {
        labels,
        centroids,
        inertia: *history.last().expect("at least one iteration"),
        iterations: history.len(),
        inertia_history: history,
        converged,
    })
}

/// Smoothed log odds ratio of a cluster, Republican over Democratic:
/// `ln(((n_r+a)/(N_r-n_r+a)) / ((n_d+a)/(N_d-n_d+a)))`.
pub fn log_odds(n_r: u64, n_d: u64, total_r: u64, total_d: u64, alpha: f64) -> Result<f64, AnalysisError> {
    if n_r > total_r || n_d > total_d {
        return Err(AnalysisError::LogOdds(format!(
            "counts exceed totals: n_R={n_r} N_R={total_r} n_D={n_d} N_D={total_d}"
        )));
    }
    if total_r + total_d == 0 {
        return Err(AnalysisError::LogOdds("N_R + N_D must be positive".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AnalysisError::LogOdds(format!("alpha must be positive, got {alpha}")));
    }
    let side = |n: u64, total: u64| (n as f64 + alpha).ln() - ((total - n) as f64 + alpha).ln();
    Ok(side(n_r, total_r) - side(n_d, total_d))
}

/// Turns answer strings into vectors.
pub trait Embedder {
    fn embed_all(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError>;
}

/// Offline feature-hashing embedder.
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Embedder for HashEmbedder {
    fn embed_all(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError> {
        Ok(inputs.iter().map(|s| test_embedder(s, self.dim)).collect())
    }
}

/// Embeddings through the gateway (and its cache).
pub struct GatewayEmbedder<'a> {
    pub gateway: &'a Gateway,
    pub model: String,
}

impl Embedder for GatewayEmbedder<'_> {
    fn embed_all(&self, inputs: &[String]) -> Result<Vec<Vec<f64>>, AnalysisError> {
        let requests: Vec<EmbeddingRequest> = inputs.iter().map(|s| EmbeddingRequest::new(&self.model, s)).collect();
        let mut out = Vec::with_capacity(inputs.len());
        for (i, result) in self.gateway.embed_many(&requests).into_iter().enumerate() {
            let v = result.map_err(|source| AnalysisError::Embedding {
                input: inputs[i].clone(),
                source,
            })?;
            if let Some(first) = out.first().map(Vec::len) {
                if v.len() != first {
                    return Err(AnalysisError::DimensionMismatch {
                        index: i,
                        expected: first,
                        got: v.len(),
                    });
                }
            }
            out.push(v);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presidency {
    pub year: i32,
    pub president: String,
    pub party: Party,
}

/// Year -> sitting president and party.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartyTable {
    years: BTreeMap<i32, Presidency>,
}

impl PartyTable {
    pub fn from_entries(entries: Vec<Presidency>) -> Result<Self, AnalysisError> {
        let mut years = BTreeMap::new();
        for e in entries {
            let year = e.year;
            if years.insert(year, e).is_some() {
                return Err(AnalysisError::PartyTable(format!("year {year} listed twice")));
            }
        }
        Ok(PartyTable { years })
    }

    pub fn parse(json: &str) -> Result<Self, AnalysisError> {
        let entries = serde_json::from_str(json).map_err(|e| AnalysisError::PartyTable(e.to_string()))?;
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AnalysisError::PartyTable(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Presidents 2001-2018.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/presidents.json")).expect("bundled party table is valid")
    }

    pub fn get(&self, year: i32) -> Option<&Presidency> {
        self.years.get(&year)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartisanOptions {
    pub cluster: ClusterConfig,
    pub alpha: f64,
    /// Report single-party roles with smoothed values instead of failing.
    pub allow_single_party: bool,
}

impl Default for PartisanOptions {
    fn default() -> Self {
        PartisanOptions {
            cluster: ClusterConfig::default(),
            alpha: 0.5,
            allow_single_party: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogOddsEntry {
    pub role: Role,
    pub cluster: usize,
    #[serde(rename = "n_R")]
    pub n_r: usize,
    #[serde(rename = "n_D")]
    pub n_d: usize,
    #[serde(rename = "N_R")]
    pub total_r: usize,
    #[serde(rename = "N_D")]
    pub total_d: usize,
    pub log_odds: f64,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headline {
    pub max_cluster: usize,
    pub min_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleReport {
    pub role: Role,
    pub k: usize,
    pub inertia: f64,
    /// Sorted by log odds, highest first.
    pub clusters: Vec<LogOddsEntry>,
    pub headline: Headline,
}

impl RoleReport {
    pub fn entry(&self, cluster: usize) -> Option<&LogOddsEntry> {
        self.clusters.iter().find(|e| e.cluster == cluster)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMember {
    pub role: Role,
    pub doc_id: String,
    pub answer: String,
    pub cluster: usize,
    pub party: Party,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartisanReport {
    pub roles: Vec<RoleReport>,
    #[serde(skip)]
    pub members: Vec<ClusterMember>,
}

fn party_of(corpus: &Corpus, doc_id: &str, table: &PartyTable) -> Result<Option<Party>, AnalysisError> {
    let doc = corpus
        .get(doc_id)
        .ok_or_else(|| AnalysisError::UnknownDocument(doc_id.to_string()))?;
    let party = doc
        .party
        .or_else(|| doc.year.and_then(|y| table.get(y)).map(|p| p.party));
    Ok(party.filter(|p| matches!(p, Party::Democratic | Party::Republican)))
}

/// Clusters each role's non-empty answers and scores every cluster.
pub fn partisan_report(
    extractions: &[RoleExtraction],
    corpus: &Corpus,
    table: &PartyTable,
    embedder: &dyn Embedder,
    options: &PartisanOptions,
) -> Result<PartisanReport, AnalysisError> {
    let mut rows: Vec<(&RoleExtraction, Party)> = Vec::new();
    let mut missing = BTreeSet::new();
    for e in extractions.iter().filter(|e| !e.normalized_answer.is_empty()) {
        match party_of(corpus, &e.doc_id, table)? {
            Some(p) => rows.push((e, p)),
            None => {
                missing.insert(e.doc_id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(AnalysisError::MissingParty(missing.into_iter().collect()));
    }

    let mut report = PartisanReport::default();
    for role in Role::ALL {
        let role_rows: Vec<&(&RoleExtraction, Party)> = rows.iter().filter(|(e, _)| e.role == role).collect();
        if role_rows.is_empty() {
            continue;
        }
        let wrap = |source| AnalysisError::Role {
            role,
            source: Box::new(source),
        };
        let total_r = role_rows.iter().filter(|(_, p)| *p == Party::Republican).count();
        let total_d = role_rows.len() - total_r;
        if (total_r == 0 || total_d == 0) && !options.allow_single_party {
            return Err(AnalysisError::SingleParty { role, total_r, total_d });
        }
        let answers: Vec<String> = role_rows.iter().map(|(e, _)| e.normalized_answer.clone()).collect();
        let vectors = embedder.embed_all(&answers).map_err(wrap)?;
        let fit = kmeans(&vectors, &options.cluster).map_err(wrap)?;

        let k = options.cluster.k;
        let mut entries: Vec<LogOddsEntry> = (0..k)
            .map(|cluster| LogOddsEntry {
                role,
                cluster,
                n_r: 0,
                n_d: 0,
                total_r,
                total_d,
                log_odds: 0.0,
                members: Vec::new(),
            })
            .collect();
        for (((e, party), answer), &label) in role_rows.iter().zip(answers).zip(&fit.labels) {
            let entry = &mut entries[label];
            match party {
                Party::Republican => entry.n_r += 1,
                _ => entry.n_d += 1,
            }
            entry.members.push(answer.clone());
            report.members.push(ClusterMember {
                role,
                doc_id: e.doc_id.clone(),
                answer,
                cluster: label,
                party: *party,
            });
        }
        for entry in &mut entries {
            entry.log_odds = log_odds(
                entry.n_r as u64,
                entry.n_d as u64,
                total_r as u64,
                total_d as u64,
                options.alpha,
            )
            .map_err(wrap)?;
        }
        entries.sort_by(|a, b| b.log_odds.total_cmp(&a.log_odds).then(a.cluster.cmp(&b.cluster)));
        let headline = Headline {
            max_cluster: entries[0].cluster,
            min_cluster: entries[entries.len() - 1].cluster,
        };
        report.roles.push(RoleReport {
            role,
            k,
            inertia: fit.inertia,
            clusters: entries,
            headline,
        });
    }
    Ok(report)
}

/// `role,doc_id,answer,cluster,party` rows.
pub fn members_csv(report: &PartisanReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["role", "doc_id", "answer", "cluster", "party"])
        .expect("in-memory CSV");
    for m in &report.members {
        w.write_record([
            m.role.as_str(),
            m.doc_id.as_str(),
            m.answer.as_str(),
            &m.cluster.to_string(),
            m.party.code(),
        ])
        .expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV of UTF-8 fields")
}

fn member_list(entry: &LogOddsEntry) -> String {
    let mut seen = HashSet::new();
    let unique: Vec<&str> = entry
        .members
        .iter()
        .filter(|m| seen.insert(m.as_str()))
        .map(String::as_str)
        .collect();
    unique.join(", ")
}

/// Extreme clusters per role: the most Democratic-leaning and most
/// Republican-leaning cluster with their members.
pub fn render_extremes(report: &PartisanReport) -> String {
    let mut out = String::new();
    for r in &report.roles {
        let _ = writeln!(out, "{}", r.role.capitalized());
        for (side, cluster) in [
            ("Democrats", r.headline.min_cluster),
            ("Republicans", r.headline.max_cluster),
        ] {
            let e = r.entry(cluster).expect("headline cluster is in the report");
            let _ = writeln!(
                out,
                "  {side}: cluster {cluster}, n_R = {}, n_D = {}, Log Odds Ratio: {:.2}",
                e.n_r, e.n_d, e.log_odds
            );
            let _ = writeln!(out, "    {}", member_list(e));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OverlapPair {
    #[serde(rename = "hero=villain")]
    HeroVillain,
    #[serde(rename = "hero=victim")]
    HeroVictim,
    #[serde(rename = "villain=victim")]
    VillainVictim,
}

impl OverlapPair {
    pub const ALL: [OverlapPair; 3] = [
        OverlapPair::HeroVillain,
        OverlapPair::HeroVictim,
        OverlapPair::VillainVictim,
    ];

    pub fn roles(self) -> (Role, Role) {
        match self {
            OverlapPair::HeroVillain => (Role::Hero, Role::Villain),
            OverlapPair::HeroVictim => (Role::Hero, Role::Victim),
            OverlapPair::VillainVictim => (Role::Villain, Role::Victim),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OverlapPair::HeroVillain => "hero=villain",
            OverlapPair::HeroVictim => "hero=victim",
            OverlapPair::VillainVictim => "villain=victim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocOverlap {
    pub doc_id: String,
    pub pairs: Vec<OverlapPair>,
}

impl DocOverlap {
    pub fn flagged(&self) -> bool {
        !self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub docs: Vec<DocOverlap>,
    pub flagged: usize,
    pub fraction: Option<f64>,
    pub pair_counts: BTreeMap<OverlapPair, usize>,
}

/// Flags documents where two roles got the same (case-insensitive) answer.
pub fn role_overlap(extractions: &[RoleExtraction]) -> OverlapReport {
    let mut by_doc: BTreeMap<&str, HashMap<Role, String>> = BTreeMap::new();
    for e in extractions {
        let slot = by_doc.entry(e.doc_id.as_str()).or_default();
        if !e.normalized_answer.is_empty() {
            slot.insert(e.role, e.normalized_answer.to_lowercase());
        }
    }
    let mut pair_counts: BTreeMap<OverlapPair, usize> = OverlapPair::ALL.iter().map(|&p| (p, 0)).collect();
    let docs: Vec<DocOverlap> = by_doc
        .into_iter()
        .map(|(doc_id, answers)| {
            let pairs: Vec<OverlapPair> = OverlapPair::ALL
                .into_iter()
                .filter(|p| {
                    let (a, b) = p.roles();
                    matches!((answers.get(&a), answers.get(&b)), (Some(x), Some(y)) if x == y)
                })
                .collect();
            pairs
                .iter()
                .for_each(|p| *pair_counts.get_mut(p).expect("all pairs") += 1);
            DocOverlap {
                doc_id: doc_id.to_string(),
                pairs,
            }
        })
        .collect();
    let flagged = docs.iter().filter(|d| d.flagged()).count();
    OverlapReport {
        fraction: (!docs.is_empty()).then(|| flagged as f64 / docs.len() as f64),
        flagged,
        docs,
        pair_counts,
    }
}

pub fn render_overlap(report: &OverlapReport) -> String {
    let mut out = String::new();
    match report.fraction {
        Some(f) => {
            let _ = writeln!(
                out,
                "Role overlap: {}/{} documents ({:.1}%)",
                report.flagged,
                report.docs.len(),
                f * 100.0
            );
        }
        None => {
            let _ = writeln!(out, "Role overlap: no documents");
        }
    }
    for (pair, n) in &report.pair_counts {
        let _ = writeln!(out, "  {}: {n}", pair.as_str());
    }
    for d in report.docs.iter().filter(|d| d.flagged()) {
        let pairs: Vec<&str> = d.pairs.iter().map(|p| p.as_str()).collect();
        let _ = writeln!(out, "  {} [{}]", d.doc_id, pairs.join(", "));
    }
    out
}
