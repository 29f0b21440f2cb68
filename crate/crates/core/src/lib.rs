//! Hero, villain and victim extraction from text by zero-shot prompting,
//! with a lexicon baseline, gold-label evaluation and partisan cluster
//! analysis.

pub mod analysis;
pub mod baseline;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod jsonl;
pub mod roles;

pub use analysis::{ClusterAssignment, ClusterConfig, LogOddsEntry, OverlapReport, PartisanReport, PartyTable};
pub use baseline::{BaselineAssignment, BaselineRecord, Entity, Lexicons, Mention};
pub use corpus::{Corpus, CorpusStats, Document, Party, Source};
pub use eval::{EvalReport, GoldLabel, MappingTable, Taxonomy};
pub use gateway::{
    CompletionRecord, CompletionRequest, EmbeddingRecord, EmbeddingRequest, Gateway, GatewayConfig, Mode,
};
pub use roles::{Role, RoleExtraction};
