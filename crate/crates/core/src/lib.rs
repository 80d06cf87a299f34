//! Extraction of natural-language explanations from chest X-ray reports,
//! and the metrics used to score models trained on them.
//!
//! The extraction funnel runs [`corpus`] → [`segment`] → [`keywords`] →
//! [`mention`] → [`rules`] → [`pipeline`]; [`metrics`] holds the scores.

pub mod corpus;
pub mod error;
pub mod keywords;
pub mod label;
pub mod mention;
pub mod metrics;
pub mod pipeline;
pub mod rules;
pub mod segment;
pub mod synth;

pub use corpus::{load_corpus, CorpusPaths, IngestIssue, LoadedCorpus, Report, Split, StudyMeta, ViewPosition};
pub use error::{Error, Result};
pub use keywords::{default_lexicon, KeywordLexicon, KeywordTagger};
pub use label::{Certainty, Label, LabelState};
pub use mention::{BuiltinLabeler, ExternalLabels, Labeler, MentionLexicon, TextLabels};
pub use pipeline::{DatasetStats, FunnelStats, NleRecord, Pipeline, PipelineOutput};
pub use rules::{audit_exclusivity, builtin_rules, rule_table_hash, RuleEngine, RuleId, RuleMatch};
pub use segment::{Section, Sentence};
