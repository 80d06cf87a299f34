//! Task and explanation scores.

pub mod auc;
pub mod clev;
pub mod evaluate;
pub mod nlg;

pub use auc::{roc_auc, weighted_auc, weighted_auc_from_scores, Pathologies, PathologyScores, PredictionMatrix, WeightedAuc};
pub use clev::{clev, evidence_labels};
pub use evaluate::{evaluate, filter_correct, EvalPair, EvaluateOptions, MetricReport};
pub use nlg::{bleu, cider, meteor_lite, metric_tokens, rouge_l, NlgScores};
