//! Hallucination detection from token-level probability traces.
//!
//! The central score is the lowest span confidence ([`metrics::lsc`]): the
//! minimum, over all windows of `w` consecutive generated tokens, of the mean
//! token probability. Six comparison metrics, correctness labeling, and an
//! AUROC/PCC evaluation harness sit alongside it, together with an
//! OpenAI-compatible client that collects traces with a content-addressed
//! response cache.

pub mod cli;
pub mod client;
pub mod correctness;
pub mod eval;
pub mod metrics;
pub mod synthetic;
pub mod trace;

pub use correctness::{label_record, LabeledRecord, Thresholds};
pub use eval::{auroc, evaluate, pcc, roc_points, EvalSummary, ScoredDataset};
pub use metrics::{
    lsc, min_token_prob, perplexity, score_record, Metric, MetricReport, RegularizationConfig, WindowConfig,
};
pub use trace::{parse_dataset, write_dataset, EmbeddingVector, GenerationTrace, QARecord, Sample, TokenEvent};
