//! Hallucination scores computed from token probabilities, sampled texts and
//! sample embeddings.
//!
//! Every metric is a pure function. [`Metric::orient`] maps each raw value onto
//! a shared scale where a higher score means "more likely hallucinated"; AUROC
//! and PCC in [`crate::eval`] depend on that table and nothing else.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correctness::{rouge_l_tokens, tokenize};
use crate::trace::{EmbeddingVector, GenerationTrace, QARecord, Sample};

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_ALPHA: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("regularizer alpha must be a positive finite number, got {0}")]
    BadAlpha(f64),
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Perplexity,
    MinP,
    Lsc,
    LnEntropy,
    Energy,
    LexicalSimilarity,
    Eigenscore,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Perplexity,
        Metric::MinP,
        Metric::Lsc,
        Metric::LnEntropy,
        Metric::Energy,
        Metric::LexicalSimilarity,
        Metric::Eigenscore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Perplexity => "perplexity",
            Metric::MinP => "min_p",
            Metric::Lsc => "lsc",
            Metric::LnEntropy => "ln_entropy",
            Metric::Energy => "energy",
            Metric::LexicalSimilarity => "lexical_similarity",
            Metric::Eigenscore => "eigenscore",
        }
    }

    /// Human-readable label used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Metric::Perplexity => "Perplexity",
            Metric::MinP => "Min-P",
            Metric::Lsc => "LSC",
            Metric::LnEntropy => "LN-Entropy",
            Metric::Energy => "Energy",
            Metric::LexicalSimilarity => "Lexical Similarity",
            Metric::Eigenscore => "EigenScore",
        }
    }

    pub fn parse(s: &str) -> Result<Self, MetricError> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MetricError::UnknownMetric(s.to_string()))
    }

    /// True when a larger raw value already means "more likely hallucinated".
    pub fn raw_is_hallucination_oriented(self) -> bool {
        matches!(
            self,
            Metric::Perplexity | Metric::LnEntropy | Metric::Energy | Metric::Eigenscore
        )
    }

    /// Maps a raw value to the common "higher = more likely hallucination" scale.
    pub fn orient(self, raw: f64) -> f64 {
        if self.raw_is_hallucination_oriented() {
            raw
        } else {
            -raw
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sliding-window size. Windows longer than the trace are clamped to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    window: usize,
}

impl WindowConfig {
    pub fn new(window: usize) -> Result<Self, MetricError> {
        if window == 0 {
            return Err(MetricError::ZeroWindow);
        }
        Ok(Self { window })
    }

    pub fn window(self) -> usize {
        self.window
    }

    /// `min(w, T)`; `len` must be at least 1.
    pub fn effective(self, len: usize) -> usize {
        self.window.min(len)
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    alpha: f64,
}

impl RegularizationConfig {
    pub fn new(alpha: f64) -> Result<Self, MetricError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(MetricError::BadAlpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Available { raw: f64, oriented: f64 },
    Unavailable { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub metric: Metric,
    pub params: MetricParams,
    pub outcome: Outcome,
}

impl MetricValue {
    pub fn available(metric: Metric, params: MetricParams, raw: f64) -> Self {
        Self {
            metric,
            params,
            outcome: Outcome::Available {
                raw,
                oriented: metric.orient(raw),
            },
        }
    }

    pub fn unavailable(metric: Metric, params: MetricParams, reason: impl Into<String>) -> Self {
        Self {
            metric,
            params,
            outcome: Outcome::Unavailable { reason: reason.into() },
        }
    }

    pub fn is_available(&self) -> bool {
        matches!(self.outcome, Outcome::Available { .. })
    }

    pub fn raw(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Available { raw, .. } => Some(raw),
            Outcome::Unavailable { .. } => None,
        }
    }

    pub fn oriented(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Available { oriented, .. } => Some(oriented),
            Outcome::Unavailable { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Unavailable { reason } => Some(reason),
            Outcome::Available { .. } => None,
        }
    }

    /// Stable identifier combining the metric and its parameters, e.g. `lsc[w=3]`.
    pub fn key(&self) -> String {
        metric_key(self.metric, &self.params)
    }
}

pub fn metric_key(metric: Metric, params: &MetricParams) -> String {
    match (params.window, params.alpha) {
        (Some(w), _) => format!("{}[w={w}]", metric.name()),
        (None, Some(a)) => format!("{}[alpha={a}]", metric.name()),
        (None, None) => metric.name().to_string(),
    }
}

/// All metric values for one record, in [`Metric::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub id: String,
    pub values: Vec<MetricValue>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricValue> {
        self.values.iter().find(|v| v.metric == metric)
    }
}

/// exp of the mean negative log-likelihood.
pub fn perplexity(trace: &GenerationTrace) -> f64 {
    let nll: f64 = trace.tokens().iter().map(|t| -t.logprob).sum();
    (nll / trace.len() as f64).exp()
}

pub fn min_token_prob(trace: &GenerationTrace) -> f64 {
    trace
        .tokens()
        .iter()
        .map(|t| t.probability())
        .fold(f64::INFINITY, f64::min)
}

/// Means of every window of size `min(w, T)`, by start position.
pub fn window_means(probs: &[f64], w: usize) -> Vec<f64> {
    if probs.is_empty() || w == 0 {
        return Vec::new();
    }
    let w = w.min(probs.len());
    probs.windows(w).map(|win| win.iter().sum::<f64>() / w as f64).collect()
}

/// The lowest-confidence window, for trajectory diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowestSpan {
    /// Zero-based start of the first minimizing window.
    pub start: usize,
    pub len: usize,
    pub mean: f64,
}

pub fn lowest_span(trace: &GenerationTrace, cfg: WindowConfig) -> LowestSpan {
    let probs = trace.probabilities();
    let len = cfg.effective(probs.len());
    let means = window_means(&probs, len);
    let (start, mean) =
        means.iter().copied().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bm), (i, m)| if m < bm { (i, m) } else { (bi, bm) },
        );
    LowestSpan { start, len, mean }
}

/// Lowest span confidence: the minimum arithmetic mean of token probabilities
/// over all windows of size `min(w, T)`.
pub fn lsc(trace: &GenerationTrace, cfg: WindowConfig) -> f64 {
    lsc_probs(&trace.probabilities(), cfg)
}

pub fn lsc_probs(probs: &[f64], cfg: WindowConfig) -> f64 {
    window_means(probs, cfg.window())
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Mean length-normalized NLL over the sampled traces (a Monte-Carlo estimate
/// of length-normalized predictive entropy).
pub fn ln_entropy(samples: &[Sample]) -> MetricValue {
    let params = MetricParams::default();
    let traces: Option<Vec<&GenerationTrace>> = samples.iter().map(|s| s.trace.as_ref()).collect();
    match traces {
        Some(traces) if !traces.is_empty() => {
            let total: f64 = traces
                .iter()
                .map(|t| t.tokens().iter().map(|e| -e.logprob).sum::<f64>() / t.len() as f64)
                .sum();
            MetricValue::available(Metric::LnEntropy, params, total / traces.len() as f64)
        }
        _ => MetricValue::unavailable(Metric::LnEntropy, params, "no sample traces"),
    }
}

/// Negative mean per-step logit log-sum-exp.
pub fn energy(trace: &GenerationTrace) -> MetricValue {
    let params = MetricParams::default();
    let lses: Option<Vec<f64>> = trace.tokens().iter().map(|t| t.logit_lse).collect();
    match lses {
        Some(l) => MetricValue::available(Metric::Energy, params, -(l.iter().sum::<f64>() / l.len() as f64)),
        None => MetricValue::unavailable(Metric::Energy, params, "logit_lse missing"),
    }
}

/// Mean ROUGE-L F1 over all unordered pairs of sampled texts.
pub fn lexical_similarity<S: AsRef<str>>(texts: &[S]) -> MetricValue {
    let params = MetricParams::default();
    if texts.len() < 2 {
        return MetricValue::unavailable(Metric::LexicalSimilarity, params, "needs >= 2 samples");
    }
    let toks: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..toks.len() {
        for j in i + 1..toks.len() {
            match rouge_l_tokens(&toks[i], &toks[j]) {
                Ok(f) => sum += f,
                Err(e) => return MetricValue::unavailable(Metric::LexicalSimilarity, params, e.to_string()),
            }
            pairs += 1;
        }
    }
    MetricValue::available(Metric::LexicalSimilarity, params, sum / pairs as f64)
}

/// Mean log of the regularized eigenvalues of the K×K covariance of the
/// centered sample embeddings.
pub fn eigenscore(embeddings: &[EmbeddingVector], reg: RegularizationConfig) -> Result<MetricValue, MetricError> {
    let params = MetricParams {
        window: None,
        alpha: Some(reg.alpha()),
    };
    let k = embeddings.len();
    if k < 2 {
        return Ok(MetricValue::unavailable(
            Metric::Eigenscore,
            params,
            "needs >= 2 embeddings",
        ));
    }
    let d = embeddings[0].dim();
    if let Some(e) = embeddings.iter().find(|e| e.dim() != d) {
        return Err(MetricError::DimensionMismatch(d, e.dim()));
    }
    let mut z = DMatrix::from_fn(k, d, |i, j| embeddings[i].values()[j]);
    for j in 0..d {
        let mean = z.column(j).iter().sum::<f64>() / k as f64;
        z.column_mut(j).add_scalar_mut(-mean);
    }
    let cov = (&z * z.transpose()) / k as f64;
    let eig = cov.symmetric_eigenvalues();
    let score = eig.iter().map(|&l| (l.max(0.0) + reg.alpha()).ln()).sum::<f64>() / k as f64;
    Ok(MetricValue::available(Metric::Eigenscore, params, score))
}

/// Computes every metric for one record. Missing inputs produce unavailable
/// entries, never errors.
pub fn score_record(record: &QARecord, cfg: WindowConfig, reg: RegularizationConfig) -> MetricReport {
    let g = &record.greedy;
    let none = MetricParams::default();
    let mut values = vec![
        MetricValue::available(Metric::Perplexity, none, perplexity(g)),
        MetricValue::available(Metric::MinP, none, min_token_prob(g)),
        MetricValue::available(
            Metric::Lsc,
            MetricParams {
                window: Some(cfg.window()),
                alpha: None,
            },
            lsc(g, cfg),
        ),
        ln_entropy(&record.samples),
        energy(g),
    ];
    let texts: Vec<&str> = record.samples.iter().map(|s| s.text.as_str()).collect();
    values.push(lexical_similarity(&texts));

    let embeddings: Option<Vec<EmbeddingVector>> = record.samples.iter().map(|s| s.embedding.clone()).collect();
    let eig_params = MetricParams {
        window: None,
        alpha: Some(reg.alpha()),
    };
    values.push(match embeddings {
        Some(e) if !record.samples.is_empty() => eigenscore(&e, reg)
            .unwrap_or_else(|err| MetricValue::unavailable(Metric::Eigenscore, eig_params, err.to_string())),
        _ => MetricValue::unavailable(Metric::Eigenscore, eig_params, "sample embeddings missing"),
    });
    MetricReport {
        id: record.id.clone(),
        values,
    }
}
