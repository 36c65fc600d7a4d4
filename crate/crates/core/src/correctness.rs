//! Ground-truth correctness: ROUGE-L F1 against references and embedding
//! cosine similarity, turned into binary labels by strict thresholds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{EmbeddingVector, QARecord};

/// Longest token sequence accepted by the LCS table.
pub const MAX_LCS_TOKENS: usize = 10_000;

pub const DEFAULT_ROUGE_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum CorrectnessError {
    #[error("text has {0} tokens, more than the {MAX_LCS_TOKENS} token LCS limit")]
    TooLong(usize),
    #[error("cosine undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("threshold {value} outside [{lo}, {hi}]")]
    ThresholdRange { value: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub rouge: f64,
    pub semantic: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rouge: DEFAULT_ROUGE_THRESHOLD,
            semantic: DEFAULT_SEMANTIC_THRESHOLD,
        }
    }
}

impl Thresholds {
    pub fn new(rouge: f64, semantic: f64) -> Result<Self, CorrectnessError> {
        check_range(rouge, 0.0, 1.0)?;
        check_range(semantic, -1.0, 1.0)?;
        Ok(Self { rouge, semantic })
    }
}

pub(crate) fn check_range(value: f64, lo: f64, hi: f64) -> Result<(), CorrectnessError> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(CorrectnessError::ThresholdRange { value, lo, hi })
    }
}

/// Lowercases, splits on Unicode whitespace and trims ASCII punctuation from
/// both ends of every token. Tokens that are pure punctuation vanish.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Length of the longest common subsequence, O(n·m) time and O(m) memory.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over token lists. Zero when either side is empty or nothing
/// matches.
pub fn rouge_l_tokens<T: PartialEq>(cand: &[T], reference: &[T]) -> Result<f64, CorrectnessError> {
    for n in [cand.len(), reference.len()] {
        if n > MAX_LCS_TOKENS {
            return Err(CorrectnessError::TooLong(n));
        }
    }
    if cand.is_empty() || reference.is_empty() {
        return Ok(0.0);
    }
    let l = lcs_len(cand, reference);
    if l == 0 {
        return Ok(0.0);
    }
    // 2PR/(P+R) with P = l/n, R = l/m simplifies to 2l/(n+m).
    Ok((2 * l) as f64 / (cand.len() + reference.len()) as f64)
}

pub fn rouge_l_f1(candidate: &str, reference: &str) -> Result<f64, CorrectnessError> {
    rouge_l_tokens(&tokenize(candidate), &tokenize(reference))
}

/// Max ROUGE-L F1 over a set of reference answers (0 for an empty set).
pub fn best_rouge<S: AsRef<str>>(candidate: &str, references: &[S]) -> Result<f64, CorrectnessError> {
    let cand = tokenize(candidate);
    let mut best = 0.0_f64;
    for r in references {
        best = best.max(rouge_l_tokens(&cand, &tokenize(r.as_ref()))?);
    }
    Ok(best)
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, CorrectnessError> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64, CorrectnessError> {
    if a.len() != b.len() {
        return Err(CorrectnessError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CorrectnessError::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Continuous correctness scores and the binary labels derived from them.
/// The hallucination label of a criterion is the negation of its `correct_*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub id: String,
    pub rouge_score: f64,
    pub semantic_score: Option<f64>,
    pub correct_rouge: bool,
    pub correct_semantic: Option<bool>,
}

impl LabeledRecord {
    /// Same scores, labels recomputed at other thresholds.
    pub fn relabel(&self, th: Thresholds) -> Self {
        Self {
            correct_rouge: self.rouge_score > th.rouge,
            correct_semantic: self.semantic_score.map(|s| s > th.semantic),
            ..self.clone()
        }
    }

    pub fn hallucinated_rouge(&self) -> bool {
        !self.correct_rouge
    }

    pub fn hallucinated_semantic(&self) -> Option<bool> {
        self.correct_semantic.map(|c| !c)
    }
}

pub fn label_record(record: &QARecord, th: Thresholds) -> Result<LabeledRecord, CorrectnessError> {
    let rouge_score = best_rouge(record.greedy.text(), &record.references)?;
    let semantic_score = match (&record.greedy_embedding, &record.reference_embeddings) {
        (Some(g), Some(refs)) => {
            let mut best: Option<f64> = None;
            for r in refs {
                match cosine(g, r) {
                    Ok(c) => best = Some(best.map_or(c, |b| b.max(c))),
                    Err(e) => log::warn!("record {}: skipping reference embedding: {e}", record.id),
                }
            }
            best
        }
        _ => None,
    };
    Ok(LabeledRecord {
        id: record.id.clone(),
        rouge_score,
        semantic_score,
        correct_rouge: rouge_score > th.rouge,
        correct_semantic: semantic_score.map(|s| s > th.semantic),
    })
}
