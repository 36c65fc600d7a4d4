//! Data model for questions, generations and embeddings, plus the JSONL
//! dataset reader/writer.
//!
//! All log-probabilities are natural logs. A record is either fully valid or
//! rejected with the line it came from; there is no partially-validated state.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("record {id:?}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One generated token with its log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEvent {
    pub token: String,
    /// ln p_i, always finite and <= 0.
    pub logprob: f64,
    /// Log-sum-exp of the full logit vector at this step, when the provider
    /// exposes it.
    pub logit_lse: Option<f64>,
}

impl TokenEvent {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
            logit_lse: None,
        }
    }

    pub fn with_lse(mut self, lse: f64) -> Self {
        self.logit_lse = Some(lse);
        self
    }

    pub fn probability(&self) -> f64 {
        self.logprob.exp()
    }

    fn validate(&self) -> Result<(), String> {
        if !self.logprob.is_finite() {
            return Err(format!("token {:?} has non-finite logprob", self.token));
        }
        if self.logprob > 0.0 {
            return Err(format!("token {:?} has positive logprob {}", self.token, self.logprob));
        }
        if let Some(lse) = self.logit_lse {
            if !lse.is_finite() {
                return Err(format!("token {:?} has non-finite logit_lse", self.token));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    /// Parameters are `None` when the source did not record them.
    Sampled(Option<SamplingParams>),
}

/// A response `y = t_1..t_T` with its per-token probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    text: String,
    tokens: Vec<TokenEvent>,
    decoding: Decoding,
}

impl GenerationTrace {
    pub fn new(text: impl Into<String>, tokens: Vec<TokenEvent>, decoding: Decoding) -> Result<Self, String> {
        if tokens.is_empty() {
            return Err("trace has no tokens".into());
        }
        for t in &tokens {
            t.validate()?;
        }
        Ok(Self {
            text: text.into(),
            tokens,
            decoding,
        })
    }

    /// Greedy trace built from bare log-probabilities, with tokens named by
    /// position. Handy for tests and the C interface.
    pub fn from_logprobs(logprobs: &[f64]) -> Result<Self, String> {
        let tokens = logprobs
            .iter()
            .enumerate()
            .map(|(i, &lp)| TokenEvent::new(format!("t{i}"), lp))
            .collect();
        Self::new(String::new(), tokens, Decoding::Greedy)
    }

    /// Greedy trace from probabilities in (0, 1].
    pub fn from_probabilities(probs: &[f64]) -> Result<Self, String> {
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(format!("probability {p} outside (0, 1]"));
        }
        let lps: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Self::from_logprobs(&lps)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[TokenEvent] {
        &self.tokens
    }

    pub fn decoding(&self) -> Decoding {
        self.decoding
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false; a trace holds at least one token.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `p_i = exp(logprob_i)` in token order.
    pub fn probabilities(&self) -> Vec<f64> {
        self.tokens.iter().map(TokenEvent::probability).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        if values.is_empty() {
            return Err("embedding has zero dimensions".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("embedding contains non-finite values".into());
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// One stochastic sample. Consistency metrics need only the text or the
/// embedding; the trace is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub text: String,
    pub trace: Option<GenerationTrace>,
    pub embedding: Option<EmbeddingVector>,
}

impl Sample {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            trace: None,
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QARecord {
    pub id: String,
    pub question: String,
    pub references: Vec<String>,
    pub greedy: GenerationTrace,
    pub samples: Vec<Sample>,
    pub greedy_embedding: Option<EmbeddingVector>,
    pub reference_embeddings: Option<Vec<EmbeddingVector>>,
}

impl QARecord {
    /// Checks the cross-field invariants that individual constructors cannot.
    pub fn validate(&self) -> Result<(), TraceError> {
        let invalid = |reason: String| TraceError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.references.is_empty() {
            return Err(invalid("references must be non-empty".into()));
        }
        if self.greedy.decoding() != Decoding::Greedy {
            return Err(invalid("primary trace must be greedy".into()));
        }
        if let Some(refs) = &self.reference_embeddings {
            if refs.len() != self.references.len() {
                return Err(invalid(format!(
                    "{} reference embeddings for {} references",
                    refs.len(),
                    self.references.len()
                )));
            }
        }
        let mut dim = None;
        for e in self.embeddings() {
            match dim {
                None => dim = Some(e.dim()),
                Some(d) if d != e.dim() => {
                    return Err(invalid(format!("embedding dimension mismatch ({} vs {})", d, e.dim())))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn embeddings(&self) -> impl Iterator<Item = &EmbeddingVector> {
        self.greedy_embedding
            .iter()
            .chain(self.reference_embeddings.iter().flatten())
            .chain(self.samples.iter().filter_map(|s| s.embedding.as_ref()))
    }
}

// Wire format. Field names follow the JSONL schema exactly.

#[derive(Serialize, Deserialize)]
struct WireToken {
    t: String,
    lp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lse: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct WireGreedy {
    text: String,
    tokens: Vec<WireToken>,
}

#[derive(Serialize, Deserialize)]
struct WireSample {
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<WireToken>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampling: Option<SamplingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    id: String,
    question: String,
    references: Vec<String>,
    greedy: WireGreedy,
    #[serde(default)]
    samples: Vec<WireSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    greedy_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_embeddings: Option<Vec<Vec<f64>>>,
}

fn tokens_from_wire(tokens: Vec<WireToken>) -> Vec<TokenEvent> {
    tokens
        .into_iter()
        .map(|w| TokenEvent {
            token: w.t,
            logprob: w.lp,
            logit_lse: w.lse,
        })
        .collect()
}

fn tokens_to_wire(tokens: &[TokenEvent]) -> Vec<WireToken> {
    tokens
        .iter()
        .map(|t| WireToken {
            t: t.token.clone(),
            lp: t.logprob,
            lse: t.logit_lse,
        })
        .collect()
}

impl WireRecord {
    fn into_record(self) -> Result<QARecord, TraceError> {
        let id = self.id;
        let invalid = |reason: String| TraceError::Invalid { id: id.clone(), reason };
        let greedy = GenerationTrace::new(self.greedy.text, tokens_from_wire(self.greedy.tokens), Decoding::Greedy)
            .map_err(|e| invalid(format!("greedy: {e}")))?;
        let embedding = |v: Vec<f64>, what: &str| EmbeddingVector::new(v).map_err(|e| invalid(format!("{what}: {e}")));

        let mut samples = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.into_iter().enumerate() {
            let trace = match s.tokens {
                Some(tokens) => Some(
                    GenerationTrace::new(s.text.clone(), tokens_from_wire(tokens), Decoding::Sampled(s.sampling))
                        .map_err(|e| invalid(format!("sample {i}: {e}")))?,
                ),
                None => None,
            };
            let emb = match s.embedding {
                Some(v) => Some(embedding(v, &format!("sample {i} embedding"))?),
                None => None,
            };
            samples.push(Sample {
                text: s.text,
                trace,
                embedding: emb,
            });
        }
        let greedy_embedding = match self.greedy_embedding {
            Some(v) => Some(embedding(v, "greedy_embedding")?),
            None => None,
        };
        let reference_embeddings = match self.reference_embeddings {
            Some(vs) => Some(
                vs.into_iter()
                    .map(|v| embedding(v, "reference_embeddings"))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let record = QARecord {
            id: id.clone(),
            question: self.question,
            references: self.references,
            greedy,
            samples,
            greedy_embedding,
            reference_embeddings,
        };
        record.validate()?;
        Ok(record)
    }

    fn from_record(r: &QARecord) -> Self {
        WireRecord {
            id: r.id.clone(),
            question: r.question.clone(),
            references: r.references.clone(),
            greedy: WireGreedy {
                text: r.greedy.text.clone(),
                tokens: tokens_to_wire(&r.greedy.tokens),
            },
            samples: r
                .samples
                .iter()
                .map(|s| WireSample {
                    text: s.text.clone(),
                    tokens: s.trace.as_ref().map(|t| tokens_to_wire(&t.tokens)),
                    sampling: match s.trace.as_ref().map(|t| t.decoding) {
                        Some(Decoding::Sampled(p)) => p,
                        _ => None,
                    },
                    embedding: s.embedding.as_ref().map(|e| e.0.clone()),
                })
                .collect(),
            greedy_embedding: r.greedy_embedding.as_ref().map(|e| e.0.clone()),
            reference_embeddings: r
                .reference_embeddings
                .as_ref()
                .map(|v| v.iter().map(|e| e.0.clone()).collect()),
        }
    }
}

/// Reads a JSONL dataset. Blank lines are skipped; unknown fields ignored.
pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<QARecord>, TraceError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let record = wire.into_record().map_err(|e| match e {
            TraceError::Invalid { id, reason } => TraceError::Malformed {
                line: line_no,
                reason: format!("record {id:?}: {reason}"),
            },
            other => other,
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(TraceError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn parse_dataset_str(s: &str) -> Result<Vec<QARecord>, TraceError> {
    parse_dataset(s.as_bytes())
}

/// Writes records as canonical JSONL, one line per record.
pub fn write_dataset<W: Write>(records: &[QARecord], mut out: W) -> Result<(), TraceError> {
    for r in records {
        let line = serde_json::to_string(&WireRecord::from_record(r)).expect("dataset records always serialize");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset_string(records: &[QARecord]) -> String {
    let mut buf = Vec::new();
    write_dataset(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"q1","question":"Who?","references":["Greta and Tony"],"greedy":{"text":"Greta and Tony","tokens":[{"t":"Greta","lp":-0.1},{"t":" and Tony","lp":-0.2}]}}"#;

    #[test]
    fn parses_single_line() {
        let recs = parse_dataset_str(LINE).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].greedy.len(), 2);
        assert!(recs[0].samples.is_empty());
    }

    #[test]
    fn missing_tokens_reports_line() {
        let bad = r#"{"id":"q2","question":"?","references":["a"],"greedy":{"text":"a"}}"#;
        let input = format!("{LINE}\n{bad}\n");
        match parse_dataset_str(&input) {
            Err(TraceError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_token_list_names_record() {
        let bad = r#"{"id":"empty","question":"?","references":["a"],"greedy":{"text":"a","tokens":[]}}"#;
        let err = parse_dataset_str(bad).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("empty"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = format!("{LINE}\n{LINE}\n");
        match parse_dataset_str(&input) {
            Err(TraceError::DuplicateId { id, line }) => {
                assert_eq!(id, "q1");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn positive_logprob_rejected() {
        let bad = LINE.replace("-0.2", "0.3");
        assert!(parse_dataset_str(&bad).is_err());
    }

    #[test]
    fn empty_references_rejected() {
        let bad = LINE.replace(r#"["Greta and Tony"]"#, "[]");
        assert!(parse_dataset_str(&bad).is_err());
    }

    #[test]
    fn reference_embedding_count_checked() {
        let bad = LINE.replace(r#""greedy":"#, r#""reference_embeddings":[[1.0],[2.0]],"greedy":"#);
        assert!(parse_dataset_str(&bad).is_err());
    }

    #[test]
    fn embedding_dims_must_agree() {
        let bad = LINE.replace(
            r#""greedy":"#,
            r#""greedy_embedding":[1.0,2.0],"reference_embeddings":[[1.0]],"greedy":"#,
        );
        assert!(parse_dataset_str(&bad).is_err());
    }

    #[test]
    fn unknown_fields_ignored() {
        let extra = LINE.replace(r#""id":"q1","#, r#""id":"q1","provider":"x","#);
        let recs = parse_dataset_str(&extra).unwrap();
        assert!(!write_dataset_string(&recs).contains("provider"));
    }

    #[test]
    fn empty_list_writes_nothing() {
        assert_eq!(write_dataset_string(&[]), "");
    }

    #[test]
    fn single_record_is_one_newline_terminated_line() {
        let recs = parse_dataset_str(LINE).unwrap();
        let out = write_dataset_string(&recs);
        assert!(out.ends_with('\n'));
        assert_eq!(out.matches('\n').count(), 1);
    }

    #[test]
    fn logprob_round_trips_bit_exact() {
        let lp = -1.6094379124341003_f64;
        let line = LINE.replace("-0.1", &lp.to_string());
        let recs = parse_dataset_str(&line).unwrap();
        let back = parse_dataset_str(&write_dataset_string(&recs)).unwrap();
        let got = back[0].greedy.tokens()[0].logprob;
        assert!((got - lp).abs() < 1e-12);
        assert_eq!(recs, back);
    }

    #[test]
    fn probabilities_exponentiate() {
        let t = GenerationTrace::from_logprobs(&[0.0]).unwrap();
        assert_eq!(t.probabilities(), vec![1.0]);
        let t = GenerationTrace::from_logprobs(&[-1.6094379]).unwrap();
        assert!((t.probabilities()[0] - 0.2).abs() < 1e-6);
        let t = GenerationTrace::from_logprobs(&[-0.10536, -1.60944]).unwrap();
        let p = t.probabilities();
        assert!((p[0] - 0.9).abs() < 1e-4 && (p[1] - 0.2).abs() < 1e-4);
    }
}
