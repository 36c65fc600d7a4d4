//! Seeded synthetic traces for checking window behaviour: hallucinated
//! responses carry a short contiguous low-probability span inside a
//! high-confidence context, correct ones may carry a single noisy token.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correctness::LabeledRecord;
use crate::trace::{GenerationTrace, QARecord};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub n: usize,
    pub len: usize,
    pub span_len: usize,
    /// Range of the per-response context confidence level.
    pub context: (f64, f64),
    /// Probability range inside the hallucinated span.
    pub span: (f64, f64),
    /// Probability range of the single noisy token placed in correct
    /// responses; `None` disables it.
    pub negative_noise: Option<(f64, f64)>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 200,
            len: 50,
            span_len: 3,
            context: (0.85, 0.99),
            span: (0.05, 0.15),
            negative_noise: Some((0.02, 0.12)),
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticItem {
    pub trace: GenerationTrace,
    pub hallucinated: bool,
}

/// Alternates hallucinated and correct items so both classes have n/2 members.
pub fn generate(cfg: &SyntheticConfig) -> Vec<SyntheticItem> {
    assert!(
        cfg.len >= cfg.span_len && cfg.span_len >= 1,
        "span must fit in the response"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n)
        .map(|i| {
            let hallucinated = i % 2 == 0;
            let level = rng.gen_range(cfg.context.0..cfg.context.1);
            let mut probs: Vec<f64> = (0..cfg.len)
                .map(|_| (level + rng.gen_range(-0.04..0.04)).clamp(0.01, 1.0))
                .collect();
            if hallucinated {
                let start = rng.gen_range(0..=cfg.len - cfg.span_len);
                for p in &mut probs[start..start + cfg.span_len] {
                    *p = rng.gen_range(cfg.span.0..cfg.span.1);
                }
            } else if let Some((lo, hi)) = cfg.negative_noise {
                let pos = rng.gen_range(0..cfg.len);
                probs[pos] = rng.gen_range(lo..hi);
            }
            SyntheticItem {
                trace: GenerationTrace::from_probabilities(&probs).expect("probabilities in (0, 1]"),
                hallucinated,
            }
        })
        .collect()
}

/// Wraps synthetic items as records with matching ROUGE and semantic labels.
pub fn as_dataset(items: &[SyntheticItem]) -> (Vec<QARecord>, Vec<LabeledRecord>) {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let id = format!("syn-{i:04}");
            let score = if item.hallucinated { 0.0 } else { 1.0 };
            let record = QARecord {
                id: id.clone(),
                question: format!("synthetic question {i}"),
                references: vec!["reference".into()],
                greedy: item.trace.clone(),
                samples: Vec::new(),
                greedy_embedding: None,
                reference_embeddings: None,
            };
            let labels = LabeledRecord {
                id,
                rouge_score: score,
                semantic_score: Some(score),
                correct_rouge: !item.hallucinated,
                correct_semantic: Some(!item.hallucinated),
            };
            (record, labels)
        })
        .unzip()
}
