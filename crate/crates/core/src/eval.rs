//! Detection quality of each metric against correctness labels: rank-based
//! AUROC, ROC curves, Pearson correlation, and the window/threshold sweeps.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correctness::{check_range, LabeledRecord, Thresholds};
use crate::metrics::{self, Metric, MetricParams, MetricReport, WindowConfig};
use crate::trace::{GenerationTrace, QARecord};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("constant input: zero variance")]
    ConstantInput,
    #[error("non-finite score")]
    NonFinite,
    #[error("record mismatch: {0}")]
    Mismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn check_inputs(scores: &[f64], n_labels: usize) -> Result<(), EvalError> {
    if scores.len() != n_labels {
        return Err(EvalError::LengthMismatch(scores.len(), n_labels));
    }
    if scores.len() < 2 {
        return Err(EvalError::TooFew(scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

fn class_counts(positives: &[bool]) -> Result<(usize, usize), EvalError> {
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    Ok((n_pos, n_neg))
}

/// 1-based ranks with ties sharing their average rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        let rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUROC. `positives` marks hallucinations and scores are
/// oriented so that higher means more likely hallucinated.
pub fn auroc(scores: &[f64], positives: &[bool]) -> Result<f64, EvalError> {
    check_inputs(scores, positives.len())?;
    let (n_pos, n_neg) = class_counts(positives)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(positives).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// ROC points from a sweep over the distinct scores in descending order,
/// starting at (0, 0) and ending at (1, 1).
pub fn roc_points(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    check_inputs(scores, positives.len())?;
    let (n_pos, n_neg) = class_counts(positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a piecewise-linear curve of (x, y) points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_inputs(x, y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Semantic,
    Rouge,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Semantic => "semantic",
            Criterion::Rouge => "rouge",
        }
    }

    fn hallucinated(self, l: &LabeledRecord) -> Option<bool> {
        match self {
            Criterion::Semantic => l.hallucinated_semantic(),
            Criterion::Rouge => Some(l.hallucinated_rouge()),
        }
    }
}

/// One AUROC or PCC cell. `value` is `None` when the cell is degenerate, in
/// which case `note` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub value: Option<f64>,
    pub n_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roc: Vec<(f64, f64)>,
}

impl Stat {
    fn from_result(r: Result<f64, EvalError>, n_used: usize) -> Self {
        match r {
            Ok(v) => Stat {
                value: Some(v),
                n_used,
                note: None,
                roc: Vec::new(),
            },
            Err(e) => Stat {
                value: None,
                n_used,
                note: Some(match e {
                    EvalError::TooFew(_) => "degenerate: metric available on fewer than 2 records".to_string(),
                    other => other.to_string(),
                }),
                roc: Vec::new(),
            },
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.value.is_none()
    }
}

/// AUROC over the records where both the score and the label exist.
fn auc_stat(pairs: impl Iterator<Item = (Option<f64>, Option<bool>)>, with_roc: bool) -> Stat {
    let (scores, labels): (Vec<f64>, Vec<bool>) = pairs.filter_map(|(s, l)| Some((s?, l?))).unzip();
    let n = scores.len();
    let mut stat = Stat::from_result(auroc(&scores, &labels), n);
    if with_roc && stat.value.is_some() {
        stat.roc = roc_points(&scores, &labels).unwrap_or_default();
    }
    stat
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub report: MetricReport,
    pub labels: LabeledRecord,
}

/// Metric reports paired with labels, one entry per record.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    entries: Vec<ScoredEntry>,
    keys: Vec<(String, Metric, MetricParams)>,
}

impl ScoredDataset {
    pub fn new(reports: Vec<MetricReport>, labels: Vec<LabeledRecord>) -> Result<Self, EvalError> {
        if reports.len() != labels.len() {
            return Err(EvalError::LengthMismatch(reports.len(), labels.len()));
        }
        let mut seen = HashSet::new();
        let mut keys: Option<Vec<(String, Metric, MetricParams)>> = None;
        let mut entries = Vec::with_capacity(reports.len());
        for (report, labels) in reports.into_iter().zip(labels) {
            if report.id != labels.id {
                return Err(EvalError::Mismatch(format!(
                    "report {:?} paired with labels {:?}",
                    report.id, labels.id
                )));
            }
            if !seen.insert(report.id.clone()) {
                return Err(EvalError::Mismatch(format!("duplicate id {:?}", report.id)));
            }
            let these: Vec<_> = report.values.iter().map(|v| (v.key(), v.metric, v.params)).collect();
            match &keys {
                None => keys = Some(these),
                Some(k) if *k != these => {
                    return Err(EvalError::Mismatch(format!(
                        "record {:?} has a different metric set",
                        report.id
                    )))
                }
                _ => {}
            }
            entries.push(ScoredEntry { report, labels });
        }
        Ok(Self {
            entries,
            keys: keys.unwrap_or_default(),
        })
    }

    pub fn entries(&self) -> &[ScoredEntry] {
        &self.entries
    }

    fn scores(&self, idx: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.entries.iter().map(move |e| e.report.values[idx].oriented())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub key: String,
    pub metric: Metric,
    pub params: MetricParams,
    pub auc_s: Stat,
    pub auc_r: Stat,
    /// Correlation of the confidence-oriented score with the continuous
    /// semantic similarity.
    pub pcc: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_records: usize,
    pub metrics: Vec<MetricSummary>,
}

impl EvalSummary {
    pub fn get(&self, metric: Metric) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == metric)
    }

    /// True when not a single AUROC could be computed.
    pub fn all_degenerate(&self) -> bool {
        self.metrics
            .iter()
            .all(|m| m.auc_s.is_degenerate() && m.auc_r.is_degenerate())
    }
}

pub fn evaluate(ds: &ScoredDataset) -> EvalSummary {
    let metrics = ds
        .keys
        .iter()
        .enumerate()
        .map(|(idx, (key, metric, params))| {
            let labels = ds.entries.iter().map(|e| &e.labels);
            let auc_s = auc_stat(
                ds.scores(idx)
                    .zip(labels.clone().map(|l| Criterion::Semantic.hallucinated(l))),
                true,
            );
            let auc_r = auc_stat(
                ds.scores(idx)
                    .zip(labels.clone().map(|l| Criterion::Rouge.hallucinated(l))),
                true,
            );
            let (conf, sim): (Vec<f64>, Vec<f64>) = ds
                .scores(idx)
                .zip(labels.map(|l| l.semantic_score))
                .filter_map(|(s, c)| Some((-s?, c?)))
                .unzip();
            let pcc = Stat::from_result(pcc(&conf, &sim), conf.len());
            MetricSummary {
                key: key.clone(),
                metric: *metric,
                params: *params,
                auc_s,
                auc_r,
                pcc,
            }
        })
        .collect();
    EvalSummary {
        n_records: ds.entries.len(),
        metrics,
    }
}

fn check_aligned(records: &[QARecord], labels: &[LabeledRecord]) -> Result<(), EvalError> {
    if records.len() != labels.len() {
        return Err(EvalError::LengthMismatch(records.len(), labels.len()));
    }
    if let Some((r, l)) = records.iter().zip(labels).find(|(r, l)| r.id != l.id) {
        return Err(EvalError::Mismatch(format!(
            "record {:?} paired with labels {:?}",
            r.id, l.id
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweepRow {
    pub window: usize,
    pub auc_s: Stat,
    pub auc_r: Stat,
}

/// Re-scores LSC at each window size and evaluates it under both criteria.
pub fn window_sweep(
    records: &[QARecord],
    labels: &[LabeledRecord],
    windows: &[usize],
) -> Result<Vec<WindowSweepRow>, EvalError> {
    check_aligned(records, labels)?;
    if windows.is_empty() {
        return Err(EvalError::InvalidParameter("window list is empty".into()));
    }
    let probs: Vec<Vec<f64>> = records.iter().map(|r| r.greedy.probabilities()).collect();
    windows
        .iter()
        .map(|&w| {
            let cfg = WindowConfig::new(w).map_err(|e| EvalError::InvalidParameter(e.to_string()))?;
            let scores: Vec<f64> = probs
                .iter()
                .map(|p| Metric::Lsc.orient(metrics::lsc_probs(p, cfg)))
                .collect();
            let stat = |c: Criterion| {
                auc_stat(
                    scores
                        .iter()
                        .map(|&s| Some(s))
                        .zip(labels.iter().map(|l| c.hallucinated(l))),
                    false,
                )
            };
            Ok(WindowSweepRow {
                window: w,
                auc_s: stat(Criterion::Semantic),
                auc_r: stat(Criterion::Rouge),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepRow {
    pub criterion: Criterion,
    pub threshold: f64,
    pub key: String,
    pub metric: Metric,
    pub auroc: Stat,
}

/// Relabels at every threshold and reports each metric's AUROC. ROUGE
/// thresholds come first, then semantic ones; metrics keep report order.
pub fn threshold_sweep(
    labels: &[LabeledRecord],
    reports: &[MetricReport],
    rouge_thresholds: &[f64],
    semantic_thresholds: &[f64],
) -> Result<Vec<ThresholdSweepRow>, EvalError> {
    for &t in rouge_thresholds {
        check_range(t, 0.0, 1.0).map_err(|e| EvalError::InvalidParameter(e.to_string()))?;
    }
    for &t in semantic_thresholds {
        check_range(t, -1.0, 1.0).map_err(|e| EvalError::InvalidParameter(e.to_string()))?;
    }
    let ds = ScoredDataset::new(reports.to_vec(), labels.to_vec())?;
    let grid = rouge_thresholds
        .iter()
        .map(|&t| (Criterion::Rouge, t))
        .chain(semantic_thresholds.iter().map(|&t| (Criterion::Semantic, t)));
    let mut rows = Vec::new();
    for (criterion, threshold) in grid {
        let th = match criterion {
            Criterion::Rouge => Thresholds {
                rouge: threshold,
                semantic: 0.0,
            },
            Criterion::Semantic => Thresholds {
                rouge: 0.0,
                semantic: threshold,
            },
        };
        let relabeled: Vec<LabeledRecord> = labels.iter().map(|l| l.relabel(th)).collect();
        for (idx, (key, metric, _)) in ds.keys.iter().enumerate() {
            let auroc = auc_stat(
                ds.scores(idx).zip(relabeled.iter().map(|l| criterion.hallucinated(l))),
                false,
            );
            rows.push(ThresholdSweepRow {
                criterion,
                threshold,
                key: key.clone(),
                metric: *metric,
                auroc,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    /// 1-based token position.
    pub position: usize,
    pub token: String,
    pub probability: f64,
    /// Mean of the window starting here, one entry per requested window size.
    pub window_means: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub windows: Vec<usize>,
    pub rows: Vec<TrajectoryRow>,
}

/// Per-position probabilities and window means. Windows wider than the trace
/// are clamped to its length, as in LSC.
pub fn trajectory_dump(trace: &GenerationTrace, windows: &[usize]) -> Result<Trajectory, EvalError> {
    if windows.contains(&0) {
        return Err(EvalError::InvalidParameter("window size must be at least 1".into()));
    }
    let probs = trace.probabilities();
    let means: Vec<Vec<f64>> = windows.iter().map(|&w| metrics::window_means(&probs, w)).collect();
    let rows = trace
        .tokens()
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(i, (tok, &p))| TrajectoryRow {
            position: i + 1,
            token: tok.token.clone(),
            probability: p,
            window_means: means.iter().map(|m| m.get(i).copied()).collect(),
        })
        .collect();
    Ok(Trajectory {
        windows: windows.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{score_record, RegularizationConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²) pair counting with ties worth one half.
    fn auroc_pairs(scores: &[f64], pos: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.7, 0.4, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5, 0.2], &[true, false, false]).unwrap(), 0.75);
        assert_eq!(
            auroc(&[0.5, 0.5, 0.2], &[true, false, false]).unwrap(),
            auroc_pairs(&[0.5, 0.5, 0.2], &[true, false, false])
        );
        assert_eq!(auroc(&[0.1, 0.2], &[true, true]), Err(EvalError::DegenerateLabels));
        assert_eq!(auroc(&[0.1], &[true]), Err(EvalError::TooFew(1)));
        assert_eq!(auroc(&[0.1, f64::NAN], &[true, false]), Err(EvalError::NonFinite));
    }

    #[test]
    fn auroc_random_labels_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scores: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..10_000).map(|_| rng.gen()).collect();
        assert!((auroc(&scores, &labels).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn roc_examples() {
        let pts = roc_points(&[0.9, 0.7, 0.4, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]);
        let pts = roc_points(&[0.3, 0.1, 0.2, 0.5, 0.4], &[true, false, true, false, false]).unwrap();
        assert_eq!(pts.len(), 6);
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn pcc_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pcc(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pcc(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pcc(&x, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(pcc(&x, &[1.0; 4]), Err(EvalError::ConstantInput));
    }

    fn labeled(id: &str, rouge: f64, sem: Option<f64>) -> LabeledRecord {
        LabeledRecord {
            id: id.into(),
            rouge_score: rouge,
            semantic_score: sem,
            correct_rouge: false,
            correct_semantic: None,
        }
        .relabel(Thresholds::default())
    }

    fn record(id: &str, probs: &[f64]) -> QARecord {
        QARecord {
            id: id.into(),
            question: "q".into(),
            references: vec!["r".into()],
            greedy: GenerationTrace::from_probabilities(probs).unwrap(),
            samples: vec![],
            greedy_embedding: None,
            reference_embeddings: None,
        }
    }

    /// Two hallucinated records with a low span, two correct ones without.
    fn separable() -> (Vec<QARecord>, Vec<LabeledRecord>) {
        let recs = vec![
            record("a", &[0.9, 0.1, 0.1, 0.9]),
            record("b", &[0.95, 0.9, 0.2, 0.15]),
            record("c", &[0.9, 0.9, 0.95, 0.9]),
            record("d", &[0.99, 0.8, 0.9, 0.97]),
        ];
        let labels = vec![
            labeled("a", 0.1, Some(0.3)),
            labeled("b", 0.2, Some(0.5)),
            labeled("c", 0.9, Some(0.95)),
            labeled("d", 1.0, Some(0.97)),
        ];
        (recs, labels)
    }

    fn scored(recs: &[QARecord], labels: &[LabeledRecord], w: usize) -> ScoredDataset {
        let cfg = WindowConfig::new(w).unwrap();
        let reports = recs
            .iter()
            .map(|r| score_record(r, cfg, RegularizationConfig::default()))
            .collect();
        ScoredDataset::new(reports, labels.to_vec()).unwrap()
    }

    #[test]
    fn evaluate_perfect_lsc() {
        let (recs, labels) = separable();
        let s = evaluate(&scored(&recs, &labels, 3));
        let lsc = s.get(Metric::Lsc).unwrap();
        assert_eq!(lsc.auc_s.value, Some(1.0));
        assert_eq!(lsc.auc_r.value, Some(1.0));
        assert!(lsc.pcc.value.unwrap() > 0.0);
        assert_eq!(lsc.auc_r.roc.first(), Some(&(0.0, 0.0)));
        let energy = s.get(Metric::Energy).unwrap();
        assert!(energy.auc_r.is_degenerate());
        assert_eq!(energy.auc_r.n_used, 0);
    }

    #[test]
    fn evaluate_counts_only_records_with_labels() {
        let (recs, mut labels) = separable();
        labels[3] = labeled("d", 1.0, None);
        let s = evaluate(&scored(&recs, &labels, 3));
        let lsc = s.get(Metric::Lsc).unwrap();
        assert_eq!(lsc.auc_s.n_used, 3);
        assert_eq!(lsc.auc_r.n_used, 4);
        assert_eq!(lsc.pcc.n_used, 3);
    }

    #[test]
    fn scored_dataset_rejects_misaligned_ids() {
        let (recs, mut labels) = separable();
        labels.swap(0, 1);
        let cfg = WindowConfig::default();
        let reports = recs
            .iter()
            .map(|r| score_record(r, cfg, RegularizationConfig::default()))
            .collect();
        assert!(matches!(
            ScoredDataset::new(reports, labels),
            Err(EvalError::Mismatch(_))
        ));
    }

    #[test]
    fn window_sweep_identities() {
        let (recs, labels) = separable();
        let rows = window_sweep(&recs, &labels, &[1, 3]).unwrap();
        let minp = evaluate(&scored(&recs, &labels, 3));
        let minp = minp.get(Metric::MinP).unwrap();
        assert_eq!(rows[0].auc_r.value, minp.auc_r.value);
        assert_eq!(rows[0].auc_s.value, minp.auc_s.value);
        let lsc3 = evaluate(&scored(&recs, &labels, 3));
        assert_eq!(rows[1].auc_r.value, lsc3.get(Metric::Lsc).unwrap().auc_r.value);
        assert!(window_sweep(&recs, &labels, &[]).is_err());
    }

    #[test]
    fn threshold_sweep_default_matches_evaluate() {
        let (recs, labels) = separable();
        let ds = scored(&recs, &labels, 3);
        let reports: Vec<MetricReport> = ds.entries().iter().map(|e| e.report.clone()).collect();
        let rows = threshold_sweep(&labels, &reports, &[0.5], &[0.9]).unwrap();
        let summary = evaluate(&ds);
        for row in &rows {
            let m = summary.metrics.iter().find(|m| m.key == row.key).unwrap();
            let expect = match row.criterion {
                Criterion::Rouge => &m.auc_r,
                Criterion::Semantic => &m.auc_s,
            };
            assert_eq!(row.auroc.value, expect.value);
        }
        let rows = threshold_sweep(&labels, &reports, &[1.0], &[]).unwrap();
        assert!(rows.iter().all(|r| r.auroc.is_degenerate()));
        assert!(threshold_sweep(&labels, &reports, &[1.5], &[]).is_err());
    }

    #[test]
    fn trajectory_examples() {
        let t = GenerationTrace::from_probabilities(&[0.9, 0.2, 0.3, 0.95]).unwrap();
        let traj = trajectory_dump(&t, &[2]).unwrap();
        let means: Vec<f64> = traj.rows.iter().filter_map(|r| r.window_means[0]).collect();
        assert_eq!(means.len(), 3);
        for (m, e) in means.iter().zip([0.55, 0.25, 0.625]) {
            assert!((m - e).abs() < 1e-12);
        }
        let c = GenerationTrace::from_probabilities(&[0.5; 6]).unwrap();
        let traj = trajectory_dump(&c, &[1, 3, 8]).unwrap();
        for row in &traj.rows {
            for m in row.window_means.iter().flatten() {
                assert!((m - 0.5).abs() < 1e-15);
            }
        }
        assert!(trajectory_dump(&c, &[0]).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_formula_equals_pair_counting((s, l) in instance()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc_pairs(&s, &l));
        }

        #[test]
        fn trapezoid_matches_auroc((s, l) in instance()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let area = trapezoid(&roc_points(&s, &l).unwrap());
            prop_assert!((area - auroc(&s, &l).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn roc_monotone((s, l) in instance()) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let pts = roc_points(&s, &l).unwrap();
            prop_assert_eq!(pts[0], (0.0, 0.0));
            prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            for w in pts.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
        }

        #[test]
        fn auroc_invariant_under_increasing_maps((s, l) in instance(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            prop_assume!(l.iter().any(|&x| x) && l.iter().any(|&x| !x));
            let base = auroc(&s, &l).unwrap();
            let ex: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let af: Vec<f64> = s.iter().map(|x| a * x + b).collect();
            prop_assert_eq!(auroc(&ex, &l).unwrap(), base);
            prop_assert_eq!(auroc(&af, &l).unwrap(), base);
        }

        #[test]
        fn negation_complements_without_ties(
            s in prop::collection::hash_set(0u32..1_000_000, 2..100),
            seed in any::<u64>(),
        ) {
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut l: Vec<bool> = (0..s.len()).map(|_| rng.gen()).collect();
            l[0] = true;
            l[1] = false;
            let neg: Vec<f64> = s.iter().map(|x| -x).collect();
            prop_assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn pcc_of_affine_map(x in prop::collection::vec(-100.0f64..100.0, 3..50), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-3));
            let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pcc(&x, &up).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((pcc(&x, &down).unwrap() + 1.0).abs() < 1e-12);
        }
    }
}
