//! On-disk report formats: per-record score lines, label lines, and the CSV
//! and JSON evaluation reports with their provenance header.

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::{AnalysisParams, RunConfig};
use super::CliError;
use crate::eval::{Criterion, EvalSummary, Stat, ThresholdSweepRow, Trajectory, WindowSweepRow};
use crate::metrics::{Metric, MetricParams, MetricReport, MetricValue};

pub const TOOL: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub config_digest: String,
    pub dataset_digest: String,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, dataset_bytes: &[u8]) -> Self {
        let params = serde_json::to_string(&cfg.analysis_params()).expect("params serialize");
        Self {
            tool: TOOL.to_string(),
            config_digest: digest(params.as_bytes()),
            dataset_digest: digest(dataset_bytes),
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# tool: {}\n# config_digest: {}\n# dataset_digest: {}\n",
            self.tool, self.config_digest, self.dataset_digest
        )
    }
}

fn is_default_params(p: &MetricParams) -> bool {
    p.window.is_none() && p.alpha.is_none()
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreEntry {
    metric: Metric,
    #[serde(default, skip_serializing_if = "is_default_params")]
    params: MetricParams,
    available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    oriented: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreLine {
    id: String,
    metrics: Vec<ScoreEntry>,
}

/// One JSON line per record with raw, oriented and availability per metric.
pub fn scores_jsonl(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let line = ScoreLine {
            id: r.id.clone(),
            metrics: r
                .values
                .iter()
                .map(|v| ScoreEntry {
                    metric: v.metric,
                    params: v.params,
                    available: v.is_available(),
                    raw: v.raw(),
                    oriented: v.oriented(),
                    reason: v.reason().map(str::to_string),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("score lines serialize"));
        out.push('\n');
    }
    out
}

/// Reads a scores file back. Orientation is recomputed from the raw value.
pub fn parse_scores(text: &str) -> Result<Vec<MetricReport>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line: ScoreLine =
                serde_json::from_str(l).map_err(|e| CliError::config(format!("scores line {}: {e}", i + 1)))?;
            let values = line
                .metrics
                .into_iter()
                .map(|e| match (e.available, e.raw) {
                    (true, Some(raw)) => Ok(MetricValue::available(e.metric, e.params, raw)),
                    (true, None) => Err(CliError::config(format!(
                        "scores line {}: {} marked available without a raw value",
                        i + 1,
                        e.metric
                    ))),
                    (false, _) => Ok(MetricValue::unavailable(
                        e.metric,
                        e.params,
                        e.reason.unwrap_or_default(),
                    )),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(MetricReport { id: line.id, values })
        })
        .collect()
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Percentage with one decimal, or `n/a` for a degenerate cell.
pub fn pct(stat: &Stat) -> String {
    match stat.value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "n/a".to_string(),
    }
}

fn csv_text(prov: &Provenance, header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(&r).expect("in-memory csv");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8");
    format!("{}{}", prov.csv_header(), body)
}

fn params_label(p: &MetricParams) -> String {
    match (p.window, p.alpha) {
        (Some(w), _) => format!("w={w}"),
        (None, Some(a)) => format!("alpha={a}"),
        _ => String::new(),
    }
}

/// Metric rows with AUC_s / AUC_r / PCC columns as percentages.
pub fn evaluation_csv(prov: &Provenance, summary: &EvalSummary) -> String {
    let rows = summary
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.metric.display_name().to_string(),
                params_label(&m.params),
                pct(&m.auc_s),
                pct(&m.auc_r),
                pct(&m.pcc),
                m.auc_s.n_used.to_string(),
                m.auc_r.n_used.to_string(),
                m.pcc.n_used.to_string(),
            ]
        })
        .collect();
    csv_text(
        prov,
        &["method", "params", "AUC_s", "AUC_r", "PCC", "n_s", "n_r", "n_pcc"],
        rows,
    )
}

/// Plot-ready ROC points, one row per point.
pub fn roc_csv(prov: &Provenance, summary: &EvalSummary) -> String {
    let mut rows = Vec::new();
    for m in &summary.metrics {
        for (crit, stat) in [(Criterion::Semantic, &m.auc_s), (Criterion::Rouge, &m.auc_r)] {
            for (fpr, tpr) in &stat.roc {
                rows.push(vec![
                    m.key.clone(),
                    crit.name().to_string(),
                    fpr.to_string(),
                    tpr.to_string(),
                ]);
            }
        }
    }
    csv_text(prov, &["metric", "criterion", "fpr", "tpr"], rows)
}

pub fn report_json(prov: &Provenance, params: &AnalysisParams, body: serde_json::Value) -> String {
    let v = json!({
        "provenance": prov,
        "parameters": params,
        "results": body,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
    s.push('\n');
    s
}

pub fn window_sweep_csv(prov: &Provenance, rows: &[WindowSweepRow]) -> String {
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                r.window.to_string(),
                pct(&r.auc_s),
                pct(&r.auc_r),
                r.auc_s.n_used.to_string(),
                r.auc_r.n_used.to_string(),
            ]
        })
        .collect();
    csv_text(prov, &["window", "AUC_s", "AUC_r", "n_s", "n_r"], rows)
}

/// One row per (criterion, threshold) setting, one column per metric.
pub fn threshold_sweep_csv(prov: &Provenance, rows: &[ThresholdSweepRow]) -> String {
    let mut keys: Vec<(String, Metric)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(k, _)| *k == r.key) {
            keys.push((r.key.clone(), r.metric));
        }
    }
    let mut settings: Vec<(Criterion, f64)> = Vec::new();
    for r in rows {
        if !settings.contains(&(r.criterion, r.threshold)) {
            settings.push((r.criterion, r.threshold));
        }
    }
    let mut header = vec!["criterion".to_string(), "threshold".to_string()];
    header.extend(keys.iter().map(|(_, m)| m.display_name().to_string()));
    let table = settings
        .iter()
        .map(|&(c, t)| {
            let mut row = vec![c.name().to_string(), t.to_string()];
            for (k, _) in &keys {
                let cell = rows
                    .iter()
                    .find(|r| r.criterion == c && r.threshold == t && r.key == *k)
                    .map(|r| pct(&r.auroc))
                    .unwrap_or_else(|| "n/a".into());
                row.push(cell);
            }
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(prov, &header, table)
}

pub fn trajectory_csv(prov: &Provenance, t: &Trajectory) -> String {
    let mut header = vec!["position".to_string(), "token".to_string(), "p".to_string()];
    header.extend(t.windows.iter().map(|w| format!("mean_w{w}")));
    let rows = t
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.position.to_string(), r.token.clone(), r.probability.to_string()];
            row.extend(
                r.window_means
                    .iter()
                    .map(|m| m.map(|v| v.to_string()).unwrap_or_default()),
            );
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_text(prov, &header, rows)
}
