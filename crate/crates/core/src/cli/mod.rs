//! The `spanconf` command line.
//!
//! Exit codes: 0 success, 1 evaluation or degeneracy failure (including
//! failed fetch items), 2 configuration or environment failure.

pub mod config;
pub mod report;

use std::ffi::OsString;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::client::mock::{MockBehavior, MockServer};
use crate::client::{ApiKey, LlmClient, QuestionItem, ResponseCache};
use crate::correctness::{label_record, LabeledRecord};
use crate::eval::{self, ScoredDataset};
use crate::metrics::{score_record, MetricReport};
use crate::trace::{parse_dataset, QARecord};
use config::{ReportFormat, RunConfig};
use report::Provenance;

pub const EXIT_OK: i32 = 0;
pub const EXIT_EVAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.into(),
        }
    }

    pub fn eval(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_EVAL,
            message: msg.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "spanconf",
    version,
    about = "Span-confidence hallucination detection and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// JSONL dataset to read
    #[arg(long, global = true, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sliding window size for LSC [default: 3]
    #[arg(long, global = true, value_name = "N")]
    pub window: Option<usize>,
    /// ROUGE-L F1 above which a response counts as correct [default: 0.5]
    #[arg(long, global = true, value_name = "F")]
    pub rouge_threshold: Option<f64>,
    /// Embedding cosine above which a response counts as correct [default: 0.9]
    #[arg(long, global = true, value_name = "F")]
    pub semantic_threshold: Option<f64>,
    /// EigenScore eigenvalue regularizer [default: 0.001]
    #[arg(long, global = true, value_name = "F")]
    pub alpha: Option<f64>,
    /// Sampled generations per question [default: 5]
    #[arg(long, global = true, value_name = "N")]
    pub k: Option<usize>,
    /// Sampling temperature [default: 0.5]
    #[arg(long, global = true, value_name = "F")]
    pub temperature: Option<f64>,
    /// Nucleus sampling mass [default: 0.99]
    #[arg(long, global = true, value_name = "F")]
    pub top_p: Option<f64>,
    /// Top-k sampling cutoff, 0 to omit [default: 10]
    #[arg(long, global = true, value_name = "N")]
    pub top_k: Option<u32>,
    /// OpenAI-compatible service root
    #[arg(long, global = true, value_name = "URL")]
    pub base_url: Option<String>,
    /// Model name sent to the service
    #[arg(long, global = true, value_name = "NAME")]
    pub model: Option<String>,
    /// Response cache directory [default: <out>/cache]
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Maximum concurrent requests [default: 4]
    #[arg(long, global = true, value_name = "N")]
    pub max_concurrency: Option<usize>,
    /// Retries per request after the first attempt [default: 3]
    #[arg(long, global = true, value_name = "N")]
    pub max_retries: Option<u32>,
    /// Initial retry backoff in milliseconds [default: 500]
    #[arg(long, global = true, value_name = "MS")]
    pub backoff_ms: Option<u64>,
    /// Never contact a service
    #[arg(long, global = true)]
    pub offline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Window,
    Threshold,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect greedy traces, samples and embeddings from a service
    Fetch {
        /// JSONL file of {"id", "question", "references"} objects
        #[arg(long, value_name = "PATH")]
        questions: Option<PathBuf>,
    },
    /// Compute every metric for every record
    Score,
    /// Compute correctness scores and labels
    Label,
    /// AUROC and PCC per metric
    Evaluate {
        /// Reuse a scores file instead of recomputing
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,
    },
    /// Window-size or correctness-threshold sweep
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
        /// Window sizes, comma separated [default: 1,2,3,4,5,6,7,8]
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        windows: Option<Vec<usize>>,
        /// ROUGE-L thresholds [default: 0.3,0.5,0.7]
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        rouge_thresholds: Option<Vec<f64>>,
        /// Semantic thresholds [default: 0.7,0.8,0.9]
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        semantic_thresholds: Option<Vec<f64>>,
    },
    /// Per-token probabilities and window means for one record
    Trajectory {
        #[arg(long)]
        id: String,
        /// Window sizes, comma separated [default: 1,<window>,8]
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        windows: Option<Vec<usize>>,
    },
    /// Serve the bundled mock OpenAI-compatible API until interrupted
    MockServer {
        #[arg(long, default_value = "127.0.0.1:8089")]
        addr: String,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::MockServer { addr } = &cli.command {
        let server = MockServer::bind(addr, MockBehavior::default())
            .map_err(|e| CliError::config(format!("cannot bind {addr}: {e}")))?;
        println!("mock server listening on {}", server.url());
        server.join();
        return Ok(());
    }
    let cfg = config::resolve(&cli.global)?;
    match &cli.command {
        Command::Fetch { questions } => cmd_fetch(&cfg, questions.as_deref()),
        Command::Score => cmd_score(&cfg),
        Command::Label => cmd_label(&cfg),
        Command::Evaluate { scores } => cmd_evaluate(&cfg, scores.as_deref()),
        Command::Sweep {
            kind,
            windows,
            rouge_thresholds,
            semantic_thresholds,
        } => {
            let mut cfg = cfg;
            if let Some(w) = windows {
                cfg.sweep.windows = w.clone();
            }
            if let Some(r) = rouge_thresholds {
                cfg.sweep.rouge_thresholds = r.clone();
            }
            if let Some(s) = semantic_thresholds {
                cfg.sweep.semantic_thresholds = s.clone();
            }
            cmd_sweep(&cfg, *kind)
        }
        Command::Trajectory { id, windows } => cmd_trajectory(&cfg, id, windows.as_deref()),
        Command::MockServer { .. } => unreachable!("handled above"),
    }
}

fn write_out(cfg: &RunConfig, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::config(format!("cannot create {}: {e}", cfg.out.display())))?;
    let path = cfg.out.join(name);
    fs::write(&path, contents).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

struct Loaded {
    records: Vec<QARecord>,
    bytes: Vec<u8>,
}

fn load_dataset(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| CliError::config("no dataset given (use --dataset or `dataset` in the config)"))?;
    let bytes = fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let records = parse_dataset(bytes.as_slice()).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(Loaded { records, bytes })
}

fn read_questions(path: &Path) -> Result<Vec<QuestionItem>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::config(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QuestionItem = serde_json::from_str(&line)
            .map_err(|e| CliError::config(format!("{} line {}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(CliError::config(format!("{} holds no questions", path.display())));
    }
    Ok(items)
}

pub fn cmd_fetch(cfg: &RunConfig, questions: Option<&Path>) -> Result<(), CliError> {
    let client_cfg = cfg
        .client
        .clone()
        .ok_or_else(|| CliError::config("fetch needs --base-url and --model and is not allowed with --offline"))?;
    let key = ApiKey::from_env().map_err(|e| CliError::config(e.to_string()))?;
    let qpath = questions
        .map(Path::to_path_buf)
        .or_else(|| cfg.questions.clone())
        .ok_or_else(|| CliError::config("no questions file given (use --questions)"))?;
    let items = read_questions(&qpath)?;
    let client = LlmClient::new(client_cfg, key, Some(ResponseCache::new(&cfg.cache_dir)))
        .map_err(|e| CliError::config(e.to_string()))?;
    let outcome = client.build_dataset(&items);
    let dataset = crate::trace::write_dataset_string(&outcome.records);
    let path = write_out(cfg, "dataset.jsonl", &dataset)?;
    let mut manifest = serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes");
    manifest.push('\n');
    write_out(cfg, "fetch_manifest.json", &manifest)?;
    println!(
        "fetched {}/{} records into {}",
        outcome.records.len(),
        items.len(),
        path.display()
    );
    if outcome.manifest.failed.is_empty() {
        Ok(())
    } else {
        let ids: Vec<&str> = outcome.manifest.failed.iter().map(|f| f.id.as_str()).collect();
        Err(CliError::eval(format!(
            "{} item(s) failed: {}",
            ids.len(),
            ids.join(", ")
        )))
    }
}

fn score_all(cfg: &RunConfig, records: &[QARecord]) -> Vec<MetricReport> {
    records.iter().map(|r| score_record(r, cfg.window, cfg.reg)).collect()
}

fn label_all(cfg: &RunConfig, records: &[QARecord]) -> Result<Vec<LabeledRecord>, CliError> {
    records
        .iter()
        .map(|r| label_record(r, cfg.thresholds).map_err(|e| CliError::eval(format!("record {}: {e}", r.id))))
        .collect()
}

pub fn cmd_score(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let reports = score_all(cfg, &data.records);
    write_out(cfg, "scores.jsonl", &report::scores_jsonl(&reports))?;
    Ok(())
}

pub fn cmd_label(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let labels = label_all(cfg, &data.records)?;
    write_out(cfg, "labels.jsonl", &report::jsonl(&labels))?;
    Ok(())
}

fn reports_for(cfg: &RunConfig, data: &Loaded, scores: Option<&Path>) -> Result<Vec<MetricReport>, CliError> {
    match scores {
        None => Ok(score_all(cfg, &data.records)),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            let reports = report::parse_scores(&text)?;
            let aligned =
                reports.len() == data.records.len() && reports.iter().zip(&data.records).all(|(s, r)| s.id == r.id);
            if !aligned {
                return Err(CliError::config(format!(
                    "{} does not match the dataset record for record",
                    p.display()
                )));
            }
            Ok(reports)
        }
    }
}

pub fn cmd_evaluate(cfg: &RunConfig, scores: Option<&Path>) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let reports = reports_for(cfg, &data, scores)?;
    let labels = label_all(cfg, &data.records)?;
    let ds = ScoredDataset::new(reports, labels).map_err(|e| CliError::config(e.to_string()))?;
    let summary = eval::evaluate(&ds);
    let prov = Provenance::new(cfg, &data.bytes);
    if cfg.wants(ReportFormat::Csv) {
        write_out(cfg, "report.csv", &report::evaluation_csv(&prov, &summary))?;
        write_out(cfg, "roc.csv", &report::roc_csv(&prov, &summary))?;
    }
    if cfg.wants(ReportFormat::Json) {
        let body = serde_json::to_value(&summary).expect("summary serializes");
        write_out(
            cfg,
            "report.json",
            &report::report_json(&prov, &cfg.analysis_params(), body),
        )?;
    }
    for m in &summary.metrics {
        println!(
            "{:<20} AUC_s {:>5}  AUC_r {:>5}  PCC {:>6}",
            m.key,
            report::pct(&m.auc_s),
            report::pct(&m.auc_r),
            report::pct(&m.pcc)
        );
    }
    if summary.all_degenerate() {
        return Err(CliError::eval(
            "degenerate labels: no metric has both correct and hallucinated records",
        ));
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig, kind: SweepKind) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let labels = label_all(cfg, &data.records)?;
    let prov = Provenance::new(cfg, &data.bytes);
    let params = cfg.analysis_params();
    match kind {
        SweepKind::Window => {
            let rows = eval::window_sweep(&data.records, &labels, &cfg.sweep.windows)
                .map_err(|e| CliError::config(e.to_string()))?;
            if cfg.wants(ReportFormat::Csv) {
                write_out(cfg, "window_sweep.csv", &report::window_sweep_csv(&prov, &rows))?;
            }
            if cfg.wants(ReportFormat::Json) {
                let body = json!({ "window_sweep": rows });
                write_out(cfg, "window_sweep.json", &report::report_json(&prov, &params, body))?;
            }
            if rows.iter().all(|r| r.auc_s.is_degenerate() && r.auc_r.is_degenerate()) {
                return Err(CliError::eval(degenerate_message(
                    rows.first().and_then(|r| r.auc_r.note.clone()),
                )));
            }
        }
        SweepKind::Threshold => {
            let reports = score_all(cfg, &data.records);
            let rows = eval::threshold_sweep(
                &labels,
                &reports,
                &cfg.sweep.rouge_thresholds,
                &cfg.sweep.semantic_thresholds,
            )
            .map_err(|e| CliError::config(e.to_string()))?;
            if cfg.wants(ReportFormat::Csv) {
                write_out(cfg, "threshold_sweep.csv", &report::threshold_sweep_csv(&prov, &rows))?;
            }
            if cfg.wants(ReportFormat::Json) {
                let body = json!({ "threshold_sweep": rows });
                write_out(cfg, "threshold_sweep.json", &report::report_json(&prov, &params, body))?;
            }
            if rows.iter().all(|r| r.auroc.is_degenerate()) {
                return Err(CliError::eval(degenerate_message(
                    rows.first().and_then(|r| r.auroc.note.clone()),
                )));
            }
        }
    }
    Ok(())
}

fn degenerate_message(note: Option<String>) -> String {
    format!(
        "degenerate labels: every sweep cell is undefined ({})",
        note.unwrap_or_else(|| "no usable records".into())
    )
}

pub fn cmd_trajectory(cfg: &RunConfig, id: &str, windows: Option<&[usize]>) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let record = data
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| CliError::config(format!("no record with id {id:?} in the dataset")))?;
    let windows = match windows {
        Some(w) => w.to_vec(),
        None => {
            let mut w = vec![1, cfg.window.window(), 8];
            w.dedup();
            w
        }
    };
    let traj = eval::trajectory_dump(&record.greedy, &windows).map_err(|e| CliError::config(e.to_string()))?;
    let prov = Provenance::new(cfg, &data.bytes);
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    write_out(
        cfg,
        &format!("trajectory_{safe}.csv"),
        &report::trajectory_csv(&prov, &traj),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_protocol_defaults() {
        let help = Cli::command().render_long_help().to_string();
        for needle in [
            format!("[default: {}]", crate::metrics::DEFAULT_WINDOW),
            format!("[default: {}]", crate::correctness::DEFAULT_ROUGE_THRESHOLD),
            format!("[default: {}]", crate::correctness::DEFAULT_SEMANTIC_THRESHOLD),
            format!("[default: {}]", crate::client::DEFAULT_SAMPLES),
            format!("[default: {}]", crate::client::DEFAULT_TEMPERATURE),
            format!("[default: {}]", crate::client::DEFAULT_TOP_P),
            format!("[default: {}]", crate::client::DEFAULT_TOP_K),
            format!("[default: {}]", crate::metrics::DEFAULT_ALPHA),
        ] {
            assert!(help.contains(&needle), "missing {needle} in help");
        }
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "window = 5\nrouge_threshold = 0.7\n[client]\nk = 3\n").unwrap();
        let args = GlobalArgs {
            config: Some(path.clone()),
            window: Some(2),
            ..Default::default()
        };
        let cfg = config::resolve(&args).unwrap();
        assert_eq!(cfg.window.window(), 2);
        assert_eq!(cfg.thresholds.rouge, 0.7);
        assert_eq!(cfg.thresholds.semantic, 0.9);
        assert_eq!(cfg.sampling.k, 3);
        assert!(cfg.client.is_none());

        let defaults = config::resolve(&GlobalArgs::default()).unwrap();
        assert_eq!(defaults.window.window(), 3);
        assert_eq!(defaults.sweep.windows, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "windwo = 5\n").unwrap();
        let args = GlobalArgs {
            config: Some(path),
            ..Default::default()
        };
        assert_eq!(config::resolve(&args).unwrap_err().code, EXIT_CONFIG);
    }

    #[test]
    fn offline_disables_client() {
        let args = GlobalArgs {
            base_url: Some("http://x".into()),
            model: Some("m".into()),
            offline: true,
            ..Default::default()
        };
        assert!(config::resolve(&args).unwrap().client.is_none());
        let args = GlobalArgs { offline: false, ..args };
        assert!(config::resolve(&args).unwrap().client.is_some());
    }
}
