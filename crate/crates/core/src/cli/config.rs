//! Run configuration: TOML file, command-line flags and built-in defaults,
//! resolved in that order of increasing precedence (flags win).
//!
//! ```toml
//! dataset = "data/nq.jsonl"
//! questions = "data/nq_questions.jsonl"
//! out = "runs/nq"
//! window = 3
//! rouge_threshold = 0.5
//! semantic_threshold = 0.9
//! alpha = 0.001
//! formats = ["csv", "json"]
//!
//! [client]
//! base_url = "http://localhost:8000"
//! model = "meta-llama/Llama-2-7b-hf"
//! embedding_model = "nli-roberta-large"
//! endpoint = "completions"        # or "chat"
//! timeout_secs = 60
//! max_retries = 3
//! backoff_ms = 500
//! max_concurrency = 4
//! max_tokens = 64
//! prompt_template = "Question: {question}\nAnswer:"
//! temperature = 0.5
//! top_p = 0.99
//! top_k = 10
//! k = 5
//! fetch_embeddings = true
//! cache_dir = "runs/cache"
//!
//! [sweep]
//! windows = [1, 2, 3, 4, 5, 6, 7, 8]
//! rouge_thresholds = [0.3, 0.5, 0.7]
//! semantic_thresholds = [0.7, 0.8, 0.9]
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CliError, GlobalArgs};
use crate::client::{ClientConfig, Endpoint, SamplingConfig};
use crate::correctness::Thresholds;
use crate::metrics::{RegularizationConfig, WindowConfig};

pub const DEFAULT_SWEEP_WINDOWS: [usize; 8] = [1, 2, 3, 4, 5, 6, 7, 8];
pub const DEFAULT_ROUGE_SWEEP: [f64; 3] = [0.3, 0.5, 0.7];
pub const DEFAULT_SEMANTIC_SWEEP: [f64; 3] = [0.7, 0.8, 0.9];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub window: Option<usize>,
    pub rouge_threshold: Option<f64>,
    pub semantic_threshold: Option<f64>,
    pub alpha: Option<f64>,
    pub formats: Option<Vec<ReportFormat>>,
    #[serde(default)]
    pub client: FileClient,
    #[serde(default)]
    pub sweep: FileSweep,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileClient {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub embedding_model: Option<String>,
    pub endpoint: Option<Endpoint>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub max_concurrency: Option<usize>,
    pub max_tokens: Option<u32>,
    pub prompt_template: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
    pub k: Option<usize>,
    pub fetch_embeddings: Option<bool>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSweep {
    pub windows: Option<Vec<usize>>,
    pub rouge_thresholds: Option<Vec<f64>>,
    pub semantic_thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub windows: Vec<usize>,
    pub rouge_thresholds: Vec<f64>,
    pub semantic_thresholds: Vec<f64>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub questions: Option<PathBuf>,
    pub out: PathBuf,
    pub window: WindowConfig,
    pub thresholds: Thresholds,
    pub reg: RegularizationConfig,
    pub sampling: SamplingConfig,
    /// `None` in offline mode.
    pub client: Option<ClientConfig>,
    pub cache_dir: PathBuf,
    pub sweep: SweepConfig,
    pub formats: Vec<ReportFormat>,
}

/// The parameters that determine report contents; hashed into provenance.
#[derive(Debug, Serialize)]
pub struct AnalysisParams {
    pub window: usize,
    pub rouge_threshold: f64,
    pub semantic_threshold: f64,
    pub alpha: f64,
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: Option<u32>,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn analysis_params(&self) -> AnalysisParams {
        AnalysisParams {
            window: self.window.window(),
            rouge_threshold: self.thresholds.rouge,
            semantic_threshold: self.thresholds.semantic,
            alpha: self.reg.alpha(),
            k: self.sampling.k,
            temperature: self.sampling.temperature,
            top_p: self.sampling.top_p,
            top_k: self.sampling.top_k,
            sweep: self.sweep.clone(),
        }
    }

    pub fn wants(&self, f: ReportFormat) -> bool {
        self.formats.contains(&f)
    }
}

pub fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
}

pub fn resolve(args: &GlobalArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(p) => load_file(p)?,
        None => FileConfig::default(),
    };
    let fc = &file.client;

    let window = WindowConfig::new(args.window.or(file.window).unwrap_or(crate::metrics::DEFAULT_WINDOW))
        .map_err(|e| CliError::config(e.to_string()))?;
    let thresholds = Thresholds::new(
        args.rouge_threshold
            .or(file.rouge_threshold)
            .unwrap_or(crate::correctness::DEFAULT_ROUGE_THRESHOLD),
        args.semantic_threshold
            .or(file.semantic_threshold)
            .unwrap_or(crate::correctness::DEFAULT_SEMANTIC_THRESHOLD),
    )
    .map_err(|e| CliError::config(e.to_string()))?;
    let reg = RegularizationConfig::new(args.alpha.or(file.alpha).unwrap_or(crate::metrics::DEFAULT_ALPHA))
        .map_err(|e| CliError::config(e.to_string()))?;

    let defaults = SamplingConfig::default();
    let sampling = SamplingConfig {
        temperature: args.temperature.or(fc.temperature).unwrap_or(defaults.temperature),
        top_p: args.top_p.or(fc.top_p).unwrap_or(defaults.top_p),
        top_k: match args.top_k.or(fc.top_k) {
            Some(0) => None,
            Some(k) => Some(k),
            None => defaults.top_k,
        },
        k: args.k.or(fc.k).unwrap_or(defaults.k),
    };

    let out = args
        .out
        .clone()
        .or(file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let cache_dir = args
        .cache_dir
        .clone()
        .or(fc.cache_dir.clone())
        .unwrap_or_else(|| out.join("cache"));

    let base_url = args.base_url.clone().or(fc.base_url.clone());
    let model = args.model.clone().or(fc.model.clone());
    let client = match (args.offline, base_url, model) {
        (false, Some(base_url), Some(model)) => {
            let mut c = ClientConfig::new(base_url, model);
            c.embedding_model = fc.embedding_model.clone();
            c.endpoint = fc.endpoint.unwrap_or_default();
            if let Some(t) = fc.timeout_secs {
                c.timeout = Duration::from_secs(t);
            }
            if let Some(r) = args.max_retries.or(fc.max_retries) {
                c.max_retries = r;
            }
            if let Some(b) = args.backoff_ms.or(fc.backoff_ms) {
                c.backoff = Duration::from_millis(b);
            }
            if let Some(m) = args.max_concurrency.or(fc.max_concurrency) {
                c.max_concurrency = m;
            }
            if let Some(m) = fc.max_tokens {
                c.max_tokens = m;
            }
            if let Some(p) = &fc.prompt_template {
                c.prompt_template = p.clone();
            }
            if let Some(f) = fc.fetch_embeddings {
                c.fetch_embeddings = f;
            }
            c.sampling = sampling;
            c.validate().map_err(|e| CliError::config(e.to_string()))?;
            Some(c)
        }
        _ => None,
    };

    let sweep = SweepConfig {
        windows: file
            .sweep
            .windows
            .clone()
            .unwrap_or_else(|| DEFAULT_SWEEP_WINDOWS.to_vec()),
        rouge_thresholds: file
            .sweep
            .rouge_thresholds
            .clone()
            .unwrap_or_else(|| DEFAULT_ROUGE_SWEEP.to_vec()),
        semantic_thresholds: file
            .sweep
            .semantic_thresholds
            .clone()
            .unwrap_or_else(|| DEFAULT_SEMANTIC_SWEEP.to_vec()),
    };

    Ok(RunConfig {
        dataset: args.dataset.clone().or(file.dataset),
        questions: file.questions,
        out,
        window,
        thresholds,
        reg,
        sampling,
        client,
        cache_dir,
        sweep,
        formats: file
            .formats
            .unwrap_or_else(|| vec![ReportFormat::Csv, ReportFormat::Json]),
    })
}
