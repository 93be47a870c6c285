//! End-to-end runs as composable commands.
//!
//! Every command reads a [`RunConfig`], consumes artifacts written by
//! earlier commands under `out_dir` and writes its own. Each output file
//! starts with a metadata header carrying the config hash and seed: a
//! `# ...` line for CSV and text, a `{"_meta": ...}` line for JSONL, and a
//! `_meta` field for JSON.
//!
//! ```text
//! out/
//!   corpus/     dilemmas.jsonl judgments.jsonl consensus.csv balanced.csv
//!   elicit/<s>/ transcripts.jsonl distributions.csv quarantine.csv profiles.jsonl
//!   taxonomy/   expressions.jsonl taxonomy.json human_values.jsonl silhouette.csv
//!   profiles/   base_measure.json topic_models.json mft_*.json
//!   report/     delta_by_bucket.csv delta_by_dilemma.csv entropy_by_bucket.csv
//!               rank_concentration.csv prevalence_<s>.csv foundations.csv summary.md
//! ```

mod commands;
mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use commands::*;
pub use config::{
    apply_override, ElicitOptions, IngestOptions, Paths, ProfileOptions, Providers, ReportOptions, ResolvedConfig,
    RunConfig, TaxonomyOptions, TaxonomySource,
};

use crate::corpus::CorpusError;
use crate::elicitation::{ElicitError, TemplateError};
use crate::metrics::MetricsError;
use crate::profiling::ProfilingError;
use crate::provider::{
    self, CachedProvider, CountingProvider, Provider, ProviderError, ProviderSpec, ResponseCache, RetryPolicy,
    RetryingProvider,
};
use crate::taxonomy::TaxonomyError;

pub const TOOL: &str = "pluralign";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {path} ({hint})")]
    MissingInput { path: String, hint: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown strategy {0:?}; expected one of zero_shot, persona_sampled, persona_inferred, panel, dmp, mft")]
    UnknownStrategy(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Elicit(#[from] ElicitError),
    #[error(transparent)]
    Profiling(#[from] ProfilingError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl PipelineError {
    pub fn io(path: &Path, e: impl ToString) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Provenance written at the top of every artifact. Contains no timestamps
/// so equal configs give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl Meta {
    pub fn new(command: &str, cfg: &ResolvedConfig) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: cfg.hash.clone(),
            seed: cfg.config.seed,
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.extra.insert(key.into(), value.into());
        self
    }

    /// `# tool version command=... config=... seed=... k=v` line.
    pub fn comment_line(&self, prefix: &str) -> String {
        let mut s = format!(
            "{prefix} {} {} command={} config={} seed={}",
            self.tool, self.version, self.command, self.config_hash, self.seed
        );
        for (k, v) in &self.extra {
            let _ = write!(s, " {k}={v}");
        }
        s.push('\n');
        s
    }
}

fn ensure_parent(path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    Ok(())
}

/// Writes via a temp file and rename so readers never see partial files.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    ensure_parent(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(path, e))?;
    std::io::Write::write_all(&mut tmp, contents.as_bytes()).map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path).map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, meta: &Meta, rows: &[T]) -> Result<(), PipelineError> {
    let mut out = serde_json::to_string(&serde_json::json!({ "_meta": meta })).expect("serialisable meta");
    out.push('\n');
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| PipelineError::io(path, e))?);
        out.push('\n');
    }
    write_atomic(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingInput {
            path: path.display().to_string(),
            hint: "produced by an earlier command".into(),
        });
    }
    Ok(crate::corpus::read_jsonl(path)?)
}

#[derive(Serialize, Deserialize)]
struct Wrapped<T> {
    #[serde(rename = "_meta")]
    meta: Meta,
    data: T,
}

pub fn write_json<T: Serialize>(path: &Path, meta: &Meta, data: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(&Wrapped {
        meta: meta.clone(),
        data,
    })
    .map_err(|e| PipelineError::io(path, e))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Reads a JSON artifact, with or without the metadata wrapper.
pub fn read_json<T: DeserializeOwned>(path: &Path, hint: &str) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
        path: path.display().to_string(),
        hint: hint.into(),
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| PipelineError::io(path, e))?;
    let payload = match value {
        serde_json::Value::Object(mut m) if m.contains_key("_meta") => m.remove("data").unwrap_or_default(),
        other => other,
    };
    serde_json::from_value(payload).map_err(|e| PipelineError::io(path, e))
}

/// CSV with a `#` metadata line.
pub fn write_csv(path: &Path, meta: &Meta, header: &[&str], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| PipelineError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| PipelineError::io(path, e))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| PipelineError::io(path, e))?).expect("utf-8 fields");
    write_atomic(path, &(meta.comment_line("#") + &body))
}

/// Rows of a CSV artifact as header-keyed maps.
pub fn read_csv(path: &Path, hint: &str) -> Result<Vec<BTreeMap<String, String>>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|_| PipelineError::MissingInput {
        path: path.display().to_string(),
        hint: hint.into(),
    })?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| PipelineError::io(path, e))?.clone();
    r.records()
        .map(|row| {
            let row = row.map_err(|e| PipelineError::io(path, e))?;
            Ok(header
                .iter()
                .map(String::from)
                .zip(row.iter().map(String::from))
                .collect())
        })
        .collect()
}

/// Fixed-precision float formatting for stable artifacts.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

type Counted = Arc<CountingProvider<RetryingProvider<Arc<dyn Provider>>>>;

/// Provider with retries inside and call counting below the optional
/// response cache, so the counter sees real calls only.
pub enum ProviderStack {
    Cached(CachedProvider<Counted>, Counted),
    Plain(Counted),
}

impl ProviderStack {
    /// Calls that reached the underlying provider.
    pub fn calls(&self) -> usize {
        match self {
            ProviderStack::Cached(_, c) | ProviderStack::Plain(c) => c.calls(),
        }
    }
}

impl Provider for ProviderStack {
    fn spec(&self) -> &ProviderSpec {
        match self {
            ProviderStack::Cached(p, _) => p.spec(),
            ProviderStack::Plain(p) => p.spec(),
        }
    }

    fn generate(&self, request: &provider::GenerationRequest) -> Result<String, ProviderError> {
        match self {
            ProviderStack::Cached(p, _) => p.generate(request),
            ProviderStack::Plain(p) => p.generate(request),
        }
    }
}

pub fn build_provider(spec: &ProviderSpec, cache_dir: Option<&PathBuf>) -> Result<ProviderStack, PipelineError> {
    let inner = provider::from_spec(spec)?;
    let counted = Arc::new(CountingProvider::new(RetryingProvider::new(
        inner,
        RetryPolicy::default(),
    )));
    Ok(match cache_dir {
        Some(dir) => {
            let cache = ResponseCache::open(dir.join("responses")).map_err(|e| PipelineError::io(dir, e))?;
            ProviderStack::Cached(CachedProvider::new(counted.clone(), cache), counted)
        }
        None => ProviderStack::Plain(counted),
    })
}
