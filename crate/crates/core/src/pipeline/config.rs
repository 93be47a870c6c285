use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::metrics::CountMode;
use crate::profiling::{DrawMode, DEFAULT_ALPHA, DEFAULT_PROFILE_SIZE, DEFAULT_SMOOTHING};
use crate::provider::ProviderSpec;
use crate::rng::content_hash;

/// Single source of settings for every command. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for dilemma-level parallelism.
    pub workers: usize,
    pub paths: Paths,
    pub providers: Providers,
    pub ingest: IngestOptions,
    pub elicit: ElicitOptions,
    pub taxonomy: TaxonomyOptions,
    pub profiles: ProfileOptions,
    pub report: ReportOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 4,
            paths: Paths::default(),
            providers: Providers::default(),
            ingest: IngestOptions::default(),
            elicit: ElicitOptions::default(),
            taxonomy: TaxonomyOptions::default(),
            profiles: ProfileOptions::default(),
            report: ReportOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dilemmas: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    /// Directory overriding any of the prompt templates.
    pub templates: Option<PathBuf>,
    /// Root for the provider response cache and embedding cache.
    pub cache_dir: Option<PathBuf>,
    /// Subreddit score CSV for inferred personas.
    pub score_table: Option<PathBuf>,
    pub emfd_lexicon: Option<PathBuf>,
    /// `value,foundation` CSV; otherwise the `mapper` provider is asked.
    pub mft_mapping: Option<PathBuf>,
    /// Taxonomy edit file replayed after labelling.
    pub edits: Option<PathBuf>,
    /// One phrase per line for lexicon extraction; default: the reference
    /// value names.
    pub value_lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub model: ProviderSpec,
    pub panel: Vec<ProviderSpec>,
    /// Value extraction model; absent means lexicon lookup.
    pub extractor: Option<ProviderSpec>,
    pub labeler: Option<ProviderSpec>,
    pub rephraser: Option<ProviderSpec>,
    pub mapper: Option<ProviderSpec>,
}

impl Default for Providers {
    fn default() -> Self {
        Self {
            model: ProviderSpec::new("stub:acceptable"),
            panel: Vec::new(),
            extractor: None,
            labeler: None,
            rephraser: None,
            mapper: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub min_judgments: usize,
    /// Rewrite bodies with the rephraser and drop source-identifiable ones.
    pub rephrase: bool,
    pub leak_trials: usize,
    pub balance_per_bucket: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_judgments: 1,
            rephrase: false,
            leak_trials: 3,
            balance_per_bucket: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElicitOptions {
    /// Queries per dilemma; absent means the dilemma's human count.
    pub n: Option<usize>,
    /// Overrides the model spec's temperature.
    pub temperature: Option<f64>,
    /// Profile entries per query; 0 renders the full profile.
    pub profile_size: usize,
    pub prior_only: bool,
    pub draw_mode: DrawMode,
    pub attempts_per_slot: usize,
    /// Restrict to the ids chosen by `balance-buckets`.
    pub balanced: bool,
    /// Output label; default: the strategy name.
    pub label: Option<String>,
}

impl Default for ElicitOptions {
    fn default() -> Self {
        Self {
            n: None,
            temperature: None,
            profile_size: DEFAULT_PROFILE_SIZE,
            prior_only: false,
            draw_mode: DrawMode::default(),
            attempts_per_slot: 3,
            balanced: false,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomySource {
    /// The shipped 60-value reference taxonomy.
    #[default]
    Reference,
    /// Cluster and label the extracted expressions.
    Induce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomyOptions {
    pub source: TaxonomySource,
    pub k_min: usize,
    pub k_max: usize,
    pub embed_dim: usize,
    pub label_sample: usize,
    /// Also extract expressions from model transcripts.
    pub include_model: bool,
}

impl Default for TaxonomyOptions {
    fn default() -> Self {
        Self {
            source: TaxonomySource::default(),
            k_min: 2,
            k_max: 80,
            embed_dim: 256,
            label_sample: 20,
            include_model: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileOptions {
    pub alpha: f64,
    pub smoothing: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub entropy_mode: CountMode,
    pub k_norm: usize,
    pub top_k: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            entropy_mode: CountMode::default(),
            k_norm: 60,
            top_k: 10,
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a bare
/// string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `a.b.c=value` to a TOML table, creating tables on the way.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(PipelineError::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("override {key:?}: {part:?} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), override_value(raw.trim()));
    Ok(())
}

/// Loaded configuration plus the directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    /// Hash of the configuration as written, before path resolution.
    pub hash: String,
}

impl ResolvedConfig {
    /// Reads the optional config file, then applies overrides in order; the
    /// later assignment wins.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, PipelineError> {
        let (mut table, base_dir) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (table, dir)
            }
            None => (toml::Table::new(), PathBuf::from(".")),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        Self::new(config, base_dir)
    }

    pub fn new(config: RunConfig, base_dir: PathBuf) -> Result<Self, PipelineError> {
        if config.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        let canonical = serde_json::to_string(&config).expect("serialisable config");
        Ok(Self {
            hash: content_hash([canonical.as_bytes()])[..16].to_string(),
            config,
            base_dir,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out(&self) -> PathBuf {
        self.resolve(&self.config.out_dir)
    }

    /// Every configured input path must exist.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let p = &self.config.paths;
        let inputs = [
            ("paths.dilemmas", &p.dilemmas),
            ("paths.judgments", &p.judgments),
            ("paths.templates", &p.templates),
            ("paths.score_table", &p.score_table),
            ("paths.emfd_lexicon", &p.emfd_lexicon),
            ("paths.mft_mapping", &p.mft_mapping),
            ("paths.edits", &p.edits),
            ("paths.value_lexicon", &p.value_lexicon),
        ];
        for (key, path) in inputs {
            if let Some(path) = path {
                let full = self.resolve(path);
                if !full.exists() {
                    return Err(PipelineError::MissingInput {
                        path: full.display().to_string(),
                        hint: format!("set by {key}"),
                    });
                }
            }
        }
        Ok(())
    }
}
