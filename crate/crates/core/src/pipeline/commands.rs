use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_provider, fmt_f, fmt_opt, read_csv, read_json, read_jsonl, write_atomic, write_csv, write_json, write_jsonl,
    Meta, PipelineError, ProviderStack, ResolvedConfig, TaxonomySource,
};
use crate::corpus::{
    self, balance_buckets, consensus_records, load_corpus, map_labels, preprocess, Bucket, ConsensusRecord, Dilemma,
    Judgment, RawJudgment, Verdict, LEAK_CHECK_TEMPLATE, REPHRASE_TEMPLATE,
};
use crate::elicitation::{
    infer_persona, no_context, sample_persona, DemographicTable, ElicitError, ElicitOutcome, ElicitPolicy, Elicitor,
    PromptContext, PromptKind, PromptTemplates, ScoreTable, TranscriptRecord,
};
use crate::metrics::{
    delta_records, entropy_report, judgment_distribution, prevalence_gap, rank_concentration, stratified_alignment,
    topk_concentration, value_distribution, AlignmentReport, EntropyReport, JudgmentDistribution, ValueDistribution,
    GLOBAL_SCOPE,
};
use crate::profiling::mft::{emfd_score, mft_map_values, EmfdLexicon, Foundation, MftMapping, MAP_FOUNDATION_TEMPLATE};
use crate::profiling::{
    dmp_elicit, fit_base_measure, fit_topic_model, BaseMeasure, DrawMode, ProfileLogEntry, ProfilingError,
    TopicProfileModel,
};
use crate::provider::Provider;
use crate::rng;
use crate::taxonomy::{
    apply_edits, extract_values, induce_taxonomy, map_rationale, CachedEmbedder, Embedder, HashEmbedder,
    LexiconExtractor, ProviderExtractor, Source, TaxonomyIndex, ValueExpression, ValueExtractor, ValueTaxonomy,
    LABEL_TEMPLATE, REFERENCE_VALUES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    ZeroShot,
    PersonaSampled,
    PersonaInferred,
    Panel,
    Dmp,
    Mft,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::ZeroShot,
        Strategy::PersonaSampled,
        Strategy::PersonaInferred,
        Strategy::Panel,
        Strategy::Dmp,
        Strategy::Mft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::PersonaSampled => "persona_sampled",
            Strategy::PersonaInferred => "persona_inferred",
            Strategy::Panel => "panel",
            Strategy::Dmp => "dmp",
            Strategy::Mft => "mft",
        }
    }

    fn prompt_kind(self) -> PromptKind {
        match self {
            Strategy::ZeroShot | Strategy::Panel => PromptKind::ZeroShot,
            Strategy::PersonaSampled => PromptKind::PersonaSampled,
            Strategy::PersonaInferred => PromptKind::PersonaInferred,
            Strategy::Dmp | Strategy::Mft => PromptKind::ProfileConditioned,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownStrategy(s.to_string()))
    }
}

/// Corpus artifacts written by `ingest`.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dilemmas: Vec<Dilemma>,
    pub judgments: Vec<Judgment>,
    pub consensus: Vec<ConsensusRecord>,
}

impl Ingested {
    pub fn human_distributions(&self) -> Result<Vec<JudgmentDistribution>, PipelineError> {
        corpus::group_by_dilemma(&self.judgments)
            .into_iter()
            .map(|(id, js)| {
                let verdicts: Vec<Verdict> = js.iter().map(|j| j.verdict).collect();
                Ok(judgment_distribution(id, &verdicts, "human")?)
            })
            .collect()
    }
}

/// One mapped rationale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedRow {
    pub dilemma_id: String,
    pub rationale_id: String,
    pub topic: String,
    pub values: Vec<String>,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub command: String,
    pub lines: Vec<String>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}:", self.command)?;
        for l in &self.lines {
            writeln!(f, "  {l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElicitSummary {
    pub label: String,
    pub dilemmas: usize,
    pub rows: usize,
    pub quarantined: Vec<String>,
    pub provider_calls: usize,
}

impl fmt::Display for ElicitSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "elicit {}: {} dilemmas, {} transcript rows, {} quarantined, {} provider calls",
            self.label,
            self.dilemmas,
            self.rows,
            self.quarantined.len(),
            self.provider_calls
        )?;
        for id in &self.quarantined {
            writeln!(f, "  quarantined {id}")?;
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(row: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T, PipelineError> {
    row.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| PipelineError::io(path, format!("bad or missing column {key}")))
}

fn field<'r>(row: &'r BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'r str, PipelineError> {
    row.get(key)
        .map(String::as_str)
        .ok_or_else(|| PipelineError::io(path, format!("missing column {key}")))
}

fn consensus_rows(records: &[ConsensusRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|c| {
            vec![
                c.dilemma_id.clone(),
                fmt_f(c.level),
                c.bucket.label().to_string(),
                c.n_acceptable.to_string(),
                c.n.to_string(),
            ]
        })
        .collect()
}

const CONSENSUS_HEADER: [&str; 5] = ["dilemma_id", "level", "bucket", "n_acceptable", "n"];

fn read_consensus(path: &Path) -> Result<Vec<ConsensusRecord>, PipelineError> {
    read_csv(path, "run `pluralign ingest` first")?
        .iter()
        .map(|row| {
            let id = field(row, "dilemma_id", path)?;
            let a: usize = parse_num(row, "n_acceptable", path)?;
            let n: usize = parse_num(row, "n", path)?;
            if n == 0 || a > n {
                return Err(PipelineError::io(path, format!("bad counts for {id}")));
            }
            let majority = a.max(n - a);
            Ok(ConsensusRecord {
                dilemma_id: id.to_string(),
                level: majority as f64 / n as f64,
                bucket: Bucket::of_counts(majority, n),
                n_acceptable: a,
                n,
            })
        })
        .collect()
}

fn read_distributions(path: &Path, source: &str) -> Result<Vec<JudgmentDistribution>, PipelineError> {
    read_csv(path, "run `pluralign elicit` first")?
        .iter()
        .map(|row| {
            let a: usize = parse_num(row, "n_acceptable", path)?;
            let n: usize = parse_num(row, "n", path)?;
            Ok(JudgmentDistribution {
                dilemma_id: field(row, "dilemma_id", path)?.to_string(),
                p_acceptable: a as f64 / n.max(1) as f64,
                n_acceptable: a,
                n,
                source: source.to_string(),
            })
        })
        .collect()
}

/// Lexicon lookup or a provider, behind one extractor interface.
enum ExtractorSource {
    Lexicon(LexiconExtractor),
    Provider(ProviderStack),
}

impl ExtractorSource {
    fn get(&self) -> Box<dyn ValueExtractor + '_> {
        match self {
            ExtractorSource::Lexicon(l) => Box::new(l.clone()),
            ExtractorSource::Provider(p) => Box::new(ProviderExtractor::new(p)),
        }
    }
}

/// A configured run: resolved config plus loaded templates.
pub struct Run {
    pub cfg: ResolvedConfig,
    templates: PromptTemplates,
    pool: rayon::ThreadPool,
}

impl Run {
    pub fn new(cfg: ResolvedConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let templates = match &cfg.config.paths.templates {
            Some(dir) => PromptTemplates::load_dir(&cfg.resolve(dir))?,
            None => PromptTemplates::default(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.config.workers)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self { cfg, templates, pool })
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out().join(rel)
    }

    fn meta(&self, command: &str) -> Meta {
        Meta::new(command, &self.cfg)
    }

    fn cache_dir(&self) -> Option<PathBuf> {
        self.cfg.config.paths.cache_dir.as_ref().map(|p| self.cfg.resolve(p))
    }

    fn required(&self, key: &str, p: &Option<PathBuf>) -> Result<PathBuf, PipelineError> {
        p.as_ref()
            .map(|p| self.cfg.resolve(p))
            .ok_or_else(|| PipelineError::MissingInput {
                path: key.to_string(),
                hint: "not set in the config".into(),
            })
    }

    fn provider(&self, spec: &crate::provider::ProviderSpec) -> Result<ProviderStack, PipelineError> {
        build_provider(spec, self.cache_dir().as_ref())
    }

    // ---- ingest -------------------------------------------------------

    pub fn cmd_ingest(&self) -> Result<Summary, PipelineError> {
        let c = &self.cfg.config;
        let dpath = self.required("paths.dilemmas", &c.paths.dilemmas)?;
        let jpath = self.required("paths.judgments", &c.paths.judgments)?;
        let loaded = load_corpus(&dpath, &jpath)?;
        let mapping = map_labels(&loaded.judgments);
        let mut lines = vec![
            format!(
                "{} dilemmas, {} raw judgments",
                loaded.dilemmas.len(),
                loaded.judgments.len()
            ),
            format!(
                "{} judgments kept, {} dropped as non-binary",
                mapping.judgments.len(),
                mapping.dropped
            ),
        ];
        let mut warnings = loaded.warnings.clone();
        warnings.extend(mapping.warnings.iter().cloned());

        let mut dilemmas = loaded.dilemmas.clone();
        if c.ingest.rephrase {
            let spec = c
                .providers
                .rephraser
                .as_ref()
                .ok_or_else(|| PipelineError::Config("ingest.rephrase needs providers.rephraser".into()))?;
            let provider = self.provider(spec)?;
            let outcome = self.pool.install(|| {
                preprocess(
                    &dilemmas,
                    &provider,
                    REPHRASE_TEMPLATE,
                    LEAK_CHECK_TEMPLATE,
                    c.ingest.leak_trials,
                )
            });
            lines.push(format!(
                "rephrased {}; {} leaky, {} failed",
                outcome.kept.len(),
                outcome.leaky.len(),
                outcome.failed.len()
            ));
            warnings.extend(
                outcome
                    .leaky
                    .iter()
                    .map(|id| format!("{id}: source identifiable after rephrasing; dropped")),
            );
            warnings.extend(
                outcome
                    .failed
                    .iter()
                    .map(|(id, e)| format!("{id}: rephrasing failed: {e}")),
            );
            dilemmas = outcome.kept;
        }

        let kept_ids: BTreeSet<&str> = dilemmas.iter().map(|d| d.id.as_str()).collect();
        let mut judgments: Vec<Judgment> = mapping
            .judgments
            .iter()
            .filter(|j| kept_ids.contains(j.dilemma_id.as_str()))
            .cloned()
            .collect();
        judgments.sort_by(|a, b| a.dilemma_id.cmp(&b.dilemma_id));
        let consensus = consensus_records(&judgments, c.ingest.min_judgments);
        let with_consensus: BTreeSet<&str> = consensus.iter().map(|r| r.dilemma_id.as_str()).collect();
        dilemmas.retain(|d| with_consensus.contains(d.id.as_str()));
        dilemmas.sort_by(|a, b| a.id.cmp(&b.id));
        judgments.retain(|j| with_consensus.contains(j.dilemma_id.as_str()));
        lines.push(format!("{} dilemmas with consensus records", dilemmas.len()));

        let meta = self.meta("ingest");
        write_jsonl(&self.out("corpus/dilemmas.jsonl"), &meta, &dilemmas)?;
        let raw: Vec<RawJudgment> = judgments.iter().map(Judgment::to_raw).collect();
        write_jsonl(&self.out("corpus/judgments.jsonl"), &meta, &raw)?;
        write_csv(
            &self.out("corpus/consensus.csv"),
            &meta,
            &CONSENSUS_HEADER,
            &consensus_rows(&consensus),
        )?;
        let mut text = meta.comment_line("#");
        for w in &warnings {
            text.push_str(w);
            text.push('\n');
        }
        write_atomic(&self.out("corpus/warnings.txt"), &text)?;
        lines.push(format!("{} warnings", warnings.len()));
        Ok(Summary {
            command: "ingest".into(),
            lines,
        })
    }

    pub fn load_ingested(&self) -> Result<Ingested, PipelineError> {
        let dilemmas: Vec<Dilemma> = read_jsonl(&self.out("corpus/dilemmas.jsonl"))?;
        let raw: Vec<RawJudgment> = read_jsonl(&self.out("corpus/judgments.jsonl"))?;
        let consensus = read_consensus(&self.out("corpus/consensus.csv"))?;
        Ok(Ingested {
            dilemmas,
            judgments: map_labels(&raw).judgments,
            consensus,
        })
    }

    // ---- balance-buckets ------------------------------------------------

    pub fn cmd_balance(&self) -> Result<Summary, PipelineError> {
        let consensus = read_consensus(&self.out("corpus/consensus.csv"))?;
        let per = self.cfg.config.ingest.balance_per_bucket;
        let balanced = balance_buckets(&consensus, per, self.cfg.config.seed);
        let meta = self
            .meta("balance-buckets")
            .with("per_bucket", per.map_or("min".to_string(), |p| p.to_string()));
        write_csv(
            &self.out("corpus/balanced.csv"),
            &meta,
            &CONSENSUS_HEADER,
            &consensus_rows(&balanced),
        )?;
        let mut lines = vec![format!("{} of {} dilemmas selected", balanced.len(), consensus.len())];
        for b in Bucket::ALL {
            let n = balanced.iter().filter(|r| r.bucket == b).count();
            lines.push(format!("{}: {n}", b.label()));
        }
        Ok(Summary {
            command: "balance-buckets".into(),
            lines,
        })
    }

    // ---- elicit -------------------------------------------------------

    pub fn strategy_label(&self, strategy: Strategy) -> String {
        let e = &self.cfg.config.elicit;
        match &e.label {
            Some(l) => l.clone(),
            None if e.prior_only && matches!(strategy, Strategy::Dmp | Strategy::Mft) => format!("{strategy}_prior"),
            None => strategy.to_string(),
        }
    }

    fn load_models(&self, file: &str) -> Result<BTreeMap<String, TopicProfileModel>, PipelineError> {
        let models: BTreeMap<String, TopicProfileModel> = read_json(
            &self.out(file),
            "no fitted topic models; run `pluralign fit-profiles` first",
        )?;
        let e = &self.cfg.config.elicit;
        let mode = if e.prior_only { DrawMode::PriorOnly } else { e.draw_mode };
        Ok(models.into_iter().map(|(t, m)| (t, m.with_draw_mode(mode))).collect())
    }

    pub fn cmd_elicit(&self, strategy: Strategy) -> Result<ElicitSummary, PipelineError> {
        let c = &self.cfg.config;
        let ingested = self.load_ingested()?;
        let label = self.strategy_label(strategy);
        let selection: Vec<ConsensusRecord> = if c.elicit.balanced {
            read_consensus(&self.out("corpus/balanced.csv"))?
        } else {
            ingested.consensus.clone()
        };
        let by_id: BTreeMap<&str, &Dilemma> = ingested.dilemmas.iter().map(|d| (d.id.as_str(), d)).collect();
        let humans = corpus::group_by_dilemma(&ingested.judgments);

        let mut spec = c.providers.model.clone();
        if let Some(t) = c.elicit.temperature {
            spec.temperature = t;
        }
        let provider = self.provider(&spec)?;
        let panel: Vec<ProviderStack> = if strategy == Strategy::Panel {
            if c.providers.panel.is_empty() {
                return Err(PipelineError::Config("strategy panel needs providers.panel".into()));
            }
            c.providers
                .panel
                .iter()
                .map(|s| self.provider(s))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };
        let models = match strategy {
            Strategy::Dmp => self.load_models("profiles/topic_models.json")?,
            Strategy::Mft => self.load_models("profiles/mft_topic_models.json")?,
            _ => BTreeMap::new(),
        };
        let demographics = match strategy {
            Strategy::PersonaSampled => Some(
                DemographicTable::from_judgments(&ingested.judgments)
                    .map_err(|e| PipelineError::Config(format!("persona table: {e}")))?,
            ),
            _ => None,
        };
        let scores = match strategy {
            Strategy::PersonaInferred => {
                let path = self.required("paths.score_table", &c.paths.score_table)?;
                Some(ScoreTable::load_csv(&path).map_err(|e| PipelineError::io(&path, e))?)
            }
            _ => None,
        };

        let elicitor = Elicitor::new(&self.templates, strategy.prompt_kind())
            .with_strategy(label.clone())
            .with_policy(ElicitPolicy {
                attempts_per_slot: c.elicit.attempts_per_slot.max(1),
                ..ElicitPolicy::default()
            });
        let profile_size = (c.elicit.profile_size > 0).then_some(c.elicit.profile_size);
        let seed = c.seed;

        struct Done {
            records: Vec<TranscriptRecord>,
            distribution: Option<JudgmentDistribution>,
            profiles: Vec<ProfileLogEntry>,
            error: Option<String>,
        }
        let fail = |records: Vec<TranscriptRecord>, e: String| Done {
            records,
            distribution: None,
            profiles: Vec::new(),
            error: Some(e),
        };
        let finish = |o: ElicitOutcome, profiles: Vec<ProfileLogEntry>| Done {
            records: o.records,
            distribution: Some(o.distribution),
            profiles,
            error: None,
        };
        let from_elicit = |r: Result<ElicitOutcome, ElicitError>| match r {
            Ok(o) => finish(o, Vec::new()),
            Err(ElicitError::Partial { records, .. }) => {
                let msg = r_msg(&records);
                fail(records, msg)
            }
            Err(e) => fail(Vec::new(), e.to_string()),
        };
        fn r_msg(records: &[TranscriptRecord]) -> String {
            format!("parse budget exhausted after {} successful evaluations", records.len())
        }

        let run_one = |rec: &ConsensusRecord| -> Done {
            let Some(d) = by_id.get(rec.dilemma_id.as_str()) else {
                return fail(Vec::new(), "dilemma missing from corpus".into());
            };
            let n = c.elicit.n.unwrap_or(rec.n);
            match strategy {
                Strategy::ZeroShot => from_elicit(elicitor.elicit_distribution(d, n, &provider, &mut no_context())),
                Strategy::PersonaSampled => {
                    let table = demographics.as_ref().expect("built above");
                    let mut stream = rng::substream(seed, &format!("persona/{}", d.id));
                    let mut sampler = |_slot: usize| {
                        sample_persona(table, &mut stream)
                            .map(PromptContext::Persona)
                            .map_err(|e| ElicitError::Context(e.to_string()))
                    };
                    from_elicit(elicitor.elicit_distribution(d, n, &provider, &mut sampler))
                }
                Strategy::PersonaInferred => {
                    let table = scores.as_ref().expect("loaded above");
                    let personas: Vec<_> = humans
                        .get(d.id.as_str())
                        .into_iter()
                        .flatten()
                        .filter_map(|j| j.author_meta.subreddit_counts.as_ref())
                        .filter_map(|counts| infer_persona(counts, table).ok())
                        .collect();
                    if personas.is_empty() {
                        return fail(Vec::new(), "no human author overlaps the score table".into());
                    }
                    let mut sampler = |slot: usize| Ok(PromptContext::Inferred(personas[slot % personas.len()]));
                    from_elicit(elicitor.elicit_distribution(d, n, &provider, &mut sampler))
                }
                Strategy::Panel => {
                    let pool: Vec<&dyn Provider> = panel.iter().map(|p| p as &dyn Provider).collect();
                    let mut stream = rng::substream(seed, &format!("panel/{}", d.id));
                    from_elicit(elicitor.panel_elicit(d, n, &pool, &mut stream, &mut no_context()))
                }
                Strategy::Dmp | Strategy::Mft => {
                    let Some(model) = models.get(&d.topic) else {
                        return fail(Vec::new(), ProfilingError::MissingModel(d.topic.clone()).to_string());
                    };
                    match dmp_elicit(&elicitor, d, n, model, &provider, profile_size, seed) {
                        Ok(o) => finish(o.elicitation, o.profile_log),
                        Err(ProfilingError::Elicit(ElicitError::Partial { records, .. })) => {
                            let msg = r_msg(&records);
                            fail(records, msg)
                        }
                        Err(e) => fail(Vec::new(), e.to_string()),
                    }
                }
            }
        };
        let done: Vec<Done> = self.pool.install(|| selection.par_iter().map(run_one).collect());

        let mut records = Vec::new();
        let mut dist_rows = Vec::new();
        let mut quarantine_rows = Vec::new();
        let mut profiles = Vec::new();
        let mut quarantined = Vec::new();
        for (rec, d) in selection.iter().zip(done) {
            records.extend(d.records);
            profiles.extend(d.profiles);
            if let Some(dist) = d.distribution {
                dist_rows.push(vec![
                    dist.dilemma_id.clone(),
                    fmt_f(dist.p_acceptable),
                    dist.n_acceptable.to_string(),
                    dist.n.to_string(),
                ]);
            }
            if let Some(e) = d.error {
                log::warn!("{}: quarantined: {e}", rec.dilemma_id);
                quarantine_rows.push(vec![rec.dilemma_id.clone(), e]);
                quarantined.push(rec.dilemma_id.clone());
            }
        }
        let dir = format!("elicit/{label}");
        let meta = self
            .meta("elicit")
            .with("strategy", strategy.as_str())
            .with("label", label.clone())
            .with("provider", spec.name.clone());
        write_jsonl(&self.out(&format!("{dir}/transcripts.jsonl")), &meta, &records)?;
        write_csv(
            &self.out(&format!("{dir}/distributions.csv")),
            &meta,
            &["dilemma_id", "p_acceptable", "n_acceptable", "n"],
            &dist_rows,
        )?;
        write_csv(
            &self.out(&format!("{dir}/quarantine.csv")),
            &meta,
            &["dilemma_id", "error"],
            &quarantine_rows,
        )?;
        if matches!(strategy, Strategy::Dmp | Strategy::Mft) {
            write_jsonl(&self.out(&format!("{dir}/profiles.jsonl")), &meta, &profiles)?;
        }
        let provider_calls = provider.calls() + panel.iter().map(ProviderStack::calls).sum::<usize>();
        Ok(ElicitSummary {
            label,
            dilemmas: selection.len(),
            rows: records.len(),
            quarantined,
            provider_calls,
        })
    }

    // ---- fit-taxonomy -------------------------------------------------

    fn extractor_source(&self) -> Result<ExtractorSource, PipelineError> {
        let c = &self.cfg.config;
        if let Some(spec) = &c.providers.extractor {
            return Ok(ExtractorSource::Provider(self.provider(spec)?));
        }
        let phrases: Vec<String> = match &c.paths.value_lexicon {
            Some(p) => {
                let path = self.cfg.resolve(p);
                std::fs::read_to_string(&path)
                    .map_err(|e| PipelineError::io(&path, e))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_string)
                    .collect()
            }
            None => REFERENCE_VALUES.iter().map(|s| s.to_string()).collect(),
        };
        Ok(ExtractorSource::Lexicon(LexiconExtractor::new(&phrases)))
    }

    /// Runs `f` with the configured embedder; the on-disk cache is flushed
    /// afterwards.
    fn with_embedder<R>(&self, f: impl FnOnce(&dyn Embedder) -> Result<R, PipelineError>) -> Result<R, PipelineError> {
        let inner = HashEmbedder::new(self.cfg.config.taxonomy.embed_dim);
        match self.cache_dir() {
            Some(dir) => {
                let cached = CachedEmbedder::open(inner, &dir.join("embeddings"))?;
                let out = f(&cached)?;
                cached.flush()?;
                Ok(out)
            }
            None => f(&inner),
        }
    }

    /// Extracts expressions from `(rationale_id, text)` pairs in parallel;
    /// output order follows input order.
    fn extract_all(
        &self,
        items: &[(String, String)],
        source: Source,
        extractor: &dyn ValueExtractor,
    ) -> Result<Vec<Vec<ValueExpression>>, PipelineError> {
        self.pool.install(|| {
            items
                .par_iter()
                .map(|(id, text)| extract_values(text, id, source, extractor).map_err(PipelineError::from))
                .collect()
        })
    }

    fn human_rationales(ingested: &Ingested) -> Vec<(String, String, String, String)> {
        let topics: BTreeMap<&str, &str> = ingested
            .dilemmas
            .iter()
            .map(|d| (d.id.as_str(), d.topic.as_str()))
            .collect();
        let mut out = Vec::new();
        for (id, js) in corpus::group_by_dilemma(&ingested.judgments) {
            for (i, j) in js.iter().enumerate() {
                if !j.verdict_only && !j.rationale.trim().is_empty() {
                    out.push((
                        id.to_string(),
                        format!("{id}#h{i}"),
                        topics.get(id).copied().unwrap_or_default().to_string(),
                        j.rationale.clone(),
                    ));
                }
            }
        }
        out
    }

    fn elicited_labels(&self) -> Result<Vec<String>, PipelineError> {
        let dir = self.out("elicit");
        let Ok(entries) = std::fs::read_dir(&dir) else {
            return Ok(Vec::new());
        };
        let mut labels: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join("distributions.csv").exists())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .collect();
        labels.sort();
        Ok(labels)
    }

    pub fn cmd_fit_taxonomy(&self) -> Result<Summary, PipelineError> {
        let c = &self.cfg.config;
        let ingested = self.load_ingested()?;
        let holder = self.extractor_source()?;
        let extractor = holder.get();
        let humans = Self::human_rationales(&ingested);
        let items: Vec<(String, String)> = humans.iter().map(|(_, rid, _, t)| (rid.clone(), t.clone())).collect();
        let human_exprs = self.extract_all(&items, Source::Human, extractor.as_ref())?;
        let mut all: Vec<ValueExpression> = human_exprs.iter().flatten().cloned().collect();
        if c.taxonomy.include_model {
            for label in self.elicited_labels()? {
                let transcripts: Vec<TranscriptRecord> =
                    read_jsonl(&self.out(&format!("elicit/{label}/transcripts.jsonl")))?;
                let items: Vec<(String, String)> = transcripts
                    .iter()
                    .map(|r| (format!("{label}/{}#{}", r.dilemma_id, r.slot), r.rationale.clone()))
                    .collect();
                all.extend(
                    self.extract_all(&items, Source::Model, extractor.as_ref())?
                        .into_iter()
                        .flatten(),
                );
            }
        }
        let meta = self.meta("fit-taxonomy");
        write_jsonl(&self.out("taxonomy/expressions.jsonl"), &meta, &all)?;
        let mut lines = vec![format!(
            "{} expressions from {} human rationales",
            all.len(),
            humans.len()
        )];

        let (taxonomy, index, human_rows) = self.with_embedder(|embedder| {
            let mut taxonomy = match c.taxonomy.source {
                TaxonomySource::Reference => crate::taxonomy::reference_taxonomy(),
                TaxonomySource::Induce => {
                    let spec = c.providers.labeler.as_ref().ok_or_else(|| {
                        PipelineError::Config("taxonomy.source = induce needs providers.labeler".into())
                    })?;
                    let labeler = self.provider(spec)?;
                    let texts: Vec<String> = all.iter().map(|e| e.text.clone()).collect();
                    let induced = induce_taxonomy(
                        &texts,
                        embedder,
                        c.taxonomy.k_min..=c.taxonomy.k_max,
                        &labeler,
                        LABEL_TEMPLATE,
                        c.taxonomy.label_sample,
                    )?;
                    let rows: Vec<Vec<String>> = induced
                        .clustering
                        .scores
                        .iter()
                        .map(|(k, s)| vec![k.to_string(), fmt_f(*s)])
                        .collect();
                    write_csv(&self.out("taxonomy/silhouette.csv"), &meta, &["k", "silhouette"], &rows)?;
                    lines.push(format!(
                        "best k = {} (silhouette {:.4})",
                        induced.clustering.k, induced.clustering.silhouette
                    ));
                    lines.extend(induced.warnings.iter().cloned());
                    induced.taxonomy
                }
            };
            if let Some(p) = &c.paths.edits {
                let path = self.cfg.resolve(p);
                let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
                taxonomy = apply_edits(&taxonomy, &text)?;
                lines.push(format!("edits applied; {} clusters", taxonomy.len()));
            }
            let index = TaxonomyIndex::build(&taxonomy, embedder)?;
            let rows: Vec<MappedRow> = humans
                .iter()
                .zip(&human_exprs)
                .map(|((did, rid, topic, _), exprs)| {
                    let texts: Vec<String> = exprs.iter().map(|e| e.text.clone()).collect();
                    let m = map_rationale(&texts, &taxonomy, &index, embedder);
                    MappedRow {
                        dilemma_id: did.clone(),
                        rationale_id: rid.clone(),
                        topic: topic.clone(),
                        values: m.values,
                        dropped: m.dropped.into_iter().map(|(e, _)| e).collect(),
                    }
                })
                .collect();
            Ok((taxonomy, index, rows))
        })?;
        let meta = meta.with("taxonomy", taxonomy.version.clone());
        write_json(&self.out("taxonomy/taxonomy.json"), &meta, &taxonomy)?;
        write_json(&self.out("taxonomy/index.json"), &meta, &index)?;
        write_jsonl(&self.out("taxonomy/human_values.jsonl"), &meta, &human_rows)?;
        let dropped: usize = human_rows.iter().map(|r| r.dropped.len()).sum();
        lines.push(format!(
            "{} values in taxonomy {}",
            taxonomy.len(),
            &taxonomy.version[..12]
        ));
        lines.push(format!("{dropped} expressions beyond the fallback threshold"));
        Ok(Summary {
            command: "fit-taxonomy".into(),
            lines,
        })
    }

    fn load_taxonomy(&self) -> Result<ValueTaxonomy, PipelineError> {
        read_json(
            &self.out("taxonomy/taxonomy.json"),
            "run `pluralign fit-taxonomy` first",
        )
    }

    // ---- fit-profiles -------------------------------------------------

    fn topic_counts<'a>(
        rows: impl IntoIterator<Item = (&'a str, Vec<String>)>,
    ) -> BTreeMap<String, BTreeMap<String, u64>> {
        let mut out: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for (topic, values) in rows {
            let entry = out.entry(topic.to_string()).or_default();
            for v in values.into_iter().collect::<BTreeSet<_>>() {
                *entry.entry(v).or_default() += 1;
            }
        }
        out
    }

    pub fn cmd_fit_profiles(&self) -> Result<Summary, PipelineError> {
        let c = &self.cfg.config;
        let taxonomy = self.load_taxonomy()?;
        let rows: Vec<MappedRow> = read_jsonl(&self.out("taxonomy/human_values.jsonl"))?;
        let labels = taxonomy.labels();
        let base = fit_base_measure(&labels, rows.iter().map(|r| r.values.iter()), c.profiles.smoothing)?;
        let counts = Self::topic_counts(rows.iter().map(|r| (r.topic.as_str(), r.values.clone())));
        let models = fit_models(&base, &counts, c.profiles.alpha)?;
        let meta = self.meta("fit-profiles").with("taxonomy", taxonomy.version.clone());
        write_json(&self.out("profiles/base_measure.json"), &meta, &base)?;
        write_json(&self.out("profiles/topic_models.json"), &meta, &models)?;
        let mut lines = vec![format!(
            "base measure over {} values from {} rationales; {} topic models",
            labels.len(),
            base.n_rationales,
            models.len()
        )];

        let mapping = match (&c.paths.mft_mapping, &c.providers.mapper) {
            (Some(p), _) => Some(MftMapping::load(&self.cfg.resolve(p))?),
            (None, Some(spec)) => {
                let mapper = self.provider(spec)?;
                Some(mft_map_values(&labels, &mapper, MAP_FOUNDATION_TEMPLATE, 3)?)
            }
            (None, None) => None,
        };
        match mapping {
            Some(mapping) => {
                let missing: Vec<String> = labels.iter().filter(|l| mapping.get(l).is_none()).cloned().collect();
                if !missing.is_empty() {
                    return Err(ProfilingError::IncompleteMapping(missing).into());
                }
                let foundations = Foundation::names();
                let mapped: Vec<(&str, Vec<String>)> = rows
                    .iter()
                    .map(|r| {
                        (
                            r.topic.as_str(),
                            mapping.foundations_of(r.values.iter().map(String::as_str)),
                        )
                    })
                    .collect();
                let fbase = fit_base_measure(&foundations, mapped.iter().map(|(_, f)| f.iter()), c.profiles.smoothing)?;
                let fcounts = Self::topic_counts(mapped.iter().map(|(t, f)| (*t, f.clone())));
                let fmodels = fit_models(&fbase, &fcounts, c.profiles.alpha)?;
                write_atomic(
                    &self.out("profiles/mft_mapping.csv"),
                    &(meta.comment_line("#") + &mapping.to_csv()),
                )?;
                write_json(&self.out("profiles/mft_base_measure.json"), &meta, &fbase)?;
                write_json(&self.out("profiles/mft_topic_models.json"), &meta, &fmodels)?;
                lines.push(format!("foundation models for {} topics", fmodels.len()));
            }
            None => lines.push("no foundation mapping configured; mft models skipped".into()),
        }
        Ok(Summary {
            command: "fit-profiles".into(),
            lines,
        })
    }

    // ---- report -------------------------------------------------------

    /// Per-dilemma value lists for one strategy's transcripts.
    fn model_values(
        &self,
        label: &str,
        taxonomy: &ValueTaxonomy,
        index: &TaxonomyIndex,
        extractor: &dyn ValueExtractor,
    ) -> Result<Vec<MappedRow>, PipelineError> {
        let transcripts: Vec<TranscriptRecord> = read_jsonl(&self.out(&format!("elicit/{label}/transcripts.jsonl")))?;
        let items: Vec<(String, String)> = transcripts
            .iter()
            .map(|r| (format!("{label}/{}#{}", r.dilemma_id, r.slot), r.rationale.clone()))
            .collect();
        let exprs = self.extract_all(&items, Source::Model, extractor)?;
        self.with_embedder(|embedder| {
            Ok(transcripts
                .iter()
                .zip(items)
                .zip(exprs)
                .map(|((r, (rid, _)), ex)| {
                    let texts: Vec<String> = ex.into_iter().map(|e| e.text).collect();
                    let m = map_rationale(&texts, taxonomy, index, embedder);
                    MappedRow {
                        dilemma_id: r.dilemma_id.clone(),
                        rationale_id: rid,
                        topic: String::new(),
                        values: m.values,
                        dropped: m.dropped.into_iter().map(|(e, _)| e).collect(),
                    }
                })
                .collect())
        })
    }

    pub fn cmd_report(&self) -> Result<Summary, PipelineError> {
        let c = &self.cfg.config;
        let ingested = self.load_ingested()?;
        let labels = self.elicited_labels()?;
        if labels.is_empty() {
            return Err(PipelineError::MissingInput {
                path: self.out("elicit").display().to_string(),
                hint: "no model distributions; run `pluralign elicit` first".into(),
            });
        }
        let meta = self.meta("report").with("strategies", labels.join(","));
        let human = ingested.human_distributions()?;
        let consensus = &ingested.consensus;
        let bucket_of: BTreeMap<&str, Bucket> = consensus.iter().map(|r| (r.dilemma_id.as_str(), r.bucket)).collect();

        let mut reports: Vec<AlignmentReport> = Vec::new();
        let mut quarantined: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        for label in &labels {
            let model = read_distributions(&self.out(&format!("elicit/{label}/distributions.csv")), label)?;
            let deltas = delta_records(&human, &model)?;
            reports.push(stratified_alignment(&deltas, consensus, label)?);
            let qpath = self.out(&format!("elicit/{label}/quarantine.csv"));
            let q = if qpath.exists() {
                read_csv(&qpath, "")?
            } else {
                Vec::new()
            };
            quarantined.insert(
                label.clone(),
                q.iter()
                    .map(|r| {
                        (
                            r.get("dilemma_id").cloned().unwrap_or_default(),
                            r.get("error").cloned().unwrap_or_default(),
                        )
                    })
                    .collect(),
            );
        }

        // Δ by bucket, side by side
        let mut header: Vec<String> = vec!["bucket".into()];
        for l in &labels {
            header.push(format!("{l}_mean_delta"));
            header.push(format!("{l}_n"));
        }
        let mut rows = Vec::new();
        for b in Bucket::ALL {
            let mut row = vec![b.label().to_string()];
            for r in &reports {
                let s = &r.buckets[b.index()];
                row.push(fmt_opt(s.mean));
                row.push(s.n.to_string());
            }
            rows.push(row);
        }
        let mut all_row = vec!["all".to_string()];
        for r in &reports {
            all_row.push(fmt_opt(r.mean_delta));
            all_row.push(r.rows.len().to_string());
        }
        rows.push(all_row);
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&self.out("report/delta_by_bucket.csv"), &meta, &h, &rows)?;

        // per-dilemma rows
        let mut header: Vec<String> = vec!["dilemma_id".into(), "bucket".into(), "p_human".into()];
        for l in &labels {
            header.push(format!("p_{l}"));
            header.push(format!("delta_{l}"));
        }
        let per_label: Vec<BTreeMap<&str, (f64, f64)>> = reports
            .iter()
            .map(|r| {
                r.rows
                    .iter()
                    .map(|s| (s.record.dilemma_id.as_str(), (s.record.p_model, s.record.delta)))
                    .collect()
            })
            .collect();
        let rows: Vec<Vec<String>> = human
            .iter()
            .filter_map(|hd| {
                let b = bucket_of.get(hd.dilemma_id.as_str())?;
                let mut row = vec![hd.dilemma_id.clone(), b.label().to_string(), fmt_f(hd.p_acceptable)];
                for m in &per_label {
                    match m.get(hd.dilemma_id.as_str()) {
                        Some((p, d)) => {
                            row.push(fmt_f(*p));
                            row.push(fmt_f(*d));
                        }
                        None => row.extend([String::new(), String::new()]),
                    }
                }
                Some(row)
            })
            .collect();
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&self.out("report/delta_by_dilemma.csv"), &meta, &h, &rows)?;

        let mut md = meta.comment_line("<!--").trim_end().to_string() + " -->\n# Alignment report\n\n";
        md.push_str("## Mean absolute difference by consensus bucket\n\n| bucket |");
        for l in &labels {
            let _ = write!(md, " {l} |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(labels.len()));
        md.push('\n');
        for b in Bucket::ALL {
            let _ = write!(md, "| {} |", b.label());
            for r in &reports {
                let _ = write!(
                    md,
                    " {} |",
                    r.bucket_mean(b).map_or("n/a".to_string(), |m| format!("{m:.4}"))
                );
            }
            md.push('\n');
        }
        md.push_str("| all |");
        for r in &reports {
            let _ = write!(
                md,
                " {} |",
                r.mean_delta.map_or("n/a".to_string(), |m| format!("{m:.4}"))
            );
        }
        md.push_str("\n\n");
        for r in &reports {
            let un = r.unpopulated();
            if !un.is_empty() {
                let names: Vec<&str> = un.iter().map(|b| b.label()).collect();
                let _ = writeln!(md, "- {}: unpopulated buckets {}", r.source, names.join(" "));
            }
        }
        for (label, q) in &quarantined {
            for (id, e) in q {
                let _ = writeln!(md, "- {label}: quarantined {id} ({e})");
            }
        }

        let mut lines: Vec<String> = reports
            .iter()
            .map(|r| format!("{}: mean delta {}", r.source, fmt_opt(r.mean_delta)))
            .collect();

        // value reports need a taxonomy
        match self.load_taxonomy() {
            Ok(taxonomy) => {
                let value_lines = self.value_reports(&taxonomy, &labels, &ingested, &meta, &mut md)?;
                lines.extend(value_lines);
            }
            Err(PipelineError::MissingInput { .. }) => {
                md.push_str("\nValue reports skipped: no taxonomy (run `pluralign fit-taxonomy`).\n");
                lines.push("value reports skipped: no taxonomy".into());
            }
            Err(e) => return Err(e),
        }
        if let Some(p) = &c.paths.emfd_lexicon {
            let lexicon = EmfdLexicon::load_csv(&self.cfg.resolve(p))?;
            self.foundation_report(&lexicon, &labels, &ingested, &meta)?;
            lines.push("foundation scores written".into());
        }
        write_atomic(&self.out("report/summary.md"), &md)?;
        Ok(Summary {
            command: "report".into(),
            lines,
        })
    }

    fn value_reports(
        &self,
        taxonomy: &ValueTaxonomy,
        labels: &[String],
        ingested: &Ingested,
        meta: &Meta,
        md: &mut String,
    ) -> Result<Vec<String>, PipelineError> {
        let c = &self.cfg.config;
        let mode = c.report.entropy_mode;
        let index: TaxonomyIndex = read_json(&self.out("taxonomy/index.json"), "run `pluralign fit-taxonomy` first")?;
        let holder = self.extractor_source()?;
        let extractor = holder.get();
        let human_rows: Vec<MappedRow> = read_jsonl(&self.out("taxonomy/human_values.jsonl"))?;

        let per_dilemma = |rows: &[MappedRow], source: &str| -> Vec<ValueDistribution> {
            let mut grouped: BTreeMap<&str, Vec<&Vec<String>>> = BTreeMap::new();
            for r in rows {
                grouped.entry(r.dilemma_id.as_str()).or_default().push(&r.values);
            }
            grouped
                .into_iter()
                .map(|(id, vs)| value_distribution(id, source, vs.into_iter().map(|v| v.iter()), mode))
                .collect()
        };
        let global = |dists: &[ValueDistribution], source: &str| {
            let mut g = ValueDistribution::from_counts(GLOBAL_SCOPE, source, BTreeMap::new());
            dists.iter().for_each(|d| g.merge(d));
            g
        };
        let consensus_ids: BTreeSet<&str> = ingested.consensus.iter().map(|r| r.dilemma_id.as_str()).collect();

        let mut sources: Vec<(String, Vec<ValueDistribution>)> =
            vec![("human".into(), per_dilemma(&human_rows, "human"))];
        for label in labels {
            let rows = self.model_values(label, taxonomy, &index, extractor.as_ref())?;
            write_jsonl(&self.out(&format!("report/values_{label}.jsonl")), meta, &rows)?;
            sources.push((label.clone(), per_dilemma(&rows, label)));
        }
        let mut entropy: Vec<EntropyReport> = Vec::new();
        let mut globals: Vec<ValueDistribution> = Vec::new();
        for (name, dists) in &mut sources {
            dists.retain(|d| consensus_ids.contains(d.scope.as_str()));
            entropy.push(entropy_report(dists, &ingested.consensus, c.report.k_norm, name)?);
            globals.push(global(dists, name));
        }

        let names: Vec<&str> = sources.iter().map(|(n, _)| n.as_str()).collect();
        let mut header = vec!["bucket".to_string()];
        for n in &names {
            header.push(format!("{n}_mean_entropy"));
            header.push(format!("{n}_n"));
        }
        let mut rows = Vec::new();
        for b in Bucket::ALL {
            let mut row = vec![b.label().to_string()];
            for e in &entropy {
                row.push(fmt_opt(e.buckets[b.index()].mean));
                row.push(e.buckets[b.index()].n.to_string());
            }
            rows.push(row);
        }
        let mut all_row = vec!["all".to_string()];
        for e in &entropy {
            all_row.push(fmt_opt(e.mean_entropy));
            all_row.push(e.rows.len().to_string());
        }
        rows.push(all_row);
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&self.out("report/entropy_by_bucket.csv"), meta, &h, &rows)?;

        let curves: Vec<Vec<f64>> = globals.iter().map(rank_concentration).collect();
        let max_rank = curves.iter().map(Vec::len).max().unwrap_or(0);
        let mut header = vec!["rank".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        let rows: Vec<Vec<String>> = (0..max_rank)
            .map(|i| {
                let mut row = vec![(i + 1).to_string()];
                row.extend(curves.iter().map(|c| c.get(i).map(|x| fmt_f(*x)).unwrap_or_default()));
                row
            })
            .collect();
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(&self.out("report/rank_concentration.csv"), meta, &h, &rows)?;

        let k = c.report.top_k;
        let mut lines = Vec::new();
        let _ = writeln!(
            md,
            "\n## Value diversity\n\n| source | mean entropy | top-{k} share | distinct values |\n|---|---|---|---|"
        );
        let mut conc_rows = Vec::new();
        for ((name, g), e) in names.iter().zip(&globals).zip(&entropy) {
            let top = topk_concentration(g, k).ok();
            let _ = writeln!(
                md,
                "| {name} | {} | {} | {} |",
                e.mean_entropy.map_or("n/a".into(), |x| format!("{x:.4}")),
                top.map_or("n/a".into(), |x| format!("{x:.4}")),
                g.counts.len()
            );
            conc_rows.push(vec![
                name.to_string(),
                fmt_opt(e.mean_entropy),
                fmt_opt(top),
                g.counts.len().to_string(),
                e.empty.len().to_string(),
            ]);
            lines.push(format!(
                "{name}: mean entropy {}, top-{k} share {}",
                fmt_opt(e.mean_entropy),
                fmt_opt(top)
            ));
        }
        let topk_col = format!("top{k}_share");
        write_csv(
            &self.out("report/concentration.csv"),
            meta,
            &["source", "mean_entropy", &topk_col, "distinct_values", "empty_dilemmas"],
            &conc_rows,
        )?;

        for (label, g) in labels.iter().zip(&globals[1..]) {
            let gap = prevalence_gap(&globals[0], g);
            let mut rows: Vec<Vec<String>> = gap
                .ranked
                .iter()
                .map(|r| {
                    vec![
                        r.rank.to_string(),
                        r.value.clone(),
                        fmt_f(r.f_human),
                        fmt_f(r.f_model),
                        format!("{:.2}", r.gap_pct),
                        "ranked".into(),
                    ]
                })
                .collect();
            rows.extend(gap.model_absent.iter().map(|(v, fh)| {
                vec![
                    String::new(),
                    v.clone(),
                    fmt_f(*fh),
                    fmt_f(0.0),
                    String::new(),
                    "model_absent".into(),
                ]
            }));
            write_csv(
                &self.out(&format!("report/prevalence_{label}.csv")),
                meta,
                &["rank", "value", "f_human", "f_model", "gap_pct", "status"],
                &rows,
            )?;
        }
        Ok(lines)
    }

    fn foundation_report(
        &self,
        lexicon: &EmfdLexicon,
        labels: &[String],
        ingested: &Ingested,
        meta: &Meta,
    ) -> Result<(), PipelineError> {
        let mut sources: Vec<(String, Vec<String>)> = vec![(
            "human".into(),
            Self::human_rationales(ingested)
                .into_iter()
                .map(|(_, _, _, t)| t)
                .collect(),
        )];
        for label in labels {
            let ts: Vec<TranscriptRecord> = read_jsonl(&self.out(&format!("elicit/{label}/transcripts.jsonl")))?;
            sources.push((label.clone(), ts.into_iter().map(|r| r.rationale).collect()));
        }
        let mut rows = Vec::new();
        for (name, texts) in &sources {
            let scores: Vec<_> = texts.iter().map(|t| emfd_score(t, lexicon)).collect();
            let dists: Vec<[f64; 6]> = scores.iter().filter_map(|s| s.distribution()).collect();
            for f in Foundation::ALL {
                let share =
                    (!dists.is_empty()).then(|| dists.iter().map(|d| d[f.index()]).sum::<f64>() / dists.len() as f64);
                let mention = (!scores.is_empty())
                    .then(|| scores.iter().filter(|s| s.mentioned().contains(&f)).count() as f64 / scores.len() as f64);
                rows.push(vec![
                    name.clone(),
                    f.name().to_string(),
                    fmt_opt(share),
                    fmt_opt(mention),
                    dists.len().to_string(),
                ]);
            }
        }
        write_csv(
            &self.out("report/foundations.csv"),
            meta,
            &["source", "foundation", "mean_share", "mention_rate", "n_scored"],
            &rows,
        )
    }
}

fn fit_models(
    base: &BaseMeasure,
    counts: &BTreeMap<String, BTreeMap<String, u64>>,
    alpha: f64,
) -> Result<BTreeMap<String, TopicProfileModel>, PipelineError> {
    counts
        .iter()
        .map(|(topic, c)| Ok((topic.clone(), fit_topic_model(topic, base, c, alpha)?)))
        .collect()
}
