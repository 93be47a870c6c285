//! Dynamic moral profiling.
//!
//! A global base measure over taxonomy values is estimated from human
//! rationales. Each topic gets a Dirichlet model centred on that base and
//! updated with the topic's human mention counts. Every model query is
//! conditioned on a fresh value profile: the top entries of one Dirichlet
//! draw, renormalised.
//!
//! The same machinery runs over the six moral foundations for the
//! foundation-based baselines in [`mft`].

mod dirichlet;
pub mod mft;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dirichlet::{dirichlet_draw, dirichlet_log_draw};

use crate::corpus::Dilemma;
use crate::elicitation::{ElicitError, ElicitOutcome, Elicitor, PromptContext, PromptKind, PromptTemplates};
use crate::provider::Provider;
use crate::rng;

pub const DEFAULT_ALPHA: f64 = 10.0;
pub const DEFAULT_SMOOTHING: f64 = 1e-3;
pub const DEFAULT_PROFILE_SIZE: usize = 3;

#[derive(Debug, Error)]
pub enum ProfilingError {
    #[error("no rationale mentions any taxonomy value")]
    NoMappedValues,
    #[error("value {0:?} is not in the category set")]
    UnknownValue(String),
    #[error("concentration must be finite and positive, got {0}")]
    BadAlpha(f64),
    #[error("smoothing must be finite and nonnegative, got {0}")]
    BadSmoothing(f64),
    #[error("Dirichlet shapes must be finite and positive")]
    BadShape,
    #[error("Dirichlet draw was not finite after a retry")]
    NonFinite,
    #[error("dilemma {dilemma} has topic {dilemma_topic:?} but the model is for {model_topic:?}")]
    TopicMismatch {
        dilemma: String,
        dilemma_topic: String,
        model_topic: String,
    },
    #[error("no topic model for topic {0:?}; run fit-profiles first")]
    MissingModel(String),
    #[error("invalid profile: {0}")]
    BadProfile(String),
    #[error(transparent)]
    Elicit(#[from] ElicitError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("foundation reply {0:?} names none of the six foundations")]
    BadFoundation(String),
    #[error("value {value:?}: {source}")]
    Provider {
        value: String,
        #[source]
        source: crate::provider::ProviderError,
    },
    #[error("mapping lacks values {0:?}")]
    IncompleteMapping(Vec<String>),
}

/// Global prior over the category set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    /// Smoothed, renormalised probabilities; keys are the full category set.
    pub probs: BTreeMap<String, f64>,
    /// Fraction of rationales mentioning each category, before smoothing.
    pub frequency: BTreeMap<String, f64>,
    pub n_rationales: usize,
    pub smoothing: f64,
}

impl BaseMeasure {
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.probs.keys().map(String::as_str)
    }

    pub fn uniform<S: AsRef<str>>(categories: &[S]) -> Self {
        let p = 1.0 / categories.len() as f64;
        let probs: BTreeMap<String, f64> = categories.iter().map(|c| (c.as_ref().to_string(), p)).collect();
        Self {
            frequency: probs.clone(),
            probs,
            n_rationales: 0,
            smoothing: 0.0,
        }
    }
}

/// Fraction of rationales mentioning each category plus `smoothing`,
/// renormalised to sum to one. Rationales are sets: repeats count once.
pub fn fit_base_measure<R, V, S>(
    categories: &[String],
    rationales: R,
    smoothing: f64,
) -> Result<BaseMeasure, ProfilingError>
where
    R: IntoIterator<Item = V>,
    V: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if !smoothing.is_finite() || smoothing < 0.0 {
        return Err(ProfilingError::BadSmoothing(smoothing));
    }
    let mut hits: BTreeMap<String, u64> = categories.iter().map(|c| (c.clone(), 0)).collect();
    let mut n_rationales = 0;
    let mut mentions = 0u64;
    for rationale in rationales {
        n_rationales += 1;
        let unique: BTreeSet<String> = rationale.into_iter().map(|s| s.as_ref().to_string()).collect();
        for v in unique {
            match hits.get_mut(&v) {
                Some(h) => *h += 1,
                None => return Err(ProfilingError::UnknownValue(v)),
            }
            mentions += 1;
        }
    }
    if mentions == 0 {
        return Err(ProfilingError::NoMappedValues);
    }
    let frequency: BTreeMap<String, f64> = hits
        .iter()
        .map(|(v, &h)| (v.clone(), h as f64 / n_rationales as f64))
        .collect();
    let total: f64 = frequency.values().map(|f| f + smoothing).sum();
    let probs = frequency
        .iter()
        .map(|(v, f)| (v.clone(), (f + smoothing) / total))
        .collect();
    Ok(BaseMeasure {
        probs,
        frequency,
        n_rationales,
        smoothing,
    })
}

/// Dirichlet shape used when drawing from a topic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// `alpha * G0 + counts`.
    Posterior,
    /// `alpha * G0`, ignoring topic counts.
    PriorOnly,
    /// `alpha * mean`, where `mean` is the posterior mean: draws are centred
    /// on the topic data but keep the prior's concentration.
    #[default]
    Tempered,
}

/// Per-topic Dirichlet model with parameters `alpha * G0 + counts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopicModelFile", into = "TopicModelFile")]
pub struct TopicProfileModel {
    topic: String,
    alpha: f64,
    base: BTreeMap<String, f64>,
    counts: BTreeMap<String, u64>,
    draw_mode: DrawMode,
    values: Vec<String>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TopicModelFile {
    topic: String,
    alpha: f64,
    #[serde(rename = "G0")]
    g0: BTreeMap<String, f64>,
    counts: BTreeMap<String, u64>,
    #[serde(default)]
    draw_mode: DrawMode,
}

impl TryFrom<TopicModelFile> for TopicProfileModel {
    type Error = ProfilingError;

    fn try_from(f: TopicModelFile) -> Result<Self, Self::Error> {
        Self::from_parts(f.topic, f.g0, f.counts, f.alpha, f.draw_mode)
    }
}

impl From<TopicProfileModel> for TopicModelFile {
    fn from(m: TopicProfileModel) -> Self {
        Self {
            topic: m.topic,
            alpha: m.alpha,
            g0: m.base,
            counts: m.counts,
            draw_mode: m.draw_mode,
        }
    }
}

impl TopicProfileModel {
    fn from_parts(
        topic: String,
        base: BTreeMap<String, f64>,
        counts: BTreeMap<String, u64>,
        alpha: f64,
        draw_mode: DrawMode,
    ) -> Result<Self, ProfilingError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ProfilingError::BadAlpha(alpha));
        }
        if let Some(v) = counts.keys().find(|v| !base.contains_key(*v)) {
            return Err(ProfilingError::UnknownValue(v.clone()));
        }
        let values: Vec<String> = base.keys().cloned().collect();
        let params: Vec<f64> = values
            .iter()
            .map(|v| alpha * base[v] + counts.get(v).copied().unwrap_or(0) as f64)
            .collect();
        if params.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(ProfilingError::BadShape);
        }
        let counts = counts.into_iter().filter(|(_, c)| *c > 0).collect();
        Ok(Self {
            topic,
            alpha,
            base,
            counts,
            draw_mode,
            values,
            params,
        })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn base(&self) -> &BTreeMap<String, f64> {
        &self.base
    }

    pub fn draw_mode(&self) -> DrawMode {
        self.draw_mode
    }

    pub fn with_draw_mode(mut self, mode: DrawMode) -> Self {
        self.draw_mode = mode;
        self
    }

    /// Category names, in the order used by [`Self::params`] and draws.
    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_map(&self) -> BTreeMap<String, f64> {
        self.values.iter().cloned().zip(self.params.iter().copied()).collect()
    }

    /// Posterior mean `params / sum(params)`.
    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.params.iter().sum();
        self.params.iter().map(|p| p / total).collect()
    }

    /// Shape of the Dirichlet that draws are taken from.
    pub fn draw_shape(&self) -> Vec<f64> {
        match self.draw_mode {
            DrawMode::Posterior => self.params.clone(),
            DrawMode::PriorOnly => self.values.iter().map(|v| self.alpha * self.base[v]).collect(),
            DrawMode::Tempered => self.mean().into_iter().map(|m| self.alpha * m).collect(),
        }
    }
}

pub fn fit_topic_model(
    topic: &str,
    base: &BaseMeasure,
    counts: &BTreeMap<String, u64>,
    alpha: f64,
) -> Result<TopicProfileModel, ProfilingError> {
    TopicProfileModel::from_parts(
        topic.to_string(),
        base.probs.clone(),
        counts.clone(),
        alpha,
        DrawMode::default(),
    )
}

/// One Dirichlet draw from the model, keyed by category.
pub fn sample_topic_distribution<R: Rng + ?Sized>(
    model: &TopicProfileModel,
    rng: &mut R,
) -> Result<BTreeMap<String, f64>, ProfilingError> {
    let theta = dirichlet_draw(&model.draw_shape(), rng)?;
    Ok(model.values.iter().cloned().zip(theta).collect())
}

/// Top entries of one value distribution, renormalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueProfile {
    entries: Vec<(String, f64)>,
}

impl ValueProfile {
    /// Validates distinct names, positive weights summing to one (within
    /// 1e-9); entries are stored by descending weight, ties by name.
    pub fn new(mut entries: Vec<(String, f64)>) -> Result<Self, ProfilingError> {
        if entries.is_empty() {
            return Err(ProfilingError::BadProfile("no entries".into()));
        }
        let names: BTreeSet<&String> = entries.iter().map(|(v, _)| v).collect();
        if names.len() != entries.len() {
            return Err(ProfilingError::BadProfile("duplicate values".into()));
        }
        if entries.iter().any(|(_, w)| !w.is_finite() || *w <= 0.0) {
            return Err(ProfilingError::BadProfile("weights must be positive".into()));
        }
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ProfilingError::BadProfile(format!("weights sum to {total}")));
        }
        sort_desc(&mut entries);
        Ok(Self { entries })
    }

    /// The `k` largest of `log_weights` (ties by name), renormalised. Works
    /// in log space so tiny draws keep positive weights; entries whose
    /// weight still underflows are dropped.
    pub fn top_k_log(log_weights: &[(String, f64)], k: usize) -> Result<Self, ProfilingError> {
        let mut ranked: Vec<(String, f64)> = log_weights.to_vec();
        sort_desc(&mut ranked);
        ranked.truncate(k.max(1));
        let top = ranked
            .first()
            .map(|(_, l)| *l)
            .ok_or_else(|| ProfilingError::BadProfile("no entries".into()))?;
        let mut entries: Vec<(String, f64)> = ranked.into_iter().map(|(v, l)| (v, (l - top).exp())).collect();
        let total: f64 = entries.iter().map(|(_, w)| w).sum();
        for e in &mut entries {
            e.1 /= total;
        }
        entries.retain(|(_, w)| *w > 0.0);
        Ok(Self { entries })
    }

    pub fn top_k(weights: &[(String, f64)], k: usize) -> Result<Self, ProfilingError> {
        if weights.iter().any(|(_, w)| !w.is_finite() || *w < 0.0) || weights.iter().all(|(_, w)| *w == 0.0) {
            return Err(ProfilingError::BadProfile(
                "weights must be nonnegative with positive mass".into(),
            ));
        }
        let logs: Vec<(String, f64)> = weights.iter().map(|(v, w)| (v.clone(), w.ln())).collect();
        Self::top_k_log(&logs, k)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self) -> &str {
        &self.entries[0].0
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(v, _)| v.as_str())
    }

    /// One `Value (0.500)` line per entry.
    pub fn render_lines(&self) -> String {
        let mut out = String::new();
        for (i, (v, w)) in self.entries.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = write!(out, "{v} ({w:.3})");
        }
        out
    }
}

fn sort_desc(entries: &mut [(String, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Number of profile entries; `None` keeps the full draw.
pub fn sample_profile<R: Rng + ?Sized>(
    model: &TopicProfileModel,
    size: Option<usize>,
    rng: &mut R,
) -> Result<ValueProfile, ProfilingError> {
    let logs = dirichlet_log_draw(&model.draw_shape(), rng)?;
    let named: Vec<(String, f64)> = model.values.iter().cloned().zip(logs).collect();
    let k = size.unwrap_or(named.len());
    ValueProfile::top_k_log(&named, k)
}

/// One line of the profile log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileLogEntry {
    pub dilemma_id: String,
    pub draw_index: u64,
    pub profile: Vec<(String, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DmpOutcome {
    pub elicitation: ElicitOutcome,
    pub profile_log: Vec<ProfileLogEntry>,
}

/// Profile-conditioned elicitation: each of the `n` queries gets an
/// independently sampled profile. Randomness comes from a substream of
/// `seed` keyed by the dilemma id.
pub fn dmp_elicit(
    elicitor: &Elicitor<'_>,
    d: &Dilemma,
    n: usize,
    model: &TopicProfileModel,
    provider: &dyn Provider,
    profile_size: Option<usize>,
    seed: u64,
) -> Result<DmpOutcome, ProfilingError> {
    if d.topic != model.topic {
        return Err(ProfilingError::TopicMismatch {
            dilemma: d.id.clone(),
            dilemma_topic: d.topic.clone(),
            model_topic: model.topic.clone(),
        });
    }
    let mut stream = rng::substream(seed, &format!("profile/{}", d.id));
    let mut sampler = |_slot: usize| {
        sample_profile(model, profile_size, &mut stream)
            .map(PromptContext::Profile)
            .map_err(|e| ElicitError::Context(e.to_string()))
    };
    let elicitation = elicitor.elicit_distribution(d, n, provider, &mut sampler)?;
    let profile_log = elicitation
        .records
        .iter()
        .map(|r| ProfileLogEntry {
            dilemma_id: r.dilemma_id.clone(),
            draw_index: r.draw_index,
            profile: match &r.context {
                Some(PromptContext::Profile(p)) => p.entries().to_vec(),
                _ => Vec::new(),
            },
            seed,
        })
        .collect();
    Ok(DmpOutcome {
        elicitation,
        profile_log,
    })
}

/// Elicitor preset for profile-conditioned prompting.
pub fn dmp_elicitor(templates: &PromptTemplates) -> Elicitor<'_> {
    Elicitor::new(templates, PromptKind::ProfileConditioned).with_strategy("dmp")
}
