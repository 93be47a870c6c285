//! Value taxonomy induction and rationale mapping.
//!
//! Raw value expressions are extracted from rationales, embedded, clustered
//! by average linkage, labelled by a provider and refined with an edit file.
//! The finished taxonomy maps any expression to a canonical value: members
//! by lookup, unseen expressions by nearest centroid under a distance cutoff.

mod cluster;
mod edits;
mod embed;

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{average_linkage, cluster_expressions, cut, silhouette, Clustering, DistanceMatrix, Merge};
pub use edits::{apply_edits, parse_edits, Edit};
pub use embed::{CachedEmbedder, Embedder, HashEmbedder};

use crate::elicitation::{fill_template, TemplateError};
use crate::provider::{GenerationRequest, Provider, ProviderError};
use crate::rng::content_hash;

pub const EXTRACT_TEMPLATE: &str = include_str!("../../templates/extract_values.txt");
pub const LABEL_TEMPLATE: &str = include_str!("../../templates/label_cluster.txt");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("embedding: {0}")]
    Embedding(String),
    #[error("degenerate clustering input: {0}")]
    Degenerate(String),
    #[error("edit line {line}: {message}")]
    Edit { line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("duplicate cluster label {0:?}")]
    DuplicateLabel(String),
    #[error("expression {0:?} belongs to more than one cluster")]
    DuplicateMember(String),
    #[error("provider returned an empty label for cluster {0}")]
    EmptyLabel(usize),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Canonical key for an expression: lowercase, trimmed, inner whitespace
/// collapsed.
pub fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueExpression {
    pub text: String,
    pub source: Source,
    pub rationale_id: String,
}

pub trait ValueExtractor: Send + Sync {
    /// Raw value phrases in one non-empty rationale.
    fn extract(&self, rationale: &str) -> Result<Vec<String>, TaxonomyError>;
}

/// Whole-word, case-insensitive phrase lookup.
#[derive(Debug, Clone)]
pub struct LexiconExtractor {
    phrases: Vec<(String, Vec<String>)>,
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

impl LexiconExtractor {
    pub fn new<S: AsRef<str>>(phrases: &[S]) -> Self {
        let mut phrases: Vec<(String, Vec<String>)> = phrases
            .iter()
            .map(|p| (normalize(p.as_ref()), words(p.as_ref())))
            .filter(|(_, w)| !w.is_empty())
            .collect();
        // longer phrases first so "respect for time" beats "respect"
        phrases.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));
        Self { phrases }
    }
}

impl ValueExtractor for LexiconExtractor {
    fn extract(&self, rationale: &str) -> Result<Vec<String>, TaxonomyError> {
        let toks = words(rationale);
        let mut used = vec![false; toks.len()];
        let mut hits: Vec<(usize, String)> = Vec::new();
        for (phrase, pw) in &self.phrases {
            let n = pw.len();
            let mut i = 0;
            while i + n <= toks.len() {
                if !used[i..i + n].iter().any(|&u| u) && toks[i..i + n] == pw[..] {
                    used[i..i + n].iter_mut().for_each(|u| *u = true);
                    hits.push((i, phrase.clone()));
                    i += n;
                } else {
                    i += 1;
                }
            }
        }
        hits.sort();
        let mut seen = BTreeSet::new();
        Ok(hits
            .into_iter()
            .map(|(_, p)| p)
            .filter(|p| seen.insert(p.clone()))
            .collect())
    }
}

/// Asks a provider to list the values in a rationale, one per line.
pub struct ProviderExtractor<'a> {
    provider: &'a dyn Provider,
    template: String,
}

impl<'a> ProviderExtractor<'a> {
    pub fn new(provider: &'a dyn Provider) -> Self {
        Self {
            provider,
            template: EXTRACT_TEMPLATE.to_string(),
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }
}

impl ValueExtractor for ProviderExtractor<'_> {
    fn extract(&self, rationale: &str) -> Result<Vec<String>, TaxonomyError> {
        let prompt = fill_template(&self.template, &[("rationale", rationale)])?;
        let reply = self.provider.generate(&GenerationRequest::new(prompt, 0))?;
        Ok(reply
            .lines()
            .map(|l| {
                l.trim()
                    .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '-' | '*' | '•' | '.' | ')'))
                    .trim()
                    .trim_end_matches([',', ';', '.'])
                    .trim()
                    .to_string()
            })
            .filter(|l| !l.is_empty())
            .collect())
    }
}

/// Expressions in one rationale, deduplicated by normalised text in order
/// of first appearance. An empty rationale yields nothing without calling
/// the extractor.
pub fn extract_values(
    rationale: &str,
    rationale_id: &str,
    source: Source,
    extractor: &dyn ValueExtractor,
) -> Result<Vec<ValueExpression>, TaxonomyError> {
    if rationale.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut seen = BTreeSet::new();
    Ok(extractor
        .extract(rationale)?
        .into_iter()
        .map(|t| normalize(&t))
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .map(|text| ValueExpression {
            text,
            source,
            rationale_id: rationale_id.to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueCluster {
    pub label: String,
    /// Normalised expression texts, sorted.
    pub members: Vec<String>,
}

/// Labelled partition of the expression set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueTaxonomy {
    pub clusters: Vec<ValueCluster>,
    pub version: String,
}

impl ValueTaxonomy {
    /// Validates non-empty clusters, unique labels and disjoint members;
    /// members are normalised and sorted.
    pub fn new(clusters: Vec<ValueCluster>) -> Result<Self, TaxonomyError> {
        let mut labels = BTreeSet::new();
        let mut members = BTreeSet::new();
        let mut out = Vec::with_capacity(clusters.len());
        for (i, c) in clusters.into_iter().enumerate() {
            if c.members.is_empty() {
                return Err(TaxonomyError::EmptyCluster(i));
            }
            if !labels.insert(c.label.clone()) {
                return Err(TaxonomyError::DuplicateLabel(c.label));
            }
            let mut ms: Vec<String> = c.members.iter().map(|m| normalize(m)).collect();
            ms.sort();
            ms.dedup();
            for m in &ms {
                if !members.insert(m.clone()) {
                    return Err(TaxonomyError::DuplicateMember(m.clone()));
                }
            }
            out.push(ValueCluster {
                label: c.label,
                members: ms,
            });
        }
        let canonical = serde_json::to_string(&out).expect("serialisable clusters");
        Ok(Self {
            version: content_hash([b"taxonomy".as_slice(), canonical.as_bytes()]),
            clusters: out,
        })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.clusters.iter().map(|c| c.label.clone()).collect()
    }

    pub fn cluster(&self, label: &str) -> Option<&ValueCluster> {
        self.clusters.iter().find(|c| c.label == label)
    }

    /// Label of the cluster owning `expression`.
    pub fn owner(&self, expression: &str) -> Option<&str> {
        let key = normalize(expression);
        self.clusters
            .iter()
            .find(|c| c.members.binary_search(&key).is_ok())
            .map(|c| c.label.as_str())
    }

    pub fn expression_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }
}

/// The 60 reference values, alphabetical.
pub const REFERENCE_VALUES: [&str; 60] = [
    "Aesthetics",
    "Animal Welfare",
    "Appreciation",
    "Artistic Integrity",
    "Autonomy",
    "Belonging",
    "Care",
    "Child Welfare",
    "Comfort",
    "Communication",
    "Community",
    "Compassion",
    "Conformity",
    "Consideration",
    "Convenience",
    "Creativity",
    "Cultural Respect",
    "Curiosity",
    "Discipline",
    "Efficiency",
    "Emotional Intelligence",
    "Enjoyment",
    "Ethics",
    "Family",
    "Forgiveness",
    "Freedom",
    "Friendship",
    "Happiness",
    "Harmony",
    "Honesty",
    "Inclusivity",
    "Individualism",
    "Integrity",
    "Justice",
    "Knowledge",
    "Loyalty",
    "Marital Respect",
    "Nonviolence",
    "Nurturing",
    "Parental Responsibility",
    "Pragmatism",
    "Privacy",
    "Property",
    "Punctuality",
    "Resilience",
    "Respect",
    "Respect for Time",
    "Responsibility",
    "Safety",
    "Self-Actualization",
    "Self-Reliance",
    "Sensitivity",
    "Solidarity",
    "Stability",
    "Sustainability",
    "Thoughtfulness",
    "Tradition",
    "Tranquility",
    "Welfare",
    "Well-being",
];

/// One cluster per reference value, whose only member is the lowercase
/// label.
pub fn reference_taxonomy() -> ValueTaxonomy {
    ValueTaxonomy::new(
        REFERENCE_VALUES
            .iter()
            .map(|v| ValueCluster {
                label: v.to_string(),
                members: vec![normalize(v)],
            })
            .collect(),
    )
    .expect("reference labels are unique")
}

/// Asks the provider for a short label per cluster, showing up to
/// `sample_size` members. Duplicate labels get a ` (2)`, ` (3)`... suffix and
/// a warning so they can be merged or renamed by an edit file.
pub fn label_clusters(
    groups: &[Vec<String>],
    provider: &dyn Provider,
    template: &str,
    sample_size: usize,
) -> Result<(ValueTaxonomy, Vec<String>), TaxonomyError> {
    let mut warnings = Vec::new();
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let mut clusters = Vec::with_capacity(groups.len());
    for (i, members) in groups.iter().enumerate() {
        if members.is_empty() {
            return Err(TaxonomyError::EmptyCluster(i));
        }
        let mut sample: Vec<&String> = members.iter().collect();
        sample.sort();
        sample.truncate(sample_size.max(1));
        let listing = sample.iter().map(|m| format!("- {m}")).collect::<Vec<_>>().join("\n");
        let prompt = fill_template(template, &[("members", &listing)])?;
        let reply = provider.generate(&GenerationRequest::new(prompt, 0))?;
        let mut label = reply
            .lines()
            .map(|l| {
                l.trim()
                    .trim_matches(|c: char| matches!(c, '"' | '\'' | '*' | '.' | '`'))
                    .trim()
            })
            .find(|l| !l.is_empty())
            .ok_or(TaxonomyError::EmptyLabel(i))?
            .to_string();
        let word_count = label.split_whitespace().count();
        if word_count > 3 {
            warnings.push(format!(
                "cluster {i}: label {label:?} has {word_count} words; truncated to three"
            ));
            label = label.split_whitespace().take(3).collect::<Vec<_>>().join(" ");
        }
        let seen = used.entry(label.clone()).or_insert(0);
        *seen += 1;
        if *seen > 1 {
            let renamed = format!("{label} ({seen})");
            warnings.push(format!(
                "cluster {i}: duplicate label {label:?} renamed to {renamed:?}; review with an edit"
            ));
            log::warn!("{}", warnings.last().expect("just pushed"));
            label = renamed;
        }
        clusters.push(ValueCluster {
            label,
            members: members.clone(),
        });
    }
    Ok((ValueTaxonomy::new(clusters)?, warnings))
}

/// Outcome of clustering and labelling a set of expressions.
#[derive(Debug, Clone)]
pub struct InducedTaxonomy {
    pub taxonomy: ValueTaxonomy,
    pub clustering: Clustering,
    pub warnings: Vec<String>,
}

/// Embeds the unique normalised expressions (sorted, so cluster ids and
/// tie-breaks follow expression order), clusters them and labels the best
/// cut.
pub fn induce_taxonomy(
    expressions: &[String],
    embedder: &dyn Embedder,
    k_range: RangeInclusive<usize>,
    labeler: &dyn Provider,
    label_template: &str,
    sample_size: usize,
) -> Result<InducedTaxonomy, TaxonomyError> {
    let unique: Vec<String> = expressions
        .iter()
        .map(|e| normalize(e))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = embedder.embed_batch(&unique)?;
    let clustering = cluster_expressions(&vectors, k_range)?;
    let groups: Vec<Vec<String>> = clustering
        .groups()
        .into_iter()
        .map(|g| g.into_iter().map(|i| unique[i].clone()).collect())
        .collect();
    let (taxonomy, warnings) = label_clusters(&groups, labeler, label_template, sample_size)?;
    Ok(InducedTaxonomy {
        taxonomy,
        clustering,
        warnings,
    })
}

/// Centroids and fallback cutoff for mapping unseen expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyIndex {
    pub labels: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    /// 90th percentile of member-to-centroid cosine distances.
    pub threshold: f64,
    pub version: String,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (ua, ub) = (unit(a), unit(b));
    (1.0 - ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>()).clamp(0.0, 2.0)
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl TaxonomyIndex {
    pub fn build(taxonomy: &ValueTaxonomy, embedder: &dyn Embedder) -> Result<Self, TaxonomyError> {
        let mut centroids = Vec::with_capacity(taxonomy.len());
        let mut distances = Vec::new();
        for c in &taxonomy.clusters {
            let vs: Vec<Vec<f64>> = embedder.embed_batch(&c.members)?.iter().map(|v| unit(v)).collect();
            let dim = vs[0].len();
            let mut centroid = vec![0.0; dim];
            for v in &vs {
                for (a, x) in centroid.iter_mut().zip(v) {
                    *a += x / vs.len() as f64;
                }
            }
            distances.extend(vs.iter().map(|v| cosine_distance(v, &centroid)));
            centroids.push(centroid);
        }
        Ok(Self {
            labels: taxonomy.labels(),
            centroids,
            threshold: quantile(&distances, 0.9),
            version: taxonomy.version.clone(),
        })
    }

    /// Nearest centroid label and its distance.
    pub fn nearest(&self, vector: &[f64]) -> Option<(&str, f64)> {
        self.labels
            .iter()
            .zip(&self.centroids)
            .map(|(l, c)| (l.as_str(), cosine_distance(vector, c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MappedRationale {
    /// Canonical values, one per mapped expression.
    pub values: Vec<String>,
    /// Expressions beyond the fallback cutoff, with their nearest distance.
    pub dropped: Vec<(String, f64)>,
}

/// Maps expressions to canonical values: members by lookup, others by
/// nearest centroid when within the index threshold.
pub fn map_rationale(
    expressions: &[String],
    taxonomy: &ValueTaxonomy,
    index: &TaxonomyIndex,
    embedder: &dyn Embedder,
) -> MappedRationale {
    let mut out = MappedRationale::default();
    for e in expressions {
        if let Some(label) = taxonomy.owner(e) {
            out.values.push(label.to_string());
            continue;
        }
        let nearest = embedder
            .embed(e)
            .ok()
            .and_then(|v| index.nearest(&v).map(|(l, d)| (l.to_string(), d)));
        match nearest {
            Some((label, d)) if d <= index.threshold => out.values.push(label),
            Some((_, d)) => {
                log::info!(
                    "expression {e:?} dropped: nearest centroid at {d:.3} > {:.3}",
                    index.threshold
                );
                out.dropped.push((e.clone(), d));
            }
            None => {
                log::info!("expression {e:?} dropped: no embedding");
                out.dropped.push((e.clone(), f64::INFINITY));
            }
        }
    }
    out
}
