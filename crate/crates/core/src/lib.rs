//! Toolkit for measuring distributional alignment between human and model
//! moral judgments, inducing a value taxonomy from free-text rationales, and
//! steering model elicitation with sampled value profiles drawn from
//! topic-level Dirichlet models.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: dilemma/judgment ingestion, label mapping, consensus levels,
//!   rephrasing and source-leak filtering.
//! - [`provider`]: the text-in/text-out generation interface with caching,
//!   retries, deterministic stubs and an HTTP client.
//! - [`elicitation`]: prompt templates, reply parsing, persona sampling and
//!   inference, single-model and panel elicitation.
//! - [`taxonomy`]: value extraction, embeddings, agglomerative clustering with
//!   silhouette selection, labeling, edit replay and rationale mapping.
//! - [`metrics`]: judgment distributions, alignment deltas, value
//!   distributions, entropy, concentration and prevalence gaps.
//! - [`profiling`]: base measure, topic Dirichlet models, value-profile
//!   sampling, profile-conditioned elicitation and the foundation baselines.
//! - [`pipeline`]: config handling and the CLI commands.
//! - [`synth`]: synthetic corpora with a known profile-to-verdict rule.

pub mod corpus;
pub mod elicitation;
pub mod metrics;
pub mod pipeline;
pub mod profiling;
pub mod provider;
pub mod rng;
pub mod synth;
pub mod taxonomy;

pub use corpus::{Bucket, ConsensusRecord, Dilemma, Judgment, RawLabel, Verdict};
pub use elicitation::{ParsedEvaluation, PromptKind};
pub use metrics::{JudgmentDistribution, ValueDistribution};
pub use profiling::{BaseMeasure, TopicProfileModel, ValueProfile};
pub use provider::{Provider, ProviderSpec};
pub use taxonomy::ValueTaxonomy;
