//! Prompt rendering, reply parsing and model elicitation.
//!
//! A dilemma with `n` human judgments is put to a model `n` times; each
//! successful parse contributes one verdict to the model distribution.

mod parse;
mod persona;
mod prompt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_evaluation, FailureReason, ParseFailure, ParsedEvaluation};
pub use persona::{
    infer_persona, sample_persona, DemographicTable, InferredPersona, PersonaError, PersonaSpec, ScoreTable,
    SubredditScore,
};
pub use prompt::{fill_template, render_prompt, PromptContext, PromptKind, PromptTemplates, TemplateError};

use crate::corpus::{Dilemma, Verdict};
use crate::metrics::{judgment_distribution, JudgmentDistribution};
use crate::provider::{GenerationRequest, Provider, ProviderError};

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("dilemma {dilemma_id}: {source}")]
    Provider {
        dilemma_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("dilemma {dilemma_id}: only {successes} of {needed} evaluations parsed ({discards} discarded replies, {redraws} re-drawn slots)")]
    Partial {
        dilemma_id: String,
        successes: usize,
        needed: usize,
        discards: usize,
        redraws: usize,
        records: Vec<TranscriptRecord>,
    },
    #[error("provider pool is empty")]
    EmptyPool,
    #[error("dilemma {0}: every provider in the pool failed")]
    PoolExhausted(String),
    #[error("elicitation needs at least one query")]
    ZeroCount,
    #[error("context sampling failed: {0}")]
    Context(String),
}

/// Parse-failure handling: each slot gets `attempts_per_slot` queries; a
/// slot that never parses is re-drawn with a fresh context, at most
/// `max_redraws` times per dilemma (default: `n`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElicitPolicy {
    pub attempts_per_slot: usize,
    pub max_redraws: Option<usize>,
}

impl Default for ElicitPolicy {
    fn default() -> Self {
        Self {
            attempts_per_slot: 3,
            max_redraws: None,
        }
    }
}

/// One line of the elicitation transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub dilemma_id: String,
    pub strategy: String,
    pub slot: usize,
    pub draw_index: u64,
    pub provider: String,
    pub verdict: Verdict,
    pub rationale: String,
    pub raw_reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<PromptContext>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discard {
    pub slot: usize,
    pub draw_index: u64,
    pub provider: String,
    pub failure: ParseFailure,
}

#[derive(Debug, Clone)]
pub struct ElicitOutcome {
    pub records: Vec<TranscriptRecord>,
    pub discards: Vec<Discard>,
    pub redraws: usize,
    pub warnings: Vec<String>,
    pub distribution: JudgmentDistribution,
}

/// Decides which provider answers each slot.
trait Picker {
    fn initial(&mut self, slot: usize) -> usize;
    /// Replacement after a provider error; `None` propagates the error.
    fn replace(&mut self, failed: usize) -> Option<usize>;
}

struct Single;

impl Picker for Single {
    fn initial(&mut self, _slot: usize) -> usize {
        0
    }

    fn replace(&mut self, _failed: usize) -> Option<usize> {
        None
    }
}

struct Panel<'r, R: Rng + ?Sized> {
    assignment: Vec<usize>,
    healthy: Vec<bool>,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> Picker for Panel<'_, R> {
    fn initial(&mut self, slot: usize) -> usize {
        let assigned = self.assignment[slot];
        if self.healthy[assigned] {
            assigned
        } else {
            self.replace(assigned).unwrap_or(assigned)
        }
    }

    fn replace(&mut self, failed: usize) -> Option<usize> {
        self.healthy[failed] = false;
        let live: Vec<usize> = (0..self.healthy.len()).filter(|&i| self.healthy[i]).collect();
        live.choose(self.rng).copied()
    }
}

/// Context for one slot, e.g. a sampled persona or value profile.
pub type ContextSampler<'a> = dyn FnMut(usize) -> Result<PromptContext, ElicitError> + 'a;

pub struct Elicitor<'a> {
    pub templates: &'a PromptTemplates,
    pub kind: PromptKind,
    pub policy: ElicitPolicy,
    /// Label written into transcripts and distributions.
    pub strategy: String,
}

impl<'a> Elicitor<'a> {
    pub fn new(templates: &'a PromptTemplates, kind: PromptKind) -> Self {
        Self {
            templates,
            kind,
            policy: ElicitPolicy::default(),
            strategy: kind.to_string(),
        }
    }

    pub fn with_strategy(mut self, strategy: impl Into<String>) -> Self {
        self.strategy = strategy.into();
        self
    }

    pub fn with_policy(mut self, policy: ElicitPolicy) -> Self {
        self.policy = policy;
        self
    }

    fn run(
        &self,
        d: &Dilemma,
        n: usize,
        pool: &[&dyn Provider],
        picker: &mut dyn Picker,
        contexts: &mut ContextSampler<'_>,
    ) -> Result<ElicitOutcome, ElicitError> {
        if n == 0 {
            return Err(ElicitError::ZeroCount);
        }
        let max_redraws = self.policy.max_redraws.unwrap_or(n);
        let attempts_per_slot = self.policy.attempts_per_slot.max(1);
        let mut records = Vec::with_capacity(n);
        let mut discards = Vec::new();
        let mut warnings = Vec::new();
        let mut redraws = 0;
        let mut draw: u64 = 0;

        while records.len() < n {
            let slot = records.len();
            let context = contexts(slot)?;
            let prompt = render_prompt(self.templates, self.kind, d, &context)?;
            let mut who = picker.initial(slot);
            let mut attempts = 0;
            let mut parsed = None;
            while attempts < attempts_per_slot {
                let request = GenerationRequest::new(prompt.clone(), draw);
                draw += 1;
                match pool[who].generate(&request) {
                    Ok(reply) => match parse_evaluation(&reply) {
                        Ok(p) => {
                            parsed = Some((p, request.draw_index));
                            break;
                        }
                        Err(failure) => {
                            log::debug!("{}: slot {slot} reply did not parse", d.id);
                            discards.push(Discard {
                                slot,
                                draw_index: request.draw_index,
                                provider: pool[who].name().to_string(),
                                failure,
                            });
                            attempts += 1;
                        }
                    },
                    Err(source) => match picker.replace(who) {
                        Some(next) => {
                            let msg = format!(
                                "{}: provider {} failed ({source}); re-drawing from the pool",
                                d.id,
                                pool[who].name()
                            );
                            log::warn!("{msg}");
                            warnings.push(msg);
                            who = next;
                        }
                        None if pool.len() > 1 => return Err(ElicitError::PoolExhausted(d.id.clone())),
                        None => {
                            return Err(ElicitError::Provider {
                                dilemma_id: d.id.clone(),
                                source,
                            })
                        }
                    },
                }
            }
            match parsed {
                Some((p, draw_index)) => records.push(TranscriptRecord {
                    dilemma_id: d.id.clone(),
                    strategy: self.strategy.clone(),
                    slot,
                    draw_index,
                    provider: pool[who].name().to_string(),
                    verdict: p.verdict,
                    rationale: p.rationale,
                    raw_reply: p.raw_reply,
                    context: match context {
                        PromptContext::None => None,
                        other => Some(other),
                    },
                }),
                None => {
                    redraws += 1;
                    if redraws > max_redraws {
                        return Err(ElicitError::Partial {
                            dilemma_id: d.id.clone(),
                            successes: records.len(),
                            needed: n,
                            discards: discards.len(),
                            redraws,
                            records,
                        });
                    }
                }
            }
        }
        if !discards.is_empty() {
            log::info!("{}: {} unparseable replies discarded", d.id, discards.len());
        }
        let verdicts: Vec<Verdict> = records.iter().map(|r| r.verdict).collect();
        let distribution = judgment_distribution(&d.id, &verdicts, &self.strategy).expect("n >= 1 successes");
        Ok(ElicitOutcome {
            records,
            discards,
            redraws,
            warnings,
            distribution,
        })
    }

    /// Queries one provider until `n` replies parse.
    pub fn elicit_distribution(
        &self,
        d: &Dilemma,
        n: usize,
        provider: &dyn Provider,
        contexts: &mut ContextSampler<'_>,
    ) -> Result<ElicitOutcome, ElicitError> {
        self.run(d, n, &[provider], &mut Single, contexts)
    }

    /// Panel of models: with `n <= |pool|` a random subset answers once
    /// each; otherwise every model answers once and the remaining slots go
    /// to uniformly drawn models. A failing model is dropped and its slot
    /// re-drawn.
    pub fn panel_elicit<R: Rng + ?Sized>(
        &self,
        d: &Dilemma,
        n: usize,
        pool: &[&dyn Provider],
        rng: &mut R,
        contexts: &mut ContextSampler<'_>,
    ) -> Result<ElicitOutcome, ElicitError> {
        if pool.is_empty() {
            return Err(ElicitError::EmptyPool);
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(rng);
        let mut assignment: Vec<usize> = order.into_iter().take(n).collect();
        while assignment.len() < n {
            assignment.push(rng.random_range(0..pool.len()));
        }
        let mut picker = Panel {
            assignment,
            healthy: vec![true; pool.len()],
            rng,
        };
        self.run(d, n, pool, &mut picker, contexts)
    }
}

/// Context sampler for zero-shot prompting.
pub fn no_context() -> impl FnMut(usize) -> Result<PromptContext, ElicitError> {
    |_| Ok(PromptContext::None)
}
