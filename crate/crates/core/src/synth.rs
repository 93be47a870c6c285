//! Synthetic corpora with a known profile-to-verdict rule.
//!
//! Every topic has a true mean value distribution. A synthetic human draws
//! a value distribution from a Dirichlet centred on that mean, judges the
//! dilemma Acceptable iff its top value lies in the dilemma's acceptable
//! set, and writes a rationale naming one value drawn from its
//! distribution. Acceptable sets are chosen so that the true Acceptable
//! probabilities spread over all consensus buckets.
//!
//! Dilemma bodies carry the acceptable set and the majority lean so that
//! the two synthetic stubs can answer without side channels:
//! `stub:synth-zero` answers the lean and names a fixed handful of values;
//! `stub:synth-dmp` applies the human rule to the first line of the profile
//! in its prompt and names the profile's values.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorMeta, Dilemma, RawJudgment, RawLabel, Verdict};
use crate::profiling::{dirichlet_draw, ProfilingError};
use crate::provider::{verdict_reply, GenerationRequest, Provider, ProviderError, ProviderSpec};
use crate::rng::{self, keyed_uniform};
use crate::taxonomy::REFERENCE_VALUES;

pub const ZERO_SHOT_STUB: &str = "stub:synth-zero";
pub const DMP_STUB: &str = "stub:synth-dmp";

const RULE_PREFIX: &str = "Rule: the actor is in the right iff their first priority is one of: ";
const LEAN_PREFIX: &str = "Lean: ";

/// Values the profile-blind stub names, in rotation.
pub const ZERO_SHOT_VALUES: [&str; 4] = ["Honesty", "Responsibility", "Respect", "Justice"];

pub const SUBREDDITS: [&str; 6] = [
    "politics",
    "conservative",
    "parenting",
    "teenagers",
    "fitness",
    "knitting",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_dilemmas: usize,
    pub topics: Vec<String>,
    pub min_judgments: usize,
    pub max_judgments: usize,
    /// Concentration of each human's distribution around the topic mean.
    pub alpha: f64,
    /// Symmetric shape of the Dirichlet the topic means are drawn from.
    pub mean_shape: f64,
    /// Monte Carlo draws per topic for the top-value probabilities.
    pub calibration_draws: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_dilemmas: 200,
            topics: ["family", "work", "friendship", "romance"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            min_judgments: 50,
            max_judgments: 100,
            alpha: 10.0,
            mean_shape: 0.5,
            calibration_draws: 20_000,
            seed: 7,
        }
    }
}

/// Ground truth for one dilemma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub dilemma_id: String,
    pub topic: String,
    pub acceptable_values: Vec<String>,
    /// Monte Carlo probability that a human judges Acceptable.
    pub p_acceptable: f64,
    pub lean: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub dilemmas: Vec<Dilemma>,
    pub judgments: Vec<RawJudgment>,
    pub truth: Vec<SynthTruth>,
    pub topic_means: BTreeMap<String, BTreeMap<String, f64>>,
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

fn body(truth: &SynthTruth, n: usize) -> String {
    let set = if truth.acceptable_values.is_empty() {
        "(none)".to_string()
    } else {
        truth.acceptable_values.join("; ")
    };
    let lean = match truth.lean {
        Verdict::Acceptable => "ACCEPTABLE",
        Verdict::Unacceptable => "UNACCEPTABLE",
    };
    format!(
        "Synthetic {topic} scenario number {n}: someone made a choice that others disagree about.\n{RULE_PREFIX}{set}\n{LEAN_PREFIX}{lean}",
        topic = truth.topic,
    )
}

/// Recovers the acceptable set and lean from a synthetic dilemma body.
pub fn parse_body(text: &str) -> Option<(Vec<String>, Verdict)> {
    let mut set = None;
    let mut lean = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix(RULE_PREFIX) {
            set = Some(if rest == "(none)" {
                Vec::new()
            } else {
                rest.split("; ").map(str::to_string).collect()
            });
        } else if let Some(rest) = line.strip_prefix(LEAN_PREFIX) {
            lean = match rest {
                "ACCEPTABLE" => Some(Verdict::Acceptable),
                "UNACCEPTABLE" => Some(Verdict::Unacceptable),
                _ => None,
            };
        }
    }
    Some((set?, lean?))
}

/// Probability of each value being the top one under `Dir(alpha * mean)`.
fn top_value_probs<R: Rng + ?Sized>(shape: &[f64], draws: usize, rng: &mut R) -> Result<Vec<f64>, ProfilingError> {
    let mut hits = vec![0usize; shape.len()];
    for _ in 0..draws {
        hits[argmax(&dirichlet_draw(shape, rng)?)] += 1;
    }
    Ok(hits.into_iter().map(|h| h as f64 / draws as f64).collect())
}

/// Random-order greedy subset whose probability mass approaches `target`
/// from below.
fn pick_set<R: Rng + ?Sized>(probs: &[f64], target: f64, rng: &mut R) -> (Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.shuffle(rng);
    let mut chosen = Vec::new();
    let mut mass = 0.0;
    for i in order {
        if probs[i] > 0.0 && mass + probs[i] <= target {
            mass += probs[i];
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    (chosen, mass)
}

const PHRASINGS: [&str; 4] = [
    "For me this comes down to {v}.",
    "It is mostly a question of {v}.",
    "Think about {v} here.",
    "{V} matters most in this situation.",
];

fn capitalise(s: &str) -> String {
    let mut cs = s.chars();
    cs.next()
        .map(|c| c.to_uppercase().chain(cs).collect())
        .unwrap_or_default()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, ProfilingError> {
    let values: Vec<String> = REFERENCE_VALUES.iter().map(|s| s.to_string()).collect();
    let k = values.len();
    let mut topic_means = BTreeMap::new();
    let mut calib: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for topic in &config.topics {
        let mut r = rng::substream(config.seed, &format!("synth/topic/{topic}"));
        let mean = dirichlet_draw(&vec![config.mean_shape; k], &mut r)?;
        let shape: Vec<f64> = mean.iter().map(|m| (config.alpha * m).max(1e-6)).collect();
        let q = top_value_probs(&shape, config.calibration_draws, &mut r)?;
        topic_means.insert(topic.clone(), values.iter().cloned().zip(mean).collect());
        calib.insert(topic.clone(), (shape, q));
    }

    let mut dilemmas = Vec::with_capacity(config.n_dilemmas);
    let mut judgments = Vec::new();
    let mut truth = Vec::with_capacity(config.n_dilemmas);
    let width = config.n_dilemmas.max(1).to_string().len().max(4);
    for i in 0..config.n_dilemmas {
        let id = format!("syn{i:0width$}");
        let mut r = rng::substream(config.seed, &format!("synth/dilemma/{id}"));
        let topic = config.topics[i % config.topics.len()].clone();
        let (shape, q) = &calib[&topic];
        // consensus spread evenly over [0.5, 1], either side of 0.5
        let level = 0.5 + 0.5 * (i as f64 + r.random::<f64>()) / config.n_dilemmas as f64;
        let target = if r.random::<bool>() { level } else { 1.0 - level };
        let (set, p) = pick_set(q, target, &mut r);
        let t = SynthTruth {
            dilemma_id: id.clone(),
            topic: topic.clone(),
            acceptable_values: set.iter().map(|&j| values[j].clone()).collect(),
            p_acceptable: p,
            lean: if p >= 0.5 {
                Verdict::Acceptable
            } else {
                Verdict::Unacceptable
            },
        };
        dilemmas.push(Dilemma {
            id: id.clone(),
            title: Some(format!("Synthetic dilemma {i}")),
            body: body(&t, i),
            topic: topic.clone(),
            source_meta: BTreeMap::new(),
        });
        let n = r.random_range(config.min_judgments..=config.max_judgments.max(config.min_judgments));
        let mut in_set = vec![false; k];
        set.iter().for_each(|&j| in_set[j] = true);
        for _ in 0..n {
            let theta = dirichlet_draw(shape, &mut r)?;
            let verdict = if in_set[argmax(&theta)] {
                Verdict::Acceptable
            } else {
                Verdict::Unacceptable
            };
            let mention = &values[WeightedIndex::new(&theta).expect("positive weights").sample(&mut r)];
            let phrase = PHRASINGS.choose(&mut r).expect("non-empty");
            let lower = mention.to_lowercase();
            let rationale = phrase.replace("{v}", &lower).replace("{V}", &capitalise(&lower));
            let mut subs = BTreeMap::new();
            for _ in 0..r.random_range(1..=3) {
                *subs
                    .entry(SUBREDDITS.choose(&mut r).expect("non-empty").to_string())
                    .or_insert(0) += r.random_range(1..=5u64);
            }
            judgments.push(RawJudgment {
                dilemma_id: id.clone(),
                label: RawLabel::from_verdict(verdict),
                rationale,
                author_meta: AuthorMeta {
                    age: Some(r.random_range(18..=70)),
                    gender: Some(if r.random::<bool>() { "man" } else { "woman" }.to_string()),
                    subreddit_counts: Some(subs),
                },
                verdict_only: false,
            });
        }
        truth.push(t);
    }
    Ok(SynthCorpus {
        dilemmas,
        judgments,
        truth,
        topic_means,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> std::io::Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

impl SynthCorpus {
    /// Writes `dilemmas.jsonl`, `judgments.jsonl` and `truth.jsonl`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("dilemmas.jsonl"), &self.dilemmas)?;
        write_jsonl(&dir.join("judgments.jsonl"), &self.judgments)?;
        write_jsonl(&dir.join("truth.jsonl"), &self.truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStubKind {
    ZeroShot,
    Dmp,
}

/// Offline model for synthetic corpora.
#[derive(Debug)]
pub struct SynthStub {
    spec: ProviderSpec,
    kind: SynthStubKind,
    profile_line: Regex,
}

impl SynthStub {
    pub fn new(spec: ProviderSpec, kind: SynthStubKind) -> Self {
        Self {
            spec,
            kind,
            profile_line: Regex::new(r"^(.+) \((\d+\.\d+)\)$").expect("static regex"),
        }
    }

    fn profile<'p>(&self, prompt: &'p str) -> Vec<&'p str> {
        prompt
            .lines()
            .filter_map(|l| {
                self.profile_line
                    .captures(l.trim())
                    .and_then(|c| c.get(1))
                    .map(|m| m.as_str())
            })
            .collect()
    }
}

impl Provider for SynthStub {
    fn spec(&self) -> &ProviderSpec {
        &self.spec
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let (set, lean) = parse_body(&request.prompt).ok_or_else(|| ProviderError::Fatal {
            provider: self.spec.name.clone(),
            message: "prompt has no synthetic dilemma rule".into(),
        })?;
        let profile = self.profile(&request.prompt);
        if self.kind == SynthStubKind::Dmp && !profile.is_empty() {
            let verdict = set.iter().any(|v| v == profile[0]);
            let named = profile.iter().map(|v| v.to_lowercase()).collect::<Vec<_>>().join("; ");
            return Ok(verdict_reply(verdict, &format!("Guided by {named}.")));
        }
        let u = keyed_uniform([request.prompt.as_bytes(), &request.draw_index.to_le_bytes()]);
        let first = (u * ZERO_SHOT_VALUES.len() as f64) as usize % ZERO_SHOT_VALUES.len();
        let second = (first + 1) % ZERO_SHOT_VALUES.len();
        let rationale = format!(
            "This is about {} and {}.",
            ZERO_SHOT_VALUES[first].to_lowercase(),
            ZERO_SHOT_VALUES[second].to_lowercase()
        );
        Ok(verdict_reply(lean == Verdict::Acceptable, &rationale))
    }
}

/// Builds the synthetic stubs named [`ZERO_SHOT_STUB`] and [`DMP_STUB`].
pub fn stub_from_spec(spec: &ProviderSpec) -> Option<Arc<dyn Provider>> {
    let kind = match spec.name.as_str() {
        ZERO_SHOT_STUB => SynthStubKind::ZeroShot,
        DMP_STUB => SynthStubKind::Dmp,
        _ => return None,
    };
    Some(Arc::new(SynthStub::new(spec.clone(), kind)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::parse_evaluation;

    fn small() -> SynthConfig {
        SynthConfig {
            n_dilemmas: 20,
            min_judgments: 30,
            max_judgments: 40,
            calibration_draws: 4000,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dilemmas.len(), 20);
        let per: usize = a.judgments.iter().filter(|j| j.dilemma_id == a.dilemmas[0].id).count();
        assert!((30..=40).contains(&per));
    }

    #[test]
    fn bodies_round_trip() {
        let c = generate(&small()).unwrap();
        for (d, t) in c.dilemmas.iter().zip(&c.truth) {
            let (set, lean) = parse_body(&d.body).unwrap();
            assert_eq!(set, t.acceptable_values);
            assert_eq!(lean, t.lean);
        }
    }

    #[test]
    fn observed_rates_track_truth() {
        let c = generate(&SynthConfig {
            n_dilemmas: 8,
            min_judgments: 400,
            max_judgments: 400,
            calibration_draws: 20_000,
            ..SynthConfig::default()
        })
        .unwrap();
        for t in &c.truth {
            let js: Vec<_> = c.judgments.iter().filter(|j| j.dilemma_id == t.dilemma_id).collect();
            let p = js.iter().filter(|j| j.label == RawLabel::Nta).count() as f64 / js.len() as f64;
            // 4 standard errors of a 400-sample proportion plus calibration slack
            let tol = 4.0 * (t.p_acceptable * (1.0 - t.p_acceptable) / 400.0).sqrt() + 0.02;
            assert!(
                (p - t.p_acceptable).abs() <= tol,
                "{}: {p} vs {}",
                t.dilemma_id,
                t.p_acceptable
            );
        }
    }

    #[test]
    fn stubs_follow_their_rules() {
        let truth = SynthTruth {
            dilemma_id: "x".into(),
            topic: "family".into(),
            acceptable_values: vec!["Care".into(), "Honesty".into()],
            p_acceptable: 0.3,
            lean: Verdict::Unacceptable,
        };
        let b = body(&truth, 0);
        let zero = stub_from_spec(&ProviderSpec::new(ZERO_SHOT_STUB)).unwrap();
        let dmp = stub_from_spec(&ProviderSpec::new(DMP_STUB)).unwrap();
        let reply = zero
            .generate(&GenerationRequest::new(format!("Your profile:\nCare (0.700)\n{b}"), 0))
            .unwrap();
        assert_eq!(parse_evaluation(&reply).unwrap().verdict, Verdict::Unacceptable);
        let reply = dmp
            .generate(&GenerationRequest::new(
                format!("Your profile:\nCare (0.700)\nFamily (0.300)\n{b}"),
                0,
            ))
            .unwrap();
        let parsed = parse_evaluation(&reply).unwrap();
        assert_eq!(parsed.verdict, Verdict::Acceptable);
        assert!(parsed.rationale.contains("care; family"));
        let reply = dmp
            .generate(&GenerationRequest::new(
                format!("Your profile:\nFamily (0.700)\nCare (0.300)\n{b}"),
                0,
            ))
            .unwrap();
        assert_eq!(parse_evaluation(&reply).unwrap().verdict, Verdict::Unacceptable);
        assert!(dmp.generate(&GenerationRequest::new("no rule", 0)).is_err());
        assert!(stub_from_spec(&ProviderSpec::new("stub:other")).is_none());
    }

    #[test]
    fn subset_mass_never_exceeds_target() {
        let mut r = rng::stream(1);
        let probs = [0.4, 0.3, 0.2, 0.1];
        for target in [0.0, 0.15, 0.5, 0.95, 1.0] {
            let (set, mass) = pick_set(&probs, target, &mut r);
            assert!(mass <= target + 1e-12);
            assert!((set.iter().map(|&i| probs[i]).sum::<f64>() - mass).abs() < 1e-12);
        }
    }
}
