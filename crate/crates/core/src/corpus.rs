//! Dilemma and judgment ingestion, label mapping, consensus levels and the
//! rephrase / source-leak preprocessing steps.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::{fill_template, TemplateError};
use crate::provider::{GenerationRequest, Provider, ProviderError};
use crate::rng;

pub const REPHRASE_TEMPLATE: &str = include_str!("../templates/rephrase.txt");
pub const LEAK_CHECK_TEMPLATE: &str = include_str!("../templates/leak_check.txt");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("judgments reference unknown dilemmas: {}", .0.join(", "))]
    Dangling(Vec<String>),
    #[error("duplicate dilemma id {0}")]
    DuplicateId(String),
    #[error("dilemma {0} has an empty body")]
    EmptyBody(String),
    #[error("dilemma {0} has an empty topic")]
    EmptyTopic(String),
    #[error("judgment for {0} has an empty rationale but is not flagged verdict-only")]
    MissingRationale(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("consensus needs at least one judgment (dilemma {0})")]
    NoJudgments(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("rephrasing {id} failed: {source}")]
    Provider {
        id: String,
        #[source]
        source: ProviderError,
    },
    #[error("leak detection needs at least one trial")]
    NoTrials,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dilemma {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
    pub topic: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Unacceptable = 0,
    Acceptable = 1,
}

impl Verdict {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn flip(self) -> Self {
        match self {
            Verdict::Acceptable => Verdict::Unacceptable,
            Verdict::Unacceptable => Verdict::Acceptable,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RawLabel {
    #[serde(rename = "NTA")]
    Nta,
    #[serde(rename = "YTA")]
    Yta,
    #[serde(rename = "ESH")]
    Esh,
    #[serde(rename = "NAH")]
    Nah,
    #[serde(rename = "INFO")]
    Info,
}

impl RawLabel {
    pub fn verdict(self) -> Option<Verdict> {
        match self {
            RawLabel::Nta => Some(Verdict::Acceptable),
            RawLabel::Yta => Some(Verdict::Unacceptable),
            RawLabel::Esh | RawLabel::Nah | RawLabel::Info => None,
        }
    }

    pub fn from_verdict(verdict: Verdict) -> Self {
        match verdict {
            Verdict::Acceptable => RawLabel::Nta,
            Verdict::Unacceptable => RawLabel::Yta,
        }
    }
}

impl FromStr for RawLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NTA" => Ok(RawLabel::Nta),
            "YTA" => Ok(RawLabel::Yta),
            "ESH" => Ok(RawLabel::Esh),
            "NAH" => Ok(RawLabel::Nah),
            "INFO" => Ok(RawLabel::Info),
            other => Err(CorpusError::UnknownLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthorMeta {
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub subreddit_counts: Option<BTreeMap<String, u64>>,
}

/// One line of `judgments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawJudgment {
    pub dilemma_id: String,
    pub label: RawLabel,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub author_meta: AuthorMeta,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub verdict_only: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Judgment {
    pub dilemma_id: String,
    pub verdict: Verdict,
    pub rationale: String,
    pub author_meta: AuthorMeta,
    pub verdict_only: bool,
}

impl Judgment {
    pub fn to_raw(&self) -> RawJudgment {
        RawJudgment {
            dilemma_id: self.dilemma_id.clone(),
            label: RawLabel::from_verdict(self.verdict),
            rationale: self.rationale.clone(),
            author_meta: self.author_meta.clone(),
            verdict_only: self.verdict_only,
        }
    }
}

/// Fixed-width consensus buckets; the top one is closed at 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    B50,
    B60,
    B70,
    B80,
    B90,
}

impl Bucket {
    pub const ALL: [Bucket; 5] = [Bucket::B50, Bucket::B60, Bucket::B70, Bucket::B80, Bucket::B90];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Bucket for a level in [0.5, 1.0]; `None` outside that range.
    pub fn of(level: f64) -> Option<Bucket> {
        if !(0.5..=1.0).contains(&level) {
            return None;
        }
        Some(if level < 0.6 {
            Bucket::B50
        } else if level < 0.7 {
            Bucket::B60
        } else if level < 0.8 {
            Bucket::B70
        } else if level < 0.9 {
            Bucket::B80
        } else {
            Bucket::B90
        })
    }

    /// Exact bucket for `majority / n` using integer arithmetic.
    pub fn of_counts(majority: usize, n: usize) -> Bucket {
        let tenths = (10 * majority) / n;
        Bucket::ALL[tenths.saturating_sub(5).min(4)]
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::B50 => "[0.5,0.6)",
            Bucket::B60 => "[0.6,0.7)",
            Bucket::B70 => "[0.7,0.8)",
            Bucket::B80 => "[0.8,0.9)",
            Bucket::B90 => "[0.9,1.0]",
        }
    }

    pub fn from_label(label: &str) -> Option<Bucket> {
        Bucket::ALL.into_iter().find(|b| b.label() == label)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub dilemma_id: String,
    pub level: f64,
    pub bucket: Bucket,
    pub n_acceptable: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCorpus {
    pub dilemmas: Vec<Dilemma>,
    pub judgments: Vec<RawJudgment>,
    pub warnings: Vec<String>,
}

/// Reads a JSONL file. Blank lines and metadata header lines
/// (`{"_meta": ...}`) are skipped; any other malformed line is an error
/// naming its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("{\"_meta\"") {
            continue;
        }
        let item = serde_json::from_str(trimmed).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn validate_dilemmas(dilemmas: &[Dilemma]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for d in dilemmas {
        if !seen.insert(d.id.as_str()) {
            return Err(CorpusError::DuplicateId(d.id.clone()));
        }
        if d.body.trim().is_empty() {
            return Err(CorpusError::EmptyBody(d.id.clone()));
        }
        if d.topic.trim().is_empty() {
            return Err(CorpusError::EmptyTopic(d.id.clone()));
        }
    }
    Ok(())
}

pub fn load_corpus(dilemma_path: &Path, judgment_path: &Path) -> Result<LoadedCorpus, CorpusError> {
    let dilemmas: Vec<Dilemma> = read_jsonl(dilemma_path)?;
    validate_dilemmas(&dilemmas)?;
    let judgments: Vec<RawJudgment> = read_jsonl(judgment_path)?;

    let ids: HashSet<&str> = dilemmas.iter().map(|d| d.id.as_str()).collect();
    let dangling: BTreeSet<String> = judgments
        .iter()
        .filter(|j| !ids.contains(j.dilemma_id.as_str()))
        .map(|j| j.dilemma_id.clone())
        .collect();
    if !dangling.is_empty() {
        return Err(CorpusError::Dangling(dangling.into_iter().collect()));
    }
    if let Some(j) = judgments
        .iter()
        .find(|j| j.rationale.trim().is_empty() && !j.verdict_only)
    {
        return Err(CorpusError::MissingRationale(j.dilemma_id.clone()));
    }

    let mut warnings = Vec::new();
    if judgments.is_empty() {
        let msg = format!("{} contains no judgments", judgment_path.display());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    log::info!("loaded {} dilemmas and {} judgments", dilemmas.len(), judgments.len());
    Ok(LoadedCorpus {
        dilemmas,
        judgments,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMapping {
    pub judgments: Vec<Judgment>,
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl LabelMapping {
    pub fn retained_fraction(&self) -> f64 {
        let total = self.judgments.len() + self.dropped;
        if total == 0 {
            0.0
        } else {
            self.judgments.len() as f64 / total as f64
        }
    }

    pub fn drop_rate(&self) -> f64 {
        1.0 - self.retained_fraction()
    }
}

/// NTA → Acceptable, YTA → Unacceptable; the other tags are dropped.
pub fn map_labels(raw: &[RawJudgment]) -> LabelMapping {
    let mut judgments = Vec::with_capacity(raw.len());
    let mut dropped = 0;
    for r in raw {
        match r.label.verdict() {
            Some(verdict) => judgments.push(Judgment {
                dilemma_id: r.dilemma_id.clone(),
                verdict,
                rationale: r.rationale.clone(),
                author_meta: r.author_meta.clone(),
                verdict_only: r.verdict_only,
            }),
            None => dropped += 1,
        }
    }
    let mut warnings = Vec::new();
    if judgments.is_empty() {
        let msg = format!("no binary judgments among {} records", raw.len());
        log::warn!("{msg}");
        warnings.push(msg);
    }
    log::info!("label mapping kept {} and dropped {dropped}", judgments.len());
    LabelMapping {
        judgments,
        dropped,
        warnings,
    }
}

/// Maps label strings, failing on anything outside the five known tags.
pub fn parse_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Vec<RawLabel>, CorpusError> {
    labels.into_iter().map(str::parse).collect()
}

pub fn consensus_level(dilemma_id: &str, verdicts: &[Verdict]) -> Result<ConsensusRecord, CorpusError> {
    let n = verdicts.len();
    if n == 0 {
        return Err(CorpusError::NoJudgments(dilemma_id.to_string()));
    }
    let n_acceptable = verdicts.iter().filter(|&&v| v == Verdict::Acceptable).count();
    let majority = n_acceptable.max(n - n_acceptable);
    Ok(ConsensusRecord {
        dilemma_id: dilemma_id.to_string(),
        level: majority as f64 / n as f64,
        bucket: Bucket::of_counts(majority, n),
        n_acceptable,
        n,
    })
}

pub fn group_by_dilemma(judgments: &[Judgment]) -> BTreeMap<&str, Vec<&Judgment>> {
    let mut groups: BTreeMap<&str, Vec<&Judgment>> = BTreeMap::new();
    for j in judgments {
        groups.entry(j.dilemma_id.as_str()).or_default().push(j);
    }
    groups
}

/// Consensus records sorted by dilemma id, skipping dilemmas with fewer than
/// `min_judgments` judgments.
pub fn consensus_records(judgments: &[Judgment], min_judgments: usize) -> Vec<ConsensusRecord> {
    group_by_dilemma(judgments)
        .into_iter()
        .filter(|(_, js)| js.len() >= min_judgments.max(1))
        .map(|(id, js)| {
            let verdicts: Vec<Verdict> = js.iter().map(|j| j.verdict).collect();
            consensus_level(id, &verdicts).expect("non-empty group")
        })
        .collect()
}

/// Uniform seeded subsample of each populated bucket down to `per_bucket`
/// (default: the smallest populated bucket). Output sorted by dilemma id.
pub fn balance_buckets(records: &[ConsensusRecord], per_bucket: Option<usize>, seed: u64) -> Vec<ConsensusRecord> {
    let mut by_bucket: BTreeMap<Bucket, Vec<&ConsensusRecord>> = BTreeMap::new();
    for r in records {
        by_bucket.entry(r.bucket).or_default().push(r);
    }
    let target = per_bucket
        .or_else(|| by_bucket.values().map(Vec::len).min())
        .unwrap_or(0);
    let mut out = Vec::new();
    for (bucket, mut members) in by_bucket {
        members.sort_by(|a, b| a.dilemma_id.cmp(&b.dilemma_id));
        let mut stream = rng::substream(seed, bucket.label());
        members.shuffle(&mut stream);
        out.extend(members.into_iter().take(target).cloned());
    }
    out.sort_by(|a, b| a.dilemma_id.cmp(&b.dilemma_id));
    out
}

/// Rewrites the body through `provider`. The returned dilemma keeps the id;
/// `source_meta.lineage` records the original body hash and the rewriter.
pub fn rephrase_dilemma(d: &Dilemma, provider: &dyn Provider, template: &str) -> Result<Dilemma, CorpusError> {
    let prompt = fill_template(template, &[("body", d.body.as_str())])?;
    let reply = provider
        .generate(&GenerationRequest::new(prompt, 0))
        .map_err(|source| CorpusError::Provider {
            id: d.id.clone(),
            source,
        })?;
    let body = reply.trim().to_string();
    if body.is_empty() {
        return Err(CorpusError::EmptyBody(d.id.clone()));
    }
    let mut out = d.clone();
    out.body = body;
    out.source_meta.insert(
        "lineage".into(),
        serde_json::json!({
            "original_id": d.id,
            "original_body_sha256": rng::content_hash([d.body.as_bytes()]),
            "rephrased_by": provider.name(),
        }),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeakReply {
    No,
    Yes,
    Unparseable(String),
}

impl LeakReply {
    /// Anything whose first alphabetic token is not a plain "no" counts as
    /// a flag.
    pub fn parse(reply: &str) -> Self {
        let first = reply
            .split(|c: char| !c.is_alphabetic())
            .find(|t| !t.is_empty())
            .map(str::to_lowercase);
        match first.as_deref() {
            Some("no") => LeakReply::No,
            Some("yes") => LeakReply::Yes,
            _ => LeakReply::Unparseable(reply.to_string()),
        }
    }

    pub fn is_flag(&self) -> bool {
        !matches!(self, LeakReply::No)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakCheck {
    pub leaky: bool,
    pub replies: Vec<LeakReply>,
    pub warnings: Vec<String>,
}

/// Asks up to `trials` times whether the text looks like it came from the
/// source forum; stops at the first flag.
pub fn detect_source_leakage(
    d: &Dilemma,
    provider: &dyn Provider,
    template: &str,
    trials: usize,
) -> Result<LeakCheck, CorpusError> {
    if trials == 0 {
        return Err(CorpusError::NoTrials);
    }
    let prompt = fill_template(template, &[("body", d.body.as_str())])?;
    let mut replies = Vec::new();
    let mut warnings = Vec::new();
    for trial in 0..trials {
        let raw = provider
            .generate(&GenerationRequest::new(prompt.clone(), trial as u64))
            .map_err(|source| CorpusError::Provider {
                id: d.id.clone(),
                source,
            })?;
        let reply = LeakReply::parse(&raw);
        if let LeakReply::Unparseable(text) = &reply {
            let msg = format!("{}: unparseable leak reply on trial {}: {text:?}", d.id, trial + 1);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let flagged = reply.is_flag();
        replies.push(reply);
        if flagged {
            break;
        }
    }
    Ok(LeakCheck {
        leaky: replies.iter().any(LeakReply::is_flag),
        replies,
        warnings,
    })
}

#[derive(Debug, Default)]
pub struct PreprocessOutcome {
    /// Rephrased dilemmas that passed leak detection, sorted by id.
    pub kept: Vec<Dilemma>,
    /// Originals of every successfully rephrased dilemma.
    pub originals: Vec<Dilemma>,
    pub leaky: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Rephrase then leak-filter every dilemma with bounded parallelism. Output
/// order does not depend on completion order.
pub fn preprocess(
    dilemmas: &[Dilemma],
    provider: &dyn Provider,
    rephrase_template: &str,
    leak_template: &str,
    trials: usize,
) -> PreprocessOutcome {
    enum Step {
        Kept(Dilemma, Dilemma),
        Leaky(Dilemma, String),
        Failed(String, String),
    }
    let steps: Vec<Step> = dilemmas
        .par_iter()
        .map(|d| {
            let rewritten = match rephrase_dilemma(d, provider, rephrase_template) {
                Ok(r) => r,
                Err(e) => return Step::Failed(d.id.clone(), e.to_string()),
            };
            match detect_source_leakage(&rewritten, provider, leak_template, trials) {
                Ok(check) if check.leaky => Step::Leaky(d.clone(), d.id.clone()),
                Ok(_) => Step::Kept(rewritten, d.clone()),
                Err(e) => Step::Failed(d.id.clone(), e.to_string()),
            }
        })
        .collect();
    let mut out = PreprocessOutcome::default();
    for step in steps {
        match step {
            Step::Kept(new, old) => {
                out.kept.push(new);
                out.originals.push(old);
            }
            Step::Leaky(old, id) => {
                out.originals.push(old);
                out.leaky.push(id);
            }
            Step::Failed(id, e) => out.failed.push((id, e)),
        }
    }
    out.kept.sort_by(|a, b| a.id.cmp(&b.id));
    out.originals.sort_by(|a, b| a.id.cmp(&b.id));
    out.leaky.sort();
    out.failed.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{FnProvider, ProviderSpec, StubBehavior, StubProvider};
    use proptest::prelude::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        path
    }

    fn dilemma(id: &str, body: &str) -> Dilemma {
        Dilemma {
            id: id.into(),
            title: None,
            body: body.into(),
            topic: "family".into(),
            source_meta: BTreeMap::new(),
        }
    }

    const D1: &str = r#"{"id":"d1","title":null,"body":"I kept the money.","topic":"money","source_meta":{}}"#;
    const D2: &str =
        r#"{"id":"d2","title":"t","body":"I skipped the wedding.","topic":"family","source_meta":{"subreddit":"x"}}"#;

    #[test]
    fn loads_small_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "d.jsonl", &[D1, D2]);
        let j = write(
            dir.path(),
            "j.jsonl",
            &[
                r#"{"dilemma_id":"d1","label":"NTA","rationale":"fine","author_meta":{"age":30,"gender":"male","subreddit_counts":null}}"#,
                r#"{"dilemma_id":"d1","label":"YTA","rationale":"rude","author_meta":{}}"#,
                r#"{"dilemma_id":"d2","label":"INFO","rationale":"more?"}"#,
            ],
        );
        let corpus = load_corpus(&d, &j).unwrap();
        assert_eq!((corpus.dilemmas.len(), corpus.judgments.len()), (2, 3));
        assert_eq!(corpus.judgments[0].author_meta.age, Some(30));
    }

    #[test]
    fn dangling_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "d.jsonl", &[D1]);
        let j = write(
            dir.path(),
            "j.jsonl",
            &[r#"{"dilemma_id":"x9","label":"NTA","rationale":"r","author_meta":{}}"#],
        );
        match load_corpus(&d, &j) {
            Err(CorpusError::Dangling(ids)) => assert_eq!(ids, vec!["x9".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_judgment_file_warns() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "d.jsonl", &[D1, D2]);
        let j = write(dir.path(), "j.jsonl", &[]);
        let corpus = load_corpus(&d, &j).unwrap();
        assert_eq!(corpus.dilemmas.len(), 2);
        assert!(corpus.judgments.is_empty());
        assert_eq!(corpus.warnings.len(), 1);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "d.jsonl", &[D1, "{not json", D2]);
        let j = write(dir.path(), "j.jsonl", &[]);
        match load_corpus(&d, &j) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_label_in_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "d.jsonl", &[D1]);
        let j = write(
            dir.path(),
            "j.jsonl",
            &[r#"{"dilemma_id":"d1","label":"SOFT_YTA","rationale":"r"}"#],
        );
        assert!(matches!(
            load_corpus(&d, &j),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse_labels(["NTA", "WTF"]),
            Err(CorpusError::UnknownLabel(_))
        ));
    }

    #[test]
    fn empty_rationale_needs_flag() {
        let dir = tempfile::tempdir().unwrap();
        let d = write(dir.path(), "d.jsonl", &[D1]);
        let j = write(
            dir.path(),
            "j.jsonl",
            &[r#"{"dilemma_id":"d1","label":"NTA","rationale":""}"#],
        );
        assert!(matches!(load_corpus(&d, &j), Err(CorpusError::MissingRationale(_))));
        let j = write(
            dir.path(),
            "j2.jsonl",
            &[r#"{"dilemma_id":"d1","label":"NTA","rationale":"","verdict_only":true}"#],
        );
        assert!(load_corpus(&d, &j).is_ok());
    }

    fn raw(label: RawLabel) -> RawJudgment {
        RawJudgment {
            dilemma_id: "d".into(),
            label,
            rationale: "r".into(),
            author_meta: AuthorMeta::default(),
            verdict_only: false,
        }
    }

    #[test]
    fn label_mapping() {
        let input: Vec<_> = [RawLabel::Nta, RawLabel::Yta, RawLabel::Nta, RawLabel::Info]
            .into_iter()
            .map(raw)
            .collect();
        let out = map_labels(&input);
        assert_eq!(out.judgments.len(), 3);
        assert_eq!(out.dropped, 1);
        let acceptable = out
            .judgments
            .iter()
            .filter(|j| j.verdict == Verdict::Acceptable)
            .count();
        assert_eq!(acceptable, 2);
    }

    #[test]
    fn retained_fraction_matches_label_shares() {
        // 63% NTA, 27% YTA, 10% other
        let mut input = Vec::new();
        input.extend((0..63).map(|_| raw(RawLabel::Nta)));
        input.extend((0..27).map(|_| raw(RawLabel::Yta)));
        input.extend((0..4).map(|_| raw(RawLabel::Esh)));
        input.extend((0..3).map(|_| raw(RawLabel::Nah)));
        input.extend((0..3).map(|_| raw(RawLabel::Info)));
        let out = map_labels(&input);
        assert!((out.retained_fraction() - 0.90).abs() < 1e-12);
    }

    #[test]
    fn all_info_gives_empty_output_and_warning() {
        let input: Vec<_> = (0..4).map(|_| raw(RawLabel::Info)).collect();
        let out = map_labels(&input);
        assert!(out.judgments.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn mapping_is_idempotent_on_binary_input() {
        let input: Vec<_> = [RawLabel::Nta, RawLabel::Yta].into_iter().map(raw).collect();
        let once = map_labels(&input);
        let again: Vec<RawJudgment> = once.judgments.iter().map(Judgment::to_raw).collect();
        assert_eq!(map_labels(&again), once);
    }

    fn verdicts(acc: usize, unacc: usize) -> Vec<Verdict> {
        let mut v = vec![Verdict::Acceptable; acc];
        v.extend(vec![Verdict::Unacceptable; unacc]);
        v
    }

    #[test]
    fn consensus_examples() {
        let r = consensus_level("d", &verdicts(2, 2)).unwrap();
        assert_eq!((r.level, r.bucket), (0.5, Bucket::B50));
        let r = consensus_level("d", &verdicts(63, 27)).unwrap();
        assert!((r.level - 0.7).abs() < 1e-15);
        assert_eq!(r.bucket, Bucket::B70);
        let r = consensus_level("d", &verdicts(10, 0)).unwrap();
        assert_eq!((r.level, r.bucket), (1.0, Bucket::B90));
        let r = consensus_level("d", &verdicts(1, 0)).unwrap();
        assert_eq!(r.level, 1.0);
        assert!(matches!(consensus_level("d", &[]), Err(CorpusError::NoJudgments(_))));
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(Bucket::of(0.5), Some(Bucket::B50));
        assert_eq!(Bucket::of(0.6), Some(Bucket::B60));
        assert_eq!(Bucket::of(0.8999), Some(Bucket::B80));
        assert_eq!(Bucket::of(0.9), Some(Bucket::B90));
        assert_eq!(Bucket::of(1.0), Some(Bucket::B90));
        assert_eq!(Bucket::of(0.49), None);
        assert_eq!(Bucket::of(1.01), None);
        for b in Bucket::ALL {
            assert_eq!(Bucket::from_label(b.label()), Some(b));
        }
    }

    proptest! {
        #[test]
        fn consensus_invariants(acc in 0usize..200, unacc in 0usize..200) {
            prop_assume!(acc + unacc > 0);
            let r = consensus_level("d", &verdicts(acc, unacc)).unwrap();
            let p1 = acc as f64 / (acc + unacc) as f64;
            let p0 = unacc as f64 / (acc + unacc) as f64;
            prop_assert!((p1 + p0 - 1.0).abs() < 1e-15);
            prop_assert!((0.5..=1.0).contains(&r.level));
            // exactly one bucket owns the level, and it agrees with the float rule
            let owners = Bucket::ALL.iter().filter(|&&b| Bucket::of(r.level) == Some(b)).count();
            prop_assert_eq!(owners, 1);
            prop_assert_eq!(Bucket::of(r.level), Some(r.bucket));
            let flipped: Vec<_> = verdicts(acc, unacc).into_iter().map(Verdict::flip).collect();
            let f = consensus_level("d", &flipped).unwrap();
            prop_assert_eq!(f.level, r.level);
            prop_assert_eq!(f.bucket, r.bucket);
        }
    }

    #[test]
    fn balancing_is_seeded_and_even() {
        let records: Vec<_> = (0..30)
            .map(|i| {
                let acc = if i < 20 { 10 } else { 5 };
                let mut r = consensus_level(&format!("d{i:02}"), &verdicts(acc, 10 - acc)).unwrap();
                r.dilemma_id = format!("d{i:02}");
                r
            })
            .collect();
        let a = balance_buckets(&records, None, 1);
        let b = balance_buckets(&records, None, 1);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        let top = a.iter().filter(|r| r.bucket == Bucket::B90).count();
        assert_eq!(top, 10);
    }

    #[test]
    fn rephrase_with_identity_stub_records_lineage() {
        let d = dilemma("d1", "AITA for keeping the money?");
        let echo = StubProvider::new(ProviderSpec::new("echo"), StubBehavior::Echo);
        let out = rephrase_dilemma(&d, &echo, "{body}").unwrap();
        assert_eq!(out.body, d.body);
        assert_eq!(out.id, d.id);
        assert_eq!(out.source_meta["lineage"]["original_id"], "d1");
    }

    #[test]
    fn rephrase_removes_forum_token() {
        let d = dilemma("d1", "AITA for keeping the money?");
        let rewriter = FnProvider::new(ProviderSpec::new("rw"), |req| {
            let body = req.prompt.split("Dilemma:\n").nth(1).unwrap_or("");
            let body = body.split("\n\n").next().unwrap_or("");
            Ok(body.replace("AITA for", "Is it wrong to consider"))
        });
        let out = rephrase_dilemma(&d, &rewriter, REPHRASE_TEMPLATE).unwrap();
        assert!(!out.body.contains("AITA"));
    }

    #[test]
    fn rephrase_fails_after_retry_budget() {
        use crate::provider::{RetryPolicy, RetryingProvider};
        let d = dilemma("d1", "text");
        let failing = RetryingProvider::new(
            StubProvider::new(ProviderSpec::new("slow"), StubBehavior::Fail),
            RetryPolicy::immediate(3),
        );
        match rephrase_dilemma(&d, &failing, "{body}") {
            Err(CorpusError::Provider {
                source: ProviderError::Exhausted { attempts: 3, .. },
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn leak_detection_rules() {
        let d = dilemma("d1", "text");
        let no = StubProvider::constant("no", "No.");
        let check = detect_source_leakage(&d, &no, LEAK_CHECK_TEMPLATE, 3).unwrap();
        assert!(!check.leaky);
        assert_eq!(check.replies.len(), 3);

        let second_yes = StubProvider::new(
            ProviderSpec::new("s"),
            StubBehavior::Script(vec!["no".into(), "Yes, it does.".into(), "no".into()]),
        );
        assert!(
            detect_source_leakage(&d, &second_yes, LEAK_CHECK_TEMPLATE, 3)
                .unwrap()
                .leaky
        );

        let garbage = StubProvider::new(
            ProviderSpec::new("g"),
            StubBehavior::Script(vec!["No".into(), "???".into(), "No".into()]),
        );
        let check = detect_source_leakage(&d, &garbage, LEAK_CHECK_TEMPLATE, 3).unwrap();
        assert!(check.leaky);
        assert_eq!(check.warnings.len(), 1);

        assert!(matches!(
            detect_source_leakage(&d, &no, LEAK_CHECK_TEMPLATE, 0),
            Err(CorpusError::NoTrials)
        ));
        assert_eq!(LeakReply::parse("  **No** it does not"), LeakReply::No);
        assert!(LeakReply::parse("Not sure").is_flag());
    }

    #[test]
    fn preprocess_is_order_independent() {
        let dilemmas: Vec<_> = (0..20)
            .rev()
            .map(|i| dilemma(&format!("d{i:02}"), &format!("story {i}")))
            .collect();
        // flags dilemmas whose body ends in an odd digit
        let p = FnProvider::new(ProviderSpec::new("p"), |req| {
            if req.prompt.starts_with("Does") {
                let odd = req
                    .prompt
                    .trim_end()
                    .chars()
                    .last()
                    .and_then(|c| c.to_digit(10))
                    .is_some_and(|d| d % 2 == 1);
                Ok(if odd { "Yes".into() } else { "No".into() })
            } else {
                Ok(req
                    .prompt
                    .lines()
                    .find(|l| l.starts_with("story"))
                    .unwrap_or("x")
                    .to_string())
            }
        });
        let out = preprocess(&dilemmas, &p, REPHRASE_TEMPLATE, LEAK_CHECK_TEMPLATE, 3);
        assert_eq!(out.kept.len(), 10);
        assert_eq!(out.leaky.len(), 10);
        assert!(out.kept.windows(2).all(|w| w[0].id < w[1].id));
        assert_eq!(out.originals.len(), 20);
    }
}
