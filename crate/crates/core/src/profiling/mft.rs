//! Moral-foundation baselines.
//!
//! Two routes reduce rationales to the six foundations: a provider maps each
//! taxonomy value to a foundation, or a term lexicon scores rationale tokens
//! directly. Either way the resulting foundation mentions feed the same base
//! measure and topic-model code as the value taxonomy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fit_topic_model, sample_profile, BaseMeasure, ProfilingError, ValueProfile};
use crate::elicitation::fill_template;
use crate::provider::{GenerationRequest, Provider};

pub const MAP_FOUNDATION_TEMPLATE: &str = include_str!("../../templates/map_foundation.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Foundation {
    Care,
    Fairness,
    Loyalty,
    Authority,
    Purity,
    Liberty,
}

impl Foundation {
    pub const ALL: [Foundation; 6] = [
        Foundation::Care,
        Foundation::Fairness,
        Foundation::Loyalty,
        Foundation::Authority,
        Foundation::Purity,
        Foundation::Liberty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Foundation::Care => "Care/Harm",
            Foundation::Fairness => "Fairness/Cheating",
            Foundation::Loyalty => "Loyalty/Betrayal",
            Foundation::Authority => "Authority/Subversion",
            Foundation::Purity => "Purity/Degradation",
            Foundation::Liberty => "Liberty/Oppression",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            Foundation::Care => &["care", "harm"],
            Foundation::Fairness => &["fairness", "cheating"],
            Foundation::Loyalty => &["loyalty", "betrayal"],
            Foundation::Authority => &["authority", "subversion"],
            Foundation::Purity => &["purity", "degradation", "sanctity"],
            Foundation::Liberty => &["liberty", "oppression"],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn names() -> Vec<String> {
        Foundation::ALL.iter().map(|f| f.name().to_string()).collect()
    }

    /// Finds the single foundation named in free text; `None` when the
    /// text names zero or several.
    pub fn find_in(text: &str) -> Option<Foundation> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        let mut found: Vec<Foundation> = Foundation::ALL
            .into_iter()
            .filter(|f| f.aliases().iter().any(|a| words.contains(a)))
            .collect();
        found.dedup();
        (found.len() == 1).then(|| found[0])
    }
}

impl fmt::Display for Foundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Foundation {
    type Err = ProfilingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Foundation::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(t) || f.aliases().iter().any(|a| a.eq_ignore_ascii_case(t)))
            .ok_or_else(|| ProfilingError::BadFoundation(s.to_string()))
    }
}

fn file_err(path: &Path, message: impl ToString) -> ProfilingError {
    ProfilingError::File {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Value to foundation assignment, CSV `value,foundation`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MftMapping {
    pub map: BTreeMap<String, Foundation>,
}

impl MftMapping {
    pub fn get(&self, value: &str) -> Option<Foundation> {
        self.map.get(value).copied()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["value", "foundation"]).expect("in-memory write");
        for (v, f) in &self.map {
            w.write_record([v.as_str(), f.name()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self, ProfilingError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut map = BTreeMap::new();
        for row in r.records() {
            let row = row.map_err(|e| file_err(origin, e))?;
            let (Some(v), Some(f)) = (row.get(0), row.get(1)) else {
                return Err(file_err(origin, "expected value,foundation"));
            };
            map.insert(v.to_string(), f.parse()?);
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, ProfilingError> {
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfilingError> {
        std::fs::write(path, self.to_csv()).map_err(|e| file_err(path, e))
    }

    /// Share of values assigned to each foundation.
    pub fn foundation_shares(&self) -> BTreeMap<Foundation, f64> {
        let mut out: BTreeMap<Foundation, f64> = Foundation::ALL.iter().map(|&f| (f, 0.0)).collect();
        let n = self.map.len().max(1) as f64;
        for f in self.map.values() {
            *out.get_mut(f).expect("all foundations present") += 1.0 / n;
        }
        out
    }

    /// Replaces each value by its foundation name. Unmapped values are
    /// dropped.
    pub fn foundations_of<'a>(&self, values: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        values
            .into_iter()
            .filter_map(|v| self.get(v))
            .map(|f| f.name().to_string())
            .collect()
    }
}

/// Asks the provider for each value's foundation. A reply that names no
/// single foundation is retried up to `attempts` times.
pub fn mft_map_values(
    values: &[String],
    provider: &dyn Provider,
    template: &str,
    attempts: usize,
) -> Result<MftMapping, ProfilingError> {
    let mut map = BTreeMap::new();
    for value in values {
        let prompt =
            fill_template(template, &[("value", value)]).map_err(|e| ProfilingError::BadProfile(e.to_string()))?;
        let mut last = String::new();
        let mut found = None;
        for draw in 0..attempts.max(1) as u64 {
            let reply = provider
                .generate(&GenerationRequest::new(prompt.clone(), draw))
                .map_err(|source| ProfilingError::Provider {
                    value: value.clone(),
                    source,
                })?;
            if let Some(f) = Foundation::find_in(&reply) {
                found = Some(f);
                break;
            }
            log::warn!("{value}: foundation reply {reply:?} not recognised");
            last = reply;
        }
        map.insert(value.clone(), found.ok_or(ProfilingError::BadFoundation(last))?);
    }
    Ok(MftMapping { map })
}

/// Term lexicon with six per-foundation scores in [0, 1].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmfdLexicon {
    terms: BTreeMap<String, [f64; 6]>,
}

impl EmfdLexicon {
    pub fn new(terms: BTreeMap<String, [f64; 6]>) -> Self {
        Self {
            terms: terms.into_iter().map(|(t, s)| (t.to_lowercase(), s)).collect(),
        }
    }

    /// CSV `term,f1,...,f6`; the header names the six foundations in any
    /// order (full names or single-word aliases).
    pub fn load_csv(path: &Path) -> Result<Self, ProfilingError> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| file_err(path, e))?;
        let header = r.headers().map_err(|e| file_err(path, e))?.clone();
        if header.len() != 7 {
            return Err(file_err(path, "header must be term plus six foundations"));
        }
        let mut order = [0usize; 6];
        let mut seen = [false; 6];
        for (col, name) in header.iter().skip(1).enumerate() {
            let f: Foundation = name
                .parse()
                .map_err(|_| file_err(path, format!("unknown foundation column {name:?}")))?;
            if seen[f.index()] {
                return Err(file_err(path, format!("duplicate foundation column {name:?}")));
            }
            seen[f.index()] = true;
            order[col] = f.index();
        }
        let mut terms = BTreeMap::new();
        for (i, row) in r.records().enumerate() {
            let row = row.map_err(|e| file_err(path, e))?;
            let mut scores = [0.0; 6];
            for col in 0..6 {
                let v: f64 = row
                    .get(col + 1)
                    .unwrap_or("")
                    .trim()
                    .parse()
                    .map_err(|_| file_err(path, format!("row {}: bad score", i + 2)))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(file_err(path, format!("row {}: score {v} outside [0, 1]", i + 2)));
                }
                scores[order[col]] = v;
            }
            terms.insert(row.get(0).unwrap_or("").trim().to_lowercase(), scores);
        }
        Ok(Self { terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Summed lexicon scores over a text's matching tokens.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FoundationScores {
    pub sums: [f64; 6],
    pub matches: usize,
}

impl FoundationScores {
    /// Normalised distribution; `None` when no token matched (or every
    /// matched score was zero).
    pub fn distribution(&self) -> Option<[f64; 6]> {
        let total: f64 = self.sums.iter().sum();
        (self.matches > 0 && total > 0.0).then(|| self.sums.map(|s| s / total))
    }

    /// Foundations holding at least a uniform share of the distribution.
    pub fn mentioned(&self) -> Vec<Foundation> {
        match self.distribution() {
            Some(d) => Foundation::ALL
                .into_iter()
                .filter(|f| d[f.index()] >= 1.0 / 6.0 - 1e-12)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Lowercase tokens split at every non-alphanumeric character; no stemming.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

pub fn emfd_score(rationale: &str, lexicon: &EmfdLexicon) -> FoundationScores {
    let mut out = FoundationScores::default();
    for token in tokenize(rationale) {
        if let Some(scores) = lexicon.terms.get(&token) {
            out.matches += 1;
            for (acc, s) in out.sums.iter_mut().zip(scores) {
                *acc += s;
            }
        }
    }
    out
}

/// Foundation profile from the same generative process as value profiles,
/// over the six foundations.
pub fn mft_profile_baseline<R: Rng + ?Sized>(
    topic: &str,
    base: &BaseMeasure,
    counts: &BTreeMap<String, u64>,
    alpha: f64,
    size: Option<usize>,
    rng: &mut R,
) -> Result<ValueProfile, ProfilingError> {
    let model = fit_topic_model(topic, base, counts, alpha)?;
    sample_profile(&model, size, rng)
}
