use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Judgment;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub age: u32,
    pub gender: String,
}

/// Commenter position along the three social dimensions, each in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferredPersona {
    pub partisanship: f64,
    pub age_score: f64,
    pub gender_score: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum PersonaError {
    #[error("demographic table is empty")]
    EmptyTable,
    #[error("demographic weights must be finite, nonnegative and sum to more than zero")]
    BadWeights,
    #[error("no subreddit in the comment history has a score")]
    NoOverlap,
    #[error("score table {path}: {message}")]
    ScoreTable { path: String, message: String },
}

/// Joint (age, gender) histogram of self-reported commenter attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicTable {
    rows: Vec<(PersonaSpec, f64)>,
}

impl DemographicTable {
    pub fn new(rows: Vec<(PersonaSpec, f64)>) -> Result<Self, PersonaError> {
        if rows.is_empty() {
            return Err(PersonaError::EmptyTable);
        }
        let total: f64 = rows.iter().map(|(_, w)| *w).sum();
        if rows.iter().any(|(_, w)| !w.is_finite() || *w < 0.0)
            || total.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(PersonaError::BadWeights);
        }
        Ok(Self { rows })
    }

    /// Counts judgments whose authors report both age and gender. Judgments
    /// are assumed to be one per author.
    pub fn from_judgments(judgments: &[Judgment]) -> Result<Self, PersonaError> {
        let mut counts: BTreeMap<PersonaSpec, f64> = BTreeMap::new();
        for j in judgments {
            if let (Some(age), Some(gender)) = (j.author_meta.age, j.author_meta.gender.as_ref()) {
                if age > 0 {
                    *counts
                        .entry(PersonaSpec {
                            age,
                            gender: gender.clone(),
                        })
                        .or_default() += 1.0;
                }
            }
        }
        Self::new(counts.into_iter().collect())
    }

    pub fn rows(&self) -> &[(PersonaSpec, f64)] {
        &self.rows
    }
}

/// Draws one persona with probability proportional to its row weight.
pub fn sample_persona<R: Rng + ?Sized>(table: &DemographicTable, rng: &mut R) -> Result<PersonaSpec, PersonaError> {
    let index = WeightedIndex::new(table.rows.iter().map(|(_, w)| *w)).map_err(|_| PersonaError::BadWeights)?;
    Ok(table.rows[index.sample(rng)].0.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubredditScore {
    pub partisanship: f64,
    pub age: f64,
    pub gender: f64,
}

/// Published subreddit scores, CSV `subreddit,partisanship,age,gender`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    scores: BTreeMap<String, SubredditScore>,
}

impl ScoreTable {
    pub fn new(scores: BTreeMap<String, SubredditScore>) -> Self {
        Self { scores }
    }

    pub fn load_csv(path: &Path) -> Result<Self, PersonaError> {
        let err = |message: String| PersonaError::ScoreTable {
            path: path.display().to_string(),
            message,
        };
        #[derive(Deserialize)]
        struct Row {
            subreddit: String,
            partisanship: f64,
            age: f64,
            gender: f64,
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| err(e.to_string()))?;
        let mut scores = BTreeMap::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| err(e.to_string()))?;
            for v in [row.partisanship, row.age, row.gender] {
                if !(-1.0..=1.0).contains(&v) {
                    return Err(err(format!("row {}: score {v} outside [-1, 1]", i + 2)));
                }
            }
            scores.insert(
                row.subreddit,
                SubredditScore {
                    partisanship: row.partisanship,
                    age: row.age,
                    gender: row.gender,
                },
            );
        }
        Ok(Self { scores })
    }

    pub fn get(&self, subreddit: &str) -> Option<&SubredditScore> {
        self.scores.get(subreddit)
    }
}

/// Comment-count weighted average of subreddit scores over the subreddits
/// present in the table.
pub fn infer_persona(
    subreddit_counts: &BTreeMap<String, u64>,
    scores: &ScoreTable,
) -> Result<InferredPersona, PersonaError> {
    let mut total = 0.0;
    let mut acc = [0.0f64; 3];
    for (sub, &count) in subreddit_counts {
        if let Some(s) = scores.get(sub) {
            let n = count as f64;
            total += n;
            acc[0] += n * s.partisanship;
            acc[1] += n * s.age;
            acc[2] += n * s.gender;
        }
    }
    if total <= 0.0 {
        return Err(PersonaError::NoOverlap);
    }
    Ok(InferredPersona {
        partisanship: (acc[0] / total).clamp(-1.0, 1.0),
        age_score: (acc[1] / total).clamp(-1.0, 1.0),
        gender_score: (acc[2] / total).clamp(-1.0, 1.0),
    })
}
