//! Python bindings for the `pluralign` toolkit.
//!
//! Verdicts cross the boundary as booleans (`True` = Acceptable); value
//! distributions as `dict[str, int]`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use core::corpus::Verdict;
use core::metrics::ValueDistribution;
use core::pipeline::{ResolvedConfig, Run, Strategy};
use pluralign as core;

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn verdicts(flags: &[bool]) -> Vec<Verdict> {
    flags
        .iter()
        .map(|&a| if a { Verdict::Acceptable } else { Verdict::Unacceptable })
        .collect()
}

fn distribution(counts: BTreeMap<String, u64>) -> ValueDistribution {
    ValueDistribution::from_counts("python", "python", counts)
}

#[pyclass(name = "JudgmentDistribution", frozen, get_all)]
struct PyJudgmentDistribution {
    dilemma_id: String,
    p_acceptable: f64,
    n_acceptable: usize,
    n: usize,
    source: String,
}

#[pymethods]
impl PyJudgmentDistribution {
    fn __repr__(&self) -> String {
        format!(
            "JudgmentDistribution({:?}, p_acceptable={}, n={}, source={:?})",
            self.dilemma_id, self.p_acceptable, self.n, self.source
        )
    }
}

impl From<core::JudgmentDistribution> for PyJudgmentDistribution {
    fn from(d: core::JudgmentDistribution) -> Self {
        Self {
            dilemma_id: d.dilemma_id,
            p_acceptable: d.p_acceptable,
            n_acceptable: d.n_acceptable,
            n: d.n,
            source: d.source,
        }
    }
}

impl From<&PyJudgmentDistribution> for core::JudgmentDistribution {
    fn from(d: &PyJudgmentDistribution) -> Self {
        Self {
            dilemma_id: d.dilemma_id.clone(),
            p_acceptable: d.p_acceptable,
            n_acceptable: d.n_acceptable,
            n: d.n,
            source: d.source.clone(),
        }
    }
}

#[pyfunction]
#[pyo3(signature = (dilemma_id, verdicts, source = "human"))]
fn judgment_distribution(dilemma_id: &str, verdicts: Vec<bool>, source: &str) -> PyResult<PyJudgmentDistribution> {
    core::metrics::judgment_distribution(dilemma_id, &self::verdicts(&verdicts), source)
        .map(Into::into)
        .map_err(value_err)
}

#[pyfunction]
fn alignment_delta(human: &PyJudgmentDistribution, model: &PyJudgmentDistribution) -> PyResult<f64> {
    core::metrics::alignment_delta(&human.into(), &model.into()).map_err(value_err)
}

/// `(level, bucket label)` of one dilemma's verdicts.
#[pyfunction]
fn consensus_level(verdicts: Vec<bool>) -> PyResult<(f64, String)> {
    let r = core::corpus::consensus_level("python", &self::verdicts(&verdicts)).map_err(value_err)?;
    Ok((r.level, r.bucket.label().to_string()))
}

#[pyfunction]
#[pyo3(signature = (counts, k_norm = 60))]
fn normalized_entropy(counts: BTreeMap<String, u64>, k_norm: usize) -> PyResult<f64> {
    core::metrics::normalized_entropy(&distribution(counts), k_norm).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (counts, k = 10))]
fn topk_concentration(counts: BTreeMap<String, u64>, k: usize) -> PyResult<f64> {
    core::metrics::topk_concentration(&distribution(counts), k).map_err(value_err)
}

/// `(value, f_human, f_model, gap_pct)` rows for values both sources use.
#[pyfunction]
fn prevalence_gap(human: BTreeMap<String, u64>, model: BTreeMap<String, u64>) -> Vec<(String, f64, f64, f64)> {
    core::metrics::prevalence_gap(&distribution(human), &distribution(model))
        .ranked
        .into_iter()
        .map(|g| (g.value, g.f_human, g.f_model, g.gap_pct))
        .collect()
}

/// `(is_acceptable, rationale)`; raises `ValueError` on an unparseable reply.
#[pyfunction]
fn parse_evaluation(reply: &str) -> PyResult<(bool, String)> {
    let p = core::elicitation::parse_evaluation(reply).map_err(value_err)?;
    Ok((p.verdict == Verdict::Acceptable, p.rationale))
}

/// `(partisanship, age, gender)` from comment counts and a score table
/// mapping subreddit to its three scores.
#[pyfunction]
fn infer_persona(
    subreddit_counts: BTreeMap<String, u64>,
    scores: BTreeMap<String, (f64, f64, f64)>,
) -> PyResult<(f64, f64, f64)> {
    let table = core::elicitation::ScoreTable::new(
        scores
            .into_iter()
            .map(|(k, (partisanship, age, gender))| {
                (
                    k,
                    core::elicitation::SubredditScore {
                        partisanship,
                        age,
                        gender,
                    },
                )
            })
            .collect(),
    );
    let p = core::elicitation::infer_persona(&subreddit_counts, &table).map_err(value_err)?;
    Ok((p.partisanship, p.age_score, p.gender_score))
}

#[pyfunction]
#[pyo3(signature = (shape, seed = 0))]
fn dirichlet_draw(shape: Vec<f64>, seed: u64) -> PyResult<Vec<f64>> {
    core::profiling::dirichlet_draw(&shape, &mut core::rng::stream(seed)).map_err(value_err)
}

/// `(k, labels, silhouette)` of the best average-linkage cut.
#[pyfunction]
fn cluster(vectors: Vec<Vec<f64>>, k_min: usize, k_max: usize) -> PyResult<(usize, Vec<usize>, f64)> {
    let c = core::taxonomy::cluster_expressions(&vectors, k_min..=k_max).map_err(value_err)?;
    Ok((c.k, c.labels, c.silhouette))
}

#[pyfunction]
fn reference_values() -> Vec<&'static str> {
    core::taxonomy::REFERENCE_VALUES.to_vec()
}

/// Topic-level Dirichlet model over canonical values.
#[pyclass(name = "TopicModel", frozen)]
struct PyTopicModel {
    inner: core::TopicProfileModel,
}

#[pymethods]
impl PyTopicModel {
    /// Fits the base measure from `rationales` (lists of values), then the
    /// topic model from `counts`.
    #[new]
    #[pyo3(signature = (topic, categories, rationales, counts, alpha = 10.0, smoothing = 0.0, draw_mode = "tempered"))]
    fn new(
        topic: &str,
        categories: Vec<String>,
        rationales: Vec<Vec<String>>,
        counts: BTreeMap<String, u64>,
        alpha: f64,
        smoothing: f64,
        draw_mode: &str,
    ) -> PyResult<Self> {
        let mode = match draw_mode {
            "posterior" => core::profiling::DrawMode::Posterior,
            "prior_only" => core::profiling::DrawMode::PriorOnly,
            "tempered" => core::profiling::DrawMode::Tempered,
            other => return Err(value_err(format!("unknown draw mode {other:?}"))),
        };
        let base = core::profiling::fit_base_measure(&categories, &rationales, smoothing).map_err(value_err)?;
        let inner = core::profiling::fit_topic_model(topic, &base, &counts, alpha)
            .map_err(value_err)?
            .with_draw_mode(mode);
        Ok(Self { inner })
    }

    #[getter]
    fn topic(&self) -> &str {
        self.inner.topic()
    }

    fn params(&self) -> BTreeMap<String, f64> {
        self.inner.params_map()
    }

    fn mean(&self) -> BTreeMap<String, f64> {
        self.inner.values().iter().cloned().zip(self.inner.mean()).collect()
    }

    /// Top `size` values of one draw, weights renormalised; `None` keeps all.
    #[pyo3(signature = (size = Some(3), seed = 0))]
    fn sample_profile(&self, size: Option<usize>, seed: u64) -> PyResult<Vec<(String, f64)>> {
        let p = core::profiling::sample_profile(&self.inner, size, &mut core::rng::stream(seed)).map_err(value_err)?;
        Ok(p.entries().to_vec())
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("serialisable model")
    }
}

/// Runs one pipeline command; returns its printed summary.
#[pyfunction]
#[pyo3(signature = (command, config = None, overrides = Vec::new(), strategy = None))]
fn run(command: &str, config: Option<PathBuf>, overrides: Vec<String>, strategy: Option<&str>) -> PyResult<String> {
    let err = |e: core::pipeline::PipelineError| PyRuntimeError::new_err(e.to_string());
    let r = Run::new(ResolvedConfig::load(config.as_deref(), &overrides).map_err(err)?).map_err(err)?;
    let out = match command {
        "ingest" => r.cmd_ingest().map_err(err)?.to_string(),
        "balance-buckets" => r.cmd_balance().map_err(err)?.to_string(),
        "elicit" => {
            let s: Strategy = strategy
                .ok_or_else(|| value_err("elicit needs strategy="))?
                .parse()
                .map_err(err)?;
            r.cmd_elicit(s).map_err(err)?.to_string()
        }
        "fit-taxonomy" => r.cmd_fit_taxonomy().map_err(err)?.to_string(),
        "fit-profiles" => r.cmd_fit_profiles().map_err(err)?.to_string(),
        "report" => r.cmd_report().map_err(err)?.to_string(),
        other => return Err(value_err(format!("unknown command {other:?}"))),
    };
    Ok(out)
}

#[pymodule]
#[pyo3(name = "pluralign")]
fn pluralign_python(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyJudgmentDistribution>()?;
    m.add_class::<PyTopicModel>()?;
    m.add_function(wrap_pyfunction!(judgment_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(alignment_delta, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_level, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(topk_concentration, m)?)?;
    m.add_function(wrap_pyfunction!(prevalence_gap, m)?)?;
    m.add_function(wrap_pyfunction!(parse_evaluation, m)?)?;
    m.add_function(wrap_pyfunction!(infer_persona, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_draw, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(reference_values, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
