//! Acceptance suite. Runs without the test harness so every criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any fails.
//!
//! Set `UPDATE_GOLDEN=1` to rewrite the golden files of criterion 9.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use pluralign::corpus::Verdict;
use pluralign::elicitation::{infer_persona, parse_evaluation, FailureReason, ScoreTable, SubredditScore};
use pluralign::metrics::{
    alignment_delta, delta_records, judgment_distribution, normalized_entropy, topk_concentration, ValueDistribution,
};
use pluralign::pipeline::{read_csv, ResolvedConfig, Run, Strategy};
use pluralign::profiling::{dirichlet_draw, fit_base_measure, fit_topic_model, DrawMode};
use pluralign::rng;
use pluralign::synth::{self, SynthConfig};
use pluralign::taxonomy::{cluster_expressions, silhouette, DistanceMatrix, REFERENCE_VALUES};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

// ---- 1 ----------------------------------------------------------------

fn judgment_exactness() -> Check {
    let start = Instant::now();
    let mut r = rng::stream(101);
    let mut human = Vec::new();
    let mut model = Vec::new();
    let mut expected = BTreeMap::new();
    for i in 0..1000 {
        let id = format!("d{i:04}");
        let hv: Vec<Verdict> = (0..r.random_range(1..=300))
            .map(|_| {
                if r.random_bool(0.6) {
                    Verdict::Acceptable
                } else {
                    Verdict::Unacceptable
                }
            })
            .collect();
        let mv: Vec<Verdict> = (0..r.random_range(1..=300))
            .map(|_| {
                if r.random_bool(0.4) {
                    Verdict::Acceptable
                } else {
                    Verdict::Unacceptable
                }
            })
            .collect();
        // recount with explicit loops
        let mut ha = 0u64;
        for v in &hv {
            if *v == Verdict::Acceptable {
                ha += 1;
            }
        }
        let mut ma = 0u64;
        for v in &mv {
            if *v == Verdict::Acceptable {
                ma += 1;
            }
        }
        let ph = ha as f64 / hv.len() as f64;
        let pm = ma as f64 / mv.len() as f64;
        let h = judgment_distribution(&id, &hv, "human").map_err(|e| e.to_string())?;
        let m = judgment_distribution(&id, &mv, "model").map_err(|e| e.to_string())?;
        ensure(
            (h.p_acceptable - ph).abs() <= 1e-12,
            format!("{id}: human p {} vs {ph}", h.p_acceptable),
        )?;
        ensure(
            (m.p_acceptable - pm).abs() <= 1e-12,
            format!("{id}: model p {} vs {pm}", m.p_acceptable),
        )?;
        let d = alignment_delta(&h, &m).map_err(|e| e.to_string())?;
        let oracle = if ph > pm { ph - pm } else { pm - ph };
        ensure((d - oracle).abs() <= 1e-12, format!("{id}: delta {d} vs {oracle}"))?;
        expected.insert(id, oracle);
        human.push(h);
        model.push(m);
    }
    let records = delta_records(&human, &model).map_err(|e| e.to_string())?;
    ensure(records.len() == 1000, "delta_records dropped rows")?;
    for rec in &records {
        ensure(
            (rec.delta - expected[&rec.dilemma_id]).abs() <= 1e-12,
            format!("{}: record delta", rec.dilemma_id),
        )?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("1000 dilemmas match recount to 1e-12 in {elapsed:.2?}"))
}

// ---- 2 ----------------------------------------------------------------

/// Top-ten shares in tenths of a percent; the remaining mass is spread over
/// the other fifty values, each below the tenth-ranked share.
fn table_fixture(top: &[(&str, u64)], rest_high: u64, n_high: usize) -> ValueDistribution {
    let mut counts: BTreeMap<String, u64> = top.iter().map(|(v, c)| (v.to_string(), *c)).collect();
    let others: Vec<&str> = REFERENCE_VALUES
        .iter()
        .copied()
        .filter(|v| !counts.contains_key(*v))
        .collect();
    assert_eq!(others.len(), 50);
    for (i, v) in others.iter().enumerate() {
        counts.insert(v.to_string(), if i < n_high { rest_high } else { rest_high - 1 });
    }
    assert_eq!(counts.values().sum::<u64>(), 1000);
    ValueDistribution::from_counts("global", "fixture", counts)
}

fn table_concentration() -> Check {
    let model = table_fixture(
        &[
            ("Autonomy", 223),
            ("Care", 127),
            ("Well-being", 109),
            ("Respect", 78),
            ("Compassion", 66),
            ("Harmony", 59),
            ("Honesty", 47),
            ("Integrity", 39),
            ("Justice", 36),
            ("Responsibility", 32),
        ],
        4,
        34,
    );
    let human = table_fixture(
        &[
            ("Autonomy", 55),
            ("Compassion", 45),
            ("Respect", 42),
            ("Harmony", 38),
            ("Honesty", 35),
            ("Care", 39),
            ("Integrity", 33),
            ("Justice", 22),
            ("Well-being", 22),
            ("Freedom", 21),
        ],
        13,
        48,
    );
    let m = topk_concentration(&model, 10).map_err(|e| e.to_string())?;
    let h = topk_concentration(&human, 10).map_err(|e| e.to_string())?;
    ensure((m - 0.816).abs() <= 1e-3, format!("model top-10 {m}"))?;
    ensure((h - 0.352).abs() <= 1e-3, format!("human top-10 {h}"))?;
    ensure((human.prob("Autonomy") - 0.055).abs() <= 1e-12, "human Autonomy share")?;
    Ok(format!("top-10 share {m:.3} (model), {h:.3} (human)"))
}

// ---- 3 ----------------------------------------------------------------

/// Independent sampler: normalised Gamma variates.
fn oracle_mean(shape: &[f64], draws: usize, r: &mut impl Rng) -> Vec<f64> {
    let gammas: Vec<Gamma<f64>> = shape.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
    let mut acc = vec![0.0; shape.len()];
    for _ in 0..draws {
        let g: Vec<f64> = gammas.iter().map(|d| d.sample(r)).collect();
        let s: f64 = g.iter().sum();
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x / s;
        }
    }
    acc.iter().map(|a| a / draws as f64).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dirichlet_oracle() -> Check {
    const DRAWS: usize = 100_000;
    let start = Instant::now();
    let mut r = rng::stream(303);
    let mut worst: f64 = 0.0;
    let labels: Vec<String> = REFERENCE_VALUES.iter().map(|s| s.to_string()).collect();
    for trial in 0..5 {
        let shape: Vec<f64> = (0..60).map(|_| r.random_range(0.05..5.0)).collect();
        let total: f64 = shape.iter().sum();
        let expected: Vec<f64> = shape.iter().map(|a| a / total).collect();
        let mut acc = vec![0.0; 60];
        for _ in 0..DRAWS {
            for (a, x) in acc
                .iter_mut()
                .zip(dirichlet_draw(&shape, &mut r).map_err(|e| e.to_string())?)
            {
                *a += x;
            }
        }
        let empirical: Vec<f64> = acc.iter().map(|a| a / DRAWS as f64).collect();
        let d = max_abs_diff(&empirical, &expected);
        ensure(d <= 1e-2, format!("trial {trial}: sampler mean off by {d}"))?;
        worst = worst.max(d);

        // posterior: alpha * base + counts
        let base = fit_base_measure(&labels, labels.iter().map(std::iter::once), 0.0).map_err(|e| e.to_string())?;
        let counts: BTreeMap<String, u64> = labels.iter().map(|l| (l.clone(), r.random_range(0..20u64))).collect();
        let model = fit_topic_model("t", &base, &counts, 10.0)
            .map_err(|e| e.to_string())?
            .with_draw_mode(DrawMode::Posterior);
        let closed = model.mean();
        let mc = oracle_mean(model.params(), DRAWS, &mut r);
        let d = max_abs_diff(&closed, &mc);
        ensure(d <= 1e-2, format!("trial {trial}: posterior mean off by {d}"))?;
        worst = worst.max(d);
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("max mean error {worst:.2e} over 5 vectors in {elapsed:.2?}"))
}

// ---- 4 ----------------------------------------------------------------

fn dist(pairs: &[(&str, u64)]) -> ValueDistribution {
    ValueDistribution::from_counts("d", "t", pairs.iter().map(|(v, c)| (v.to_string(), *c)).collect())
}

fn entropy_cases() -> Check {
    let h = |v: &ValueDistribution| normalized_entropy(v, 60).map_err(|e| e.to_string());
    ensure(h(&dist(&[("Care", 7)]))? == 0.0, "single support is not 0")?;
    let uniform: Vec<(&str, u64)> = REFERENCE_VALUES.iter().map(|v| (*v, 3)).collect();
    let u = h(&dist(&uniform))?;
    ensure((u - 1.0).abs() <= 1e-12, format!("uniform gives {u}"))?;
    let two = h(&dist(&[("Care", 2), ("Respect", 2)]))?;
    let expect = 2f64.ln() / 60f64.ln();
    ensure(
        (two - expect).abs() <= 1e-9,
        format!("{{2,2}} gives {two}, expected {expect}"),
    )?;
    let mut r = rng::stream(404);
    let counts: Vec<u64> = (0..60).map(|_| r.random_range(0..50)).collect();
    let base: Vec<(&str, u64)> = REFERENCE_VALUES.iter().copied().zip(counts.iter().copied()).collect();
    let reference = h(&dist(&base))?;
    let mut shuffled = counts.clone();
    for i in 0..100 {
        shuffled.shuffle(&mut r);
        let pairs: Vec<(&str, u64)> = REFERENCE_VALUES.iter().copied().zip(shuffled.iter().copied()).collect();
        let x = h(&dist(&pairs))?;
        ensure(
            (x - reference).abs() <= 1e-12,
            format!("shuffle {i}: {x} vs {reference}"),
        )?;
    }
    Ok("0, 1, ln2/ln60 and 100 permutations agree".into())
}

// ---- 5 ----------------------------------------------------------------

fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (1.0 - dot / (nu * nv)).clamp(0.0, 2.0)
}

/// O(n^2) silhouette straight from the definition.
fn brute_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own
            .iter()
            .map(|&j| cosine_distance(&points[i], &points[j]))
            .sum::<f64>()
            / own.len() as f64;
        let mut b = f64::INFINITY;
        let k = labels.iter().max().unwrap() + 1;
        for c in 0..k {
            if c == labels[i] {
                continue;
            }
            let other: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
            if other.is_empty() {
                continue;
            }
            let m = other
                .iter()
                .map(|&j| cosine_distance(&points[i], &points[j]))
                .sum::<f64>()
                / other.len() as f64;
            b = b.min(m);
        }
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

fn clustering_oracle() -> Check {
    let mut r = rng::stream(505);
    let noise = rand_distr::Normal::new(0.0, 0.08).unwrap();
    let centres = [[1.0, 0.2, 0.0], [0.0, 0.3, 1.0]];
    let points: Vec<Vec<f64>> = (0..40)
        .map(|i| centres[i / 20].iter().map(|c| c + noise.sample(&mut r)).collect())
        .collect();
    let c = cluster_expressions(&points, 2..=10).map_err(|e| e.to_string())?;
    ensure(c.k == 2, format!("best k = {}", c.k))?;
    let truth: Vec<usize> = (0..40).map(|i| i / 20).collect();
    ensure(
        c.labels
            .iter()
            .zip(&truth)
            .all(|(a, b)| (a == b) == (c.labels[0] == truth[0])),
        "clusters do not recover the blobs",
    )?;
    let dm = DistanceMatrix::cosine(&points).map_err(|e| e.to_string())?;
    let module = silhouette(&dm, &c.labels);
    let brute = brute_silhouette(&points, &c.labels);
    ensure(
        (module - brute).abs() <= 1e-9,
        format!("silhouette {module} vs brute force {brute}"),
    )?;
    // also on a three-way cut, which has an uneven split
    let three: Vec<usize> = (0..40)
        .map(|i| {
            if i < 20 {
                0
            } else if i < 25 {
                1
            } else {
                2
            }
        })
        .collect();
    let (m3, b3) = (silhouette(&dm, &three), brute_silhouette(&points, &three));
    ensure((m3 - b3).abs() <= 1e-9, format!("3-way silhouette {m3} vs {b3}"))?;
    Ok(format!("k = 2, silhouette {module:.6} equals brute force"))
}

// ---- 6 ----------------------------------------------------------------

fn persona_inference() -> Check {
    let score = |x: f64| SubredditScore {
        partisanship: x,
        age: x,
        gender: x,
    };
    let table = ScoreTable::new(BTreeMap::from([
        ("a".to_string(), score(0.5)),
        ("b".to_string(), score(-0.5)),
    ]));
    let counts = BTreeMap::from([("a".to_string(), 3), ("b".to_string(), 1)]);
    let p = infer_persona(&counts, &table).map_err(|e| e.to_string())?;
    ensure(
        p.partisanship == 0.25 && p.age_score == 0.25 && p.gender_score == 0.25,
        format!("{p:?}"),
    )?;
    let mut r = rng::stream(606);
    for i in 0..10_000 {
        let n_subs = r.random_range(1..8);
        let mut scores = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for s in 0..n_subs {
            let name = format!("s{s}");
            scores.insert(
                name.clone(),
                SubredditScore {
                    partisanship: r.random_range(-1.0..=1.0),
                    age: r.random_range(-1.0..=1.0),
                    gender: r.random_range(-1.0..=1.0),
                },
            );
            counts.insert(name, r.random_range(1..1000u64));
        }
        let p = infer_persona(&counts, &ScoreTable::new(scores)).map_err(|e| e.to_string())?;
        for x in [p.partisanship, p.age_score, p.gender_score] {
            ensure((-1.0..=1.0).contains(&x), format!("fixture {i}: score {x}"))?;
        }
    }
    Ok("3:1 at +-0.5 gives 0.25; 10^4 random fixtures stay in [-1, 1]".into())
}

// ---- 7 and 8 ----------------------------------------------------------

struct SynthResults {
    /// `(bucket, zero_shot, dmp)` mean deltas, lowest consensus first.
    buckets: Vec<(String, f64, f64)>,
    zero_mean: f64,
    dmp_mean: f64,
    entropy: BTreeMap<String, f64>,
    top10: BTreeMap<String, f64>,
    elapsed: Duration,
}

fn run_synthetic() -> Result<SynthResults, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = synth::generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    corpus.write(dir.path()).map_err(|e| e.to_string())?;
    let q = |p: &Path| format!("{:?}", p.display().to_string());
    let base = vec![
        format!("out_dir={}", q(&dir.path().join("out"))),
        format!("paths.dilemmas={}", q(&dir.path().join("dilemmas.jsonl"))),
        format!("paths.judgments={}", q(&dir.path().join("judgments.jsonl"))),
        "seed=13".into(),
    ];
    let run = |extra: &[&str]| -> Result<Run, String> {
        let mut sets = base.clone();
        sets.extend(extra.iter().map(|s| s.to_string()));
        Run::new(ResolvedConfig::load(None, &sets).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    let e = |x: pluralign::pipeline::PipelineError| x.to_string();
    run(&[])?.cmd_ingest().map_err(e)?;
    run(&[&format!("providers.model.name={:?}", synth::ZERO_SHOT_STUB)])?
        .cmd_elicit(Strategy::ZeroShot)
        .map_err(e)?;
    run(&[])?.cmd_fit_taxonomy().map_err(e)?;
    run(&[])?.cmd_fit_profiles().map_err(e)?;
    run(&[&format!("providers.model.name={:?}", synth::DMP_STUB)])?
        .cmd_elicit(Strategy::Dmp)
        .map_err(e)?;
    let reporter = run(&[])?;
    reporter.cmd_report().map_err(e)?;

    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number {s:?}"));
    let rows = read_csv(&reporter.out("report/delta_by_bucket.csv"), "").map_err(e)?;
    let mut buckets = Vec::new();
    let (mut zero_mean, mut dmp_mean) = (f64::NAN, f64::NAN);
    for row in &rows {
        let z = num(&row["zero_shot_mean_delta"])?;
        let d = num(&row["dmp_mean_delta"])?;
        if row["bucket"] == "all" {
            (zero_mean, dmp_mean) = (z, d);
        } else {
            buckets.push((row["bucket"].clone(), z, d));
        }
    }
    let mut entropy = BTreeMap::new();
    let mut top10 = BTreeMap::new();
    for row in read_csv(&reporter.out("report/concentration.csv"), "").map_err(e)? {
        entropy.insert(row["source"].clone(), num(&row["mean_entropy"])?);
        top10.insert(row["source"].clone(), num(&row["top10_share"])?);
    }
    Ok(SynthResults {
        buckets,
        zero_mean,
        dmp_mean,
        entropy,
        top10,
        elapsed: start.elapsed(),
    })
}

fn synthetic_alignment(s: &SynthResults) -> Check {
    let zero: Vec<f64> = s.buckets.iter().map(|b| b.1).collect();
    ensure(
        zero.windows(2).all(|w| w[0] > w[1]),
        format!("zero-shot deltas by bucket not monotone: {zero:?}"),
    )?;
    let reduction = 1.0 - s.dmp_mean / s.zero_mean;
    ensure(reduction >= 0.5, format!("reduction {:.1}%", 100.0 * reduction))?;
    let gains: Vec<f64> = s.buckets.iter().map(|b| b.1 - b.2).collect();
    ensure(
        gains[1..].iter().all(|g| *g < gains[0]),
        format!("largest reduction not in the lowest bucket: {gains:?}"),
    )?;
    within(s.elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "mean delta {:.3} -> {:.3} ({:.1}% lower), lowest bucket gains {:.3}, {:.1?}",
        s.zero_mean,
        s.dmp_mean,
        100.0 * reduction,
        gains[0],
        s.elapsed
    ))
}

fn synthetic_diversity(s: &SynthResults) -> Check {
    let (hz, hd) = (s.entropy["zero_shot"], s.entropy["dmp"]);
    let (tz, td) = (s.top10["zero_shot"], s.top10["dmp"]);
    ensure(hd - hz >= 0.05, format!("entropy {hz:.3} -> {hd:.3}"))?;
    ensure(td < tz, format!("top-10 share {tz:.3} -> {td:.3}"))?;
    Ok(format!("entropy {hz:.3} -> {hd:.3}, top-10 share {tz:.3} -> {td:.3}"))
}

// ---- 9 ----------------------------------------------------------------

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/small")
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Runs every command against a fresh copy of the fixture; returns the
/// output files keyed by relative path.
fn pipeline_once() -> Result<BTreeMap<String, Vec<u8>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for entry in std::fs::read_dir(fixture_dir()).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        if entry.path().is_file() {
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).map_err(|e| e.to_string())?;
        }
    }
    let steps: &[&[&str]] = &[
        &["ingest"],
        &["balance-buckets"],
        &["elicit", "--strategy", "zero_shot"],
        &["elicit", "--strategy", "persona_sampled"],
        &["elicit", "--strategy", "persona_inferred"],
        &["elicit", "--strategy", "panel"],
        &[
            "elicit",
            "--strategy",
            "zero_shot",
            "--model",
            "stub:flaky:0.3",
            "--label",
            "flaky",
        ],
        &["fit-taxonomy"],
        &["fit-profiles"],
        &["elicit", "--strategy", "dmp"],
        &["elicit", "--strategy", "mft"],
        &["elicit", "--strategy", "dmp", "--prior-only"],
        &["report"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_pluralign"))
            .current_dir(dir.path())
            .args(["--config", "run.toml"])
            .args(*args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(
            out.status.success(),
            format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)),
        )?;
    }
    let root = dir.path().join("out");
    let mut files = BTreeMap::new();
    let mut stack = vec![root.clone()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = entry.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(&root).unwrap().to_string_lossy().replace('\\', "/");
                files.insert(rel, std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn golden_determinism() -> Check {
    let a = pipeline_once()?;
    let b = pipeline_once()?;
    ensure(a.keys().eq(b.keys()), "runs produced different file sets")?;
    for (k, v) in &a {
        ensure(&b[k] == v, format!("{k} differs between runs"))?;
    }
    let golden = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let _ = std::fs::remove_dir_all(&golden);
        for (k, v) in &a {
            let p = golden.join(k);
            std::fs::create_dir_all(p.parent().unwrap()).map_err(|e| e.to_string())?;
            std::fs::write(&p, v).map_err(|e| e.to_string())?;
        }
    }
    for (k, v) in &a {
        let want = std::fs::read(golden.join(k)).map_err(|_| format!("golden file {k} missing"))?;
        ensure(&want == v, format!("{k} differs from golden"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical across two runs and golden",
        a.len()
    ))
}

// ---- 10 ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum Expect {
    Ok(Verdict),
    NoEvaluation,
    BadToken,
    Conflicting,
    NoRationale,
}

/// Builds 100 replies whose outcome follows from how they were assembled.
fn adversarial_cases() -> Vec<(String, Expect, &'static str)> {
    let eval_labels = [
        "Evaluation",
        "evaluation",
        "EVALUATION",
        "EvAlUaTiOn",
        "  Evaluation",
        "**Evaluation**",
    ];
    let rat_labels = [
        "Rationale",
        "rationale",
        "RATIONALE",
        "rAtIoNaLe",
        "\tRationale",
        "**Rationale**",
    ];
    let tokens = [
        ("ACCEPTABLE", Some(Verdict::Acceptable)),
        ("acceptable", Some(Verdict::Acceptable)),
        ("Acceptable", Some(Verdict::Acceptable)),
        ("  UNACCEPTABLE  ", Some(Verdict::Unacceptable)),
        ("unacceptable", Some(Verdict::Unacceptable)),
        ("**Unacceptable**", Some(Verdict::Unacceptable)),
        ("Acceptable.", Some(Verdict::Acceptable)),
        ("maybe", None),
        ("NOT ACCEPTABLE", None),
        ("<ACCEPTABLE | UNACCEPTABLE>", None),
        ("", None),
        ("acceptable-ish", None),
    ];
    let mut cases = Vec::new();
    let mut i = 0usize;
    while cases.len() < 60 {
        let el = eval_labels[i % eval_labels.len()];
        let rl = rat_labels[(i / 2) % rat_labels.len()];
        let (tok, verdict) = tokens[i % tokens.len()];
        let pad = if i.is_multiple_of(3) { "   " } else { "" };
        let reply = format!("{pad}{el}:{pad} {tok}{pad}\n{rl}: reason number {i}{pad}\n");
        let expect = match verdict {
            Some(v) => Expect::Ok(v),
            None => Expect::BadToken,
        };
        cases.push((reply, expect, "label/token variant"));
        i += 1;
    }
    for j in 0..10 {
        let tok = if j % 2 == 0 { "ACCEPTABLE" } else { "unacceptable" };
        cases.push((
            format!("Rationale: only a reason {j}\n"),
            Expect::NoEvaluation,
            "missing evaluation",
        ));
        cases.push((format!("Evaluation: {tok}\n"), Expect::NoRationale, "missing rationale"));
    }
    for j in 0..8 {
        let free = [
            "I think it depends.",
            "",
            "   \n\n  ",
            "Verdict: ACCEPTABLE\nReason: x",
            "The evaluation is acceptable.",
            "Evaluation ACCEPTABLE\nRationale fine",
            "ACCEPTABLE",
            "Rationale:",
        ][j];
        cases.push((free.to_string(), Expect::NoEvaluation, "free text"));
    }
    for j in 0..6 {
        let reply = if j % 2 == 0 {
            "Evaluation: ACCEPTABLE\nEvaluation: UNACCEPTABLE\nRationale: torn".to_string()
        } else {
            "Rationale: torn\nevaluation: unacceptable\nEVALUATION: acceptable".to_string()
        };
        cases.push((reply, Expect::Conflicting, "conflicting"));
    }
    for j in 0..6 {
        let (reply, expect) = match j {
            0 => (
                "Evaluation: ACCEPTABLE\nEvaluation: acceptable\nRationale: twice".into(),
                Expect::Ok(Verdict::Acceptable),
            ),
            1 => (
                "\n\n\nEvaluation: UNACCEPTABLE\n\n\nRationale: spaced\n\n".into(),
                Expect::Ok(Verdict::Unacceptable),
            ),
            2 => (
                "Evaluation: ACCEPTABLE\r\nRationale: crlf\r\n".into(),
                Expect::Ok(Verdict::Acceptable),
            ),
            3 => (
                "Sure! Here you go.\nEvaluation: ACCEPTABLE\nRationale: chatty".into(),
                Expect::Ok(Verdict::Acceptable),
            ),
            4 => ("Evaluation: ACCEPTABLE\nRationale:    \n".into(), Expect::NoRationale),
            _ => (
                format!("Evaluation: UNACCEPTABLE\nRationale: {}", "long ".repeat(2000)),
                Expect::Ok(Verdict::Unacceptable),
            ),
        };
        cases.push((reply, expect, "layout"));
    }
    assert_eq!(cases.len(), 100);
    cases
}

fn parser_robustness() -> Check {
    let cases = adversarial_cases();
    for (n, (reply, expect, kind)) in cases.iter().enumerate() {
        let got = catch_unwind(|| parse_evaluation(reply)).map_err(|_| format!("case {n} ({kind}) panicked"))?;
        let actual = match &got {
            Ok(p) => Expect::Ok(p.verdict),
            Err(f) => {
                ensure(&f.raw_reply == reply, format!("case {n}: raw reply not preserved"))?;
                match f.reason {
                    FailureReason::NoEvaluationLine => Expect::NoEvaluation,
                    FailureReason::BadToken(_) => Expect::BadToken,
                    FailureReason::Conflicting => Expect::Conflicting,
                    FailureReason::NoRationale => Expect::NoRationale,
                }
            }
        };
        ensure(
            actual == *expect,
            format!("case {n} ({kind}) {reply:?}: expected {expect:?}, got {actual:?}"),
        )?;
    }
    Ok(format!("{} replies parse or fail as expected", cases.len()))
}

// ---- driver -----------------------------------------------------------

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let synth = catch_unwind(run_synthetic).unwrap_or_else(|_| Err("synthetic run panicked".into()));
    let synth_results = || synth.as_ref().map_err(Clone::clone);
    let mut outcomes: Vec<(&str, Check)> = Vec::new();
    let guarded = |f: fn() -> Check| catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
    outcomes.push(("judgment distribution and delta exactness", guarded(judgment_exactness)));
    outcomes.push(("top-10 concentration arithmetic", guarded(table_concentration)));
    outcomes.push(("Dirichlet sampling oracle", guarded(dirichlet_oracle)));
    outcomes.push(("normalized entropy", guarded(entropy_cases)));
    outcomes.push(("clustering and silhouette oracle", guarded(clustering_oracle)));
    outcomes.push(("persona inference", guarded(persona_inference)));
    let seven = synth_results().and_then(|s| {
        catch_unwind(AssertUnwindSafe(|| synthetic_alignment(s))).unwrap_or_else(|_| Err("panicked".into()))
    });
    outcomes.push(("synthetic profile-steering alignment", seven));
    let eight = synth_results().and_then(|s| {
        catch_unwind(AssertUnwindSafe(|| synthetic_diversity(s))).unwrap_or_else(|_| Err("panicked".into()))
    });
    outcomes.push(("synthetic value diversity", eight));
    outcomes.push(("pipeline determinism against golden files", guarded(golden_determinism)));
    outcomes.push(("adversarial reply parsing", guarded(parser_robustness)));

    let mut failed = 0;
    for (i, (name, outcome)) in outcomes.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
