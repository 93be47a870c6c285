use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pluralign::metrics::CountMode;
use pluralign::pipeline::{write_atomic, PipelineError, ResolvedConfig, Run, Strategy};
use pluralign::synth::{self, SynthConfig};
use pluralign::taxonomy::reference_taxonomy;

#[derive(Parser)]
#[command(
    name = "pluralign",
    version,
    about = "Distributional alignment of human and model moral judgments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override as `dotted.key=value`; repeatable, later wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus, map labels, compute consensus levels.
    Ingest,
    /// Select an equal number of dilemmas per consensus bucket.
    BalanceBuckets {
        #[arg(long)]
        per_bucket: Option<usize>,
    },
    /// Elicit model judgments with one strategy.
    Elicit {
        #[arg(long)]
        strategy: Strategy,
        /// Evaluations per dilemma; defaults to the human count.
        #[arg(long)]
        n: Option<usize>,
        /// Draw profiles from the prior only.
        #[arg(long)]
        prior_only: bool,
        /// Values per profile; 0 uses the full ranking.
        #[arg(long)]
        profile_size: Option<usize>,
        /// Output label; defaults to the strategy name.
        #[arg(long)]
        label: Option<String>,
        /// Model provider spec, e.g. `stub:acceptable` or `openai:gpt-4o`.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Restrict to the balanced selection.
        #[arg(long)]
        balanced: bool,
    },
    /// Extract value expressions and build the value taxonomy.
    FitTaxonomy,
    /// Fit the base measure and per-topic Dirichlet models.
    FitProfiles,
    /// Compute alignment and value-diversity reports.
    Report {
        #[arg(long, value_parser = parse_count_mode)]
        entropy_mode: Option<CountMode>,
    },
    /// Write a synthetic corpus with a known profile-to-verdict rule.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_dilemmas: usize,
        #[arg(long, default_value_t = 7)]
        synth_seed: u64,
    },
    /// Write the built-in 60-value reference taxonomy.
    ReferenceTaxonomy {
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_count_mode(s: &str) -> Result<CountMode, String> {
    match s {
        "dedup" => Ok(CountMode::Dedup),
        "mentions" => Ok(CountMode::Mentions),
        _ => Err(format!("expected dedup or mentions, got {s}")),
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn overrides(g: &Global) -> Vec<String> {
    let mut out = g.set.clone();
    if let Some(s) = g.seed {
        out.push(format!("seed={s}"));
    }
    if let Some(d) = &g.out_dir {
        out.push(format!("out_dir={}", toml_str(&d.display().to_string())));
    }
    if let Some(w) = g.workers {
        out.push(format!("workers={w}"));
    }
    out
}

fn load(g: &Global, extra: Vec<String>) -> Result<Run, PipelineError> {
    let mut sets = overrides(g);
    sets.extend(extra);
    Run::new(ResolvedConfig::load(g.config.as_deref(), &sets)?)
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    let g = &cli.global;
    Ok(match cli.command {
        Command::Ingest => load(g, vec![])?.cmd_ingest()?.to_string(),
        Command::BalanceBuckets { per_bucket } => {
            let extra = per_bucket
                .map(|p| format!("ingest.balance_per_bucket={p}"))
                .into_iter()
                .collect();
            load(g, extra)?.cmd_balance()?.to_string()
        }
        Command::Elicit {
            strategy,
            n,
            prior_only,
            profile_size,
            label,
            model,
            temperature,
            balanced,
        } => {
            let mut extra = Vec::new();
            if let Some(n) = n {
                extra.push(format!("elicit.n={n}"));
            }
            if prior_only {
                extra.push("elicit.prior_only=true".into());
            }
            if let Some(k) = profile_size {
                extra.push(format!("elicit.profile_size={k}"));
            }
            if let Some(l) = label {
                extra.push(format!("elicit.label={}", toml_str(&l)));
            }
            if let Some(m) = model {
                extra.push(format!("providers.model.name={}", toml_str(&m)));
            }
            if let Some(t) = temperature {
                extra.push(format!("elicit.temperature={t:?}"));
            }
            if balanced {
                extra.push("elicit.balanced=true".into());
            }
            load(g, extra)?.cmd_elicit(strategy)?.to_string()
        }
        Command::FitTaxonomy => load(g, vec![])?.cmd_fit_taxonomy()?.to_string(),
        Command::FitProfiles => load(g, vec![])?.cmd_fit_profiles()?.to_string(),
        Command::Report { entropy_mode } => {
            let extra = entropy_mode
                .map(|m| {
                    format!(
                        "report.entropy_mode={}",
                        toml_str(if m == CountMode::Dedup { "dedup" } else { "mentions" })
                    )
                })
                .into_iter()
                .collect();
            load(g, extra)?.cmd_report()?.to_string()
        }
        Command::Synth {
            out,
            n_dilemmas,
            synth_seed,
        } => {
            let cfg = SynthConfig {
                n_dilemmas,
                seed: synth_seed,
                ..SynthConfig::default()
            };
            let corpus = synth::generate(&cfg)?;
            corpus.write(&out).map_err(|e| PipelineError::io(&out, e))?;
            format!(
                "synth: {} dilemmas, {} judgments written to {}\n",
                corpus.dilemmas.len(),
                corpus.judgments.len(),
                out.display()
            )
        }
        Command::ReferenceTaxonomy { out } => {
            let tax = reference_taxonomy();
            let text = serde_json::to_string_pretty(&tax).expect("serialisable taxonomy") + "\n";
            write_atomic(&out, &text)?;
            format!(
                "reference taxonomy ({} values) written to {}\n",
                tax.len(),
                out.display()
            )
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
