mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use btdpo_core::clients::{HttpClient, QualityScorer};
use btdpo_core::dpo::{batch_stats, read_quads, LogProbQuad};
use btdpo_core::filter::knee_point;
use btdpo_core::metrics::{evaluate_corpus, ExternalScoring, Segment};
use btdpo_core::pipeline::{IterationReport, Pipeline, PipelineConfig, Services, StartMode};
use btdpo_core::ErrorKind;

use config::CliConfig;

/// Curates back-translation preference data and evaluates translations.
#[derive(Parser)]
#[command(name = "btdpo", version)]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides a config value, e.g. `pipeline.filter.knee_override=0.7`.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Log filter (`error`, `warn`, `info`, `debug`, or a directive list).
    #[arg(long, default_value = "info", global = true)]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one curation pass and write the dataset, without training.
    Curate {
        /// Plain-text corpus; replaces the configured input.
        #[arg(long, conflicts_with = "parallel")]
        corpus: Option<PathBuf>,
        /// Tab-separated source/translation file; replaces the configured input.
        #[arg(long)]
        parallel: Option<PathBuf>,
        /// Output directory for datasets and reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the knee of a score distribution (one score per line).
    Knee {
        scores: PathBuf,
        /// Where to write the `score<TAB>difference` curve.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Evaluate the DPO objective over a JSONL file of log-probability quads.
    DpoEval {
        quads: PathBuf,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        length_normalized: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a corpus of (source, hypothesis, reference) triples.
    Report {
        /// TSV with three columns, or JSONL with source/hypothesis/reference.
        triples: PathBuf,
        /// Base URL of a quality scorer; replaces `[report.scorer]`.
        #[arg(long)]
        scorer: Option<String>,
        /// Scorer metric to request; repeatable. Replaces `report.metrics`.
        #[arg(long = "metric")]
        metrics: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full curate-train loop from scratch.
    Loop,
    /// Continue an interrupted loop from its checkpoint.
    Resume {
        /// Discard the checkpoint and start over.
        #[arg(long)]
        reset: bool,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

impl From<btdpo_core::Error> for Failure {
    fn from(e: btdpo_core::Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Transport => 2,
            ErrorKind::Validation => 3,
            ErrorKind::Internal => 4,
        };
        let message = match &e {
            btdpo_core::Error::ResetRequired { .. } => {
                format!("{e}\nhint: `btdpo resume --reset` discards the checkpoint")
            }
            _ => e.to_string(),
        };
        Self { code, message }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides).map_err(Failure::validation)?;
    match cli.command {
        Command::Curate {
            corpus,
            parallel,
            out,
        } => curate(cfg, corpus, parallel, out),
        Command::Knee { scores, curve } => knee(&scores, curve),
        Command::DpoEval {
            quads,
            beta,
            length_normalized,
            out,
        } => dpo_eval(&cfg, &quads, beta, length_normalized, out),
        Command::Report {
            triples,
            scorer,
            metrics,
            out,
        } => report(cfg, &triples, scorer, metrics, out),
        Command::Loop => run_loop(cfg, StartMode::Fresh),
        Command::Resume { reset } => {
            let pipeline = pipeline_config(&cfg)?;
            if reset {
                let state = pipeline.state_path();
                if state.exists() {
                    std::fs::remove_file(&state).map_err(|e| {
                        Failure::internal(format!("removing {}: {e}", state.display()))
                    })?;
                    tracing::info!(path = %state.display(), "checkpoint discarded");
                }
            }
            run_loop(cfg, StartMode::Resume)
        }
    }
}

fn pipeline_config(cfg: &CliConfig) -> CliResult<PipelineConfig> {
    cfg.pipeline
        .clone()
        .ok_or_else(|| Failure::validation("config has no [pipeline] section"))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::internal(format!("serializing output: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| Failure::internal(format!("writing {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn print_iterations(reports: &[IterationReport]) {
    println!(
        "{:>4} {:>9} {:>9} {:>7} {:>10} {:>8} {:>8}  training",
        "iter", "sentences", "faithful", "scored", "below-knee", "knee", "triplets"
    );
    for r in reports {
        let knee = r
            .knee
            .value
            .map(|k| format!("{k:.5}"))
            .unwrap_or_else(|| "-".into());
        let training = match &r.training {
            btdpo_core::pipeline::TrainingOutcome::Skipped { reason } => {
                format!("skipped ({reason})")
            }
            btdpo_core::pipeline::TrainingOutcome::Submitted { job_id, .. } => job_id.clone(),
            btdpo_core::pipeline::TrainingOutcome::Failed { job_id, reason } => {
                format!("{job_id} failed: {reason}")
            }
        };
        println!(
            "{:>4} {:>9} {:>9} {:>7} {:>10} {:>8} {:>8}  {training}",
            r.iteration,
            r.n_sentences,
            r.n_bleu_discarded,
            r.n_scored,
            r.n_below_knee,
            knee,
            r.n_triplets
        );
    }
}

fn curate(
    cfg: CliConfig,
    corpus: Option<PathBuf>,
    parallel: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CliResult {
    let mut pc = pipeline_config(&cfg)?;
    if corpus.is_some() || parallel.is_some() {
        pc.corpus_path = corpus;
        pc.parallel_path = parallel;
    }
    if let Some(out) = out {
        pc.dataset_dir = out;
        pc.state_path = None;
    }
    pc.validate()?;
    let services = Services::from_config(&pc)?;
    let report = Pipeline::new(pc, services)?
        .without_training()
        .run_iteration()?;
    print_iterations(std::slice::from_ref(&report));
    println!("dataset: {}", report.dataset_path.display());
    Ok(())
}

fn run_loop(cfg: CliConfig, mode: StartMode) -> CliResult {
    let pc = pipeline_config(&cfg)?;
    pc.validate()?;
    let services = Services::from_config(&pc)?;
    let summary = pc.dataset_dir.join("loop.json");
    let reports = Pipeline::new(pc, services)?.run_loop(mode)?;
    print_iterations(&reports);
    write_json(&summary, &reports)
}

fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("reading {}: {e}", path.display())))?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Failure::validation(format!(
                "{}:{}: not a number: {line:?}",
                path.display(),
                i + 1
            ))
        })?;
        scores.push(v);
    }
    Ok(scores)
}

fn knee(scores_path: &Path, curve: Option<PathBuf>) -> CliResult {
    let scores = read_scores(scores_path)?;
    let result = knee_point(&scores)?;
    let curve_path = curve.unwrap_or_else(|| with_suffix(scores_path, ".curve.tsv"));
    result.write_curve(&curve_path)?;
    println!(
        "knee {:.5} ({} scores, {})",
        result.knee_value,
        scores.len(),
        result.method
    );
    println!("curve: {}", curve_path.display());
    write_json(
        &with_suffix(scores_path, ".knee.json"),
        &serde_json::json!({
            "knee_value": result.knee_value,
            "knee_index": result.knee_index(),
            "n_scores": scores.len(),
            "method": result.method,
        }),
    )
}

fn dpo_eval(
    cfg: &CliConfig,
    quads_path: &Path,
    beta: Option<f64>,
    length_normalized: bool,
    out: Option<PathBuf>,
) -> CliResult {
    let mut dpo = cfg.dpo_eval.unwrap_or_default();
    if let Some(b) = beta {
        dpo.beta = b;
    }
    dpo.length_normalized |= length_normalized;
    let records = read_quads(quads_path)?;
    let quads: Vec<LogProbQuad> = records.iter().map(|r| r.quad).collect();
    let stats = batch_stats(&quads, &dpo)?;
    println!("{:<22} {:>12}", "quads", stats.n);
    println!("{:<22} {:>12}", "beta", dpo.beta);
    for (name, v) in [
        ("mean_loss", stats.mean_loss),
        ("mean_margin", stats.mean_margin),
        ("preference_accuracy", stats.preference_accuracy),
        ("mean_chosen_reward", stats.mean_chosen_reward),
        ("mean_rejected_reward", stats.mean_rejected_reward),
    ] {
        println!("{name:<22} {v:>12.6}");
    }
    let out = out.unwrap_or_else(|| with_suffix(quads_path, ".stats.json"));
    write_json(
        &out,
        &serde_json::json!({ "beta": dpo.beta, "stats": stats }),
    )
}

#[derive(serde::Deserialize)]
struct TripleLine {
    source: String,
    hypothesis: String,
    reference: String,
}

fn read_triples(path: &Path) -> CliResult<Vec<Segment>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("reading {}: {e}", path.display())))?;
    let jsonl = path.extension().is_some_and(|e| e == "jsonl");
    let mut segments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Failure::validation(format!("{}:{}: {m}", path.display(), i + 1));
        let seg = if jsonl {
            let t: TripleLine = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
            Segment {
                source: t.source,
                hypothesis: t.hypothesis,
                reference: t.reference,
            }
        } else {
            let cols: Vec<&str> = line.split('\t').collect();
            let [source, hypothesis, reference] = cols[..] else {
                return Err(at(format!(
                    "expected 3 tab-separated columns, got {}",
                    cols.len()
                )));
            };
            Segment {
                source: source.trim().into(),
                hypothesis: hypothesis.trim().into(),
                reference: reference.trim().into(),
            }
        };
        segments.push(seg);
    }
    Ok(segments)
}

fn report(
    cfg: CliConfig,
    triples: &Path,
    scorer_url: Option<String>,
    metrics: Vec<String>,
    out: Option<PathBuf>,
) -> CliResult {
    let section = cfg.report;
    let segments = read_triples(triples)?;
    let endpoint = match (scorer_url, section.scorer) {
        (Some(url), Some(mut ep)) => {
            ep.base_url = url;
            Some(ep)
        }
        (Some(url), None) => Some(btdpo_core::clients::EndpointConfig::new(url)),
        (None, ep) => ep,
    };
    let metrics = if metrics.is_empty() {
        section.metrics
    } else {
        metrics
    };
    let client = match endpoint {
        Some(mut ep) => {
            ep.resolve_auth_from_env().map_err(Failure::validation)?;
            Some(HttpClient::new(ep).map_err(btdpo_core::Error::from)?)
        }
        None => None,
    };
    let external = client.as_ref().map(|c| ExternalScoring {
        scorer: c as &dyn QualityScorer,
        metrics,
    });
    let result = evaluate_corpus(&segments, section.scheme, external)?;
    print!("{}", result.to_table());
    for w in &result.warnings {
        eprintln!("warning: external metric skipped: {w}");
    }
    let out = out.unwrap_or_else(|| with_suffix(triples, ".report.json"));
    write_json(&out, &result)
}
