//! `audit` — end-to-end pipeline for auditing LLMs as scholar recommenders.
//!
//! Stages connect through files: grid -> query -> classify -> resolve ->
//! evaluate -> analyze -> report, plus `corpus` for the ground-truth index
//! and `all` to chain everything over one working directory.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use audit_core::stats::BhScope;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "audit", version, about = "Audit LLM scholar recommendations under a factorial prompt grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BhScopeArg {
    Pooled,
    PerMetric,
}

impl From<BhScopeArg> for BhScope {
    fn from(value: BhScopeArg) -> Self {
        match value {
            BhScopeArg::Pooled => BhScope::Pooled,
            BhScopeArg::PerMetric => BhScope::PerMetric,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the factorial prompt grid
    Grid(GridArgs),
    /// Ingest and index the scholar ground-truth corpus
    Corpus(CorpusArgs),
    /// Send every prompt to every endpoint N times
    Query(QueryArgs),
    /// Classify raw responses into the five output categories
    Classify(ClassifyArgs),
    /// Match recommended names against the ground truth
    Resolve(ResolveArgs),
    /// Compute per-cell technical and representativeness metrics
    Evaluate(EvaluateArgs),
    /// Decompose metric variance across prompt factors and model identity
    Analyze(AnalyzeArgs),
    /// Aggregate per-model composites, quadrants, and report tables
    Report(ReportArgs),
    /// Run the whole pipeline over a working directory
    All(AllArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Manifest JSON (defaults to the bundled audit design)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output JSONL, one prompt instance per line
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorpusArgs {
    /// Scholar CSV (see README for the header)
    #[arg(long = "in")]
    input: PathBuf,
    /// Output binary index
    #[arg(long)]
    out: PathBuf,
    /// Marginals/tertiles report JSON
    #[arg(long)]
    report: PathBuf,
    /// Abort when more than this fraction of rows is rejected
    #[arg(long, default_value_t = 0.05)]
    max_reject: f64,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Endpoint list JSON; optional under --mock (three built-in mock models)
    #[arg(long)]
    endpoints: Option<PathBuf>,
    /// Repetitions per (prompt, endpoint)
    #[arg(long, default_value_t = 10)]
    reps: u32,
    #[arg(long)]
    out: PathBuf,
    /// Skip (prompt, llm, run) triples already present in the sink
    #[arg(long)]
    resume: bool,
    /// Use the deterministic in-process mock model instead of HTTP
    #[arg(long)]
    mock: bool,
    /// Mock seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Corpus index (required by --mock for faithful names)
    #[arg(long)]
    index: Option<PathBuf>,
    /// Manifest (mock location matching; defaults to the bundled one)
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Refusal phrase list JSON (defaults to the bundled multilingual list)
    #[arg(long)]
    refusal_patterns: Option<PathBuf>,
}

#[derive(Args)]
struct ResolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Re-check every blocked match against an exhaustive scan (slow)
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    classified: PathBuf,
    #[arg(long)]
    resolved: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Grid JSONL (supplies each prompt's dimension values)
    #[arg(long)]
    grid: PathBuf,
    /// Manifest (field translations and location ISO codes)
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Compare parity against per-field population marginals
    #[arg(long)]
    per_field_reference: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    /// Cluster-robust variant: 0 (CR0) or 1 (CR1)
    #[arg(long, default_value_t = 1)]
    cr: u8,
    /// Benjamini-Hochberg family scope
    #[arg(long, value_enum, default_value_t = BhScopeArg::Pooled)]
    bh_scope: BhScopeArg,
    /// Seed for the diagnostics subsample
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    stats_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AllArgs {
    /// Scholar ground-truth CSV
    #[arg(long)]
    corpus: PathBuf,
    /// Working directory for every intermediate and report file
    #[arg(long)]
    workdir: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Endpoint list (omit with --mock)
    #[arg(long)]
    endpoints: Option<PathBuf>,
    #[arg(long)]
    mock: bool,
    #[arg(long, default_value_t = 10)]
    reps: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    per_field_reference: bool,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 1)]
    cr: u8,
    #[arg(long, value_enum, default_value_t = BhScopeArg::Pooled)]
    bh_scope: BhScopeArg,
    #[arg(long, default_value_t = 0.05)]
    max_reject: f64,
}

/// Usage or configuration problems exit 2; runtime failures exit 1.
fn config_error(e: &anyhow::Error) -> bool {
    let text = format!("{e:#}");
    text.contains("manifest validation failed")
        || text.contains("gateway configuration")
        || text.contains("No such file")
        || text.contains("is required")
        || text.contains("needs --index")
        || text.contains("header mismatch")
        || text.contains("--confidence")
        || text.contains("--cr")
        || text.contains("i/o error")
        || text.contains("parse error")
        || text.contains("corpus ingest failed")
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Grid(args) => {
            let n = stages::stage_grid(args.manifest.as_deref(), &args.out)?;
            eprintln!("wrote {n} prompts to {}", args.out.display());
        }
        Command::Corpus(args) => {
            let (accepted, rejected) =
                stages::stage_corpus(&args.input, &args.out, &args.report, args.max_reject)?;
            eprintln!("indexed {accepted} scholars ({rejected} rejected)");
        }
        Command::Query(args) => {
            let written = stages::stage_query(&stages::QueryArgs {
                grid: &args.grid,
                endpoints: args.endpoints.as_deref(),
                reps: args.reps,
                out: &args.out,
                resume: args.resume,
                mock: args.mock,
                seed: args.seed,
                index: args.index.as_deref(),
                manifest: args.manifest.as_deref(),
            })?;
            eprintln!("wrote {written} records to {}", args.out.display());
        }
        Command::Classify(args) => {
            let counts =
                stages::stage_classify(&args.input, &args.out, args.refusal_patterns.as_deref())?;
            eprintln!("classified: {counts:?}");
        }
        Command::Resolve(args) => {
            let (responses, mismatches) =
                stages::stage_resolve(&args.input, &args.index, &args.out, args.oracle_check)?;
            eprintln!("resolved {responses} responses");
            if mismatches > 0 {
                anyhow::bail!("{mismatches} blocked/exhaustive oracle mismatches");
            }
        }
        Command::Evaluate(args) => {
            let cells = stages::stage_evaluate(&stages::EvaluateArgs {
                classified: &args.classified,
                resolved: &args.resolved,
                index: &args.index,
                grid: &args.grid,
                manifest: args.manifest.as_deref(),
                out: &args.out,
                per_field_reference: args.per_field_reference,
            })?;
            eprintln!("wrote {cells} metric rows to {}", args.out.display());
        }
        Command::Analyze(args) => {
            let (analyzed, skipped) = stages::stage_analyze(&stages::AnalyzeArgs {
                metrics: &args.metrics,
                out_dir: &args.out_dir,
                confidence: args.confidence,
                cr: args.cr,
                bh_scope: args.bh_scope.into(),
                seed: args.seed,
            })?;
            eprintln!("analyzed {analyzed} metrics ({skipped} skipped)");
        }
        Command::Report(args) => {
            let gaps = stages::stage_report(&args.metrics, &args.stats_dir, &args.out_dir)?;
            if gaps.is_empty() {
                eprintln!("report complete in {}", args.out_dir.display());
            } else {
                eprintln!("report written with gaps: {gaps:?}");
            }
        }
        Command::All(args) => {
            stages::stage_all(&stages::AllArgs {
                corpus: &args.corpus,
                workdir: &args.workdir,
                manifest: args.manifest.as_deref(),
                endpoints: args.endpoints.as_deref(),
                mock: args.mock,
                reps: args.reps,
                seed: args.seed,
                resume: args.resume,
                per_field_reference: args.per_field_reference,
                confidence: args.confidence,
                cr: args.cr,
                bh_scope: args.bh_scope.into(),
                max_reject: args.max_reject,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
