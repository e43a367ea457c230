//! Stage implementations behind the CLI subcommands. Every stage reads files,
//! writes files, and drops a provenance sidecar (tool version, config hash,
//! input digests) next to each output, so any intermediate is re-derivable
//! and verifiable from its predecessors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use audit_core::classify::{classify_response, ClassifiedResponse, RefusalPatterns};
use audit_core::corpus::ScholarIndex;
use audit_core::evaluate::{evaluate_all, write_metrics_csv, EvaluateOptions};
use audit_core::grid::{Manifest, PromptInstance};
use audit_core::io::{read_jsonl, write_jsonl, Provenance};
use audit_core::resolve::{resolve_all, ResolvedResponse};
use audit_core::response::RawResponse;
use audit_core::stats::{
    analyze_all, read_metrics_csv, write_coef_csv, write_diagnostics_csv, write_fit_csv,
    write_omega_csv, write_skipped_csv, AnalysisOptions, BhScope,
};
use audit_gateway::{load_endpoints, run_campaign_http, run_campaign_mock, EndpointConfig};

/// Hash of the stage's semantic configuration (flags and values, no paths) so
/// that identical runs produce identical provenance bytes.
pub fn config_hash(stage: &str, fields: &[(&str, String)]) -> String {
    let map: BTreeMap<&str, &str> = fields.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let body = serde_json::to_string(&serde_json::json!({ "stage": stage, "config": map }))
        .expect("config serializes");
    audit_core::io::bytes_digest(body.as_bytes())
}

pub fn load_manifest(path: Option<&Path>) -> Result<Manifest> {
    match path {
        Some(path) => Manifest::load(path).with_context(|| format!("loading manifest {}", path.display())),
        None => Ok(Manifest::bundled()),
    }
}

pub fn stage_grid(manifest_path: Option<&Path>, out: &Path) -> Result<usize> {
    let manifest = load_manifest(manifest_path)?;
    let grid = manifest.enumerate_grid()?;
    write_jsonl(out, &grid)?;
    let mut provenance = Provenance::new(config_hash("grid", &[]));
    if let Some(path) = manifest_path {
        provenance = provenance.with_input("manifest", path)?;
    }
    provenance.write_for(out)?;
    Ok(grid.len())
}

pub fn stage_corpus(
    input: &Path,
    out_index: &Path,
    report: &Path,
    max_reject: f64,
) -> Result<(usize, usize)> {
    let (index, ingest_report) = ScholarIndex::ingest(input, max_reject)?;
    index.save(out_index)?;

    let mut marginals = BTreeMap::new();
    for attr in [
        audit_core::corpus::MarginalAttr::Gender,
        audit_core::corpus::MarginalAttr::Ethnicity,
        audit_core::corpus::MarginalAttr::WorksBin,
        audit_core::corpus::MarginalAttr::CitationsBin,
        audit_core::corpus::MarginalAttr::Country,
    ] {
        if let Ok(marginal) = index.population_marginal(attr, None) {
            marginals.insert(attr.as_str().to_string(), marginal);
        }
    }
    let body = serde_json::json!({
        "accepted": ingest_report.accepted,
        "rejected": ingest_report.rejected,
        "diagnostics": ingest_report.diagnostics,
        "tertile_cuts": index.tertile_cuts(),
        "marginals": marginals,
        "diversity_support": {
            "gender": index.diversity_support(audit_core::corpus::MarginalAttr::Gender),
            "ethnicity": index.diversity_support(audit_core::corpus::MarginalAttr::Ethnicity),
            "works_bin": 3,
            "citations_bin": 3,
            "country": index.diversity_support(audit_core::corpus::MarginalAttr::Country),
        },
    });
    std::fs::write(report, serde_json::to_string_pretty(&body)? + "\n")
        .with_context(|| format!("writing {}", report.display()))?;

    let hash = config_hash("corpus", &[("max_reject", format!("{max_reject}"))]);
    Provenance::new(hash.clone())
        .with_input("corpus_csv", input)?
        .write_for(out_index)?;
    Provenance::new(hash)
        .with_input("corpus_csv", input)?
        .write_for(report)?;
    Ok((ingest_report.accepted, ingest_report.rejected))
}

pub struct QueryArgs<'a> {
    pub grid: &'a Path,
    pub endpoints: Option<&'a Path>,
    pub reps: u32,
    pub out: &'a Path,
    pub resume: bool,
    pub mock: bool,
    pub seed: u64,
    pub index: Option<&'a Path>,
    pub manifest: Option<&'a Path>,
}

fn mock_endpoints() -> Vec<EndpointConfig> {
    ["mock-alpha", "mock-beta", "mock-gamma"]
        .into_iter()
        .map(|llm_id| EndpointConfig {
            llm_id: llm_id.into(),
            base_url: "mock://internal".into(),
            api_style: audit_gateway::ApiStyle::OpenaiChat,
            model_name: llm_id.into(),
            max_concurrency: 1,
            timeout_s: 1.0,
            max_retries: 0,
            initial_backoff_ms: 1,
            params: serde_json::Map::new(),
            api_key_env: None,
        })
        .collect()
}

pub fn stage_query(args: &QueryArgs) -> Result<u64> {
    let grid: Vec<PromptInstance> = read_jsonl(args.grid)?;
    if grid.is_empty() {
        bail!("grid file {} holds no prompts", args.grid.display());
    }

    let summary = if args.mock {
        let index_path = args
            .index
            .context("--mock needs --index (the corpus index supplies faithful names)")?;
        let index = ScholarIndex::load(index_path)?;
        let manifest = load_manifest(args.manifest)?;
        let endpoints = match args.endpoints {
            Some(path) => load_endpoints(path)?,
            None => mock_endpoints(),
        };
        run_campaign_mock(
            &grid,
            &endpoints,
            args.reps,
            args.out,
            args.resume,
            args.seed,
            &index,
            &manifest.location_iso(),
        )?
    } else {
        let endpoints_path = args.endpoints.context("--endpoints is required without --mock")?;
        let endpoints = load_endpoints(endpoints_path)?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .context("tokio runtime")?;
        runtime.block_on(run_campaign_http(
            &grid,
            &endpoints,
            args.reps,
            args.out,
            args.resume,
        ))?
    };

    let summary_path = summary_path_for(args.out);
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", summary_path.display()))?;

    let hash = config_hash(
        "query",
        &[
            ("reps", args.reps.to_string()),
            ("resume", args.resume.to_string()),
            ("mock", args.mock.to_string()),
            ("seed", args.seed.to_string()),
        ],
    );
    let mut provenance = Provenance::new(hash).with_input("grid", args.grid)?;
    if let Some(path) = args.endpoints {
        provenance = provenance.with_input("endpoints", path)?;
    }
    if let Some(path) = args.index {
        provenance = provenance.with_input("index", path)?;
    }
    provenance.write_for(args.out)?;
    Ok(summary.total_written)
}

pub fn summary_path_for(out: &Path) -> PathBuf {
    let mut name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".summary.json");
    out.with_file_name(name)
}

pub fn stage_classify(
    input: &Path,
    out: &Path,
    patterns_path: Option<&Path>,
) -> Result<BTreeMap<String, u64>> {
    let patterns = match patterns_path {
        Some(path) => RefusalPatterns::load(path)?,
        None => RefusalPatterns::bundled(),
    };
    let raw: Vec<RawResponse> = read_jsonl(input)?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let classified: Vec<ClassifiedResponse> = raw
        .iter()
        .map(|r| {
            let c = classify_response(r, &patterns);
            *counts.entry(c.category.as_str().to_string()).or_insert(0) += 1;
            c
        })
        .collect();
    write_jsonl(out, &classified)?;

    let mut provenance = Provenance::new(config_hash("classify", &[]))
        .with_input("raw", input)?;
    if let Some(path) = patterns_path {
        provenance = provenance.with_input("refusal_patterns", path)?;
    }
    provenance.write_for(out)?;
    Ok(counts)
}

pub fn stage_resolve(
    input: &Path,
    index_path: &Path,
    out: &Path,
    oracle_check: bool,
) -> Result<(usize, usize)> {
    let classified: Vec<ClassifiedResponse> = read_jsonl(input)?;
    let index = ScholarIndex::load(index_path)?;
    let resolved = resolve_all(&classified, &index)?;

    let mut mismatches = 0usize;
    if oracle_check {
        let scanner = audit_core::resolve::ExhaustiveScanner::new(&index);
        for response in &resolved {
            for record in &response.matches {
                let oracle = scanner.match_query(
                    &record.fuzzy.query_name,
                    &record.fuzzy.query_lastname,
                );
                if oracle.status != record.fuzzy.status || oracle.scholar_id != record.fuzzy.scholar_id
                {
                    mismatches += 1;
                    eprintln!(
                        "oracle mismatch for `{} {}`: blocked {:?}/{:?} vs exhaustive {:?}/{:?}",
                        record.fuzzy.query_name,
                        record.fuzzy.query_lastname,
                        record.fuzzy.status,
                        record.fuzzy.scholar_id,
                        oracle.status,
                        oracle.scholar_id
                    );
                }
            }
        }
    }

    write_jsonl(out, &resolved)?;
    Provenance::new(config_hash(
        "resolve",
        &[("oracle_check", oracle_check.to_string())],
    ))
    .with_input("classified", input)?
    .with_input("index", index_path)?
    .write_for(out)?;
    Ok((resolved.len(), mismatches))
}

pub struct EvaluateArgs<'a> {
    pub classified: &'a Path,
    pub resolved: &'a Path,
    pub index: &'a Path,
    pub grid: &'a Path,
    pub manifest: Option<&'a Path>,
    pub out: &'a Path,
    pub per_field_reference: bool,
}

pub fn stage_evaluate(args: &EvaluateArgs) -> Result<usize> {
    let classified: Vec<ClassifiedResponse> = read_jsonl(args.classified)?;
    let resolved: Vec<ResolvedResponse> = read_jsonl(args.resolved)?;
    let grid: Vec<PromptInstance> = read_jsonl(args.grid)?;
    let index = ScholarIndex::load(args.index)?;
    let manifest = load_manifest(args.manifest)?;

    let rows = evaluate_all(
        &grid,
        &classified,
        &resolved,
        &index,
        &manifest.field_translations(),
        &manifest.location_iso(),
        &EvaluateOptions {
            per_field_reference: args.per_field_reference,
        },
    )?;
    write_metrics_csv(args.out, &rows)?;

    Provenance::new(config_hash(
        "evaluate",
        &[("per_field_reference", args.per_field_reference.to_string())],
    ))
    .with_input("classified", args.classified)?
    .with_input("resolved", args.resolved)?
    .with_input("index", args.index)?
    .with_input("grid", args.grid)?
    .write_for(args.out)?;
    Ok(rows.len())
}

pub struct AnalyzeArgs<'a> {
    pub metrics: &'a Path,
    pub out_dir: &'a Path,
    pub confidence: f64,
    pub cr: u8,
    pub bh_scope: BhScope,
    pub seed: u64,
}

pub fn stage_analyze(args: &AnalyzeArgs) -> Result<(usize, usize)> {
    if !(0.0 < args.confidence && args.confidence < 1.0) {
        bail!("--confidence must lie in (0, 1), got {}", args.confidence);
    }
    if args.cr > 1 {
        bail!("--cr supports 0 (CR0) or 1 (CR1), got {}", args.cr);
    }
    let cells = read_metrics_csv(args.metrics)?;
    if cells.is_empty() {
        bail!("metrics file {} holds no rows", args.metrics.display());
    }
    let options = AnalysisOptions {
        confidence: args.confidence,
        cr_version: args.cr,
        bh_scope: args.bh_scope,
        seed: args.seed,
    };
    let (analyses, skipped) = analyze_all(&cells, &options);

    std::fs::create_dir_all(args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    write_omega_csv(&args.out_dir.join("omega.csv"), &analyses)?;
    write_coef_csv(&args.out_dir.join("coef.csv"), &analyses)?;
    write_diagnostics_csv(&args.out_dir.join("diagnostics.csv"), &analyses)?;
    write_fit_csv(&args.out_dir.join("fit.csv"), &analyses)?;
    write_skipped_csv(&args.out_dir.join("skipped.csv"), &skipped)?;

    let scope = match args.bh_scope {
        BhScope::Pooled => "pooled",
        BhScope::PerMetric => "per-metric",
    };
    let hash = config_hash(
        "analyze",
        &[
            ("confidence", format!("{}", args.confidence)),
            ("cr", args.cr.to_string()),
            ("bh_scope", scope.to_string()),
            ("seed", args.seed.to_string()),
        ],
    );
    for file in ["omega.csv", "coef.csv", "diagnostics.csv", "fit.csv", "skipped.csv"] {
        Provenance::new(hash.clone())
            .with_input("metrics", args.metrics)?
            .write_for(&args.out_dir.join(file))?;
    }
    Ok((analyses.len(), skipped.len()))
}

pub fn stage_report(metrics: &Path, stats_dir: &Path, out_dir: &Path) -> Result<Vec<String>> {
    let gaps = audit_core::report::emit_reports(metrics, stats_dir, out_dir)?;
    let hash = config_hash("report", &[]);
    for file in ["model_summary.csv", "quadrants.csv"] {
        Provenance::new(hash.clone())
            .with_input("metrics", metrics)?
            .write_for(&out_dir.join(file))?;
    }
    Ok(gaps)
}

pub struct AllArgs<'a> {
    pub corpus: &'a Path,
    pub workdir: &'a Path,
    pub manifest: Option<&'a Path>,
    pub endpoints: Option<&'a Path>,
    pub mock: bool,
    pub reps: u32,
    pub seed: u64,
    pub resume: bool,
    pub per_field_reference: bool,
    pub confidence: f64,
    pub cr: u8,
    pub bh_scope: BhScope,
    pub max_reject: f64,
}

/// Chains every stage over a working directory; stage boundaries stay files
/// so partial pipelines can resume and each product is independently
/// testable.
pub fn stage_all(args: &AllArgs) -> Result<()> {
    std::fs::create_dir_all(args.workdir)
        .with_context(|| format!("creating {}", args.workdir.display()))?;
    let file = |name: &str| args.workdir.join(name);

    let n_prompts = stage_grid(args.manifest, &file("grid.jsonl"))?;
    eprintln!("[grid] {n_prompts} prompts");

    let (accepted, rejected) = stage_corpus(
        args.corpus,
        &file("index.bin"),
        &file("marginals.json"),
        args.max_reject,
    )?;
    eprintln!("[corpus] {accepted} scholars ({rejected} rejected)");

    let written = stage_query(&QueryArgs {
        grid: &file("grid.jsonl"),
        endpoints: args.endpoints,
        reps: args.reps,
        out: &file("raw.jsonl"),
        resume: args.resume,
        mock: args.mock,
        seed: args.seed,
        index: Some(&file("index.bin")),
        manifest: args.manifest,
    })?;
    eprintln!("[query] {written} records");

    let counts = stage_classify(&file("raw.jsonl"), &file("classified.jsonl"), None)?;
    eprintln!("[classify] {counts:?}");

    let (resolved, _) = stage_resolve(&file("classified.jsonl"), &file("index.bin"), &file("resolved.jsonl"), false)?;
    eprintln!("[resolve] {resolved} responses");

    let cells = stage_evaluate(&EvaluateArgs {
        classified: &file("classified.jsonl"),
        resolved: &file("resolved.jsonl"),
        index: &file("index.bin"),
        grid: &file("grid.jsonl"),
        manifest: args.manifest,
        out: &file("metrics.csv"),
        per_field_reference: args.per_field_reference,
    })?;
    eprintln!("[evaluate] {cells} cells");

    let (analyzed, skipped) = stage_analyze(&AnalyzeArgs {
        metrics: &file("metrics.csv"),
        out_dir: &file("stats"),
        confidence: args.confidence,
        cr: args.cr,
        bh_scope: args.bh_scope,
        seed: args.seed,
    })?;
    eprintln!("[analyze] {analyzed} metrics analyzed, {skipped} skipped");

    let gaps = stage_report(&file("metrics.csv"), &file("stats"), &file("report"))?;
    if gaps.is_empty() {
        eprintln!("[report] complete");
    } else {
        eprintln!("[report] gaps: {gaps:?}");
    }
    Ok(())
}
