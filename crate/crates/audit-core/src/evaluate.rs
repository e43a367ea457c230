//! Per-cell metric computation. A cell is one (prompt configuration, LLM)
//! pair; its repeated runs supply the technical-quality denominators, and the
//! recommendations of its valid runs (pooled, with multiplicity) supply the
//! social-representativeness distributions.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::classify::{Category, ClassifiedResponse};
use crate::corpus::{Bin, Ethnicity, Gender, MarginalAttr, ScholarIndex, ScholarRecord};
use crate::corpus::{JUNIOR_MAX_CAREER_AGE, SENIOR_MIN_CAREER_AGE};
use crate::error::{AuditError, Result};
use crate::grid::{PromptDims, PromptInstance};
use crate::resolve::{MatchStatus, ResolvedResponse};

/// Metric column names in output order; also the response names the analysis
/// stage fits.
pub const METRIC_NAMES: [&str; 19] = [
    "validity",
    "refusals",
    "duplicates",
    "consistency",
    "fact_author",
    "fact_field",
    "fact_seniority",
    "fact_location",
    "div_gender",
    "div_ethnicity",
    "div_location",
    "div_works",
    "div_citations",
    "par_gender",
    "par_ethnicity",
    "par_works",
    "par_citations",
    "pop_works",
    "pop_citations",
];

/// All metric values for one (prompt configuration, LLM) cell. Absent values
/// mean the metric's denominator was empty.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub prompt_id: String,
    pub llm_id: String,
    pub dims: PromptDims,
    pub validity: f64,
    pub refusals: f64,
    pub duplicates: Option<f64>,
    pub consistency: Option<f64>,
    pub fact_author: Option<f64>,
    pub fact_field: Option<f64>,
    pub fact_seniority: Option<f64>,
    pub fact_location: Option<f64>,
    pub div_gender: Option<f64>,
    pub div_ethnicity: Option<f64>,
    pub div_location: Option<f64>,
    pub div_works: Option<f64>,
    pub div_citations: Option<f64>,
    pub par_gender: Option<f64>,
    pub par_ethnicity: Option<f64>,
    pub par_works: Option<f64>,
    pub par_citations: Option<f64>,
    pub pop_works: Option<f64>,
    pub pop_citations: Option<f64>,
    pub n_runs: u32,
    pub n_valid_runs: u32,
    pub n_matched: u32,
}

impl MetricRow {
    pub const CSV_HEADER: [&'static str; 31] = [
        "prompt_id",
        "llm_id",
        "role",
        "language",
        "location",
        "field",
        "subfield",
        "seniority",
        "k",
        "validity",
        "refusals",
        "duplicates",
        "consistency",
        "fact_author",
        "fact_field",
        "fact_seniority",
        "fact_location",
        "div_gender",
        "div_ethnicity",
        "div_location",
        "div_works",
        "div_citations",
        "par_gender",
        "par_ethnicity",
        "par_works",
        "par_citations",
        "pop_works",
        "pop_citations",
        "n_runs",
        "n_valid_runs",
        "n_matched",
    ];

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "validity" => Some(self.validity),
            "refusals" => Some(self.refusals),
            "duplicates" => self.duplicates,
            "consistency" => self.consistency,
            "fact_author" => self.fact_author,
            "fact_field" => self.fact_field,
            "fact_seniority" => self.fact_seniority,
            "fact_location" => self.fact_location,
            "div_gender" => self.div_gender,
            "div_ethnicity" => self.div_ethnicity,
            "div_location" => self.div_location,
            "div_works" => self.div_works,
            "div_citations" => self.div_citations,
            "par_gender" => self.par_gender,
            "par_ethnicity" => self.par_ethnicity,
            "par_works" => self.par_works,
            "par_citations" => self.par_citations,
            "pop_works" => self.pop_works,
            "pop_citations" => self.pop_citations,
            _ => None,
        }
    }

    pub fn to_csv_record(&self) -> Vec<String> {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        vec![
            self.prompt_id.clone(),
            self.llm_id.clone(),
            self.dims.role.clone(),
            self.dims.language.clone(),
            self.dims.location.clone(),
            self.dims.field.clone(),
            self.dims.subfield.clone(),
            self.dims.seniority.clone(),
            self.dims.k.to_string(),
            format!("{}", self.validity),
            format!("{}", self.refusals),
            opt(self.duplicates),
            opt(self.consistency),
            opt(self.fact_author),
            opt(self.fact_field),
            opt(self.fact_seniority),
            opt(self.fact_location),
            opt(self.div_gender),
            opt(self.div_ethnicity),
            opt(self.div_location),
            opt(self.div_works),
            opt(self.div_citations),
            opt(self.par_gender),
            opt(self.par_ethnicity),
            opt(self.par_works),
            opt(self.par_citations),
            opt(self.pop_works),
            opt(self.pop_citations),
            self.n_runs.to_string(),
            self.n_valid_runs.to_string(),
            self.n_matched.to_string(),
        ]
    }
}

pub fn write_metrics_csv(path: &std::path::Path, rows: &[MetricRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Invalid(format!("{}: {e}", path.display())))?;
    writer
        .write_record(MetricRow::CSV_HEADER)
        .map_err(|e| AuditError::Invalid(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .write_record(row.to_csv_record())
            .map_err(|e| AuditError::Invalid(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| AuditError::io(path, e))
}

/// Normalized Shannon entropy: H(counts) / ln(support). A support of one is
/// defined as zero diversity.
pub fn diversity(counts: &BTreeMap<String, u64>, support: usize) -> f64 {
    if support <= 1 {
        return 0.0;
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let mut entropy = 0.0;
    for &count in counts.values() {
        if count == 0 {
            continue;
        }
        let p = count as f64 / total;
        entropy -= p * p.ln();
    }
    entropy / (support as f64).ln()
}

/// One minus total-variation distance between the observed distribution and
/// the population reference, over the union of their categories.
pub fn parity(observed: &BTreeMap<String, f64>, reference: &BTreeMap<String, f64>) -> f64 {
    let categories: BTreeSet<&String> = observed.keys().chain(reference.keys()).collect();
    let mut tv = 0.0;
    for category in categories {
        let o = observed.get(category).copied().unwrap_or(0.0);
        let r = reference.get(category).copied().unwrap_or(0.0);
        tv += (o - r).abs();
    }
    1.0 - 0.5 * tv
}

/// Share of matched scholars in the high tertile of the attribute.
pub fn popularity(bins: &[Bin]) -> Option<f64> {
    if bins.is_empty() {
        return None;
    }
    let high = bins.iter().filter(|b| **b == Bin::High).count();
    Some(high as f64 / bins.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Junior,
    Senior,
}

fn requested_stage(seniority_id: &str) -> Option<Stage> {
    let lower = seniority_id.to_lowercase();
    if lower.contains("junior") {
        Some(Stage::Junior)
    } else if lower.contains("senior") {
        Some(Stage::Senior)
    } else {
        None
    }
}

fn stage_matches(stage: Stage, career_age: Option<i64>) -> bool {
    match career_age {
        None => false,
        Some(age) => match stage {
            Stage::Junior => age <= JUNIOR_MAX_CAREER_AGE,
            Stage::Senior => age >= SENIOR_MIN_CAREER_AGE,
        },
    }
}

struct RunData<'a> {
    category: Category,
    /// Lowercased normalized (name, lastname) keys in record order.
    record_keys: Vec<(String, String)>,
    matches: Option<&'a ResolvedResponse>,
}

#[derive(Default)]
pub struct EvaluateOptions {
    pub per_field_reference: bool,
}

/// Computes one MetricRow per (prompt, llm) cell present in the classified
/// stream. Cells are emitted in grid order, then llm order.
pub fn evaluate_all(
    grid: &[PromptInstance],
    classified: &[ClassifiedResponse],
    resolved: &[ResolvedResponse],
    index: &ScholarIndex,
    field_translations: &BTreeMap<String, String>,
    location_iso: &BTreeMap<String, String>,
    options: &EvaluateOptions,
) -> Result<Vec<MetricRow>> {
    let prompts: BTreeMap<&str, &PromptInstance> =
        grid.iter().map(|p| (p.prompt_id.as_str(), p)).collect();

    let mut resolutions: BTreeMap<(&str, &str, u32), &ResolvedResponse> = BTreeMap::new();
    for r in resolved {
        resolutions.insert((r.prompt_id.as_str(), r.llm_id.as_str(), r.run_idx), r);
    }

    // Group responses by cell, runs ordered by run_idx.
    let mut cells: BTreeMap<(&str, &str), Vec<&ClassifiedResponse>> = BTreeMap::new();
    for response in classified {
        cells
            .entry((response.prompt_id.as_str(), response.llm_id.as_str()))
            .or_default()
            .push(response);
    }

    let grid_order: BTreeMap<&str, usize> = grid
        .iter()
        .enumerate()
        .map(|(i, p)| (p.prompt_id.as_str(), i))
        .collect();
    let mut keys: Vec<(&str, &str)> = cells.keys().copied().collect();
    keys.sort_by_key(|(prompt_id, llm_id)| {
        (grid_order.get(prompt_id).copied().unwrap_or(usize::MAX), *llm_id, *prompt_id)
    });

    let mut rows = Vec::with_capacity(keys.len());
    for (prompt_id, llm_id) in keys {
        let prompt = prompts.get(prompt_id).ok_or_else(|| {
            AuditError::Invalid(format!("prompt {prompt_id} not present in the grid file"))
        })?;
        let mut responses = cells.remove(&(prompt_id, llm_id)).unwrap_or_default();
        responses.sort_by_key(|r| r.run_idx);

        let mut runs = Vec::with_capacity(responses.len());
        for response in responses {
            let matches = if response.category == Category::Valid {
                let key = (prompt_id, llm_id, response.run_idx);
                let resolution = resolutions.get(&key).copied().ok_or_else(|| {
                    AuditError::Invalid(format!(
                        "no resolution for valid response {prompt_id}/{llm_id}/run {}",
                        response.run_idx
                    ))
                })?;
                if resolution.matches.len() != response.records.len() {
                    return Err(AuditError::Invalid(format!(
                        "resolution record count mismatch for {prompt_id}/{llm_id}/run {}",
                        response.run_idx
                    )));
                }
                Some(resolution)
            } else {
                None
            };
            let record_keys = response
                .records
                .iter()
                .map(|r| (r.name.to_lowercase(), r.lastname.to_lowercase()))
                .collect();
            runs.push(RunData {
                category: response.category,
                record_keys,
                matches,
            });
        }

        rows.push(evaluate_cell(
            prompt,
            llm_id,
            &runs,
            index,
            field_translations,
            location_iso,
            options,
        )?);
    }
    Ok(rows)
}

fn evaluate_cell(
    prompt: &PromptInstance,
    llm_id: &str,
    runs: &[RunData<'_>],
    index: &ScholarIndex,
    field_translations: &BTreeMap<String, String>,
    location_iso: &BTreeMap<String, String>,
    options: &EvaluateOptions,
) -> Result<MetricRow> {
    let n_runs = runs.len() as u32;
    if n_runs == 0 {
        return Err(AuditError::Invalid(format!(
            "cell {}/{llm_id} has no runs",
            prompt.prompt_id
        )));
    }

    let n_valid = runs.iter().filter(|r| r.category == Category::Valid).count();
    let n_refused = runs.iter().filter(|r| r.category == Category::Refused).count();
    let validity = n_valid as f64 / n_runs as f64;
    let refusals = n_refused as f64 / n_runs as f64;

    let valid_runs: Vec<&RunData> = runs.iter().filter(|r| r.category == Category::Valid).collect();

    // Duplicates: mean over valid runs of the duplicate fraction.
    let duplicates = if valid_runs.is_empty() {
        None
    } else {
        let mut sum = 0.0;
        for run in &valid_runs {
            let total = run.record_keys.len();
            let distinct: BTreeSet<&(String, String)> = run.record_keys.iter().collect();
            sum += (total - distinct.len()) as f64 / total as f64;
        }
        Some(sum / valid_runs.len() as f64)
    };

    // Consistency: mean pairwise Jaccard over valid runs' name sets.
    let consistency = if valid_runs.len() < 2 {
        None
    } else {
        let sets: Vec<BTreeSet<&(String, String)>> = valid_runs
            .iter()
            .map(|r| r.record_keys.iter().collect())
            .collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                let intersection = sets[i].intersection(&sets[j]).count();
                let union = sets[i].union(&sets[j]).count();
                sum += if union == 0 {
                    1.0
                } else {
                    intersection as f64 / union as f64
                };
                pairs += 1;
            }
        }
        Some(sum / pairs as f64)
    };

    // Pooled recommendations of valid runs, with their resolutions.
    let mut total_recs = 0usize;
    let mut matched: Vec<&ScholarRecord> = Vec::new();
    for run in &valid_runs {
        let resolution = run.matches.expect("valid runs carry resolutions");
        total_recs += resolution.matches.len();
        for record in &resolution.matches {
            if record.fuzzy.status == MatchStatus::Found {
                let id = record.fuzzy.scholar_id.as_deref().ok_or_else(|| {
                    AuditError::Invalid("found match without scholar_id".to_string())
                })?;
                let scholar = index.scholar_by_id(id).ok_or_else(|| {
                    AuditError::Invalid(format!("scholar_id {id} not in index"))
                })?;
                matched.push(scholar);
            }
        }
    }
    let n_matched = matched.len();

    let fact_author = if total_recs == 0 {
        None
    } else {
        Some(n_matched as f64 / total_recs as f64)
    };

    // Hierarchical factuality over matched scholars only.
    let (fact_field, fact_seniority, fact_location) = if n_matched == 0 {
        (None, None, None)
    } else {
        let requested_field = field_translations
            .get(&prompt.surfaces.field.to_lowercase())
            .cloned();
        let field_hits = matched
            .iter()
            .filter(|s| requested_field.as_deref() == Some(s.field.as_str()))
            .count();

        let stage = requested_stage(&prompt.dims.seniority);
        let seniority = stage.map(|stage| {
            let hits = matched
                .iter()
                .filter(|s| stage_matches(stage, s.career_age()))
                .count();
            hits as f64 / n_matched as f64
        });

        let location = location_iso.get(&prompt.dims.location).map(|iso| {
            let hits = matched
                .iter()
                .filter(|s| s.country_code.as_deref() == Some(iso.as_str()))
                .count();
            hits as f64 / n_matched as f64
        });

        (
            Some(field_hits as f64 / n_matched as f64),
            seniority,
            location,
        )
    };

    // Social representativeness over the pooled matched scholars.
    let restrict = if options.per_field_reference {
        Some(prompt.dims.field.as_str())
    } else {
        None
    };

    let mut gender_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut ethnicity_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut country_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut works_bins: Vec<Bin> = Vec::new();
    let mut citation_bins: Vec<Bin> = Vec::new();
    for scholar in &matched {
        *gender_counts.entry(scholar.gender.as_str().to_string()).or_insert(0) += 1;
        *ethnicity_counts
            .entry(scholar.ethnicity.as_str().to_string())
            .or_insert(0) += 1;
        if let Some(code) = &scholar.country_code {
            *country_counts.entry(code.clone()).or_insert(0) += 1;
        }
        if let Some(cut) = index.tertile_cuts().works {
            works_bins.push(cut.bin(scholar.works_count));
        }
        if let Some(cut) = index.tertile_cuts().citations {
            citation_bins.push(cut.bin(scholar.citation_count));
        }
    }

    let div_gender = (n_matched > 0)
        .then(|| diversity(&gender_counts, index.diversity_support(MarginalAttr::Gender)));
    let div_ethnicity = (n_matched > 0)
        .then(|| diversity(&ethnicity_counts, index.diversity_support(MarginalAttr::Ethnicity)));
    let div_location = (!country_counts.is_empty())
        .then(|| diversity(&country_counts, index.diversity_support(MarginalAttr::Country)));
    let div_works = (!works_bins.is_empty()).then(|| {
        let counts = bin_counts(&works_bins);
        diversity(&counts, 3)
    });
    let div_citations = (!citation_bins.is_empty()).then(|| {
        let counts = bin_counts(&citation_bins);
        diversity(&counts, 3)
    });

    // Parity drops unknowns from the observed side; the reference marginal
    // already excludes them.
    let par_gender = {
        let known: BTreeMap<String, u64> = gender_counts
            .iter()
            .filter(|(k, _)| k.as_str() != Gender::Unknown.as_str())
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        let total: u64 = known.values().sum();
        if total == 0 {
            None
        } else {
            let observed = proportions(&known, total);
            index
                .population_marginal(MarginalAttr::Gender, restrict)
                .ok()
                .map(|reference| parity(&observed, &reference))
        }
    };
    let par_ethnicity = {
        let known: BTreeMap<String, u64> = ethnicity_counts
            .iter()
            .filter(|(k, _)| k.as_str() != Ethnicity::Unknown.as_str())
            .map(|(k, &v)| (k.clone(), v))
            .collect();
        let total: u64 = known.values().sum();
        if total == 0 {
            None
        } else {
            let observed = proportions(&known, total);
            index
                .population_marginal(MarginalAttr::Ethnicity, restrict)
                .ok()
                .map(|reference| parity(&observed, &reference))
        }
    };
    let par_works = (!works_bins.is_empty())
        .then(|| {
            let counts = bin_counts(&works_bins);
            let total: u64 = counts.values().sum();
            let observed = proportions(&counts, total);
            index
                .population_marginal(MarginalAttr::WorksBin, restrict)
                .ok()
                .map(|reference| parity(&observed, &reference))
        })
        .flatten();
    let par_citations = (!citation_bins.is_empty())
        .then(|| {
            let counts = bin_counts(&citation_bins);
            let total: u64 = counts.values().sum();
            let observed = proportions(&counts, total);
            index
                .population_marginal(MarginalAttr::CitationsBin, restrict)
                .ok()
                .map(|reference| parity(&observed, &reference))
        })
        .flatten();

    let pop_works = popularity(&works_bins);
    let pop_citations = popularity(&citation_bins);

    Ok(MetricRow {
        prompt_id: prompt.prompt_id.clone(),
        llm_id: llm_id.to_string(),
        dims: prompt.dims.clone(),
        validity,
        refusals,
        duplicates,
        consistency,
        fact_author,
        fact_field,
        fact_seniority,
        fact_location,
        div_gender,
        div_ethnicity,
        div_location,
        div_works,
        div_citations,
        par_gender,
        par_ethnicity,
        par_works,
        par_citations,
        pop_works,
        pop_citations,
        n_runs,
        n_valid_runs: n_valid as u32,
        n_matched: n_matched as u32,
    })
}

fn bin_counts(bins: &[Bin]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for bin in bins {
        *counts.entry(bin.as_str().to_string()).or_insert(0) += 1;
    }
    counts
}

fn proportions(counts: &BTreeMap<String, u64>, total: u64) -> BTreeMap<String, f64> {
    counts
        .iter()
        .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
        .collect()
}
