//! Per-model aggregation: metric means, composite socio-technical scores,
//! median-split quadrants, and machine-readable report tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{AuditError, Result};
use crate::evaluate::METRIC_NAMES;
use crate::stats::MetricCell;

/// Components of the technical composite: validity, the complements of
/// refusals and duplicates, and the four factuality scores ([0,7] total).
const TECHNICAL_COMPONENTS: [(&str, bool); 7] = [
    ("validity", false),
    ("refusals", true),
    ("duplicates", true),
    ("fact_author", false),
    ("fact_field", false),
    ("fact_seniority", false),
    ("fact_location", false),
];

/// Components of the social composite: the four parity scores ([0,4] total).
const SOCIAL_COMPONENTS: [&str; 4] = ["par_gender", "par_ethnicity", "par_works", "par_citations"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Quadrant {
    Q1,
    Q2,
    Q3,
    Q4,
}

impl Quadrant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quadrant::Q1 => "Q1",
            Quadrant::Q2 => "Q2",
            Quadrant::Q3 => "Q3",
            Quadrant::Q4 => "Q4",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSummary {
    pub llm_id: String,
    pub n_cells: usize,
    /// Unweighted mean over cells where the metric was present.
    pub means: BTreeMap<String, f64>,
    /// Number of contributing cells per metric.
    pub counts: BTreeMap<String, usize>,
    pub composite_technical: f64,
    pub composite_social: f64,
    /// Composite components that were absent for every cell (contributed 0).
    pub technical_gaps: Vec<String>,
    pub social_gaps: Vec<String>,
    pub quadrant: Quadrant,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadrantSplit {
    pub median_technical: f64,
    pub median_social: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Aggregates cells per model: unweighted metric means, composites, and the
/// median-split quadrant (ties land in the upper half).
pub fn summarize(cells: &[MetricCell]) -> Result<(Vec<ModelSummary>, QuadrantSplit)> {
    if cells.is_empty() {
        return Err(AuditError::Report("no metric rows to summarize".into()));
    }

    let mut per_model: BTreeMap<&str, Vec<&MetricCell>> = BTreeMap::new();
    for cell in cells {
        per_model.entry(cell.llm_id.as_str()).or_default().push(cell);
    }

    let mut summaries: Vec<ModelSummary> = per_model
        .into_iter()
        .map(|(llm_id, cells)| {
            let mut means = BTreeMap::new();
            let mut counts = BTreeMap::new();
            for metric in METRIC_NAMES {
                let values: Vec<f64> =
                    cells.iter().filter_map(|c| c.values.get(metric).copied()).collect();
                counts.insert(metric.to_string(), values.len());
                if !values.is_empty() {
                    means.insert(
                        metric.to_string(),
                        values.iter().sum::<f64>() / values.len() as f64,
                    );
                }
            }

            let mut composite_technical = 0.0;
            let mut technical_gaps = Vec::new();
            for (metric, complement) in TECHNICAL_COMPONENTS {
                match means.get(metric) {
                    Some(&mean) => {
                        composite_technical += if complement { 1.0 - mean } else { mean };
                    }
                    None => technical_gaps.push(metric.to_string()),
                }
            }
            let mut composite_social = 0.0;
            let mut social_gaps = Vec::new();
            for metric in SOCIAL_COMPONENTS {
                match means.get(metric) {
                    Some(&mean) => composite_social += mean,
                    None => social_gaps.push(metric.to_string()),
                }
            }

            ModelSummary {
                llm_id: llm_id.to_string(),
                n_cells: cells.len(),
                means,
                counts,
                composite_technical,
                composite_social,
                technical_gaps,
                social_gaps,
                quadrant: Quadrant::Q3,
            }
        })
        .collect();

    let mut technical: Vec<f64> = summaries.iter().map(|s| s.composite_technical).collect();
    let mut social: Vec<f64> = summaries.iter().map(|s| s.composite_social).collect();
    technical.sort_by(f64::total_cmp);
    social.sort_by(f64::total_cmp);
    let split = QuadrantSplit {
        median_technical: median(&technical),
        median_social: median(&social),
    };

    for summary in &mut summaries {
        let tech_high = summary.composite_technical >= split.median_technical;
        let social_high = summary.composite_social >= split.median_social;
        summary.quadrant = match (tech_high, social_high) {
            (true, true) => Quadrant::Q1,
            (false, true) => Quadrant::Q2,
            (false, false) => Quadrant::Q3,
            (true, false) => Quadrant::Q4,
        };
    }

    Ok((summaries, split))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn write_model_summary_csv(path: &Path, summaries: &[ModelSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Report(format!("{}: {e}", path.display()));

    let mut header = vec!["llm_id".to_string(), "n_cells".to_string()];
    for metric in METRIC_NAMES {
        header.push(format!("mean_{metric}"));
        header.push(format!("n_{metric}"));
    }
    header.extend(
        [
            "composite_technical",
            "composite_social",
            "technical_gaps",
            "social_gaps",
            "quadrant",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(io_err)?;

    for s in summaries {
        let mut row = vec![s.llm_id.clone(), s.n_cells.to_string()];
        for metric in METRIC_NAMES {
            row.push(s.means.get(metric).map(|v| fmt(*v)).unwrap_or_default());
            row.push(s.counts.get(metric).copied().unwrap_or(0).to_string());
        }
        row.push(fmt(s.composite_technical));
        row.push(fmt(s.composite_social));
        row.push(s.technical_gaps.join(";"));
        row.push(s.social_gaps.join(";"));
        row.push(s.quadrant.as_str().to_string());
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

pub fn write_quadrants_csv(
    path: &Path,
    summaries: &[ModelSummary],
    split: &QuadrantSplit,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Report(format!("{}: {e}", path.display()));
    w.write_record([
        "llm_id",
        "composite_technical",
        "composite_social",
        "quadrant",
        "median_technical",
        "median_social",
    ])
    .map_err(io_err)?;
    for s in summaries {
        w.write_record([
            s.llm_id.clone(),
            fmt(s.composite_technical),
            fmt(s.composite_social),
            s.quadrant.as_str().to_string(),
            fmt(split.median_technical),
            fmt(split.median_social),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

/// Emits the wide omega heatmap (factor rows x metric columns, residual row
/// 1 - R^2) from the analysis stage's long tables. Negative omega-squared
/// values clamp to zero here; the long table keeps them raw.
pub fn write_heatmap_csv(
    path: &Path,
    omega_rows: &[(String, String, String)],
    fit_r2: &BTreeMap<String, f64>,
) -> Result<()> {
    let mut metrics: Vec<&str> = Vec::new();
    for metric in METRIC_NAMES {
        if omega_rows.iter().any(|(m, _, _)| m == metric) {
            metrics.push(metric);
        }
    }
    let mut factors: Vec<&str> = Vec::new();
    for factor in ["language", "location", "role", "k", "field", "subfield", "seniority", "llm"] {
        if omega_rows.iter().any(|(_, f, _)| f == factor) {
            factors.push(factor);
        }
    }

    let cell: BTreeMap<(&str, &str), &str> = omega_rows
        .iter()
        .map(|(m, f, v)| ((m.as_str(), f.as_str()), v.as_str()))
        .collect();

    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Report(format!("{}: {e}", path.display()));
    let mut header = vec!["factor".to_string()];
    header.extend(metrics.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(io_err)?;
    for factor in &factors {
        let mut row = vec![factor.to_string()];
        for metric in &metrics {
            let raw = cell.get(&(*metric, *factor)).unwrap_or(&"");
            let clamped = match raw.parse::<f64>() {
                Ok(v) => fmt(v.max(0.0)),
                Err(_) => raw.to_string(),
            };
            row.push(clamped);
        }
        w.write_record(&row).map_err(io_err)?;
    }
    let mut residual = vec!["Residual".to_string()];
    for metric in &metrics {
        residual.push(
            fit_r2
                .get(*metric)
                .map(|r2| fmt(1.0 - r2))
                .unwrap_or_default(),
        );
    }
    w.write_record(&residual).map_err(io_err)?;
    w.flush().map_err(|e| AuditError::io(path, e))
}

/// Report stage: reads metrics.csv plus the analysis directory and writes the
/// report tables. Missing analysis inputs produce a partial emission with an
/// explicit gap log instead of an error.
pub fn emit_reports(metrics_path: &Path, stats_dir: &Path, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| AuditError::io(out_dir, e))?;
    let mut gaps: Vec<String> = Vec::new();

    let cells = crate::stats::read_metrics_csv(metrics_path)?;
    let (summaries, split) = summarize(&cells)?;
    write_model_summary_csv(&out_dir.join("model_summary.csv"), &summaries)?;
    write_quadrants_csv(&out_dir.join("quadrants.csv"), &summaries, &split)?;

    let omega_path = stats_dir.join("omega.csv");
    let fit_path = stats_dir.join("fit.csv");
    if omega_path.is_file() && fit_path.is_file() {
        let omega_rows = read_omega_rows(&omega_path)?;
        let fit_r2 = read_fit_r2(&fit_path)?;
        write_heatmap_csv(&out_dir.join("heatmap_omega.csv"), &omega_rows, &fit_r2)?;
    } else {
        gaps.push(format!(
            "heatmap_omega.csv not emitted: missing {} or {}",
            omega_path.display(),
            fit_path.display()
        ));
    }

    let coef_path = stats_dir.join("coef.csv");
    if coef_path.is_file() {
        std::fs::copy(&coef_path, out_dir.join("coefficients.csv"))
            .map_err(|e| AuditError::io(&coef_path, e))?;
    } else {
        gaps.push(format!(
            "coefficients.csv not emitted: missing {}",
            coef_path.display()
        ));
    }

    let gap_log = out_dir.join("gaps.txt");
    if gaps.is_empty() {
        if gap_log.exists() {
            std::fs::remove_file(&gap_log).map_err(|e| AuditError::io(&gap_log, e))?;
        }
    } else {
        std::fs::write(&gap_log, gaps.join("\n") + "\n").map_err(|e| AuditError::io(&gap_log, e))?;
    }
    Ok(gaps)
}

fn read_omega_rows(path: &Path) -> Result<Vec<(String, String, String)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
        let metric = record.get(0).unwrap_or("").to_string();
        let factor = record.get(1).unwrap_or("").to_string();
        let omega2 = record.get(4).unwrap_or("").to_string();
        if factor != "Residual" {
            rows.push((metric, factor, omega2));
        }
    }
    Ok(rows)
}

fn read_fit_r2(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| AuditError::Report(format!("{}: {e}", path.display())))?;
        let metric = record.get(0).unwrap_or("").to_string();
        if let Some(r2) = record.get(1).and_then(|v| v.parse::<f64>().ok()) {
            out.insert(metric, r2);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell_for(llm: &str, values: &[(&str, f64)]) -> MetricCell {
        MetricCell {
            prompt_id: "p1".into(),
            llm_id: llm.into(),
            role: "Director/Recruiter".into(),
            language: "en".into(),
            location: "Germany".into(),
            field: "Physics".into(),
            subfield: "physics education".into(),
            seniority: "Junior Professor".into(),
            k: "1".into(),
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn perfect_model_reaches_technical_bound() {
        let perfect = cell_for(
            "good",
            &[
                ("validity", 1.0),
                ("refusals", 0.0),
                ("duplicates", 0.0),
                ("fact_author", 1.0),
                ("fact_field", 1.0),
                ("fact_seniority", 1.0),
                ("fact_location", 1.0),
            ],
        );
        let (summaries, _) = summarize(&[perfect]).unwrap();
        assert_eq!(summaries.len(), 1);
        assert!((summaries[0].composite_technical - 7.0).abs() < 1e-12);
        assert!(summaries[0].technical_gaps.is_empty());
        assert_eq!(summaries[0].composite_social, 0.0);
        assert_eq!(summaries[0].social_gaps.len(), 4);
    }

    #[test]
    fn parity_band_example() {
        let cell = cell_for(
            "m",
            &[
                ("par_gender", 0.55),
                ("par_ethnicity", 0.55),
                ("par_works", 0.55),
                ("par_citations", 0.55),
            ],
        );
        let (summaries, _) = summarize(&[cell]).unwrap();
        let social = summaries[0].composite_social;
        assert!((social - 2.2).abs() < 1e-12, "got {social}");
        assert!((0.0..=4.0).contains(&social));
    }

    #[test]
    fn dominant_model_lands_in_q1_other_in_q3() {
        let strong = cell_for(
            "strong",
            &[
                ("validity", 0.9),
                ("refusals", 0.1),
                ("duplicates", 0.1),
                ("fact_author", 0.9),
                ("par_gender", 0.8),
                ("par_works", 0.7),
            ],
        );
        let weak = cell_for(
            "weak",
            &[
                ("validity", 0.3),
                ("refusals", 0.5),
                ("duplicates", 0.4),
                ("fact_author", 0.2),
                ("par_gender", 0.2),
                ("par_works", 0.1),
            ],
        );
        let (summaries, split) = summarize(&[strong, weak]).unwrap();
        let by_id: BTreeMap<&str, &ModelSummary> =
            summaries.iter().map(|s| (s.llm_id.as_str(), s)).collect();
        assert_eq!(by_id["strong"].quadrant, Quadrant::Q1);
        assert_eq!(by_id["weak"].quadrant, Quadrant::Q3);
        assert!(split.median_technical > 0.0);
    }

    #[test]
    fn absent_components_contribute_zero_and_flag() {
        let cell = cell_for("m", &[("validity", 1.0), ("refusals", 0.0)]);
        let (summaries, _) = summarize(&[cell]).unwrap();
        let s = &summaries[0];
        // validity 1 + (1 - refusals) 1 = 2; duplicates and factuality absent.
        assert!((s.composite_technical - 2.0).abs() < 1e-12);
        assert!(s.technical_gaps.contains(&"duplicates".to_string()));
        assert!(s.technical_gaps.contains(&"fact_author".to_string()));
    }
}
