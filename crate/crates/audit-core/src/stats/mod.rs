//! Sensitivity analysis: per-metric fixed-effects OLS, Type-II variance
//! decomposition with omega-squared effect sizes, cluster-robust coefficient
//! inference with Benjamini-Hochberg correction, and residual diagnostics.

pub mod anova;
pub mod bh;
pub mod design;
pub mod diagnostics;
pub mod ols;
pub mod robust;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{AuditError, Result};
use crate::evaluate::METRIC_NAMES;

pub use anova::{anova_type_ii, omega_squared, AnovaTable, FactorSs};
pub use bh::bh_correct;
pub use design::{subfield_slots, Design, DesignBuilder, Factor};
pub use diagnostics::{diagnostics, shapiro_w, Diagnostics};
pub use ols::{fit_ols, FittedModel};
pub use robust::{cluster_robust, RobustInference};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BhScope {
    Pooled,
    PerMetric,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub confidence: f64,
    pub cr_version: u8,
    pub bh_scope: BhScope,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            confidence: 0.95,
            cr_version: 1,
            bh_scope: BhScope::Pooled,
            seed: 0,
        }
    }
}

/// One parsed row of the long-format metrics table.
#[derive(Debug, Clone)]
pub struct MetricCell {
    pub prompt_id: String,
    pub llm_id: String,
    pub role: String,
    pub language: String,
    pub location: String,
    pub field: String,
    pub subfield: String,
    pub seniority: String,
    pub k: String,
    pub values: BTreeMap<String, f64>,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricCell>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            AuditError::Stats(format!("{}: missing column `{name}`", path.display()))
        })
    };
    let idx_prompt = col("prompt_id")?;
    let idx_llm = col("llm_id")?;
    let idx_role = col("role")?;
    let idx_language = col("language")?;
    let idx_location = col("location")?;
    let idx_field = col("field")?;
    let idx_subfield = col("subfield")?;
    let idx_seniority = col("seniority")?;
    let idx_k = col("k")?;
    let metric_cols: Vec<(String, usize)> = METRIC_NAMES
        .iter()
        .filter_map(|m| headers.iter().position(|h| h == *m).map(|i| (m.to_string(), i)))
        .collect();

    let mut cells = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| AuditError::parse(path, line + 2, e.to_string()))?;
        let get = |i: usize| row.get(i).unwrap_or("").to_string();
        let mut values = BTreeMap::new();
        for (name, i) in &metric_cols {
            let raw = row.get(*i).unwrap_or("");
            if raw.is_empty() {
                continue;
            }
            let value: f64 = raw.parse().map_err(|_| {
                AuditError::parse(path, line + 2, format!("bad value for {name}: `{raw}`"))
            })?;
            values.insert(name.clone(), value);
        }
        cells.push(MetricCell {
            prompt_id: get(idx_prompt),
            llm_id: get(idx_llm),
            role: get(idx_role),
            language: get(idx_language),
            location: get(idx_location),
            field: get(idx_field),
            subfield: get(idx_subfield),
            seniority: get(idx_seniority),
            k: get(idx_k),
            values,
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone)]
pub struct CoefEstimate {
    pub factor: String,
    pub level: String,
    pub reference: String,
    pub estimate: f64,
    pub robust_se: f64,
    pub p: f64,
    pub p_bh: Option<f64>,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone)]
pub struct FactorDecomposition {
    pub factor: String,
    pub ss: f64,
    pub df: usize,
    pub omega2: f64,
    pub p: f64,
    pub p_bh: Option<f64>,
}

#[derive(Debug)]
pub struct MetricAnalysis {
    pub metric: String,
    pub n_used: usize,
    pub n_dropped: usize,
    pub factors: Vec<FactorDecomposition>,
    pub ss_residual: f64,
    pub df_residual: usize,
    pub ss_total: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub r2_share_llm: Option<f64>,
    pub coefficients: Vec<CoefEstimate>,
    pub diagnostics: Diagnostics,
    pub notes: Vec<String>,
}

/// Builds the per-metric design from cells with a present response value.
fn build_design(cells: &[MetricCell], metric: &str) -> Result<(Design, usize)> {
    let rows: Vec<&MetricCell> = cells.iter().filter(|c| c.values.contains_key(metric)).collect();
    let n_dropped = cells.len() - rows.len();
    if rows.is_empty() {
        return Err(AuditError::Stats(format!("{metric}: no rows with a present value")));
    }

    let fields: Vec<String> = rows.iter().map(|c| c.field.clone()).collect();
    let raw_subfields: Vec<String> = rows.iter().map(|c| c.subfield.clone()).collect();
    let slots = subfield_slots(&fields, &raw_subfields)?;

    let factor_values: Vec<(String, Vec<String>)> = vec![
        ("language".into(), rows.iter().map(|c| c.language.clone()).collect()),
        ("location".into(), rows.iter().map(|c| c.location.clone()).collect()),
        ("role".into(), rows.iter().map(|c| c.role.clone()).collect()),
        ("k".into(), rows.iter().map(|c| c.k.clone()).collect()),
        ("field".into(), fields),
        ("subfield".into(), slots),
        ("seniority".into(), rows.iter().map(|c| c.seniority.clone()).collect()),
        ("llm".into(), rows.iter().map(|c| c.llm_id.clone()).collect()),
    ];

    let design = DesignBuilder {
        response: metric.to_string(),
        factor_values,
        y: rows.iter().map(|c| c.values[metric]).collect(),
        clusters: rows
            .iter()
            .map(|c| format!("{}\u{1f}{}", c.prompt_id, c.llm_id))
            .collect(),
    }
    .build()?;
    Ok((design, n_dropped))
}

/// Share of R^2 attributable to the llm factor: the relative reduction in
/// R^2 when the term is removed.
pub fn r2_share_llm(design: &Design, fit: &FittedModel) -> Result<Option<f64>> {
    let Some(llm_idx) = design.factors.iter().position(|f| f.name == "llm") else {
        return Ok(None);
    };
    let drop = design.factor_columns(llm_idx);
    let keep: Vec<usize> = (0..design.n_cols()).filter(|c| !drop.contains(c)).collect();
    let rss_reduced = ols::reduced_rss(design, &keep)?;
    let r2_full = fit.r2();
    if r2_full == 0.0 {
        return Ok(Some(0.0));
    }
    let r2_reduced = if fit.tss == 0.0 { 0.0 } else { 1.0 - rss_reduced / fit.tss };
    Ok(Some((r2_full - r2_reduced) / r2_full))
}

/// Fits and decomposes one metric. BH-adjusted p-values are filled in later
/// by [`analyze_all`], which owns the correction family.
pub fn analyze_metric(
    cells: &[MetricCell],
    metric: &str,
    options: &AnalysisOptions,
) -> Result<MetricAnalysis> {
    let (design, n_dropped) = build_design(cells, metric)?;
    let fit = fit_ols(&design)?;
    let table = anova_type_ii(&design, &fit)?;
    let robust = cluster_robust(&design, &fit, options.cr_version, options.confidence)?;
    let diag = diagnostics::diagnostics(&design, &fit, options.seed)?;
    let share = r2_share_llm(&design, &fit)?;

    let references: BTreeMap<&str, &str> = design
        .factors
        .iter()
        .map(|f| (f.name.as_str(), f.levels[0].as_str()))
        .collect();
    let coefficients = fit
        .coef_names
        .iter()
        .enumerate()
        .map(|(j, (factor, level))| CoefEstimate {
            factor: factor.clone(),
            level: level.clone(),
            reference: references.get(factor.as_str()).unwrap_or(&"").to_string(),
            estimate: fit.beta[j],
            robust_se: robust.se[j],
            p: robust.p[j],
            p_bh: None,
            ci_lo: robust.ci_lo[j],
            ci_hi: robust.ci_hi[j],
        })
        .collect();

    Ok(MetricAnalysis {
        metric: metric.to_string(),
        n_used: design.n_rows(),
        n_dropped,
        factors: table
            .factors
            .iter()
            .map(|f| FactorDecomposition {
                factor: f.factor.clone(),
                ss: f.ss,
                df: f.df,
                omega2: f.omega2,
                p: f.p,
                p_bh: None,
            })
            .collect(),
        ss_residual: table.ss_residual,
        df_residual: table.df_residual,
        ss_total: table.ss_total,
        r2: fit.r2(),
        adj_r2: fit.adj_r2(),
        r2_share_llm: share,
        coefficients,
        diagnostics: diag,
        notes: design.notes.clone(),
    })
}

/// Analyzes every metric present in the table; metrics that cannot be fit
/// (constant response, no rows) are skipped with a reason. BH correction is
/// applied across the requested family scope: one family for factor tests
/// and one for coefficient tests.
pub fn analyze_all(
    cells: &[MetricCell],
    options: &AnalysisOptions,
) -> (Vec<MetricAnalysis>, Vec<(String, String)>) {
    let mut analyses = Vec::new();
    let mut skipped = Vec::new();
    for metric in METRIC_NAMES {
        let present = cells.iter().any(|c| c.values.contains_key(metric));
        if !present {
            skipped.push((metric.to_string(), "no values present".to_string()));
            continue;
        }
        match analyze_metric(cells, metric, options) {
            Ok(analysis) => analyses.push(analysis),
            Err(e) => skipped.push((metric.to_string(), e.to_string())),
        }
    }

    match options.bh_scope {
        BhScope::Pooled => {
            apply_bh(&mut analyses);
        }
        BhScope::PerMetric => {
            for analysis in &mut analyses {
                apply_bh(std::slice::from_mut(analysis));
            }
        }
    }

    (analyses, skipped)
}

/// Fills factor-level and coefficient-level adjusted p-values over the given
/// group of analyses as two families (F tests; Wald tests excluding the
/// intercept).
fn apply_bh(analyses: &mut [MetricAnalysis]) {
    let mut factor_ps = Vec::new();
    for analysis in analyses.iter() {
        for factor in &analysis.factors {
            factor_ps.push(factor.p);
        }
    }
    let factor_adj = bh_correct(&factor_ps);
    let mut cursor = 0;
    for analysis in analyses.iter_mut() {
        for factor in &mut analysis.factors {
            factor.p_bh = Some(factor_adj[cursor]);
            cursor += 1;
        }
    }

    let mut coef_ps = Vec::new();
    for analysis in analyses.iter() {
        for coef in &analysis.coefficients {
            if coef.factor != "(Intercept)" {
                coef_ps.push(coef.p);
            }
        }
    }
    let coef_adj = bh_correct(&coef_ps);
    let mut cursor = 0;
    for analysis in analyses.iter_mut() {
        for coef in &mut analysis.coefficients {
            if coef.factor != "(Intercept)" {
                coef.p_bh = Some(coef_adj[cursor]);
                cursor += 1;
            }
        }
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_omega_csv(path: &Path, analyses: &[MetricAnalysis]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Stats(format!("{}: {e}", path.display()));
    w.write_record(["metric", "factor", "ss", "df", "omega2", "p", "p_bh"])
        .map_err(io_err)?;
    for analysis in analyses {
        for factor in &analysis.factors {
            w.write_record([
                analysis.metric.clone(),
                factor.factor.clone(),
                fmt(factor.ss),
                factor.df.to_string(),
                fmt(factor.omega2),
                fmt(factor.p),
                fmt_opt(factor.p_bh),
            ])
            .map_err(io_err)?;
        }
        w.write_record([
            analysis.metric.clone(),
            "Residual".to_string(),
            fmt(analysis.ss_residual),
            analysis.df_residual.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

pub fn write_coef_csv(path: &Path, analyses: &[MetricAnalysis]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Stats(format!("{}: {e}", path.display()));
    w.write_record([
        "metric", "factor", "level", "reference", "estimate", "robust_se", "ci_lo", "ci_hi", "p",
        "p_bh",
    ])
    .map_err(io_err)?;
    for analysis in analyses {
        for coef in &analysis.coefficients {
            w.write_record([
                analysis.metric.clone(),
                coef.factor.clone(),
                coef.level.clone(),
                coef.reference.clone(),
                fmt(coef.estimate),
                fmt(coef.robust_se),
                fmt(coef.ci_lo),
                fmt(coef.ci_hi),
                fmt(coef.p),
                fmt_opt(coef.p_bh),
            ])
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

pub fn write_diagnostics_csv(path: &Path, analyses: &[MetricAnalysis]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Stats(format!("{}: {e}", path.display()));
    w.write_record(["metric", "shapiro_w", "bp_stat", "frac_outside_unit", "shapiro_n"])
        .map_err(io_err)?;
    for analysis in analyses {
        w.write_record([
            analysis.metric.clone(),
            fmt_opt(analysis.diagnostics.shapiro_w),
            fmt(analysis.diagnostics.bp_stat),
            fmt(analysis.diagnostics.frac_outside_unit),
            analysis.diagnostics.shapiro_n.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

pub fn write_fit_csv(path: &Path, analyses: &[MetricAnalysis]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Stats(format!("{}: {e}", path.display()));
    w.write_record(["metric", "r2", "adj_r2", "r2_share_llm", "n_used", "n_dropped"])
        .map_err(io_err)?;
    for analysis in analyses {
        w.write_record([
            analysis.metric.clone(),
            fmt(analysis.r2),
            fmt(analysis.adj_r2),
            fmt_opt(analysis.r2_share_llm),
            analysis.n_used.to_string(),
            analysis.n_dropped.to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

pub fn write_skipped_csv(path: &Path, skipped: &[(String, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| AuditError::Stats(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| AuditError::Stats(format!("{}: {e}", path.display()));
    w.write_record(["metric", "reason"]).map_err(io_err)?;
    for (metric, reason) in skipped {
        w.write_record([metric, reason]).map_err(io_err)?;
    }
    w.flush().map_err(|e| AuditError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(role: &str, k: &str, llm: &str, value: f64) -> MetricCell {
        let mut values = BTreeMap::new();
        values.insert("validity".to_string(), value);
        MetricCell {
            prompt_id: format!("p-{role}-{k}"),
            llm_id: llm.to_string(),
            role: role.to_string(),
            language: "en".to_string(),
            location: "Germany".to_string(),
            field: "Physics".to_string(),
            subfield: "physics education".to_string(),
            seniority: "Junior Professor".to_string(),
            k: k.to_string(),
            values,
        }
    }

    #[test]
    fn r2_share_boundaries() {
        // Response depends only on llm: share 1. Only on k: share 0.
        let mut cells = Vec::new();
        for (llm, v) in [("m1", 0.2), ("m2", 0.8)] {
            for k in ["1", "5"] {
                for role in ["A", "B"] {
                    cells.push(cell(role, k, llm, v));
                }
            }
        }
        let (design, _) = build_design(&cells, "validity").unwrap();
        let fit = fit_ols(&design).unwrap();
        let share = r2_share_llm(&design, &fit).unwrap().unwrap();
        assert!((share - 1.0).abs() < 1e-10, "share {share}");

        let mut cells = Vec::new();
        for llm in ["m1", "m2"] {
            for (k, v) in [("1", 0.1), ("5", 0.9)] {
                for role in ["A", "B"] {
                    cells.push(cell(role, k, llm, v));
                }
            }
        }
        let (design, _) = build_design(&cells, "validity").unwrap();
        let fit = fit_ols(&design).unwrap();
        let share = r2_share_llm(&design, &fit).unwrap().unwrap();
        assert!(share.abs() < 1e-10, "share {share}");
    }

    #[test]
    fn mixed_share_matches_two_explicit_fits() {
        // Response = llm effect + k effect + deterministic wiggle.
        let mut cells = Vec::new();
        let mut i = 0u32;
        for (llm, lv) in [("m1", 0.0), ("m2", 0.3)] {
            for (k, kv) in [("1", 0.0), ("5", 0.2), ("10", 0.35)] {
                for role in ["A", "B"] {
                    let wiggle = ((u64::from(i) * 2654435761) % 97) as f64 / 970.0;
                    i += 1;
                    cells.push(cell(role, k, llm, 0.2 + lv + kv + wiggle));
                }
            }
        }
        let (design, _) = build_design(&cells, "validity").unwrap();
        let fit = fit_ols(&design).unwrap();
        let share = r2_share_llm(&design, &fit).unwrap().unwrap();

        // Oracle: fit with and without the llm factor via two explicit
        // designs and compose the share by hand.
        let full_r2 = fit.r2();
        let mut no_llm_cells = cells.clone();
        for c in &mut no_llm_cells {
            c.llm_id = "same".into();
        }
        let (reduced_design, _) = build_design(&no_llm_cells, "validity").unwrap();
        let reduced_fit = fit_ols(&reduced_design).unwrap();
        let expected = (full_r2 - reduced_fit.r2()) / full_r2;
        assert!((share - expected).abs() < 1e-10, "{share} vs {expected}");
    }

    #[test]
    fn type_ii_is_ordering_invariant_through_the_driver() {
        // Unbalanced 3-factor data; permuting factor declaration order must
        // leave every factor's SS unchanged. The driver fixes the factor
        // order, so permute by relabeling columns through DesignBuilder.
        let roles = ["A", "A", "A", "B", "B", "A", "B", "B", "A", "B", "B", "B"];
        let langs = ["en", "de", "en", "de", "en", "de", "en", "de", "de", "en", "de", "en"];
        let ks = ["1", "5", "5", "1", "1", "1", "5", "5", "1", "1", "5", "1"];
        let y: Vec<f64> = (0..12)
            .map(|i| {
                let mut v = 0.1;
                if roles[i] == "B" {
                    v += 0.4;
                }
                if langs[i] == "de" {
                    v += 0.15;
                }
                if ks[i] == "5" {
                    v += 0.05;
                }
                v + ((i as f64) * 0.001)
            })
            .collect();

        let build = |order: [(&str, &[&str]); 3]| {
            DesignBuilder {
                response: "m".into(),
                factor_values: order
                    .iter()
                    .map(|(name, vals)| {
                        (name.to_string(), vals.iter().map(|s| s.to_string()).collect())
                    })
                    .collect(),
                y: y.clone(),
                clusters: (0..12).map(|i| format!("c{i}")).collect(),
            }
            .build()
            .unwrap()
        };

        let orderings: [[(&str, &[&str]); 3]; 6] = [
            [("role", &roles), ("language", &langs), ("k", &ks)],
            [("role", &roles), ("k", &ks), ("language", &langs)],
            [("language", &langs), ("role", &roles), ("k", &ks)],
            [("language", &langs), ("k", &ks), ("role", &roles)],
            [("k", &ks), ("role", &roles), ("language", &langs)],
            [("k", &ks), ("language", &langs), ("role", &roles)],
        ];

        let mut reference: Option<BTreeMap<String, f64>> = None;
        for ordering in orderings {
            let design = build(ordering);
            let fit = fit_ols(&design).unwrap();
            let table = anova_type_ii(&design, &fit).unwrap();
            let ss: BTreeMap<String, f64> = table
                .factors
                .iter()
                .map(|f| (f.factor.clone(), f.ss))
                .collect();
            match &reference {
                None => reference = Some(ss),
                Some(expected) => {
                    for (factor, value) in &ss {
                        let want = expected[factor];
                        assert!(
                            (value - want).abs() < 1e-10,
                            "factor {factor}: {value} vs {want}"
                        );
                    }
                }
            }
        }
    }
}
