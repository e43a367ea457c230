//! Type-II variance decomposition and the omega-squared effect size.
//!
//! For a main-effects model the Type-II sum of squares of factor f is the
//! increase in residual sum of squares when f's columns are removed from the
//! full model, which makes the attribution independent of factor ordering.

use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{AuditError, Result};
use crate::stats::design::Design;
use crate::stats::ols::{reduced_rss, FittedModel};

#[derive(Debug, Clone)]
pub struct FactorSs {
    pub factor: String,
    pub ss: f64,
    pub df: usize,
    pub omega2: f64,
    pub f_stat: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct AnovaTable {
    pub factors: Vec<FactorSs>,
    pub ss_residual: f64,
    pub df_residual: usize,
    pub ss_total: f64,
}

/// Omega-squared per the bias-corrected effect-size definition:
/// (SS_f - df_f * MS_res) / (SS_total + MS_res). May be negative for null
/// factors; reported raw.
pub fn omega_squared(ss_f: f64, df_f: usize, ss_res: f64, df_res: usize, ss_total: f64) -> Result<f64> {
    if df_res == 0 {
        return Err(AuditError::Stats(
            "omega-squared undefined with zero residual degrees of freedom".into(),
        ));
    }
    let ms_res = ss_res / df_res as f64;
    Ok((ss_f - df_f as f64 * ms_res) / (ss_total + ms_res))
}

/// Upper-tail F probability; degenerate residual variance maps exact fits to
/// p = 0 for positive sums of squares.
fn f_test_p(ss_f: f64, df_f: usize, ms_res: f64, df_res: usize) -> f64 {
    if df_res == 0 {
        return f64::NAN;
    }
    if ms_res <= 0.0 {
        return if ss_f > 0.0 { 0.0 } else { 1.0 };
    }
    let f = (ss_f / df_f as f64) / ms_res;
    match FisherSnedecor::new(df_f as f64, df_res as f64) {
        Ok(dist) => 1.0 - dist.cdf(f),
        Err(_) => f64::NAN,
    }
}

/// Type-II decomposition over every factor of a fitted main-effects model.
pub fn anova_type_ii(design: &Design, fit: &FittedModel) -> Result<AnovaTable> {
    let df_res = fit.df_residual();
    if df_res == 0 && design.factors.len() > 1 {
        // Saturated fits still decompose, but omega^2 needs df_res > 0;
        // callers on saturated designs only read SS/df.
    }
    let ms_res = if df_res > 0 { fit.rss / df_res as f64 } else { 0.0 };

    let all_cols: Vec<usize> = (0..design.n_cols()).collect();
    let mut factors = Vec::with_capacity(design.factors.len());
    for (f_idx, factor) in design.factors.iter().enumerate() {
        let drop = design.factor_columns(f_idx);
        let keep: Vec<usize> = all_cols
            .iter()
            .copied()
            .filter(|c| !drop.contains(c))
            .collect();
        let rss_reduced = reduced_rss(design, &keep).map_err(|e| {
            AuditError::Stats(format!("refit without {}: {e}", factor.name))
        })?;
        let ss = (rss_reduced - fit.rss).max(0.0);
        let df = factor.df();
        let omega2 = if df_res > 0 {
            omega_squared(ss, df, fit.rss, df_res, fit.tss)?
        } else {
            f64::NAN
        };
        let f_stat = if ms_res > 0.0 {
            (ss / df as f64) / ms_res
        } else {
            f64::INFINITY
        };
        factors.push(FactorSs {
            factor: factor.name.clone(),
            ss,
            df,
            omega2,
            f_stat,
            p: f_test_p(ss, df, ms_res, df_res),
        });
    }

    Ok(AnovaTable {
        factors,
        ss_residual: fit.rss,
        df_residual: df_res,
        ss_total: fit.tss,
    })
}
