//! Cluster-robust covariance (CR0/CR1 sandwich) and Wald inference.
//!
//! The meat sums per-cluster score outer products; CR1 applies the
//! G/(G-1) * (n-1)/(n-p) finite-sample factor. With every cluster a
//! singleton, CR1 collapses to HC1-scaled heteroskedasticity-robust errors.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{AuditError, Result};
use crate::stats::design::Design;
use crate::stats::ols::FittedModel;

#[derive(Debug, Clone)]
pub struct RobustInference {
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub n_clusters: usize,
}

/// Cluster-robust standard errors for a fitted model. `cr_version` 0 applies
/// no finite-sample correction; 1 applies the CR1 factor.
pub fn cluster_robust(
    design: &Design,
    fit: &FittedModel,
    cr_version: u8,
    confidence: f64,
) -> Result<RobustInference> {
    let n = fit.n;
    let p = fit.p;
    let n_clusters = design.n_clusters;
    if n_clusters < 2 {
        return Err(AuditError::Stats(format!(
            "{}: cluster-robust errors need at least 2 clusters, got {n_clusters}",
            design.response
        )));
    }
    if !(0.0..1.0).contains(&confidence) || confidence <= 0.0 {
        return Err(AuditError::Stats(format!(
            "confidence level {confidence} outside (0, 1)"
        )));
    }

    // Per-cluster score vectors s_g = sum_{i in g} e_i x_i.
    let mut scores = vec![DVector::<f64>::zeros(p); n_clusters];
    for row in 0..n {
        let g = design.cluster_ids[row] as usize;
        let e = fit.residuals[row];
        for col in design.active_columns(row) {
            scores[g][col] += e;
        }
    }
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for s in &scores {
        meat += s * s.transpose();
    }

    let scale = match cr_version {
        0 => 1.0,
        1 => {
            let g = n_clusters as f64;
            let nf = n as f64;
            let pf = p as f64;
            g / (g - 1.0) * (nf - 1.0) / (nf - pf)
        }
        other => {
            return Err(AuditError::Stats(format!(
                "unsupported cluster-robust variant CR{other}"
            )))
        }
    };

    let cov = &fit.xtx_inv * meat * &fit.xtx_inv * scale;

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z_crit = normal.inverse_cdf(0.5 + confidence / 2.0);

    let mut se = Vec::with_capacity(p);
    let mut z = Vec::with_capacity(p);
    let mut pvals = Vec::with_capacity(p);
    let mut ci_lo = Vec::with_capacity(p);
    let mut ci_hi = Vec::with_capacity(p);
    for j in 0..p {
        let sj = cov[(j, j)].max(0.0).sqrt();
        let beta = fit.beta[j];
        let zj = if sj > 0.0 { beta / sj } else { f64::INFINITY * beta.signum() };
        let pj = if sj > 0.0 {
            2.0 * (1.0 - normal.cdf(zj.abs()))
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        };
        se.push(sj);
        z.push(zj);
        pvals.push(pj.clamp(0.0, 1.0));
        ci_lo.push(beta - z_crit * sj);
        ci_hi.push(beta + z_crit * sj);
    }

    Ok(RobustInference {
        se,
        z,
        p: pvals,
        ci_lo,
        ci_hi,
        n_clusters,
    })
}
