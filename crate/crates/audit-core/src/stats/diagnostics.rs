//! Residual diagnostics: Shapiro-Wilk W (Royston's approximation, valid for
//! 3 <= n <= 5000), the Breusch-Pagan LM statistic, and the fraction of
//! fitted values outside the unit interval.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{AuditError, Result};
use crate::stats::design::Design;
use crate::stats::ols::FittedModel;

pub const SHAPIRO_MAX_N: usize = 5000;

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub shapiro_w: Option<f64>,
    pub bp_stat: f64,
    pub frac_outside_unit: f64,
    pub shapiro_n: usize,
}

/// Shapiro-Wilk W statistic. The caller is responsible for subsampling to at
/// most 5000 observations; beyond that the weight approximation is invalid.
pub fn shapiro_w(sample: &[f64]) -> Result<f64> {
    let n = sample.len();
    if n < 3 {
        return Err(AuditError::Stats(format!(
            "Shapiro-Wilk needs at least 3 observations, got {n}"
        )));
    }
    if n > SHAPIRO_MAX_N {
        return Err(AuditError::Stats(format!(
            "Shapiro-Wilk weights are valid to n = {SHAPIRO_MAX_N}, got {n}"
        )));
    }

    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    if x[n - 1] - x[0] <= 0.0 {
        return Err(AuditError::Stats(
            "Shapiro-Wilk undefined for a zero-range sample".into(),
        ));
    }

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let nf = n as f64;
    // Expected normal order statistics via Blom's approximation.
    let m: Vec<f64> = (1..=n)
        .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
        .collect();
    let m2: f64 = m.iter().map(|v| v * v).sum();

    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -std::f64::consts::FRAC_1_SQRT_2;
        a[2] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let rsn = 1.0 / nf.sqrt();
        let c_n = m[n - 1] / m2.sqrt();
        let a_n = -2.706056 * rsn.powi(5)
            + 4.434685 * rsn.powi(4)
            - 2.071190 * rsn.powi(3)
            - 0.147981 * rsn.powi(2)
            + 0.221157 * rsn
            + c_n;
        if n > 5 {
            let c_n1 = m[n - 2] / m2.sqrt();
            let a_n1 = -3.582633 * rsn.powi(5)
                + 5.682633 * rsn.powi(4)
                - 1.752461 * rsn.powi(3)
                - 0.293762 * rsn.powi(2)
                + 0.042981 * rsn
                + c_n1;
            let phi = (m2 - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2])
                / (1.0 - 2.0 * a_n * a_n - 2.0 * a_n1 * a_n1);
            let phi_sqrt = phi.sqrt();
            a[n - 1] = a_n;
            a[n - 2] = a_n1;
            a[0] = -a_n;
            a[1] = -a_n1;
            for i in 2..n - 2 {
                a[i] = m[i] / phi_sqrt;
            }
        } else {
            let phi = (m2 - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * a_n * a_n);
            let phi_sqrt = phi.sqrt();
            a[n - 1] = a_n;
            a[0] = -a_n;
            for i in 1..n - 1 {
                a[i] = m[i] / phi_sqrt;
            }
        }
    }

    let mean = x.iter().sum::<f64>() / nf;
    let numerator: f64 = a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum::<f64>();
    let denominator: f64 = x.iter().map(|xi| (xi - mean) * (xi - mean)).sum();
    Ok(((numerator * numerator) / denominator).clamp(0.0, 1.0))
}

/// Breusch-Pagan LM statistic: n times the R^2 of regressing squared
/// residuals on the model design.
pub fn breusch_pagan(design: &Design, fit: &FittedModel) -> Result<f64> {
    let e2: Vec<f64> = fit.residuals.iter().map(|e| e * e).collect();
    let mut aux = design.clone();
    aux.y = e2;
    let aux_fit = crate::stats::ols::fit_ols(&aux)?;
    Ok(fit.n as f64 * aux_fit.r2())
}

pub fn frac_outside_unit(fitted: &[f64]) -> f64 {
    if fitted.is_empty() {
        return 0.0;
    }
    let outside = fitted.iter().filter(|v| **v < 0.0 || **v > 1.0).count();
    outside as f64 / fitted.len() as f64
}

/// Full diagnostic battery. The Shapiro-Wilk statistic runs on a seeded
/// random subsample when the residual vector exceeds the algorithm's range.
pub fn diagnostics(design: &Design, fit: &FittedModel, seed: u64) -> Result<Diagnostics> {
    let shapiro_input: Vec<f64> = if fit.residuals.len() <= SHAPIRO_MAX_N {
        fit.residuals.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..fit.residuals.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(SHAPIRO_MAX_N);
        idx.sort_unstable();
        idx.into_iter().map(|i| fit.residuals[i]).collect()
    };
    let shapiro_n = shapiro_input.len();
    let shapiro = shapiro_w(&shapiro_input).ok();
    let bp = breusch_pagan(design, fit)?;
    Ok(Diagnostics {
        shapiro_w: shapiro,
        bp_stat: bp,
        frac_outside_unit: frac_outside_unit(&fit.fitted),
        shapiro_n,
    })
}
