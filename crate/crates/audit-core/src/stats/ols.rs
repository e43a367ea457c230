//! Ordinary least squares on streamed cross-products.
//!
//! The design never materializes as an n x p matrix: rows are 0/1 dummies, so
//! X'X and X'y accumulate from the active-column lists in one pass and the
//! normal equations solve by QR on the p x p Gram matrix. Residuals and
//! fitted values come from a second cheap pass.

use nalgebra::{DMatrix, DVector};

use crate::error::{AuditError, Result};
use crate::stats::design::Design;

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub coef_names: Vec<(String, String)>,
    pub beta: DVector<f64>,
    pub xtx: DMatrix<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub rss: f64,
    pub tss: f64,
    pub n: usize,
    pub p: usize,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl FittedModel {
    pub fn r2(&self) -> f64 {
        if self.tss == 0.0 {
            0.0
        } else {
            1.0 - self.rss / self.tss
        }
    }

    pub fn adj_r2(&self) -> f64 {
        let n = self.n as f64;
        let p = self.p as f64;
        if self.tss == 0.0 || self.n <= self.p {
            return f64::NAN;
        }
        1.0 - (1.0 - self.r2()) * (n - 1.0) / (n - p)
    }

    pub fn df_residual(&self) -> usize {
        self.n.saturating_sub(self.p)
    }
}

/// Accumulates the Gram matrix and cross-product over active-column rows.
fn accumulate(design: &Design, cols: Option<&[usize]>) -> (DMatrix<f64>, DVector<f64>) {
    // Maps full-design column index -> position in the (possibly reduced)
    // column set; identity when cols is None.
    let n_full = design.n_cols();
    let (p, remap): (usize, Vec<Option<usize>>) = match cols {
        None => (n_full, (0..n_full).map(Some).collect()),
        Some(keep) => {
            let mut remap = vec![None; n_full];
            for (new_idx, &old_idx) in keep.iter().enumerate() {
                remap[old_idx] = Some(new_idx);
            }
            (keep.len(), remap)
        }
    };

    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut active = Vec::new();
    for row in 0..design.n_rows() {
        active.clear();
        for col in design.active_columns(row) {
            if let Some(mapped) = remap[col] {
                active.push(mapped);
            }
        }
        let y = design.y[row];
        for &i in &active {
            xty[i] += y;
            for &j in &active {
                xtx[(i, j)] += 1.0;
            }
        }
    }
    (xtx, xty)
}

/// Finds (nearly) aliased columns by pivoted Gaussian elimination on the
/// Gram matrix; reported when the solve detects rank deficiency.
fn aliased_columns(xtx: &DMatrix<f64>, names: &[(String, String)]) -> Vec<String> {
    let p = xtx.nrows();
    let mut m = xtx.clone();
    let scale = xtx.diagonal().amax().max(1.0);
    let tol = scale * 1e-9;
    let mut aliased = Vec::new();
    for col in 0..p {
        // Partial pivot within the column, below the current elimination row.
        let mut pivot_row = col;
        let mut pivot_val = 0.0;
        for row in col..p {
            let v = m[(row, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tol {
            let (factor, level) = &names[col];
            if level.is_empty() {
                aliased.push(factor.clone());
            } else {
                aliased.push(format!("{factor}={level}"));
            }
            continue;
        }
        m.swap_rows(col, pivot_row);
        for row in col + 1..p {
            let ratio = m[(row, col)] / m[(col, col)];
            if ratio != 0.0 {
                for k in col..p {
                    m[(row, k)] -= ratio * m[(col, k)];
                }
            }
        }
    }
    aliased
}

fn solve_spd(xtx: &DMatrix<f64>, xty: &DVector<f64>) -> Option<DVector<f64>> {
    // QR of the Gram matrix; reject solutions that fail to reproduce the
    // right-hand side (rank-deficient systems can still "solve").
    let qr = xtx.clone().qr();
    let beta = qr.solve(xty)?;
    let residual = xtx * &beta - xty;
    let scale = xty.amax().max(1.0);
    if residual.amax() > 1e-6 * scale {
        return None;
    }
    Some(beta)
}

/// Fits the design by OLS. Errors on rank deficiency, naming the aliased
/// columns, and on degenerate responses (guarded at design construction).
pub fn fit_ols(design: &Design) -> Result<FittedModel> {
    let n = design.n_rows();
    let p = design.n_cols();
    if n < p {
        return Err(AuditError::Stats(format!(
            "{}: {n} rows cannot identify {p} columns",
            design.response
        )));
    }

    let (xtx, xty) = accumulate(design, None);
    let names = design.column_names();

    let beta = match solve_spd(&xtx, &xty) {
        Some(beta) => beta,
        None => {
            let aliased = aliased_columns(&xtx, &names);
            return Err(AuditError::Stats(format!(
                "{}: design matrix is rank-deficient; aliased columns: {}",
                design.response,
                if aliased.is_empty() {
                    "(undetermined)".to_string()
                } else {
                    aliased.join(", ")
                }
            )));
        }
    };

    let xtx_inv = xtx.clone().qr().try_inverse().ok_or_else(|| {
        AuditError::Stats(format!("{}: Gram matrix is singular", design.response))
    })?;

    let mean_y = design.y.iter().sum::<f64>() / n as f64;
    let mut rss = 0.0;
    let mut tss = 0.0;
    let mut fitted = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for row in 0..n {
        let mut yhat = 0.0;
        for col in design.active_columns(row) {
            yhat += beta[col];
        }
        let e = design.y[row] - yhat;
        rss += e * e;
        tss += (design.y[row] - mean_y) * (design.y[row] - mean_y);
        fitted.push(yhat);
        residuals.push(e);
    }

    Ok(FittedModel {
        coef_names: names,
        beta,
        xtx,
        xtx_inv,
        rss,
        tss,
        n,
        p,
        fitted,
        residuals,
    })
}

/// Residual sum of squares of the model restricted to `cols` (always
/// including the intercept). Used by Type-II sums of squares.
pub fn reduced_rss(design: &Design, cols: &[usize]) -> Result<f64> {
    let (xtx, xty) = accumulate(design, Some(cols));
    let beta = solve_spd(&xtx, &xty).ok_or_else(|| {
        AuditError::Stats(format!(
            "{}: reduced model is rank-deficient",
            design.response
        ))
    })?;
    let remap: std::collections::BTreeMap<usize, usize> =
        cols.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let mut rss = 0.0;
    for row in 0..design.n_rows() {
        let mut yhat = 0.0;
        for col in design.active_columns(row) {
            if let Some(&mapped) = remap.get(&col) {
                yhat += beta[mapped];
            }
        }
        let e = design.y[row] - yhat;
        rss += e * e;
    }
    Ok(rss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::design::DesignBuilder;

    fn two_factor_design() -> Design {
        // y = 2 + 3*1[loc=Japan], noiseless.
        let locations = ["Germany", "Japan", "Germany", "Japan", "Germany", "Japan"];
        let y: Vec<f64> = locations
            .iter()
            .map(|l| if *l == "Japan" { 5.0 } else { 2.0 })
            .collect();
        DesignBuilder {
            response: "m".into(),
            factor_values: vec![(
                "location".into(),
                locations.iter().map(|s| s.to_string()).collect(),
            )],
            y,
            clusters: (0..6).map(|i| format!("c{i}")).collect(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let design = two_factor_design();
        let fit = fit_ols(&design).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-12);
        assert!((fit.beta[1] - 3.0).abs() < 1e-12);
        assert!(fit.rss.abs() < 1e-20);
        assert!((fit.r2() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residuals_are_orthogonal_to_design_columns() {
        // Noisy response; check X'e ~ 0 within 1e-8 relative.
        let mut design = two_factor_design();
        let noise = [0.3, -0.1, 0.2, -0.4, 0.05, -0.05];
        for (y, n) in design.y.iter_mut().zip(noise) {
            *y += n;
        }
        let fit = fit_ols(&design).unwrap();
        let mut xte = vec![0.0; design.n_cols()];
        for row in 0..design.n_rows() {
            for col in design.active_columns(row) {
                xte[col] += fit.residuals[row];
            }
        }
        let scale = design.y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for v in xte {
            assert!(v.abs() <= 1e-8 * scale.max(1.0), "X'e residual {v}");
        }
    }

    #[test]
    fn duplicated_factor_reports_aliased_columns() {
        // Two factors with identical level patterns are perfectly aliased.
        let values: Vec<String> = ["A", "B", "A", "B"].iter().map(|s| s.to_string()).collect();
        let design = DesignBuilder {
            response: "m".into(),
            factor_values: vec![
                ("role".into(), values.clone()),
                ("seniority".into(), values),
            ],
            y: vec![0.0, 1.0, 0.1, 0.9],
            clusters: (0..4).map(|i| format!("c{i}")).collect(),
        }
        .build()
        .unwrap();
        let err = fit_ols(&design).unwrap_err().to_string();
        assert!(err.contains("rank-deficient"), "{err}");
        assert!(err.contains("seniority"), "{err}");
    }
}
