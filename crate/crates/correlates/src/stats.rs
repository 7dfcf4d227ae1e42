//! Small numeric helpers shared across modules.

use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 + exp(eta)) without overflow.
pub fn log1pexp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Weighted quantile under the left-continuous inverse-CDF rule: the smallest
/// observed value whose cumulative weight share reaches `p`. On unweighted
/// data this reproduces the textbook empirical quantile.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Estimation("weighted quantile of empty sample".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::Data("values/weights length mismatch".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile probability {p} outside [0,1]")));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("non-finite marker"));
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Data("weights sum to zero".into()));
    }
    let mut cum = 0.0;
    for &i in &idx {
        cum += weights[i];
        if cum >= p * total - 1e-12 * total {
            return Ok(values[i]);
        }
    }
    Ok(values[idx[values.len() - 1]])
}

/// Linear-interpolation quantile of a sorted sample (the common `(n-1)p + 1`
/// order-statistic rule). Used for bootstrap percentile intervals.
pub fn quantile_type7(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Estimation("quantile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile probability {p} outside [0,1]")));
    }
    let n = sorted.len();
    if n == 1 {
        return Ok(sorted[0]);
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn weighted_mean(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Data("weighted mean needs matching non-empty inputs".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Data("weights sum to zero".into()));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total)
}

/// Total variation of a sequence: sum of absolute successive differences.
pub fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn expit_logit_roundtrip() {
        for p in [1e-6, 0.01, 0.5, 0.99, 1.0 - 1e-6] {
            assert_relative_eq!(expit(logit(p)), p, max_relative = 1e-12);
        }
        assert!(expit(800.0) == 1.0);
        assert!(expit(-800.0) == 0.0);
    }

    #[test]
    fn unweighted_quantile_matches_textbook_tertiles() {
        // {1..9}: 1/3 and 2/3 empirical quantiles land on 3 and 6.
        let xs: Vec<f64> = (1..=9).map(f64::from).collect();
        let ws = vec![1.0; 9];
        assert_eq!(weighted_quantile(&xs, &ws, 1.0 / 3.0).unwrap(), 3.0);
        assert_eq!(weighted_quantile(&xs, &ws, 2.0 / 3.0).unwrap(), 6.0);
    }

    #[test]
    fn type7_frozen_examples() {
        // {1..100} at 0.025 / 0.975 under the (n-1)p+1 rule.
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_relative_eq!(quantile_type7(&xs, 0.025).unwrap(), 3.475, epsilon = 1e-12);
        assert_relative_eq!(quantile_type7(&xs, 0.975).unwrap(), 97.525, epsilon = 1e-12);
    }

    // Brute-force oracle: scan all observed values in order, return the first
    // whose cumulative weight share reaches p.
    fn brute_weighted_quantile(xs: &[f64], ws: &[f64], p: f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ws.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let total: f64 = ws.iter().sum();
        let mut cum = 0.0;
        for (x, w) in &pairs {
            cum += w;
            if cum / total >= p - 1e-12 {
                return *x;
            }
        }
        pairs.last().unwrap().0
    }

    proptest! {
        #[test]
        fn weighted_quantile_matches_bruteforce(
            xs in proptest::collection::vec(-50.0f64..50.0, 1..40),
            seed in 0u64..1000,
            p in 0.0f64..1.0,
        ) {
            // Deterministic pseudo-weights from the seed.
            let ws: Vec<f64> = (0..xs.len())
                .map(|i| 0.25 + ((seed.wrapping_mul(31).wrapping_add(i as u64 * 17)) % 8) as f64)
                .collect();
            let got = weighted_quantile(&xs, &ws, p).unwrap();
            let want = brute_weighted_quantile(&xs, &ws, p);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn type7_is_monotone_in_p(
            mut xs in proptest::collection::vec(-50.0f64..50.0, 2..40),
            p1 in 0.0f64..1.0,
            p2 in 0.0f64..1.0,
        ) {
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            prop_assert!(quantile_type7(&xs, lo).unwrap() <= quantile_type7(&xs, hi).unwrap() + 1e-12);
        }
    }
}
