//! Frequentist baselines: a single mean-shift changepoint and the sample
//! autocorrelation function.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::series::CountSeries;

pub const DEFAULT_MIN_SEGMENT: usize = 2;

/// Least-squares fit of `E X_i = mu` for `i <= tau` and `mu + shift` after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePointResult {
    /// Last index (1-based) of the first segment.
    pub tau_hat: usize,
    pub base_mean: f64,
    pub shift: f64,
    /// Drop in residual sum of squares relative to a single mean.
    pub sse_reduction: f64,
}

/// Scans `tau` in `[min_seg, T - min_seg]` for the split maximizing the
/// between-segment sum of squares `n1 n2 / T (m2 - m1)^2`, which is the
/// same as minimizing the within-segment SSE. Ties go to the smallest `tau`.
pub fn detect_changepoint(series: &CountSeries, min_seg: usize) -> Result<ChangePointResult> {
    detect_changepoint_with(series.counts(), min_seg, Execution::default())
}

pub fn detect_changepoint_with(counts: &[u64], min_seg: usize, exec: Execution) -> Result<ChangePointResult> {
    let t_len = counts.len();
    if min_seg == 0 {
        return Err(Error::InvalidArgument("min_seg must be positive".into()));
    }
    if t_len < 2 * min_seg {
        return Err(Error::SeriesTooShort {
            len: t_len,
            needed: 2 * min_seg,
        });
    }
    let mut prefix = Vec::with_capacity(t_len + 1);
    prefix.push(0.0f64);
    for &c in counts {
        prefix.push(prefix.last().unwrap() + c as f64);
    }
    let total = prefix[t_len];

    let split = |tau: usize| -> (f64, f64, f64) {
        let n1 = tau as f64;
        let n2 = (t_len - tau) as f64;
        let m1 = prefix[tau] / n1;
        let m2 = (total - prefix[tau]) / n2;
        let d = m2 - m1;
        (n1 * n2 / t_len as f64 * d * d, m1, d)
    };

    let candidates: Vec<usize> = (min_seg..=t_len - min_seg).collect();
    let gains = exec.map(&candidates, |&tau| split(tau).0);
    let (best, _) = gains
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let tau_hat = candidates[best];
    let (gain, base_mean, shift) = split(tau_hat);
    Ok(ChangePointResult {
        tau_hat,
        base_mean,
        shift,
        sse_reduction: gain,
    })
}

/// Sample autocorrelations `rho(0..=max_lag)` of a count series.
pub fn sample_acf(series: &CountSeries, max_lag: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = series.counts().iter().map(|&c| c as f64).collect();
    sample_acf_values(&values, max_lag)
}

/// `rho(h) = sum_t (x_t - m)(x_{t+h} - m) / sum_t (x_t - m)^2`.
pub fn sample_acf_values(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if max_lag == 0 || max_lag >= n {
        return Err(Error::InvalidArgument(format!(
            "max_lag must be in 1..{n}, got {max_lag}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let lagged = |h: usize| -> f64 { centered[..n - h].iter().zip(&centered[h..]).map(|(a, b)| a * b).sum() };
    let denom = lagged(0);
    if denom == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((0..=max_lag).map(|h| lagged(h) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn series(counts: Vec<u64>) -> CountSeries {
        CountSeries::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), counts, "s").unwrap()
    }

    /// Direct SSE minimization over all admissible splits.
    fn brute_force_tau(counts: &[u64], min_seg: usize) -> usize {
        let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let sse = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
        };
        let mut best = (min_seg, f64::INFINITY);
        for tau in min_seg..=x.len() - min_seg {
            let v = sse(&x[..tau]) + sse(&x[tau..]);
            if v < best.1 - 1e-9 {
                best = (tau, v);
            }
        }
        best.0
    }

    #[test]
    fn noiseless_step() {
        let r = detect_changepoint(&series(vec![5, 5, 5, 5, 5, 15, 15, 15, 15, 15]), 2).unwrap();
        assert_eq!(r.tau_hat, 5);
        assert_eq!(r.base_mean, 5.0);
        assert_eq!(r.shift, 10.0);
        assert_eq!(r.sse_reduction, 250.0);
    }

    #[test]
    fn constant_series_has_no_shift() {
        let r = detect_changepoint(&series(vec![7; 30]), 3).unwrap();
        assert_eq!(r.shift, 0.0);
        assert_eq!(r.sse_reduction, 0.0);
        assert_eq!(r.tau_hat, 3);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(
            detect_changepoint(&series(vec![1, 2, 3]), 2),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(detect_changepoint(&series(vec![1, 2, 3]), 0).is_err());
    }

    #[test]
    fn poisson_steps_match_brute_force() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Poisson};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let counts: Vec<u64> = (0..80)
                .map(|t| Poisson::new(if t < 30 { 8.0 } else { 14.0 }).unwrap().sample(&mut rng) as u64)
                .collect();
            let r = detect_changepoint(&series(counts.clone()), 2).unwrap();
            assert_eq!(r.tau_hat, brute_force_tau(&counts, 2));
        }
    }

    #[test]
    fn acf_hand_fixture() {
        let rho = sample_acf(&series(vec![1, 2, 3, 4, 5, 6]), 2).unwrap();
        assert_eq!(rho[0], 1.0);
        // deviations -2.5..2.5: lag-1 sum 8.75, total 17.5
        assert!((rho[1] - 0.5).abs() < 1e-12);
        // lag-2 sum: 1.25 - 0.75 - 0.75 + 1.25 = 1
        assert!((rho[2] - 1.0 / 17.5).abs() < 1e-12);
    }

    #[test]
    fn acf_errors() {
        assert!(matches!(sample_acf(&series(vec![4; 10]), 3), Err(Error::ZeroVariance)));
        assert!(sample_acf(&series(vec![1, 2, 3]), 3).is_err());
        assert!(sample_acf(&series(vec![1, 2, 3]), 0).is_err());
    }

    proptest! {
        #[test]
        fn exact_on_noiseless_steps(a in 0u64..100, b in 0u64..100, n1 in 2usize..40, n2 in 2usize..40) {
            prop_assume!(a != b);
            let mut counts = vec![a; n1];
            counts.extend(vec![b; n2]);
            let r = detect_changepoint(&series(counts), 2).unwrap();
            prop_assert_eq!(r.tau_hat, n1);
            prop_assert_eq!(r.base_mean, a as f64);
            prop_assert_eq!(r.shift, b as f64 - a as f64);
        }

        #[test]
        fn tau_invariant_under_offset_and_scale(
            counts in proptest::collection::vec(0u64..50, 6..60),
            offset in 0u64..100,
            scale in 1u64..10,
        ) {
            let base = detect_changepoint(&series(counts.clone()), 2).unwrap();
            let shifted = detect_changepoint(&series(counts.iter().map(|c| c + offset).collect()), 2).unwrap();
            let scaled = detect_changepoint(&series(counts.iter().map(|c| c * scale).collect()), 2).unwrap();
            prop_assert_eq!(base.tau_hat, brute_force_tau(&counts, 2));
            prop_assert_eq!(base.tau_hat, shifted.tau_hat);
            prop_assert_eq!(base.tau_hat, scaled.tau_hat);
        }

        #[test]
        fn acf_affine_invariant(
            values in proptest::collection::vec(0.0f64..50.0, 10..80),
            slope in 0.1f64..20.0,
            intercept in -100.0f64..100.0,
        ) {
            let lags = 5;
            let Ok(base) = sample_acf_values(&values, lags) else { return Ok(()); };
            let moved: Vec<f64> = values.iter().map(|v| slope * v + intercept).collect();
            let other = sample_acf_values(&moved, lags).unwrap();
            for (a, b) in base.iter().zip(&other) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!(a.abs() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn modes_agree(counts in proptest::collection::vec(0u64..50, 4..100)) {
            let a = detect_changepoint_with(&counts, 2, Execution::Sequential).unwrap();
            let b = detect_changepoint_with(&counts, 2, Execution::Parallel).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
