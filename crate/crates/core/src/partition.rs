//! Splitting the common average rate among users.
//!
//! Given the common rate `R_c` and private rates `R_k`, the coefficients
//! `c_k >= 0, sum c_k = 1` that maximize `min_k (R_k + c_k R_c)` have the
//! water-filling form `c_k = max(0, (L - R_k) / R_c)`: the users with the
//! weakest private rates are topped up to a common level `L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    pub coeffs: Vec<f64>,
    /// The optimized minimum total rate.
    pub level: f64,
    /// How many users receive a share of the common rate.
    pub active_count: usize,
    /// `R_c = 0`: any split is optimal, `coeffs` is uniform.
    pub degenerate: bool,
}

fn validate(common_rate: f64, private_rates: &[f64]) -> Result<()> {
    if private_rates.is_empty() {
        return Err(Error::InvalidInput("no private rates".into()));
    }
    let ok = |r: f64| r.is_finite() && r >= 0.0;
    if !ok(common_rate) {
        return Err(Error::InvalidInput(format!(
            "common rate {common_rate} must be finite and non-negative"
        )));
    }
    if let Some(r) = private_rates.iter().find(|&&r| !ok(r)) {
        return Err(Error::InvalidInput(format!(
            "private rate {r} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Closed-form partition: drop the strongest users one by one until every
/// remaining user gets a non-negative share.
pub fn waterfill(common_rate: f64, private_rates: &[f64]) -> Result<PartitionResult> {
    validate(common_rate, private_rates)?;
    let k = private_rates.len();
    if common_rate == 0.0 {
        return Ok(PartitionResult {
            coeffs: vec![1.0 / k as f64; k],
            level: private_rates.iter().copied().fold(f64::INFINITY, f64::min),
            active_count: 0,
            degenerate: true,
        });
    }

    // Stable: equal rates keep ascending user order.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| private_rates[a].total_cmp(&private_rates[b]));

    let mut prefix = private_rates[order[0]];
    let prefix_sums: Vec<f64> = std::iter::once(prefix)
        .chain(order[1..].iter().map(|&i| {
            prefix += private_rates[i];
            prefix
        }))
        .collect();

    let mut active = k;
    let level = loop {
        let level = (common_rate + prefix_sums[active - 1]) / active as f64;
        // The last active user has the largest private rate of the set.
        if level >= private_rates[order[active - 1]] || active == 1 {
            break level;
        }
        active -= 1;
    };

    let mut coeffs = vec![0.0; k];
    for &i in &order[..active] {
        coeffs[i] = (level - private_rates[i]) / common_rate;
    }
    Ok(PartitionResult {
        coeffs,
        level,
        active_count: active,
        degenerate: false,
    })
}

/// Independent check of [`waterfill`]: bisection on the level of the
/// underlying linear program.
pub fn lp_oracle(common_rate: f64, private_rates: &[f64]) -> Result<PartitionResult> {
    validate(common_rate, private_rates)?;
    if common_rate == 0.0 {
        return Err(Error::InvalidInput(
            "bisection oracle needs a positive common rate".into(),
        ));
    }
    let min = private_rates.iter().copied().fold(f64::INFINITY, f64::min);
    let max = private_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let needed = |level: f64| -> f64 { private_rates.iter().map(|&r| (level - r).max(0.0)).sum::<f64>() / common_rate };
    let (mut lo, mut hi) = (min, min + common_rate + max);
    for _ in 0..400 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if needed(mid) <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let level = lo;
    let coeffs: Vec<f64> = private_rates
        .iter()
        .map(|&r| ((level - r) / common_rate).max(0.0))
        .collect();
    Ok(PartitionResult {
        active_count: coeffs.iter().filter(|&&c| c > 0.0).count(),
        coeffs,
        level,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn symmetric_split() {
        let r = waterfill(1.0, &[0.5, 0.5]).unwrap();
        assert_eq!(r.coeffs, vec![0.5, 0.5]);
        assert_eq!(r.level, 1.0);
        assert_eq!(r.active_count, 2);
    }

    #[test]
    fn weak_user_gets_more() {
        let r = waterfill(1.0, &[0.2, 0.4]).unwrap();
        assert!((r.level - 0.8).abs() < 1e-15);
        assert!(close(&r.coeffs, &[0.6, 0.4], 1e-15));
    }

    #[test]
    fn strong_user_is_discarded() {
        let r = waterfill(0.5, &[0.1, 1.0]).unwrap();
        assert_eq!(r.active_count, 1);
        assert!((r.level - 0.6).abs() < 1e-15);
        assert_eq!(r.coeffs, vec![1.0, 0.0]);
    }

    #[test]
    fn oracle_agrees_on_hand_cases() {
        for (rc, rs) in [(1.0, vec![0.5, 0.5]), (1.0, vec![0.2, 0.4]), (0.5, vec![0.1, 1.0])] {
            let a = waterfill(rc, &rs).unwrap();
            let b = lp_oracle(rc, &rs).unwrap();
            assert!((a.level - b.level).abs() <= 1e-9);
            assert!(close(&a.coeffs, &b.coeffs, 1e-9));
        }
    }

    #[test]
    fn single_user_takes_everything() {
        let r = lp_oracle(0.7, &[1.1]).unwrap();
        assert!((r.level - 1.8).abs() < 1e-11);
        assert!((r.coeffs[0] - 1.0).abs() < 1e-9);
        let w = waterfill(0.7, &[1.1]).unwrap();
        assert_eq!(w.coeffs, vec![1.0]);
    }

    #[test]
    fn zero_common_rate_is_degenerate() {
        let r = waterfill(0.0, &[0.3, 0.1, 0.2]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.level, 0.1);
        assert_eq!(r.coeffs, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn ties_break_by_user_index() {
        // Tied strong users are dropped in descending index order.
        let r = waterfill(0.1, &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.active_count, 1);
        assert_eq!(r.coeffs, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(waterfill(-1.0, &[0.1]).is_err());
        assert!(waterfill(1.0, &[f64::NAN]).is_err());
        assert!(waterfill(1.0, &[]).is_err());
        assert!(waterfill(f64::INFINITY, &[0.1]).is_err());
        assert!(lp_oracle(0.0, &[0.1]).is_err());
    }

    fn rates() -> impl Strategy<Value = (f64, Vec<f64>)> {
        (1e-3..5.0f64, prop::collection::vec(0.0..6.0f64, 1..7))
    }

    proptest! {
        #[test]
        fn complementary_slackness((rc, rs) in rates()) {
            let r = waterfill(rc, &rs).unwrap();
            let sum: f64 = r.coeffs.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for (c, rk) in r.coeffs.iter().zip(&rs) {
                prop_assert!(*c >= 0.0);
                if *c > 0.0 {
                    prop_assert!((rk + c * rc - r.level).abs() <= 1e-12 * (1.0 + r.level));
                } else {
                    prop_assert!(*rk >= r.level - 1e-12 * (1.0 + r.level));
                }
            }
            let min = rs.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert!(r.level > min);
        }

        #[test]
        fn matches_bisection((rc, rs) in rates()) {
            let a = waterfill(rc, &rs).unwrap();
            let b = lp_oracle(rc, &rs).unwrap();
            prop_assert!((a.level - b.level).abs() <= 1e-9);
            prop_assert!(close(&a.coeffs, &b.coeffs, 1e-7));
        }

        #[test]
        fn permutation_equivariant((rc, rs) in rates(), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..rs.len()).collect();
            // Deterministic shuffle from the seed.
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let permuted: Vec<f64> = perm.iter().map(|&i| rs[i]).collect();
            let a = waterfill(rc, &rs).unwrap();
            let b = waterfill(rc, &permuted).unwrap();
            prop_assert!((a.level - b.level).abs() <= 1e-12 * (1.0 + a.level));
            for (j, &i) in perm.iter().enumerate() {
                prop_assert!((b.coeffs[j] - a.coeffs[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn scale_covariant((rc, rs) in rates(), s in 0.01..100.0f64) {
            let a = waterfill(rc, &rs).unwrap();
            let scaled: Vec<f64> = rs.iter().map(|r| r * s).collect();
            let b = waterfill(rc * s, &scaled).unwrap();
            prop_assert!((b.level - s * a.level).abs() <= 1e-12 * s * (1.0 + a.level));
            prop_assert!(close(&a.coeffs, &b.coeffs, 1e-12));
        }
    }
}
