use serde::{Deserialize, Serialize};

use super::RegularizationError;

/// Standard deviations at or below this are treated as zero; the correlation
/// is then defined as 0 and the batch flagged degenerate.
pub const ZERO_VARIANCE_EPS: f64 = 1e-8;

/// Population (divide-by-n) moments of predictions and group flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrStats {
    pub mu_pred: f64,
    pub mu_s: f64,
    pub sigma_pred: f64,
    pub sigma_s: f64,
    pub cov: f64,
    pub corr: f64,
    pub n: usize,
    pub degenerate: bool,
}

/// One absolute-correlation penalty term, tied to a single group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub group: String,
    pub lambda: f64,
    pub batch_size: usize,
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<(), RegularizationError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(RegularizationError::InvalidSpec(format!(
                "penalty lambda for `{}` must be finite and >= 0, got {}",
                self.group, self.lambda
            )));
        }
        if self.batch_size < 2 {
            return Err(RegularizationError::InvalidSpec(format!(
                "penalty batch size for `{}` must be >= 2, got {}",
                self.group, self.batch_size
            )));
        }
        Ok(())
    }
}

fn check_lengths(preds: &[f64], s: &[bool]) -> Result<(), RegularizationError> {
    if preds.len() != s.len() {
        return Err(RegularizationError::LengthMismatch {
            left: preds.len(),
            right: s.len(),
        });
    }
    if preds.len() < 2 {
        return Err(RegularizationError::TooFewExamples(preds.len()));
    }
    Ok(())
}

#[inline]
fn flag(v: bool) -> f64 {
    if v {
        1.0
    } else {
        0.0
    }
}

/// Pearson correlation between predictions and a 0/1 membership vector.
pub fn pearson_corr(preds: &[f64], s: &[bool]) -> Result<CorrStats, RegularizationError> {
    check_lengths(preds, s)?;
    let n = preds.len();
    let nf = n as f64;
    let mu_pred = preds.iter().sum::<f64>() / nf;
    let mu_s = s.iter().map(|&v| flag(v)).sum::<f64>() / nf;
    let (mut var_p, mut var_s, mut cov) = (0.0, 0.0, 0.0);
    for (&p, &si) in preds.iter().zip(s) {
        let dp = p - mu_pred;
        let ds = flag(si) - mu_s;
        var_p += dp * dp;
        var_s += ds * ds;
        cov += dp * ds;
    }
    let sigma_pred = (var_p / nf).sqrt();
    let sigma_s = (var_s / nf).sqrt();
    let cov = cov / nf;
    let degenerate = !(sigma_pred > ZERO_VARIANCE_EPS && sigma_s > ZERO_VARIANCE_EPS);
    let corr = if degenerate { 0.0 } else { cov / (sigma_pred * sigma_s) };
    Ok(CorrStats {
        mu_pred,
        mu_s,
        sigma_pred,
        sigma_s,
        cov,
        corr,
        n,
        degenerate,
    })
}

/// Value of `lambda * |corr|` together with its gradient per prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrPenalty {
    pub value: f64,
    pub grad: Vec<f64>,
    pub stats: CorrStats,
}

/// `lambda * |corr(preds, s)|` and its analytic gradient with respect to each
/// prediction. The s-side moments are constants. `d|c|/dc` at 0 is 0, and a
/// degenerate batch contributes nothing.
pub fn corr_penalty_and_grad(preds: &[f64], s: &[bool], lambda: f64) -> Result<CorrPenalty, RegularizationError> {
    let stats = pearson_corr(preds, s)?;
    let n = preds.len();
    if stats.degenerate || lambda == 0.0 || stats.corr == 0.0 {
        return Ok(CorrPenalty {
            value: lambda * stats.corr.abs(),
            grad: vec![0.0; n],
            stats,
        });
    }
    // d corr / d p_i = (s_i - mu_s) / (n sp ss) - corr (p_i - mu_p) / (n sp^2)
    let nf = n as f64;
    let a = 1.0 / (nf * stats.sigma_pred * stats.sigma_s);
    let b = stats.corr / (nf * stats.sigma_pred * stats.sigma_pred);
    let scale = lambda * stats.corr.signum();
    let grad = preds
        .iter()
        .zip(s)
        .map(|(&p, &si)| scale * (a * (flag(si) - stats.mu_s) - b * (p - stats.mu_pred)))
        .collect();
    Ok(CorrPenalty {
        value: lambda * stats.corr.abs(),
        grad,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bools(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn perfect_correlation() {
        let st = pearson_corr(&[0.0, 1.0, 0.0, 1.0], &bools(&[0, 1, 0, 1])).unwrap();
        assert!((st.corr - 1.0).abs() < 1e-15);
        assert!(!st.degenerate);
    }

    #[test]
    fn constant_predictions_are_degenerate() {
        let st = pearson_corr(&[0.3; 4], &bools(&[0, 1, 0, 1])).unwrap();
        assert_eq!(st.corr, 0.0);
        assert!(st.degenerate);
        let st = pearson_corr(&[0.1, 0.2, 0.3], &bools(&[1, 1, 1])).unwrap();
        assert!(st.degenerate);
    }

    #[test]
    fn worked_example() {
        // mu_p = 0.3, deviations [-.2, .1, -.1, .2]; mu_s = .5, deviations +-.5
        // cov = (0.1 + 0.05 + 0.05 + 0.1) / 4 = 0.075
        // sigma_p = sqrt(0.1 / 4), sigma_s = 0.5
        // corr = 0.075 / (0.5 * sqrt(0.025)) = 3 / sqrt(10) = 0.948683...
        let st = pearson_corr(&[0.1, 0.4, 0.2, 0.5], &bools(&[0, 1, 0, 1])).unwrap();
        assert!((st.corr - 3.0 / 10f64.sqrt()).abs() < 1e-12);
        assert!((st.corr - 0.94868).abs() < 1e-5);
    }

    #[test]
    fn input_errors() {
        assert_eq!(
            pearson_corr(&[0.1], &[true]).unwrap_err(),
            RegularizationError::TooFewExamples(1)
        );
        assert_eq!(
            pearson_corr(&[0.1, 0.2], &[true]).unwrap_err(),
            RegularizationError::LengthMismatch { left: 2, right: 1 }
        );
    }

    #[test]
    fn zero_penalty_cases() {
        let s = bools(&[0, 1, 0, 1]);
        let p = corr_penalty_and_grad(&[0.4; 4], &s, 3.0).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.grad.iter().all(|&g| g == 0.0));

        let p = corr_penalty_and_grad(&[0.1, 0.4, 0.2, 0.5], &s, 0.0).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = PenaltySpec {
            group: "g".into(),
            lambda: 0.5,
            batch_size: 2,
        };
        assert!(spec.validate().is_ok());
        spec.batch_size = 1;
        assert!(spec.validate().is_err());
        spec.batch_size = 8;
        spec.lambda = -1.0;
        assert!(spec.validate().is_err());
        spec.lambda = f64::INFINITY;
        assert!(spec.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
            (2usize..40).prop_flat_map(|n| {
                (
                    prop::collection::vec(-5.0f64..5.0, n),
                    prop::collection::vec(any::<bool>(), n),
                )
            })
        }

        proptest! {
            #[test]
            fn flipping_s_flips_sign((p, s) in batch()) {
                let a = pearson_corr(&p, &s).unwrap();
                let flipped: Vec<bool> = s.iter().map(|v| !v).collect();
                let b = pearson_corr(&p, &flipped).unwrap();
                prop_assert!((a.corr + b.corr).abs() < 1e-12);
                prop_assert!(a.corr.abs() <= 1.0 + 1e-9);
            }

            #[test]
            fn affine_invariance((p, s) in batch(), scale in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0], shift in -3.0f64..3.0) {
                let a = pearson_corr(&p, &s).unwrap();
                let q: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
                let b = pearson_corr(&q, &s).unwrap();
                prop_assume!(!a.degenerate && !b.degenerate);
                prop_assert!((b.corr - scale.signum() * a.corr).abs() < 1e-9);
            }

            #[test]
            fn gradient_sums_to_zero_and_is_shift_invariant((p, s) in batch(), shift in -3.0f64..3.0, lambda in 0.0f64..5.0) {
                let g = corr_penalty_and_grad(&p, &s, lambda).unwrap();
                let total: f64 = g.grad.iter().sum();
                prop_assert!(total.abs() < 1e-9, "sum = {}", total);
                let q: Vec<f64> = p.iter().map(|v| v + shift).collect();
                let h = corr_penalty_and_grad(&q, &s, lambda).unwrap();
                prop_assume!(g.stats.degenerate == h.stats.degenerate);
                for (a, b) in g.grad.iter().zip(&h.grad) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }
}
