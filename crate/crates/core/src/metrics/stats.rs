//! Two-sided significance tests over per-sample scores.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::{Label, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignificanceKind {
    PairedT,
    MannWhitneyU,
}

#[derive(Debug, Clone, Copy)]
pub struct Significance {
    pub p_value: f64,
    pub statistic: f64,
    /// Set when the inputs admit no meaningful test (e.g. identical paired
    /// samples); the p-value is then a convention, not a computation.
    pub degenerate: bool,
}

/// Compares two prediction vectors against gold labels.
///
/// Predictions are reduced to per-sample correctness indicators (1 when the
/// prediction matches gold) before the test runs.
pub fn significance_test(
    preds_a: &[Label],
    preds_b: &[Label],
    gold: &[Label],
    kind: SignificanceKind,
) -> Result<Significance, MetricsError> {
    if preds_a.len() != gold.len() || preds_b.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            left: preds_a.len().max(preds_b.len()),
            right: gold.len(),
        });
    }
    let a = correctness_indicators(preds_a, gold);
    let b = correctness_indicators(preds_b, gold);
    match kind {
        SignificanceKind::PairedT => paired_t(&a, &b),
        SignificanceKind::MannWhitneyU => mann_whitney_u(&a, &b),
    }
}

pub fn correctness_indicators(preds: &[Label], gold: &[Label]) -> Vec<f64> {
    preds
        .iter()
        .zip(gold)
        .map(|(p, g)| if p == g { 1.0 } else { 0.0 })
        .collect()
}

/// Two-sided paired t-test on aligned samples.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<Significance, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricsError::NotEnoughSamples { got: n, need: 2 });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);

    if var == 0.0 {
        // All differences identical: zero shift means no evidence at all,
        // a constant nonzero shift means a perfectly consistent one.
        return Ok(if mean == 0.0 {
            Significance {
                p_value: 1.0,
                statistic: 0.0,
                degenerate: true,
            }
        } else {
            Significance {
                p_value: 0.0,
                statistic: f64::INFINITY * mean.signum(),
                degenerate: true,
            }
        });
    }

    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(Significance {
        p_value: p,
        statistic: t,
        degenerate: false,
    })
}

/// Two-sided Mann-Whitney U test with tie correction and continuity
/// correction under the normal approximation.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<Significance, MetricsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return Err(MetricsError::NotEnoughSamples {
            got: n1.min(n2),
            need: 2,
        });
    }
    let n = (n1 + n2) as f64;

    let mut combined: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0))
        .chain(b.iter().map(|&v| (v, 1)))
        .collect();
    combined.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("no NaN scores"));

    // Average ranks over tie groups, accumulating the tie correction term.
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < combined.len() {
        let mut j = i;
        while j < combined.len() && combined[j].0 == combined[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let ties = (j - i) as f64;
        if ties > 1.0 {
            tie_term += ties.powi(3) - ties;
        }
        for item in &combined[i..j] {
            if item.1 == 0 {
                rank_sum_a += avg_rank;
            }
        }
        i = j;
    }

    let u1 = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let mean_u = (n1 * n2) as f64 / 2.0;
    let var_u = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));

    if var_u <= 0.0 {
        return Ok(Significance {
            p_value: 1.0,
            statistic: u1,
            degenerate: true,
        });
    }

    let continuity = 0.5 * (u1 - mean_u).signum();
    let z = (u1 - mean_u - continuity) / var_u.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
    Ok(Significance {
        p_value: p,
        statistic: u1,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Label;

    #[test]
    fn identical_predictions_flag_degenerate_p_one() {
        let preds = vec![Label::Toxic, Label::Nontoxic, Label::Toxic];
        let gold = vec![Label::Toxic, Label::Toxic, Label::Toxic];
        let sig =
            significance_test(&preds, &preds, &gold, SignificanceKind::PairedT).unwrap();
        assert!(sig.degenerate);
        assert_eq!(sig.p_value, 1.0);
    }

    #[test]
    fn constant_shift_with_noise_is_significant() {
        // b ~ small noise, a = b + 1.0: the shift dominates.
        let mut b = Vec::new();
        let mut a = Vec::new();
        for i in 0..100 {
            let noise = ((i * 37 + 11) % 17) as f64 / 1000.0;
            b.push(noise);
            a.push(noise + 1.0 + ((i * 13 + 5) % 7) as f64 / 1000.0);
        }
        let sig = paired_t(&a, &b).unwrap();
        assert!(sig.p_value < 0.01, "p = {}", sig.p_value);
        assert!(!sig.degenerate);
    }

    #[test]
    fn paired_t_requires_two_samples() {
        assert!(matches!(
            paired_t(&[1.0], &[0.0]),
            Err(MetricsError::NotEnoughSamples { .. })
        ));
    }

    #[test]
    fn mann_whitney_separated_samples() {
        let a = [0.9, 0.8, 0.95, 0.85, 0.9, 0.88];
        let b = [0.1, 0.2, 0.15, 0.05, 0.12, 0.18];
        let sig = mann_whitney_u(&a, &b).unwrap();
        assert!(sig.p_value < 0.01, "p = {}", sig.p_value);
    }

    #[test]
    fn mann_whitney_identical_samples_degenerate() {
        let a = [0.5, 0.5, 0.5];
        let sig = mann_whitney_u(&a, &a).unwrap();
        assert!(sig.degenerate);
        assert_eq!(sig.p_value, 1.0);
    }
}
