//! Dynamic decision-threshold search maximizing F1.

use super::{clf_metrics, Label, MetricsError};

/// Labels `scores` as toxic where `score > threshold`.
pub fn labels_at_threshold(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| {
            if s > threshold {
                Label::Toxic
            } else {
                Label::Nontoxic
            }
        })
        .collect()
}

fn f1_at(scores: &[f64], gold: &[Label], threshold: f64) -> f64 {
    let preds = labels_at_threshold(scores, threshold);
    clf_metrics(&preds, gold).map(|r| r.f1).unwrap_or(0.0)
}

/// Finds the threshold maximizing F1 over the candidate set of the interval
/// boundaries 0 and 1 plus all midpoints between consecutive distinct scores.
///
/// Any threshold in (0, 1) induces the same labeling as one of these
/// candidates, so the search is exhaustive over achievable labelings.
/// Ties resolve to the lowest threshold.
pub fn best_threshold(scores: &[f64], gold: &[Label]) -> Result<(f64, f64), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if scores.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            left: scores.len(),
            right: gold.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(MetricsError::ScoreOutOfRange(bad));
    }

    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("no NaN scores"));
    distinct.dedup();

    let mut candidates = vec![0.0, 1.0];
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let mut best = (candidates[0], f1_at(scores, gold, candidates[0]));
    for &t in &candidates[1..] {
        let f1 = f1_at(scores, gold, t);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}
