//! Evaluation mathematics for the three tasks: classification metrics,
//! per-sample span F1, the detoxification report, significance tests, and
//! dynamic-threshold search.

mod bleu;
mod embed;
mod stats;
mod threshold;

pub use bleu::corpus_bleu;
pub use embed::{cosine, mean_similarity, CharTrigramEmbedder, TextEmbedder, TokenHashEmbedder};
pub use stats::{
    correctness_indicators, mann_whitney_u, paired_t, significance_test, Significance,
    SignificanceKind,
};
pub use threshold::{best_threshold, labels_at_threshold};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::SpanSet;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("need at least {need} samples, got {got}")]
    NotEnoughSamples { got: usize, need: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
}

/// Binary toxicity label; toxic is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Toxic,
    Nontoxic,
}

impl Label {
    pub fn from_bool(toxic: bool) -> Self {
        if toxic {
            Label::Toxic
        } else {
            Label::Nontoxic
        }
    }

    pub fn is_toxic(self) -> bool {
        matches!(self, Label::Toxic)
    }
}

/// Binary classification report with toxic as the positive class.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClfReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

pub fn clf_metrics(preds: &[Label], gold: &[Label]) -> Result<ClfReport, MetricsError> {
    if preds.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            left: preds.len(),
            right: gold.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut tp, mut fp, mut tn, mut fal_n) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gold) {
        match (p.is_toxic(), g.is_toxic()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fal_n += 1,
        }
    }
    let total = preds.len() as f64;
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fal_n > 0 {
        tp as f64 / (tp + fal_n) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ClfReport {
        accuracy: (tp + tn) as f64 / total,
        precision,
        recall,
        f1,
        true_pos: tp,
        false_pos: fp,
        true_neg: tn,
        false_neg: fal_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-sample span metrics over character-offset sets.
///
/// Both sets empty counts as a perfect match; exactly one empty scores zero.
pub fn span_f1(gold: &SpanSet, pred: &SpanSet) -> SpanF1 {
    match (gold.is_empty(), pred.is_empty()) {
        (true, true) => {
            return SpanF1 {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            }
        }
        (true, false) | (false, true) => {
            return SpanF1 {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            }
        }
        (false, false) => {}
    }
    let inter = gold.intersection_count(pred) as f64;
    let precision = inter / pred.len() as f64;
    let recall = inter / gold.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SpanF1 {
        precision,
        recall,
        f1,
    }
}

/// Unweighted mean of per-sample span F1 scores.
pub fn corpus_span_f1(pairs: &[(SpanSet, SpanSet)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = pairs.iter().map(|(g, p)| span_f1(g, p).f1).sum();
    Ok(total / pairs.len() as f64)
}

/// Toxicity scoring adapter; implementors range from remote scoring services
/// to deterministic local stubs.
pub trait ToxicityScore {
    fn score_toxicity(&self, text: &str) -> Result<f64, String>;
}

/// Fluency adapter: token-level perplexity under a designated model.
pub trait FluencyModel {
    fn token_perplexity(&self, text: &str) -> Result<f64, String>;
}

/// Detoxification evaluation: toxicity aggregates under an external scorer,
/// BLEU against the originals, embedding similarity, and fluency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetoxReport {
    /// Mean toxicity of the generated texts; `None` when no scorer was
    /// available.
    pub t_avg: Option<f64>,
    /// Fraction of generated texts scoring strictly above 0.7.
    pub t_07: Option<f64>,
    /// Fraction of generated texts scoring strictly above 0.9.
    pub t_09: Option<f64>,
    pub bleu: f64,
    pub sim_w: f64,
    pub sim_f: f64,
    /// Mean token perplexity over rows where it is defined.
    pub token_ppl: Option<f64>,
    pub n: usize,
    /// Rows where scoring or perplexity failed (e.g. empty generations).
    pub flagged_rows: Vec<usize>,
    pub scorer_missing: bool,
}

pub fn detox_report<O, G>(
    originals: &[O],
    generated: &[G],
    scorer: Option<&dyn ToxicityScore>,
    sim_w_embedder: &dyn TextEmbedder,
    sim_f_embedder: &dyn TextEmbedder,
    fluency: &dyn FluencyModel,
) -> Result<DetoxReport, MetricsError>
where
    O: AsRef<str>,
    G: AsRef<str>,
{
    if originals.len() != generated.len() {
        return Err(MetricsError::LengthMismatch {
            left: originals.len(),
            right: generated.len(),
        });
    }
    if originals.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = generated.len();
    let mut flagged: Vec<usize> = Vec::new();

    let mut scores: Vec<f64> = Vec::new();
    if let Some(scorer) = scorer {
        for (i, text) in generated.iter().enumerate() {
            match scorer.score_toxicity(text.as_ref()) {
                Ok(s) => scores.push(s),
                Err(_) => flagged.push(i),
            }
        }
    }
    let (t_avg, t_07, t_09) = if scores.is_empty() {
        (None, None, None)
    } else {
        let m = scores.len() as f64;
        (
            Some(scores.iter().sum::<f64>() / m),
            Some(scores.iter().filter(|&&s| s > 0.7).count() as f64 / m),
            Some(scores.iter().filter(|&&s| s > 0.9).count() as f64 / m),
        )
    };

    let bleu = corpus_bleu(generated, originals)?;
    let sim_w = mean_similarity(sim_w_embedder, originals, generated);
    let sim_f = mean_similarity(sim_f_embedder, originals, generated);

    let mut ppls = Vec::new();
    for (i, text) in generated.iter().enumerate() {
        match fluency.token_perplexity(text.as_ref()) {
            Ok(ppl) => ppls.push(ppl),
            Err(_) => flagged.push(i),
        }
    }
    let token_ppl = if ppls.is_empty() {
        None
    } else {
        Some(ppls.iter().sum::<f64>() / ppls.len() as f64)
    };

    flagged.sort_unstable();
    flagged.dedup();
    Ok(DetoxReport {
        t_avg,
        t_07,
        t_09,
        bleu,
        sim_w,
        sim_f,
        token_ppl,
        n,
        flagged_rows: flagged,
        scorer_missing: scorer.is_none(),
    })
}

/// Envelope for persisted evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: u8,
    pub dataset: String,
    pub model: String,
    pub config_digest: String,
    pub metrics: serde_json::Value,
    pub n: usize,
    /// Unix seconds.
    pub timestamp: u64,
}

impl MetricsReport {
    pub fn new(
        task: u8,
        dataset: &str,
        model: &str,
        config_digest: &str,
        metrics: serde_json::Value,
        n: usize,
    ) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            task,
            dataset: dataset.to_string(),
            model: model.to_string(),
            config_digest: config_digest.to_string(),
            metrics,
            n,
            timestamp,
        }
    }

    /// Structural checks on a deserialized report.
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=3).contains(&self.task) {
            return Err(format!("task {} outside 1..=3", self.task));
        }
        if self.config_digest.is_empty() {
            return Err("empty config digest".into());
        }
        if !self.metrics.is_object() {
            return Err("metrics is not a JSON object".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    struct ConstScorer(f64);
    impl ToxicityScore for ConstScorer {
        fn score_toxicity(&self, _text: &str) -> Result<f64, String> {
            Ok(self.0)
        }
    }

    struct SeqScorer(std::cell::RefCell<Vec<f64>>);
    impl ToxicityScore for SeqScorer {
        fn score_toxicity(&self, _text: &str) -> Result<f64, String> {
            Ok(self.0.borrow_mut().remove(0))
        }
    }

    struct UnitPpl;
    impl FluencyModel for UnitPpl {
        fn token_perplexity(&self, text: &str) -> Result<f64, String> {
            if text.is_empty() {
                Err("empty text".into())
            } else {
                Ok(1.0)
            }
        }
    }

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from_bool(b == 1)).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gold = labels(&[1, 0, 1, 0]);
        let r = clf_metrics(&gold, &gold).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn all_negative_predictions_degenerate_to_zero() {
        let preds = labels(&[0, 0, 0, 0]);
        let gold = labels(&[1, 1, 0, 0]);
        let r = clf_metrics(&preds, &gold).unwrap();
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn hand_counted_confusion_matrix() {
        let gold = labels(&[1, 1, 0, 0]);
        let preds = labels(&[1, 0, 1, 0]);
        let r = clf_metrics(&preds, &gold).unwrap();
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.f1, 0.5);
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn span_f1_empty_rules() {
        let empty = SpanSet::new();
        let some = SpanSet::from_offsets([1, 2]);
        assert_eq!(span_f1(&empty, &empty).f1, 1.0);
        assert_eq!(span_f1(&empty, &some).f1, 0.0);
        assert_eq!(span_f1(&some, &empty).f1, 0.0);
    }

    #[test]
    fn span_f1_identity_and_partial() {
        let s = SpanSet::from_offsets(13..=21);
        let r = span_f1(&s, &s);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));

        // Gold covers 13 characters, prediction the 9-character subset.
        let gold = SpanSet::from_offsets((0..9).chain(20..24));
        let pred = SpanSet::from_offsets(0..9);
        let r = span_f1(&gold, &pred);
        assert_eq!(r.precision, 1.0);
        assert_relative_eq!(r.recall, 9.0 / 13.0, epsilon = 1e-12);
        assert_relative_eq!(r.f1, 18.0 / 22.0, epsilon = 1e-12);
    }

    #[test]
    fn corpus_span_f1_averages() {
        let a = SpanSet::from_offsets([1]);
        let pairs = vec![(a.clone(), a.clone()), (a.clone(), SpanSet::new())];
        assert_eq!(corpus_span_f1(&pairs).unwrap(), 0.5);
        let same = vec![(a.clone(), a.clone()); 3];
        assert_eq!(corpus_span_f1(&same).unwrap(), 1.0);
        assert!(matches!(
            corpus_span_f1(&[]),
            Err(MetricsError::EmptyInput)
        ));
    }

    /// Independent recomputation by looping over the universe directly.
    fn span_f1_reference(gold: &SpanSet, pred: &SpanSet, universe: usize) -> f64 {
        let inter = (0..universe)
            .filter(|&i| gold.contains(i) && pred.contains(i))
            .count() as f64;
        let (g, p) = (gold.len() as f64, pred.len() as f64);
        if g == 0.0 && p == 0.0 {
            return 1.0;
        }
        if g == 0.0 || p == 0.0 {
            return 0.0;
        }
        let (prec, rec) = (inter / p, inter / g);
        if prec + rec == 0.0 {
            0.0
        } else {
            2.0 * prec * rec / (prec + rec)
        }
    }

    proptest! {
        #[test]
        fn span_f1_matches_reference(gold_bits in 0u64..64, pred_bits in 0u64..64) {
            let gold = SpanSet::from_offsets((0..6).filter(|i| gold_bits & (1 << i) != 0));
            let pred = SpanSet::from_offsets((0..6).filter(|i| pred_bits & (1 << i) != 0));
            let got = span_f1(&gold, &pred).f1;
            prop_assert_eq!(got, span_f1_reference(&gold, &pred, 6));
        }

        #[test]
        fn span_f1_swap_symmetry(gold_bits in 0u64..4096, pred_bits in 0u64..4096) {
            let gold = SpanSet::from_offsets((0..12).filter(|i| gold_bits & (1 << i) != 0));
            let pred = SpanSet::from_offsets((0..12).filter(|i| pred_bits & (1 << i) != 0));
            let fwd = span_f1(&gold, &pred);
            let rev = span_f1(&pred, &gold);
            prop_assert_eq!(fwd.precision, rev.recall);
            prop_assert_eq!(fwd.recall, rev.precision);
            prop_assert_eq!(fwd.f1, rev.f1);
            prop_assert!((0.0..=1.0).contains(&fwd.f1));
        }
    }

    #[test]
    fn detox_identity_with_constant_scorer() {
        let texts: Vec<String> = vec!["what a bad excuse".into(), "keep it civil".into()];
        let scorer = ConstScorer(0.9);
        let r = detox_report(
            &texts,
            &texts,
            Some(&scorer),
            &TokenHashEmbedder::default(),
            &CharTrigramEmbedder::default(),
            &UnitPpl,
        )
        .unwrap();
        assert_eq!(r.t_avg, Some(0.9));
        assert_eq!(r.t_07, Some(1.0));
        assert_eq!(r.t_09, Some(0.0));
        assert_relative_eq!(r.bleu, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.sim_w, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.sim_f, 1.0, epsilon = 1e-12);
        assert!(r.flagged_rows.is_empty());
    }

    #[test]
    fn detox_threshold_fractions_hand_case() {
        let texts: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let scorer = SeqScorer(std::cell::RefCell::new(vec![0.75, 0.6, 0.71]));
        let r = detox_report(
            &texts,
            &texts,
            Some(&scorer),
            &TokenHashEmbedder::default(),
            &CharTrigramEmbedder::default(),
            &UnitPpl,
        )
        .unwrap();
        assert_relative_eq!(r.t_avg.unwrap(), 0.686_666_666_666, epsilon = 1e-9);
        assert_relative_eq!(r.t_07.unwrap(), 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.t_09, Some(0.0));
    }

    #[test]
    fn detox_missing_scorer_yields_null_toxicity() {
        let texts: Vec<String> = vec!["a".into()];
        let r = detox_report(
            &texts,
            &texts,
            None,
            &TokenHashEmbedder::default(),
            &CharTrigramEmbedder::default(),
            &UnitPpl,
        )
        .unwrap();
        assert!(r.scorer_missing);
        assert_eq!(r.t_avg, None);
        assert_eq!(r.t_07, None);
    }

    #[test]
    fn detox_empty_generation_flags_row() {
        let originals: Vec<String> = vec!["a b".into(), "c d".into()];
        let generated: Vec<String> = vec!["a b".into(), "".into()];
        let r = detox_report(
            &originals,
            &generated,
            Some(&ConstScorer(0.1)),
            &TokenHashEmbedder::default(),
            &CharTrigramEmbedder::default(),
            &UnitPpl,
        )
        .unwrap();
        assert_eq!(r.flagged_rows, vec![1]);
        assert_eq!(r.token_ppl, Some(1.0));
    }

    proptest! {
        #[test]
        fn detox_t09_never_exceeds_t07(
            raw_scores in proptest::collection::vec(0u32..=1000, 1..20)
        ) {
            let scores: Vec<f64> = raw_scores.iter().map(|&s| s as f64 / 1000.0).collect();
            let texts: Vec<String> = scores.iter().map(|s| format!("t {s}")).collect();
            let scorer = SeqScorer(std::cell::RefCell::new(scores));
            let r = detox_report(
                &texts,
                &texts,
                Some(&scorer),
                &TokenHashEmbedder::default(),
                &CharTrigramEmbedder::default(),
                &UnitPpl,
            ).unwrap();
            prop_assert!(r.t_09.unwrap() <= r.t_07.unwrap());
        }
    }

    #[test]
    fn report_validation_catches_bad_fields() {
        let mut report = MetricsReport::new(
            1,
            "synthetic",
            "tiny",
            "abc123",
            serde_json::json!({"f1": 0.5}),
            4,
        );
        assert!(report.validate().is_ok());
        report.task = 9;
        assert!(report.validate().is_err());
    }
}
