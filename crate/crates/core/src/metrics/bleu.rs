//! Corpus-level BLEU-4 with add-one smoothing on higher-order n-grams.

use std::collections::HashMap;

use super::MetricsError;

const MAX_ORDER: usize = 4;

fn ngram_counts<'a>(tokens: &[&'a str], order: usize) -> HashMap<Vec<&'a str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= order {
        for window in tokens.windows(order) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU of `candidates` against aligned single `references`.
///
/// Whitespace-tokenized, orders 1..=4, brevity penalty on corpus lengths.
/// Orders above 1 use add-one smoothing, which keeps identity pairs at
/// exactly 1.0 and avoids zero scores on short texts.
pub fn corpus_bleu<C, R>(candidates: &[C], references: &[R]) -> Result<f64, MetricsError>
where
    C: AsRef<str>,
    R: AsRef<str>,
{
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyInput);
    }

    let mut matched = [0u64; MAX_ORDER];
    let mut total = [0u64; MAX_ORDER];
    let mut cand_len = 0u64;
    let mut ref_len = 0u64;

    for (cand, reference) in candidates.iter().zip(references) {
        let cand_tokens: Vec<&str> = cand.as_ref().split_whitespace().collect();
        let ref_tokens: Vec<&str> = reference.as_ref().split_whitespace().collect();
        cand_len += cand_tokens.len() as u64;
        ref_len += ref_tokens.len() as u64;
        for order in 1..=MAX_ORDER {
            let cand_counts = ngram_counts(&cand_tokens, order);
            let ref_counts = ngram_counts(&ref_tokens, order);
            for (gram, count) in &cand_counts {
                total[order - 1] += count;
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matched[order - 1] += (*count).min(clip);
            }
        }
    }

    if total[0] == 0 || matched[0] == 0 {
        return Ok(0.0);
    }

    let mut log_precision_sum = 0.0;
    for order in 0..MAX_ORDER {
        let (m, t) = if order == 0 {
            (matched[0] as f64, total[0] as f64)
        } else {
            (matched[order] as f64 + 1.0, total[order] as f64 + 1.0)
        };
        log_precision_sum += (m / t).ln();
    }
    let geo_mean = (log_precision_sum / MAX_ORDER as f64).exp();

    let brevity = if cand_len >= ref_len || cand_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };

    Ok(brevity * geo_mean)
}
