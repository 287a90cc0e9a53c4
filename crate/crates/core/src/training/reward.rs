//! Terminal reward: smoothed sentence-level BLEU-4.
//!
//! Distinct from the corpus-level BLEU in the metric suite on purpose —
//! this variant must give a usable learning signal on single short
//! sentences. Unigram precision stays exact (no token overlap means zero
//! reward); the higher-order precisions get add-one smoothing so that a
//! missing bigram does not zero out the whole score.

use std::collections::HashMap;

/// Clipped n-gram matches and candidate n-gram total for one order.
pub fn clipped_counts(candidate: &[String], reference: &[String], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
    for w in reference.windows(n) {
        *ref_counts.entry(w).or_insert(0) += 1;
    }
    let mut cand_counts: HashMap<&[String], usize> = HashMap::new();
    for w in candidate.windows(n) {
        *cand_counts.entry(w).or_insert(0) += 1;
    }
    let total = candidate.len() + 1 - n;
    let matched = cand_counts
        .iter()
        .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, total)
}

/// Sentence-level BLEU-4 against a single reference, in [0, 1].
///
/// p₁ is the raw clipped precision; p₂..p₄ use add-one smoothing
/// ((m+1)/(t+1), so an order with no candidate n-grams is neutral).
/// The brevity penalty exp(min(0, 1 − r/c)) applies as usual. An empty
/// candidate scores 0.
pub fn sentence_bleu(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = clipped_counts(candidate, reference, n);
        let p = if n == 1 {
            if m == 0 {
                return 0.0;
            }
            m as f64 / t as f64
        } else {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64).min(0.0).exp();
    bp * (log_sum / 4.0).exp()
}
