//! Sentence- and corpus-level BLEU-n scoring. Sentence scores are used both
//! to rerank retrieved neighbor targets and to evaluate decodes; zero clipped
//! counts are smoothed with a small epsilon so short sentences keep a usable
//! rank order at higher n-gram orders.

use std::collections::HashMap;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::text::{Sequence, TokenId};

#[derive(Debug, Error)]
pub enum BleuError {
    #[error("BLEU requires non-empty sequences")]
    EmptySequence,
    #[error("BLEU order must be in 1..=5, got {0}")]
    InvalidOrder(usize),
    #[error("smoothing epsilon must be positive")]
    InvalidEpsilon,
}

/// Multiset of the contiguous n-grams of one sequence.
#[derive(Debug, Clone)]
pub struct NGramCounts {
    order: usize,
    counts: HashMap<Vec<TokenId>, usize>,
}

impl NGramCounts {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn count(&self, gram: &[TokenId]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Total n-grams counted: max(0, len - n + 1).
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[TokenId], usize)> {
        self.counts.iter().map(|(g, &c)| (g.as_slice(), c))
    }
}

/// Configuration for BLEU-n scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuConfig<F: Scalar> {
    max_n: usize,
    smoothing_epsilon: F,
}

impl<F: Scalar> BleuConfig<F> {
    pub fn new(max_n: usize, smoothing_epsilon: F) -> Result<BleuConfig<F>, BleuError> {
        if !(1..=5).contains(&max_n) {
            return Err(BleuError::InvalidOrder(max_n));
        }
        if smoothing_epsilon <= F::zero() {
            return Err(BleuError::InvalidEpsilon);
        }
        Ok(BleuConfig {
            max_n,
            smoothing_epsilon,
        })
    }

    /// BLEU-n with the default epsilon of 0.1.
    pub fn with_order(max_n: usize) -> Result<BleuConfig<F>, BleuError> {
        BleuConfig::new(max_n, F::from_f(0.1))
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn smoothing_epsilon(&self) -> F {
        self.smoothing_epsilon
    }
}

impl<F: Scalar> Default for BleuConfig<F> {
    /// BLEU4 with epsilon 0.1.
    fn default() -> Self {
        BleuConfig {
            max_n: 4,
            smoothing_epsilon: F::from_f(0.1),
        }
    }
}

/// Counts all contiguous n-grams of `seq`; empty when the sequence is
/// shorter than `n`.
pub fn ngram_counts(seq: &Sequence, n: usize) -> NGramCounts {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for window in seq.ids().windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    NGramCounts { order: n, counts }
}

/// Modified n-gram precision as the exact ratio (clipped matches, total
/// candidate n-grams). Returns (0, 0) when the candidate is shorter than `n`.
pub fn modified_precision(candidate: &Sequence, reference: &Sequence, n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refr = ngram_counts(reference, n);
    let mut clipped = 0;
    let mut total = 0;
    for (gram, count) in cand.iter() {
        clipped += count.min(refr.count(gram));
        total += count;
    }
    (clipped, total)
}

/// Brevity penalty: 1 when the candidate is at least as long as the
/// reference, exp(1 - ref/cand) otherwise.
pub fn brevity_penalty<F: Scalar>(cand_len: usize, ref_len: usize) -> F {
    assert!(cand_len >= 1 && ref_len >= 1, "lengths must be positive");
    if cand_len >= ref_len {
        F::one()
    } else {
        (F::one() - F::from_count(ref_len) / F::from_count(cand_len)).exp()
    }
}

/// Sentence-level BLEU with epsilon smoothing: geometric mean of the
/// modified precisions for n = 1..=max_n times the brevity penalty. A zero
/// clipped count contributes epsilon/total; an order with no candidate
/// n-grams contributes epsilon.
pub fn sentence_bleu<F: Scalar>(
    candidate: &Sequence,
    reference: &Sequence,
    cfg: &BleuConfig<F>,
) -> Result<F, BleuError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(BleuError::EmptySequence);
    }
    let eps = cfg.smoothing_epsilon;
    let mut log_sum = F::zero();
    for n in 1..=cfg.max_n {
        let (clipped, total) = modified_precision(candidate, reference, n);
        let p = if total == 0 {
            eps
        } else if clipped == 0 {
            eps / F::from_count(total)
        } else {
            F::from_count(clipped) / F::from_count(total)
        };
        log_sum += p.ln();
    }
    let mean_log = log_sum / F::from_count(cfg.max_n);
    Ok(brevity_penalty::<F>(candidate.len(), reference.len()) * mean_log.exp())
}

/// Corpus-level BLEU: clipped counts and totals are aggregated over all
/// pairs before combining, and the brevity penalty uses total lengths.
/// Empty candidates are allowed (they contribute only reference length);
/// returns 0 when no candidate produced any token.
pub fn corpus_bleu<F: Scalar>(
    pairs: &[(Sequence, Sequence)],
    cfg: &BleuConfig<F>,
) -> Result<F, BleuError> {
    let eps = cfg.smoothing_epsilon;
    let mut clipped_by_n = vec![0usize; cfg.max_n];
    let mut total_by_n = vec![0usize; cfg.max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (candidate, reference) in pairs {
        if reference.is_empty() {
            return Err(BleuError::EmptySequence);
        }
        cand_len += candidate.len();
        ref_len += reference.len();
        for n in 1..=cfg.max_n {
            let (clipped, total) = modified_precision(candidate, reference, n);
            clipped_by_n[n - 1] += clipped;
            total_by_n[n - 1] += total;
        }
    }
    if cand_len == 0 {
        return Ok(F::zero());
    }
    let mut log_sum = F::zero();
    for n in 1..=cfg.max_n {
        let (clipped, total) = (clipped_by_n[n - 1], total_by_n[n - 1]);
        let p = if total == 0 {
            eps
        } else if clipped == 0 {
            eps / F::from_count(total)
        } else {
            F::from_count(clipped) / F::from_count(total)
        };
        log_sum += p.ln();
    }
    let mean_log = log_sum / F::from_count(cfg.max_n);
    Ok(brevity_penalty::<F>(cand_len, ref_len) * mean_log.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[TokenId]) -> Sequence {
        Sequence::new(ids.to_vec())
    }

    #[test]
    fn unigram_counts() {
        let counts = ngram_counts(&seq(&[5, 6, 5]), 1);
        assert_eq!(counts.count(&[5]), 2);
        assert_eq!(counts.count(&[6]), 1);
        assert_eq!(counts.total(), 3);
    }

    #[test]
    fn full_length_ngram() {
        let counts = ngram_counts(&seq(&[5, 6, 5]), 3);
        assert_eq!(counts.count(&[5, 6, 5]), 1);
        assert_eq!(counts.total(), 1);
    }

    #[test]
    fn ngrams_empty_when_too_short() {
        let counts = ngram_counts(&seq(&[5, 6]), 3);
        assert_eq!(counts.total(), 0);
    }

    #[test]
    fn precision_identity() {
        let s = seq(&[4, 5, 6]);
        assert_eq!(modified_precision(&s, &s, 2), (2, 2));
    }

    #[test]
    fn precision_clips_repeated_candidate_tokens() {
        // "the the the the the the the" vs "the cat is on the mat":
        // reference holds two "the", so clipping caps the matches at 2 of 7.
        let the = 4;
        let candidate = seq(&[the; 7]);
        let reference = seq(&[the, 5, 6, 7, the, 8]);
        assert_eq!(modified_precision(&candidate, &reference, 1), (2, 7));
    }

    #[test]
    fn precision_zero_for_disjoint_tokens() {
        let candidate = seq(&[4, 5, 6]);
        let reference = seq(&[7, 8, 9]);
        assert_eq!(modified_precision(&candidate, &reference, 1), (0, 3));
    }

    #[test]
    fn precision_zero_total_when_candidate_short() {
        let candidate = seq(&[4, 5]);
        let reference = seq(&[4, 5, 6]);
        assert_eq!(modified_precision(&candidate, &reference, 3), (0, 0));
    }

    #[test]
    fn brevity_penalty_cases() {
        assert_eq!(brevity_penalty::<f64>(10, 10), 1.0);
        assert_eq!(brevity_penalty::<f64>(12, 10), 1.0);
        let bp: f64 = brevity_penalty(5, 10);
        assert!((bp - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn sentence_bleu_identity_is_one() {
        let cfg = BleuConfig::<f64>::default();
        let s = seq(&[4, 5, 6, 7, 8]);
        let score = sentence_bleu(&s, &s, &cfg).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sentence_bleu_single_overlap_beats_disjoint() {
        let cfg = BleuConfig::<f64>::default();
        let reference = seq(&[4, 5, 6, 7]);
        let disjoint = seq(&[8, 9, 10, 11]);
        let one_match = seq(&[4, 9, 10, 11]);
        let lo = sentence_bleu(&disjoint, &reference, &cfg).unwrap();
        let hi = sentence_bleu(&one_match, &reference, &cfg).unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn sentence_bleu_hand_computed_bigram_case() {
        // candidate [a,b,c,d] vs reference [a,b,c,e], max_n = 2:
        // p1 = 3/4, p2 = 2/3, BP = 1 -> exp((ln 0.75 + ln(2/3)) / 2) = sqrt(0.5).
        let cfg = BleuConfig::<f64>::new(2, 0.1).unwrap();
        let candidate = seq(&[4, 5, 6, 7]);
        let reference = seq(&[4, 5, 6, 8]);
        let score = sentence_bleu(&candidate, &reference, &cfg).unwrap();
        assert!((score - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sentence_bleu_rejects_empty() {
        let cfg = BleuConfig::<f64>::default();
        let empty = Sequence::new(vec![]);
        let s = seq(&[4]);
        assert!(matches!(
            sentence_bleu(&empty, &s, &cfg),
            Err(BleuError::EmptySequence)
        ));
        assert!(matches!(
            sentence_bleu(&s, &empty, &cfg),
            Err(BleuError::EmptySequence)
        ));
    }

    #[test]
    fn config_validates_order_and_epsilon() {
        assert!(matches!(
            BleuConfig::<f64>::new(0, 0.1),
            Err(BleuError::InvalidOrder(0))
        ));
        assert!(matches!(
            BleuConfig::<f64>::new(6, 0.1),
            Err(BleuError::InvalidOrder(6))
        ));
        assert!(matches!(
            BleuConfig::<f64>::new(4, 0.0),
            Err(BleuError::InvalidEpsilon)
        ));
    }

    #[test]
    fn corpus_bleu_perfect_decodes() {
        let cfg = BleuConfig::<f64>::default();
        let pairs = vec![
            (seq(&[4, 5, 6, 7]), seq(&[4, 5, 6, 7])),
            (seq(&[8, 9, 10, 11, 12]), seq(&[8, 9, 10, 11, 12])),
        ];
        let score = corpus_bleu(&pairs, &cfg).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_bleu_all_empty_candidates_is_zero() {
        let cfg = BleuConfig::<f64>::default();
        let pairs = vec![(Sequence::new(vec![]), seq(&[4, 5]))];
        assert_eq!(corpus_bleu(&pairs, &cfg).unwrap(), 0.0);
    }
}
