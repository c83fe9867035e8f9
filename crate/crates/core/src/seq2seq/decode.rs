//! Greedy decoding and corpus evaluation.

use crate::bleu::{corpus_bleu, sentence_bleu, BleuConfig};
use crate::scalar::Scalar;
use crate::text::{Corpus, Sequence, TokenId, BOS, EOS, PAD};

use super::model::{check_ids, decoder_step, encode, ModelParams};
use super::ModelError;

/// Greedy argmax decoding: emits tokens until EOS or `max_len`. PAD is
/// masked from the argmax; ties resolve to the lowest token id. The output
/// excludes EOS and may be empty when EOS wins immediately.
pub fn greedy_decode<F: Scalar>(
    model: &ModelParams<F>,
    x: &Sequence,
    max_len: usize,
) -> Result<Sequence, ModelError> {
    assert!(max_len >= 1, "max_len must be positive");
    let src_ids = check_ids::<F>(x, model.dims.src_vocab)?;
    let enc_states = encode(model, &src_ids);
    let mut state = enc_states.last().expect("non-empty source").clone();
    let mut prev = BOS as usize;
    let mut out: Vec<TokenId> = Vec::new();
    for _ in 0..max_len {
        let step = decoder_step(model, &enc_states, &state, prev);
        let mut best = usize::MAX;
        let mut best_lp = F::neg_infinity();
        for (v, &lp) in step.log_probs.iter().enumerate() {
            if v == PAD as usize {
                continue;
            }
            if lp > best_lp {
                best_lp = lp;
                best = v;
            }
        }
        if best == EOS as usize {
            break;
        }
        out.push(best as TokenId);
        prev = best;
        state = step.state;
    }
    Ok(Sequence::new(out))
}

/// Evaluation of greedy decodes against the corpus references.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<F: Scalar> {
    /// Corpus-level BLEU4 (aggregated clipped counts).
    pub corpus_bleu4: F,
    /// Sentence BLEU4 per example; 0 for empty decodes.
    pub sentence_bleus: Vec<F>,
}

/// Greedy-decodes every source in the split and scores the decodes with
/// corpus-level and per-sentence BLEU4.
pub fn evaluate<F: Scalar>(
    model: &ModelParams<F>,
    split: &Corpus,
) -> Result<EvalReport<F>, ModelError> {
    if split.is_empty() {
        return Err(ModelError::InvalidConfig("empty evaluation split".into()));
    }
    let cfg = BleuConfig::<F>::default();
    let mut pairs = Vec::with_capacity(split.len());
    for ex in &split.examples {
        let decode = greedy_decode(model, &ex.source, 2 * ex.source.len() + 5)?;
        pairs.push((decode, ex.target.clone()));
    }
    let corpus_bleu4 = corpus_bleu(&pairs, &cfg)?;
    let sentence_bleus = pairs
        .iter()
        .map(|(cand, refr)| {
            if cand.is_empty() {
                F::zero()
            } else {
                sentence_bleu(cand, refr, &cfg).unwrap_or(F::zero())
            }
        })
        .collect();
    Ok(EvalReport {
        corpus_bleu4,
        sentence_bleus,
    })
}

/// Fraction of examples whose greedy decode equals the reference exactly.
pub fn sequence_accuracy<F: Scalar>(
    model: &ModelParams<F>,
    split: &Corpus,
) -> Result<f64, ModelError> {
    if split.is_empty() {
        return Err(ModelError::InvalidConfig("empty evaluation split".into()));
    }
    let mut correct = 0usize;
    for ex in &split.examples {
        let decode = greedy_decode(model, &ex.source, 2 * ex.source.len() + 5)?;
        if decode == ex.target {
            correct += 1;
        }
    }
    Ok(correct as f64 / split.len() as f64)
}
