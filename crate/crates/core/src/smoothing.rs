//! Related-target strategies feeding the smoothed sequence loss: the
//! semantic retrieval proposal plus the baselines it is compared against
//! (token-level uniform smoothing, within-batch targets, and random token
//! swaps).

use thiserror::Error;

use crate::bleu::{sentence_bleu, BleuConfig, BleuError};
use crate::retrieval::{RelatedMap, RelatedMember, RelatedSet};
use crate::scalar::Scalar;
use crate::seeding;
use crate::text::{Corpus, ParallelExample, Sequence, TokenId, Vocabulary, SPECIAL_TOKENS};

use rand::Rng;

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error("token smoothing alpha must be in [0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("swap count {requested} exceeds sequence length {len}")]
    InvalidSwapCount { requested: usize, len: usize },
    #[error("no precomputed related set for corpus index {0}")]
    MissingRelatedSet(usize),
    #[error("related set references corpus index {0} outside the corpus")]
    RelatedIndexOutOfRange(usize),
    #[error(transparent)]
    Bleu(#[from] BleuError),
}

/// How many positions a random-swap augmentation perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapCount {
    /// max(1, round(0.1 * len)).
    #[default]
    Auto,
    Fixed(usize),
}

impl SwapCount {
    pub fn resolve(&self, len: usize) -> usize {
        match self {
            SwapCount::Auto => ((len as f64 * 0.1).round() as usize).max(1),
            SwapCount::Fixed(n) => *n,
        }
    }
}

/// Where random-swap replacement tokens come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapSource {
    /// Other positions of the target itself (the reported best variant).
    #[default]
    TargetTokens,
    /// Uniform over the non-special vocabulary.
    Vocabulary,
}

/// The active related-target strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Variant {
    /// Plain maximum likelihood, no smoothing.
    None,
    /// Uniform per-token label smoothing; acts inside the loss, so it
    /// produces no related sequences.
    TokenUniform,
    /// All other targets of the minibatch.
    WithinBatch,
    /// Seeded random token swaps of the target.
    RandomSwap {
        swap_count: SwapCount,
        source: SwapSource,
        augmentations: usize,
    },
    /// Precomputed semantic retrieval with BLEU rerank.
    SemanticBleu,
}

/// Strategy plus its smoothing weight alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingStrategy<F: Scalar> {
    pub variant: Variant,
    pub alpha: F,
}

impl<F: Scalar> SmoothingStrategy<F> {
    pub fn none() -> Self {
        SmoothingStrategy {
            variant: Variant::None,
            alpha: F::zero(),
        }
    }

    pub fn token_uniform(alpha: F) -> Self {
        SmoothingStrategy {
            variant: Variant::TokenUniform,
            alpha,
        }
    }

    pub fn within_batch(alpha: F) -> Self {
        SmoothingStrategy {
            variant: Variant::WithinBatch,
            alpha,
        }
    }

    pub fn random_swap(alpha: F) -> Self {
        SmoothingStrategy {
            variant: Variant::RandomSwap {
                swap_count: SwapCount::Auto,
                source: SwapSource::TargetTokens,
                augmentations: 5,
            },
            alpha,
        }
    }

    pub fn semantic(alpha: F) -> Self {
        SmoothingStrategy {
            variant: Variant::SemanticBleu,
            alpha,
        }
    }
}

/// Per-position target distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTokenTarget<F: Scalar> {
    probs: Vec<F>,
}

impl<F: Scalar> SmoothedTokenTarget<F> {
    pub fn probs(&self) -> &[F] {
        &self.probs
    }
}

/// (1 - alpha) * onehot(true_id) + alpha * uniform(vocab_size).
pub fn token_uniform_target<F: Scalar>(
    true_id: TokenId,
    alpha: F,
    vocab_size: usize,
) -> Result<SmoothedTokenTarget<F>, SmoothingError> {
    if alpha < F::zero() || alpha >= F::one() {
        return Err(SmoothingError::InvalidAlpha(
            alpha.to_f64().unwrap_or(f64::NAN),
        ));
    }
    assert!(
        (true_id as usize) < vocab_size,
        "true_id must be inside the vocabulary"
    );
    let floor = alpha / F::from_count(vocab_size);
    let mut probs = vec![floor; vocab_size];
    probs[true_id as usize] += F::one() - alpha;
    Ok(SmoothedTokenTarget { probs })
}

/// A related target resolved to its token sequence, ready for the loss.
/// `corpus_index` is `None` for synthetic augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct RelatedTarget<F: Scalar> {
    pub corpus_index: Option<usize>,
    pub target: Sequence,
    pub bleu: F,
}

/// All batch targets except position `i` (and except any batchmate whose
/// target is token-identical to it), each scored with its actual sentence
/// BLEU to the example's target. No pruning happens here.
pub fn within_batch_related<F: Scalar>(
    batch: &[&ParallelExample],
    i: usize,
    cfg: &BleuConfig<F>,
) -> Result<RelatedSet<F>, SmoothingError> {
    assert!(i < batch.len(), "batch position out of range");
    let y = &batch[i].target;
    let mut members = Vec::new();
    for (j, other) in batch.iter().enumerate() {
        if j == i || other.target == *y {
            continue;
        }
        members.push(RelatedMember {
            index: other.corpus_index,
            bleu: sentence_bleu(&other.target, y, cfg)?,
        });
    }
    members.sort_by(|a, b| {
        b.bleu
            .partial_cmp(&a.bleu)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.index.cmp(&b.index))
    });
    Ok(RelatedSet {
        query_index: batch[i].corpus_index,
        members,
    })
}

/// Replaces `swap_count` seeded positions of `y` with tokens drawn from the
/// other positions of the original sequence; length is preserved.
pub fn random_swap_augment(
    y: &Sequence,
    swap_count: usize,
    vocab: &Vocabulary,
    rng_seed: u64,
) -> Result<Sequence, SmoothingError> {
    random_swap_augment_from(y, swap_count, vocab, SwapSource::TargetTokens, rng_seed)
}

/// [`random_swap_augment`] with a selectable replacement pool.
pub fn random_swap_augment_from(
    y: &Sequence,
    swap_count: usize,
    vocab: &Vocabulary,
    source: SwapSource,
    rng_seed: u64,
) -> Result<Sequence, SmoothingError> {
    let len = y.len();
    if swap_count > len {
        return Err(SmoothingError::InvalidSwapCount {
            requested: swap_count,
            len,
        });
    }
    let mut rng = seeding::rng(rng_seed);
    let mut positions = rand::seq::index::sample(&mut rng, len, swap_count).into_vec();
    positions.sort_unstable();

    let mut ids = y.ids().to_vec();
    for p in positions {
        match source {
            SwapSource::TargetTokens => {
                if len < 2 {
                    continue;
                }
                // Uniform over the other positions of the original y.
                let mut j = rng.gen_range(0..len - 1);
                if j >= p {
                    j += 1;
                }
                ids[p] = y.ids()[j];
            }
            SwapSource::Vocabulary => {
                let specials = SPECIAL_TOKENS.len();
                if vocab.size() <= specials {
                    continue;
                }
                ids[p] = rng.gen_range(specials..vocab.size()) as TokenId;
            }
        }
    }
    Ok(Sequence::new(ids))
}

/// Inputs shared by all strategies when resolving an example's related set.
pub struct RelatedContext<'a, F: Scalar> {
    /// The example's minibatch, in batch order.
    pub batch: &'a [&'a ParallelExample],
    /// Position of the example within `batch`.
    pub position: usize,
    /// Full corpus, for resolving precomputed member indices.
    pub corpus: &'a Corpus,
    pub related_map: Option<&'a RelatedMap<F>>,
    pub bleu: BleuConfig<F>,
    pub global_seed: u64,
    pub epoch: usize,
}

/// Resolves the related targets of one example under the given strategy.
pub fn build_related<F: Scalar>(
    strategy: &SmoothingStrategy<F>,
    example: &ParallelExample,
    ctx: &RelatedContext<'_, F>,
) -> Result<Vec<RelatedTarget<F>>, SmoothingError> {
    match &strategy.variant {
        Variant::None | Variant::TokenUniform => Ok(Vec::new()),
        Variant::WithinBatch => {
            let set = within_batch_related(ctx.batch, ctx.position, &ctx.bleu)?;
            resolve_members(&set, ctx)
        }
        Variant::RandomSwap {
            swap_count,
            source,
            augmentations,
        } => {
            let y = &example.target;
            let count = swap_count.resolve(y.len());
            let mut out = Vec::with_capacity(*augmentations);
            for a in 0..*augmentations {
                let seed = seeding::mix(
                    ctx.global_seed,
                    &[example.corpus_index as u64, ctx.epoch as u64, a as u64],
                );
                let seq = random_swap_augment_from(y, count, &ctx.corpus.tgt_vocab, *source, seed)?;
                let bleu = sentence_bleu(&seq, y, &ctx.bleu)?;
                out.push(RelatedTarget {
                    corpus_index: None,
                    target: seq,
                    bleu,
                });
            }
            Ok(out)
        }
        Variant::SemanticBleu => {
            let map = ctx
                .related_map
                .ok_or(SmoothingError::MissingRelatedSet(example.corpus_index))?;
            let set = map
                .get(&example.corpus_index)
                .ok_or(SmoothingError::MissingRelatedSet(example.corpus_index))?;
            resolve_members(set, ctx)
        }
    }
}

fn resolve_members<F: Scalar>(
    set: &RelatedSet<F>,
    ctx: &RelatedContext<'_, F>,
) -> Result<Vec<RelatedTarget<F>>, SmoothingError> {
    set.members
        .iter()
        .map(|m| {
            let target = ctx
                .corpus
                .target(m.index)
                .ok_or(SmoothingError::RelatedIndexOutOfRange(m.index))?
                .clone();
            Ok(RelatedTarget {
                corpus_index: Some(m.index),
                target,
                bleu: m.bleu,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Corpus;

    fn toy_corpus() -> Corpus {
        Corpus::from_lines(
            &["a b c", "a b d", "x y z", "a b c"],
            &["p q r", "p q s", "u v w", "p q r"],
            32,
        )
        .unwrap()
    }

    #[test]
    fn token_uniform_alpha_zero_is_one_hot() {
        let t = token_uniform_target::<f64>(2, 0.0, 5).unwrap();
        assert_eq!(t.probs(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn token_uniform_hand_computed_case() {
        // alpha 0.1, vocab 4, true id 2: off-target 0.1/4, target 0.9 + 0.1/4.
        let t = token_uniform_target::<f64>(2, 0.1, 4).unwrap();
        let want = [0.025, 0.025, 0.925, 0.025];
        for (got, want) in t.probs().iter().zip(want.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn token_uniform_sums_to_one() {
        for &alpha in &[0.0, 0.05, 0.3, 0.9] {
            let t = token_uniform_target::<f64>(7, alpha, 11).unwrap();
            let sum: f64 = t.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn token_uniform_rejects_alpha_at_or_above_one() {
        assert!(matches!(
            token_uniform_target::<f64>(0, 1.0, 4),
            Err(SmoothingError::InvalidAlpha(_))
        ));
    }

    #[test]
    fn within_batch_of_single_example_is_empty() {
        let corpus = toy_corpus();
        let batch = vec![&corpus.examples[0]];
        let cfg = BleuConfig::<f64>::default();
        let set = within_batch_related(&batch, 0, &cfg).unwrap();
        assert!(set.members.is_empty());
    }

    #[test]
    fn within_batch_includes_disjoint_batchmates() {
        let corpus = toy_corpus();
        let batch: Vec<&ParallelExample> = corpus.examples.iter().take(3).collect();
        let cfg = BleuConfig::<f64>::default();
        let set = within_batch_related(&batch, 0, &cfg).unwrap();
        // Batchmates 1 and 2 are included even though target 2 shares no
        // token with target 0; example 3 is not in the batch.
        assert_eq!(set.members.len(), 2);
        assert!(set.members.iter().any(|m| m.index == 2));
    }

    #[test]
    fn within_batch_excludes_token_identical_targets() {
        let corpus = toy_corpus();
        let batch: Vec<&ParallelExample> = corpus.examples.iter().collect();
        let cfg = BleuConfig::<f64>::default();
        // Target 3 is identical to target 0, so only 1 and 2 remain.
        let set = within_batch_related(&batch, 0, &cfg).unwrap();
        assert_eq!(set.members.len(), 2);
        assert!(set.members.iter().all(|m| m.index != 3));
    }

    #[test]
    fn random_swap_zero_count_is_identity() {
        let corpus = toy_corpus();
        let y = &corpus.examples[0].target;
        let out = random_swap_augment(y, 0, &corpus.tgt_vocab, 99).unwrap();
        assert_eq!(&out, y);
    }

    #[test]
    fn random_swap_preserves_length_and_pool() {
        let corpus = toy_corpus();
        let y = &corpus.examples[0].target;
        for seed in 0..20 {
            let out = random_swap_augment(y, 1, &corpus.tgt_vocab, seed).unwrap();
            assert_eq!(out.len(), y.len());
            let diffs: Vec<usize> = (0..y.len()).filter(|&i| out.ids()[i] != y.ids()[i]).collect();
            assert!(diffs.len() <= 1);
            for &d in &diffs {
                assert!(y.ids().contains(&out.ids()[d]));
            }
        }
    }

    #[test]
    fn random_swap_is_deterministic_per_seed() {
        let corpus = toy_corpus();
        let y = &corpus.examples[0].target;
        let a = random_swap_augment(y, 2, &corpus.tgt_vocab, 1234).unwrap();
        let b = random_swap_augment(y, 2, &corpus.tgt_vocab, 1234).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_swap_rejects_oversized_count() {
        let corpus = toy_corpus();
        let y = &corpus.examples[0].target;
        assert!(matches!(
            random_swap_augment(y, y.len() + 1, &corpus.tgt_vocab, 0),
            Err(SmoothingError::InvalidSwapCount { .. })
        ));
    }

    fn context<'a>(
        corpus: &'a Corpus,
        batch: &'a [&'a ParallelExample],
        position: usize,
        related_map: Option<&'a RelatedMap<f64>>,
    ) -> RelatedContext<'a, f64> {
        RelatedContext {
            batch,
            position,
            corpus,
            related_map,
            bleu: BleuConfig::default(),
            global_seed: 7,
            epoch: 0,
        }
    }

    #[test]
    fn build_related_none_is_empty() {
        let corpus = toy_corpus();
        let batch: Vec<&ParallelExample> = corpus.examples.iter().collect();
        let ctx = context(&corpus, &batch, 0, None);
        let strategy = SmoothingStrategy::<f64>::none();
        let out = build_related(&strategy, &corpus.examples[0], &ctx).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn build_related_random_swap_cardinality_and_length() {
        let corpus = toy_corpus();
        let batch: Vec<&ParallelExample> = corpus.examples.iter().collect();
        let ctx = context(&corpus, &batch, 0, None);
        let strategy = SmoothingStrategy::<f64>::random_swap(0.1);
        let out = build_related(&strategy, &corpus.examples[0], &ctx).unwrap();
        assert_eq!(out.len(), 5);
        for t in &out {
            assert_eq!(t.target.len(), corpus.examples[0].target.len());
            assert!(t.corpus_index.is_none());
        }
    }

    #[test]
    fn build_related_semantic_requires_map_entry() {
        let corpus = toy_corpus();
        let batch: Vec<&ParallelExample> = corpus.examples.iter().collect();
        let empty: RelatedMap<f64> = RelatedMap::new();
        let ctx = context(&corpus, &batch, 0, Some(&empty));
        let strategy = SmoothingStrategy::<f64>::semantic(0.1);
        assert!(matches!(
            build_related(&strategy, &corpus.examples[0], &ctx),
            Err(SmoothingError::MissingRelatedSet(0))
        ));
    }

    #[test]
    fn build_related_is_deterministic() {
        let corpus = toy_corpus();
        let batch: Vec<&ParallelExample> = corpus.examples.iter().collect();
        let ctx = context(&corpus, &batch, 1, None);
        let strategy = SmoothingStrategy::<f64>::random_swap(0.1);
        let a = build_related(&strategy, &corpus.examples[1], &ctx).unwrap();
        let b = build_related(&strategy, &corpus.examples[1], &ctx).unwrap();
        assert_eq!(a, b);
    }
}
