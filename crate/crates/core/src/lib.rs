//! Semantic label smoothing for sequence-to-sequence training.
//!
//! The pipeline retrieves well-formed related targets for every training
//! example (nearest neighbors in a sentence embedding space, reranked by
//! sentence BLEU) and trains a small encoder-decoder with a loss smoothed
//! over those targets, alongside the baseline smoothing strategies it is
//! compared against.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root pin the default `f64` instantiations used by the CLI.

pub mod bleu;
pub mod embedding;
pub mod retrieval;
pub mod scalar;
pub mod seeding;
pub mod seq2seq;
pub mod smoothing;
pub mod text;

pub use scalar::Scalar;

/// Scalar used by the CLI and default pipelines; f64 keeps the gradient and
/// loss-decomposition checks tight.
pub type DefaultScalar = f64;

pub type BleuConfig = bleu::BleuConfig<DefaultScalar>;
pub type EmbeddingVector = embedding::EmbeddingVector<DefaultScalar>;
pub type VectorIndex = retrieval::VectorIndex<DefaultScalar>;
pub type NeighborList = retrieval::NeighborList<DefaultScalar>;
pub type RelatedSet = retrieval::RelatedSet<DefaultScalar>;
pub type RelatedMap = retrieval::RelatedMap<DefaultScalar>;
pub type SmoothingStrategy = smoothing::SmoothingStrategy<DefaultScalar>;
pub type ModelParams = seq2seq::ModelParams<DefaultScalar>;
pub type TrainingConfig = seq2seq::TrainingConfig<DefaultScalar>;
pub type LossBreakdown = seq2seq::LossBreakdown<DefaultScalar>;
