//! A small deterministic encoder-decoder with exact log-likelihoods, the
//! smoothed sequence loss with analytic gradients, minibatch SGD training,
//! and greedy decoding.

mod decode;
mod loss;
mod model;
mod train;

pub use decode::{evaluate, greedy_decode, sequence_accuracy, EvalReport};
pub use loss::{grad, smoothed_loss, LossBreakdown};
pub use model::{log_prob, Mat, ModelDims, ModelParams};
pub use train::{
    load_model, metrics_to_jsonl, model_from_bytes, model_to_bytes, save_model, train,
    write_metrics_jsonl, EpochMetrics, ModelShape, TrainOutcome, TrainingConfig,
};

use thiserror::Error;

use crate::bleu::BleuError;
use crate::smoothing::SmoothingError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    VocabError { id: usize, vocab_size: usize },
    #[error("sequences must be non-empty")]
    EmptySequence,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Bleu(#[from] BleuError),
    #[error("bad model file magic")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
