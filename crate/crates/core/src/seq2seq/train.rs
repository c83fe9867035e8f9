//! The training loop: minibatch SGD with gradient-norm clipping over the
//! smoothed loss, deterministic given (seed, config, corpus). Also the
//! metrics log and the SEQM checkpoint format.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bleu::BleuConfig;
use crate::retrieval::RelatedMap;
use crate::scalar::Scalar;
use crate::seeding;
use crate::smoothing::{build_related, RelatedContext, SmoothingStrategy, Variant};
use crate::text::{Corpus, ParallelExample};

use super::decode::evaluate;
use super::loss::grad_accumulate;
use super::model::{ModelDims, ModelParams};
use super::ModelError;

const MODEL_MAGIC: &[u8; 4] = b"SEQM";
const MODEL_VERSION: u32 = 1;

/// Embedding and hidden widths; vocabulary sizes come from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub d_model: usize,
    pub hidden: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            d_model: 16,
            hidden: 32,
        }
    }
}

/// Everything the training loop needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig<F: Scalar> {
    pub strategy: SmoothingStrategy<F>,
    /// Token-level smoothing alpha, composable with sequence strategies;
    /// `None` disables it. The TokenUniform strategy sets it implicitly.
    pub token_ls: Option<F>,
    pub learning_rate: F,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Gradient-norm clip; non-positive disables clipping.
    pub clip_norm: F,
    pub shape: ModelShape,
}

impl<F: Scalar> Default for TrainingConfig<F> {
    fn default() -> Self {
        TrainingConfig {
            strategy: SmoothingStrategy::none(),
            token_ls: None,
            learning_rate: F::from_f(0.2),
            batch_size: 8,
            epochs: 10,
            seed: 0,
            clip_norm: F::from_f(5.0),
            shape: ModelShape::default(),
        }
    }
}

impl<F: Scalar> TrainingConfig<F> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.learning_rate < F::zero() {
            return Err(ModelError::InvalidConfig(
                "learning rate must not be negative".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics<F: Scalar> {
    pub epoch: usize,
    pub train_loss: F,
    pub dev_bleu4: F,
}

/// Trained parameters plus the per-epoch metrics.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Scalar> {
    pub model: ModelParams<F>,
    pub metrics: Vec<EpochMetrics<F>>,
}

/// Trains a model on `corpus` with the configured smoothing strategy.
/// `dev` is the split scored for the per-epoch BLEU4 (the training corpus
/// when absent); `related` must cover the corpus when the strategy is
/// SemanticBleu.
pub fn train<F: Scalar>(
    config: &TrainingConfig<F>,
    corpus: &Corpus,
    dev: Option<&Corpus>,
    related: Option<&RelatedMap<F>>,
) -> Result<TrainOutcome<F>, ModelError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(ModelError::InvalidConfig("empty training corpus".into()));
    }
    let dims = ModelDims {
        src_vocab: corpus.src_vocab.size(),
        tgt_vocab: corpus.tgt_vocab.size(),
        d_model: config.shape.d_model,
        hidden: config.shape.hidden,
    };
    let mut model = ModelParams::<F>::init(dims, config.seed);

    // The TokenUniform strategy is the token-level path of the loss; other
    // strategies may compose with an explicit token_ls.
    let token_ls = match config.strategy.variant {
        Variant::TokenUniform => Some(config.strategy.alpha),
        _ => config.token_ls,
    };
    let alpha = config.strategy.alpha;

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = seeding::rng(seeding::mix(config.seed, &[0xe90c, epoch as u64]));
        order.shuffle(&mut rng);

        let mut loss_sum = F::zero();
        for batch_ids in order.chunks(config.batch_size) {
            let batch: Vec<&ParallelExample> =
                batch_ids.iter().map(|&i| &corpus.examples[i]).collect();
            let mut grads = ModelParams::<F>::zeros(dims);
            for (position, example) in batch.iter().enumerate() {
                let ctx = RelatedContext {
                    batch: &batch,
                    position,
                    corpus,
                    related_map: related,
                    bleu: BleuConfig::<F>::default(),
                    global_seed: config.seed,
                    epoch,
                };
                let related_targets = build_related(&config.strategy, example, &ctx)?;
                let breakdown = grad_accumulate(
                    &model,
                    &example.source,
                    &example.target,
                    &related_targets,
                    alpha,
                    token_ls,
                    F::one(),
                    &mut grads,
                )?;
                loss_sum += breakdown.total;
            }
            grads.scale(F::one() / F::from_count(batch.len()));
            if config.clip_norm > F::zero() {
                let norm = grads.l2_norm();
                if norm > config.clip_norm {
                    grads.scale(config.clip_norm / norm);
                }
            }
            model.add_scaled(&grads, -config.learning_rate);
        }

        let train_loss = loss_sum / F::from_count(corpus.len());
        let dev_bleu4 = evaluate(&model, dev.unwrap_or(corpus))?.corpus_bleu4;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            dev_bleu4,
        });
    }
    Ok(TrainOutcome { model, metrics })
}

#[derive(Serialize, Deserialize)]
struct MetricsRecord {
    epoch: usize,
    train_loss: f64,
    dev_bleu4: f64,
}

/// Renders the metrics log as line-delimited JSON
/// `{"epoch": n, "train_loss": f, "dev_bleu4": f}`.
pub fn metrics_to_jsonl<F: Scalar>(metrics: &[EpochMetrics<F>]) -> String {
    let mut out = String::new();
    for m in metrics {
        let record = MetricsRecord {
            epoch: m.epoch,
            train_loss: m.train_loss.to_f64().expect("finite loss"),
            dev_bleu4: m.dev_bleu4.to_f64().expect("finite bleu"),
        };
        out.push_str(&serde_json::to_string(&record).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn write_metrics_jsonl<F: Scalar, P: AsRef<Path>>(
    metrics: &[EpochMetrics<F>],
    path: P,
) -> Result<(), ModelError> {
    fs::write(path, metrics_to_jsonl(metrics))?;
    Ok(())
}

/// Serializes a model to the SEQM checkpoint layout: magic, version, dims,
/// then every tensor as little-endian f32 in the fixed tensor order.
pub fn model_to_bytes<F: Scalar>(model: &ModelParams<F>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for dim in [
        model.dims.src_vocab,
        model.dims.tgt_vocab,
        model.dims.d_model,
        model.dims.hidden,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for (_, tensor) in model.tensors() {
        for &v in tensor {
            buf.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
        }
    }
    buf
}

pub fn model_from_bytes<F: Scalar>(bytes: &[u8]) -> Result<ModelParams<F>, ModelError> {
    if bytes.len() < 4 || &bytes[..4] != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 24 {
        return Err(ModelError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let dim_at = |i: usize| {
        u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize
    };
    let dims = ModelDims {
        src_vocab: dim_at(0),
        tgt_vocab: dim_at(1),
        d_model: dim_at(2),
        hidden: dim_at(3),
    };
    let mut model = ModelParams::<F>::zeros(dims);
    let payload = &bytes[24..];
    if payload.len() != model.param_count() * 4 {
        return Err(ModelError::Truncated);
    }
    let mut chunks = payload.chunks_exact(4);
    for (_, tensor) in model.tensors_mut() {
        for v in tensor.iter_mut() {
            let x = f32::from_le_bytes(chunks.next().expect("sized above").try_into().unwrap());
            *v = F::from_f(x as f64);
        }
    }
    Ok(model)
}

pub fn save_model<F: Scalar, P: AsRef<Path>>(
    model: &ModelParams<F>,
    path: P,
) -> Result<(), ModelError> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model<F: Scalar, P: AsRef<Path>>(path: P) -> Result<ModelParams<F>, ModelError> {
    let bytes = fs::read(path)?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn copy_corpus(n: usize) -> Corpus {
        // Tiny copy task: the target repeats the source line.
        let lines: Vec<String> = (0..n)
            .map(|i| format!("t{} t{} t{}", i % 5, (i + 1) % 5, (i + 2) % 5))
            .collect();
        let refs: Vec<&str> = lines.iter().map(|s| s.as_str()).collect();
        Corpus::from_lines(&refs, &refs, 32).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_initial_params() {
        let corpus = copy_corpus(6);
        let config = TrainingConfig::<f64> {
            learning_rate: 0.0,
            epochs: 1,
            ..TrainingConfig::default()
        };
        let outcome = train(&config, &corpus, None, None).unwrap();
        let dims = outcome.model.dims;
        let initial = ModelParams::<f64>::init(dims, config.seed);
        assert_eq!(outcome.model, initial);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let corpus = copy_corpus(8);
        let config = TrainingConfig::<f64> {
            epochs: 2,
            batch_size: 3,
            seed: 5,
            ..TrainingConfig::default()
        };
        let a = train(&config, &corpus, None, None).unwrap();
        let b = train(&config, &corpus, None, None).unwrap();
        assert_eq!(metrics_to_jsonl(&a.metrics), metrics_to_jsonl(&b.metrics));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn strategies_run_end_to_end() {
        let corpus = copy_corpus(8);
        for strategy in [
            SmoothingStrategy::<f64>::none(),
            SmoothingStrategy::token_uniform(0.1),
            SmoothingStrategy::within_batch(0.01),
            SmoothingStrategy::random_swap(0.01),
        ] {
            let config = TrainingConfig::<f64> {
                strategy,
                epochs: 1,
                batch_size: 4,
                ..TrainingConfig::default()
            };
            let outcome = train(&config, &corpus, None, None).unwrap();
            assert_eq!(outcome.metrics.len(), 1);
            assert!(outcome.metrics[0].train_loss.is_finite());
        }
    }

    #[test]
    fn semantic_strategy_without_map_fails_cleanly() {
        let corpus = copy_corpus(4);
        let config = TrainingConfig::<f64> {
            strategy: SmoothingStrategy::semantic(0.1),
            epochs: 1,
            ..TrainingConfig::default()
        };
        assert!(train(&config, &corpus, None, None).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_stable_after_first_quantization() {
        let corpus = copy_corpus(4);
        let config = TrainingConfig::<f64> {
            epochs: 1,
            ..TrainingConfig::default()
        };
        let outcome = train(&config, &corpus, None, None).unwrap();
        // First write quantizes f64 params to f32; after that, the round
        // trip must be exact.
        let once = model_from_bytes::<f64>(&model_to_bytes(&outcome.model)).unwrap();
        let twice = model_from_bytes::<f64>(&model_to_bytes(&once)).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.dims, outcome.model.dims);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(matches!(
            model_from_bytes::<f64>(b"oops"),
            Err(ModelError::BadMagic)
        ));
        let corpus = copy_corpus(2);
        let config = TrainingConfig::<f64> {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainingConfig::default()
        };
        let outcome = train(&config, &corpus, None, None).unwrap();
        let mut bytes = model_to_bytes(&outcome.model);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(
            model_from_bytes::<f64>(&bytes),
            Err(ModelError::Truncated)
        ));
    }

    #[test]
    fn metrics_jsonl_shape() {
        let metrics = vec![EpochMetrics::<f64> {
            epoch: 1,
            train_loss: 2.5,
            dev_bleu4: 0.125,
        }];
        assert_eq!(
            metrics_to_jsonl(&metrics),
            "{\"epoch\":1,\"train_loss\":2.5,\"dev_bleu4\":0.125}\n"
        );
    }
}
