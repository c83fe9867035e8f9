//! Pipeline configuration: a flat `key = value` text file mirroring the CLI
//! flags, with flags overriding file values. Unknown keys are rejected so
//! typos surface immediately.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use seqsmooth_core::retrieval::{BleuDirection, RetrievalParams};
use seqsmooth_core::smoothing::{SmoothingStrategy, SwapCount, SwapSource, Variant};
use seqsmooth_core::seq2seq::{ModelShape, TrainingConfig};
use seqsmooth_core::DefaultScalar;

/// Strategy names accepted by `--strategy` / `strategies`.
pub const STRATEGY_NAMES: [&str; 5] = ["none", "token-ls", "batch-ls", "random-swap", "semantic"];

/// Parses one strategy name with its alpha.
pub fn parse_strategy(name: &str, alpha: f64) -> Result<SmoothingStrategy<DefaultScalar>> {
    Ok(match name {
        "none" => SmoothingStrategy::none(),
        "token-ls" => SmoothingStrategy::token_uniform(alpha),
        "batch-ls" => SmoothingStrategy::within_batch(alpha),
        "random-swap" => SmoothingStrategy::random_swap(alpha),
        "semantic" => SmoothingStrategy::semantic(alpha),
        other => bail!("unknown strategy '{other}' (expected one of {STRATEGY_NAMES:?})"),
    })
}

pub fn parse_swap_count(text: &str) -> Result<SwapCount> {
    if text == "auto" {
        Ok(SwapCount::Auto)
    } else {
        Ok(SwapCount::Fixed(
            text.parse().context("swap_count must be 'auto' or an integer")?,
        ))
    }
}

pub fn parse_swap_source(text: &str) -> Result<SwapSource> {
    match text {
        "target" => Ok(SwapSource::TargetTokens),
        "vocab" => Ok(SwapSource::Vocabulary),
        other => bail!("unknown swap source '{other}' (expected 'target' or 'vocab')"),
    }
}

pub fn parse_bleu_direction(text: &str) -> Result<BleuDirection> {
    match text {
        "neighbor-candidate" => Ok(BleuDirection::NeighborAsCandidate),
        "neighbor-reference" => Ok(BleuDirection::NeighborAsReference),
        other => bail!(
            "unknown bleu direction '{other}' (expected 'neighbor-candidate' or 'neighbor-reference')"
        ),
    }
}

fn direction_name(d: BleuDirection) -> &'static str {
    match d {
        BleuDirection::NeighborAsCandidate => "neighbor-candidate",
        BleuDirection::NeighborAsReference => "neighbor-reference",
    }
}

/// Everything the pipeline and ablation runner need. Paths for the derived
/// artifacts live under `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    pub max_vocab: usize,
    pub dim: usize,
    pub k: usize,
    pub k_prime: usize,
    pub bleu_order: usize,
    pub bleu_direction: BleuDirection,
    pub approx: bool,
    pub strategies: Vec<String>,
    pub alphas: Vec<f64>,
    pub swap_count: SwapCount,
    pub swap_source: SwapSource,
    pub token_ls: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub d_model: usize,
    pub hidden: usize,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            src: PathBuf::new(),
            tgt: PathBuf::new(),
            dev_src: None,
            dev_tgt: None,
            max_vocab: 10_000,
            dim: 256,
            k: 100,
            k_prime: 5,
            bleu_order: 4,
            bleu_direction: BleuDirection::default(),
            approx: false,
            strategies: vec!["none".into(), "semantic".into()],
            alphas: vec![0.1],
            swap_count: SwapCount::Auto,
            swap_source: SwapSource::TargetTokens,
            token_ls: None,
            epochs: 10,
            lr: 0.2,
            batch_size: 8,
            clip_norm: 5.0,
            d_model: 16,
            hidden: 32,
            out_dir: PathBuf::from("out"),
            seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<PipelineConfig> {
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        PipelineConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("config line {} is not 'key = value'", lineno + 1))?;
            config
                .set(key.trim(), value.trim())
                .with_context(|| format!("config line {}", lineno + 1))?;
        }
        Ok(config)
    }

    /// Applies one key/value pair (file lines and flag overrides share this).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "src" => self.src = PathBuf::from(value),
            "tgt" => self.tgt = PathBuf::from(value),
            "dev_src" => self.dev_src = Some(PathBuf::from(value)),
            "dev_tgt" => self.dev_tgt = Some(PathBuf::from(value)),
            "max_vocab" => self.max_vocab = value.parse().context("max_vocab")?,
            "dim" => self.dim = value.parse().context("dim")?,
            "k" => self.k = value.parse().context("k")?,
            "k_prime" => self.k_prime = value.parse().context("k_prime")?,
            "bleu_order" => self.bleu_order = value.parse().context("bleu_order")?,
            "bleu_direction" => self.bleu_direction = parse_bleu_direction(value)?,
            "approx" => self.approx = value.parse().context("approx")?,
            "strategies" => {
                self.strategies = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "alphas" => {
                self.alphas = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .context("alphas")?
            }
            "swap_count" => self.swap_count = parse_swap_count(value)?,
            "swap_source" => self.swap_source = parse_swap_source(value)?,
            "token_ls" => self.token_ls = Some(value.parse().context("token_ls")?),
            "epochs" => self.epochs = value.parse().context("epochs")?,
            "lr" => self.lr = value.parse().context("lr")?,
            "batch_size" => self.batch_size = value.parse().context("batch_size")?,
            "clip_norm" => self.clip_norm = value.parse().context("clip_norm")?,
            "d_model" => self.d_model = value.parse().context("d_model")?,
            "hidden" => self.hidden = value.parse().context("hidden")?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = Some(value.parse().context("seed")?),
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    /// Renders the config back to its file representation.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("src", self.src.display().to_string());
        kv.insert("tgt", self.tgt.display().to_string());
        if let Some(p) = &self.dev_src {
            kv.insert("dev_src", p.display().to_string());
        }
        if let Some(p) = &self.dev_tgt {
            kv.insert("dev_tgt", p.display().to_string());
        }
        kv.insert("max_vocab", self.max_vocab.to_string());
        kv.insert("dim", self.dim.to_string());
        kv.insert("k", self.k.to_string());
        kv.insert("k_prime", self.k_prime.to_string());
        kv.insert("bleu_order", self.bleu_order.to_string());
        kv.insert("bleu_direction", direction_name(self.bleu_direction).into());
        kv.insert("approx", self.approx.to_string());
        kv.insert("strategies", self.strategies.join(","));
        kv.insert(
            "alphas",
            self.alphas
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert(
            "swap_count",
            match self.swap_count {
                SwapCount::Auto => "auto".into(),
                SwapCount::Fixed(n) => n.to_string(),
            },
        );
        kv.insert(
            "swap_source",
            match self.swap_source {
                SwapSource::TargetTokens => "target".into(),
                SwapSource::Vocabulary => "vocab".into(),
            },
        );
        if let Some(a) = self.token_ls {
            kv.insert("token_ls", a.to_string());
        }
        kv.insert("epochs", self.epochs.to_string());
        kv.insert("lr", self.lr.to_string());
        kv.insert("batch_size", self.batch_size.to_string());
        kv.insert("clip_norm", self.clip_norm.to_string());
        kv.insert("d_model", self.d_model.to_string());
        kv.insert("hidden", self.hidden.to_string());
        kv.insert("out_dir", self.out_dir.display().to_string());
        if let Some(s) = self.seed {
            kv.insert("seed", s.to_string());
        }
        for (k, v) in kv {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }

    /// Rejects inconsistent configs before any stage runs.
    pub fn validate(&self) -> Result<()> {
        if self.src.as_os_str().is_empty() || self.tgt.as_os_str().is_empty() {
            bail!("src and tgt must be set");
        }
        if self.k_prime > self.k {
            bail!("k_prime ({}) must not exceed k ({})", self.k_prime, self.k);
        }
        if !(3..=5).contains(&self.bleu_order) {
            bail!("bleu_order must be 3, 4, or 5");
        }
        if self.dev_src.is_some() != self.dev_tgt.is_some() {
            bail!("dev_src and dev_tgt must be given together");
        }
        if self.strategies.is_empty() {
            bail!("at least one strategy is required");
        }
        for s in &self.strategies {
            if !STRATEGY_NAMES.contains(&s.as_str()) {
                bail!("unknown strategy '{s}' (expected one of {STRATEGY_NAMES:?})");
            }
        }
        if self.alphas.is_empty() {
            bail!("at least one alpha is required");
        }
        if self.seed.is_none() {
            bail!("a seed is required (pass --seed or set 'seed' in the config)");
        }
        Ok(())
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        RetrievalParams {
            k: self.k,
            k_prime: self.k_prime,
            bleu_order: self.bleu_order,
            direction: self.bleu_direction,
        }
    }

    /// Training config for one (strategy, alpha) cell.
    pub fn training_config(
        &self,
        strategy_name: &str,
        alpha: f64,
    ) -> Result<TrainingConfig<DefaultScalar>> {
        let mut strategy = parse_strategy(strategy_name, alpha)?;
        if let Variant::RandomSwap {
            swap_count,
            source,
            ..
        } = &mut strategy.variant
        {
            *swap_count = self.swap_count;
            *source = self.swap_source;
        }
        Ok(TrainingConfig {
            strategy,
            token_ls: self.token_ls,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed.expect("validated seed"),
            clip_norm: self.clip_norm,
            shape: ModelShape {
                d_model: self.d_model,
                hidden: self.hidden,
            },
        })
    }
}
