//! seqsmooth: semantic label smoothing experiments on parallel corpora.
//!
//! Subcommands: ingest, embed, neighbors, train, evaluate, pipeline, ablate.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use seqsmooth::ablate::{run_ablation, AblationAxis};
use seqsmooth::commands;
use seqsmooth::config::{
    parse_bleu_direction, parse_strategy, parse_swap_count, parse_swap_source, PipelineConfig,
};
use seqsmooth::pipeline::run_pipeline;
use seqsmooth_core::retrieval::RetrievalParams;
use seqsmooth_core::seq2seq::{ModelShape, TrainingConfig};
use seqsmooth_core::smoothing::Variant;
use seqsmooth_core::DefaultScalar;

#[derive(Parser)]
#[command(name = "seqsmooth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load parallel text files into a binary corpus.
    Ingest {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        max_vocab: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed corpus targets with the built-in fallback embedder.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Precompute the related sequences of every example.
    Neighbors {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 5)]
        k_prime: usize,
        #[arg(long, default_value_t = 4)]
        bleu_order: usize,
        #[arg(long, default_value = "neighbor-candidate")]
        bleu_direction: String,
        /// Use the approximate (inverted-file) index instead of the exact scan.
        #[arg(long)]
        approx: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model with one smoothing strategy.
    Train(TrainArgs),
    /// Score a trained model on a corpus with BLEU4.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Run ingest -> embed -> neighbors -> train -> evaluate -> report.
    Pipeline(PipelineArgs),
    /// Sweep one retrieval knob and emit a comparison table.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "none")]
    strategy: String,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Related-set file; required for --strategy semantic.
    #[arg(long)]
    related: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, default_value = "auto")]
    swap_count: String,
    #[arg(long, default_value = "target")]
    swap_source: String,
    /// Token-level smoothing alpha composed on top of the strategy.
    #[arg(long)]
    token_ls: Option<f64>,
    #[arg(long, default_value_t = 16)]
    d_model: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long)]
    dev_src: Option<PathBuf>,
    #[arg(long)]
    dev_tgt: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Flat key = value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    dev_src: Option<PathBuf>,
    #[arg(long)]
    dev_tgt: Option<PathBuf>,
    #[arg(long)]
    max_vocab: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_prime: Option<usize>,
    #[arg(long)]
    bleu_order: Option<usize>,
    #[arg(long)]
    bleu_direction: Option<String>,
    #[arg(long)]
    approx: bool,
    /// Comma-separated strategy list.
    #[arg(long)]
    strategies: Option<String>,
    /// Comma-separated alpha list.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    swap_count: Option<String>,
    #[arg(long)]
    swap_source: Option<String>,
    #[arg(long)]
    token_ls: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Swept knob: bleu-order or k-prime.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values (defaults: 3,4,5 or 3,5,10).
    #[arg(long)]
    values: Option<String>,
}

fn merged_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let mut config = match &args.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &args.src {
        config.src = v.clone();
    }
    if let Some(v) = &args.tgt {
        config.tgt = v.clone();
    }
    if let Some(v) = &args.dev_src {
        config.dev_src = Some(v.clone());
    }
    if let Some(v) = &args.dev_tgt {
        config.dev_tgt = Some(v.clone());
    }
    if let Some(v) = args.max_vocab {
        config.max_vocab = v;
    }
    if let Some(v) = args.dim {
        config.dim = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.k_prime {
        config.k_prime = v;
    }
    if let Some(v) = args.bleu_order {
        config.bleu_order = v;
    }
    if let Some(v) = &args.bleu_direction {
        config.bleu_direction = parse_bleu_direction(v)?;
    }
    if args.approx {
        config.approx = true;
    }
    if let Some(v) = &args.strategies {
        config.strategies = v.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(v) = &args.alphas {
        config.alphas = v
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .context("parsing --alphas")?;
    }
    if let Some(v) = &args.swap_count {
        config.swap_count = parse_swap_count(v)?;
    }
    if let Some(v) = &args.swap_source {
        config.swap_source = parse_swap_source(v)?;
    }
    if let Some(v) = args.token_ls {
        config.token_ls = Some(v);
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.clip_norm {
        config.clip_norm = v;
    }
    if let Some(v) = args.d_model {
        config.d_model = v;
    }
    if let Some(v) = args.hidden {
        config.hidden = v;
    }
    if let Some(v) = &args.out_dir {
        config.out_dir = v.clone();
    }
    if let Some(v) = args.seed {
        config.seed = Some(v);
    }
    Ok(config)
}

fn train_config_from(args: &TrainArgs) -> Result<TrainingConfig<DefaultScalar>> {
    let mut strategy = parse_strategy(&args.strategy, args.alpha)?;
    if let Variant::RandomSwap {
        swap_count, source, ..
    } = &mut strategy.variant
    {
        *swap_count = parse_swap_count(&args.swap_count)?;
        *source = parse_swap_source(&args.swap_source)?;
    }
    Ok(TrainingConfig {
        strategy,
        token_ls: args.token_ls,
        learning_rate: args.lr,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        clip_norm: args.clip_norm,
        shape: ModelShape {
            d_model: args.d_model,
            hidden: args.hidden,
        },
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            src,
            tgt,
            max_vocab,
            out,
        } => {
            let corpus = commands::run_ingest(&src, &tgt, max_vocab, &out)?;
            println!(
                "ingested {} examples (src vocab {}, tgt vocab {}) -> {}",
                corpus.len(),
                corpus.src_vocab.size(),
                corpus.tgt_vocab.size(),
                out.display()
            );
        }
        Command::Embed {
            corpus,
            out,
            dim,
            seed,
        } => {
            let store = commands::run_embed(&corpus, &out, dim, seed)?;
            println!(
                "embedded {} targets at dim {} -> {}",
                store.count(),
                store.dim(),
                out.display()
            );
        }
        Command::Neighbors {
            corpus,
            emb,
            k,
            k_prime,
            bleu_order,
            bleu_direction,
            approx,
            seed,
            out,
        } => {
            let params = RetrievalParams {
                k,
                k_prime,
                bleu_order,
                direction: parse_bleu_direction(&bleu_direction)?,
            };
            let count = commands::run_neighbors(&corpus, &emb, &params, approx, seed, &out)?;
            println!("wrote {count} related sets -> {}", out.display());
        }
        Command::Train(args) => {
            let config = train_config_from(&args)?;
            let dev = match (&args.dev_src, &args.dev_tgt) {
                (Some(s), Some(t)) => Some((s.as_path(), t.as_path())),
                (None, None) => None,
                _ => anyhow::bail!("--dev-src and --dev-tgt must be given together"),
            };
            let artifacts = commands::run_train(
                &args.corpus,
                &config,
                args.related.as_deref(),
                dev,
                &args.out,
                args.metrics.as_deref(),
            )?;
            println!(
                "trained {} (alpha {}): final train loss {:.4}, dev BLEU4 {:.4} -> {}",
                args.strategy,
                args.alpha,
                artifacts.final_train_loss,
                artifacts.dev_bleu4,
                args.out.display()
            );
        }
        Command::Evaluate { model, corpus } => {
            let summary = commands::run_evaluate(&model, &corpus)?;
            println!(
                "corpus BLEU4 {:.4} over {} sentences (mean sentence BLEU4 {:.4})",
                summary.corpus_bleu4, summary.sentences, summary.mean_sentence_bleu
            );
        }
        Command::Pipeline(args) => {
            let config = merged_config(&args)?;
            let report = run_pipeline(&config)?;
            print!("{}", report.table);
            println!(
                "report: {} and {}",
                report.report_txt.display(),
                report.report_jsonl.display()
            );
        }
        Command::Ablate(args) => {
            let config = merged_config(&args.pipeline)?;
            let axis = AblationAxis::parse(&args.axis)?;
            let values = match &args.values {
                Some(text) => Some(
                    text.split(',')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .context("parsing --values")?,
                ),
                None => None,
            };
            let report = run_ablation(&config, axis, values)?;
            print!("{}", report.table);
            println!(
                "report: {} and {}",
                report.report_txt.display(),
                report.report_jsonl.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
