//! Pipeline orchestration: ingest -> embed -> neighbors -> train ->
//! evaluate -> report. Each stage records a content-hash stamp of its
//! inputs and parameters; a stage is skipped when its stamp matches and its
//! outputs exist, so reruns with unchanged inputs are no-ops and training-
//! only changes never re-run the neighbors stage.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands;
use crate::config::PipelineConfig;
use seqsmooth_core::seeding;

/// One trained (strategy, alpha) cell.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CellResult {
    pub strategy: String,
    pub alpha: f64,
    pub dev_bleu4: f64,
    pub final_train_loss: f64,
    pub model: PathBuf,
}

/// Everything the pipeline produced, with the rendered report.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub cells: Vec<CellResult>,
    /// Best alpha per strategy, in config order.
    pub rows: Vec<CellResult>,
    pub table: String,
    pub report_txt: PathBuf,
    pub report_jsonl: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").expect("string write");
    }
    out
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Stamp {
    inputs: Vec<(String, String)>,
    params: String,
}

/// Runs `build` unless the recorded stamp matches the current inputs and
/// every output already exists. An unreadable stamp forces a rerun.
pub(crate) fn stage<F>(
    stamps_dir: &Path,
    name: &str,
    inputs: &[&Path],
    params: String,
    outputs: &[&Path],
    build: F,
) -> Result<bool>
where
    F: FnOnce() -> Result<()>,
{
    let mut input_hashes = Vec::with_capacity(inputs.len());
    for path in inputs {
        input_hashes.push((path.display().to_string(), hash_file(path)?));
    }
    let current = Stamp {
        inputs: input_hashes,
        params,
    };
    let stamp_path = stamps_dir.join(format!("{name}.json"));
    let cached = fs::read_to_string(&stamp_path)
        .ok()
        .and_then(|text| serde_json::from_str::<Stamp>(&text).ok());
    let outputs_exist = outputs.iter().all(|p| p.exists());
    if cached.as_ref() == Some(&current) && outputs_exist {
        return Ok(false);
    }
    build().with_context(|| format!("stage {name}"))?;
    fs::write(&stamp_path, serde_json::to_string_pretty(&current)?)
        .with_context(|| format!("writing stamp for stage {name}"))?;
    Ok(true)
}

pub struct ArtifactPaths {
    pub corpus: PathBuf,
    pub dev_corpus: Option<PathBuf>,
    pub embeddings: PathBuf,
    pub related: PathBuf,
    pub models_dir: PathBuf,
    pub metrics_dir: PathBuf,
    pub cells_dir: PathBuf,
    pub stamps_dir: PathBuf,
}

pub fn artifact_paths(config: &PipelineConfig) -> ArtifactPaths {
    let out = &config.out_dir;
    ArtifactPaths {
        corpus: out.join("corpus.bin"),
        dev_corpus: config.dev_src.as_ref().map(|_| out.join("dev_corpus.bin")),
        embeddings: out.join("emb.seqe"),
        related: out.join("related.jsonl"),
        models_dir: out.join("models"),
        metrics_dir: out.join("metrics"),
        cells_dir: out.join("cells"),
        stamps_dir: out.join("stamps"),
    }
}

fn ensure_dirs(paths: &ArtifactPaths) -> Result<()> {
    for dir in [
        &paths.models_dir,
        &paths.metrics_dir,
        &paths.cells_dir,
        &paths.stamps_dir,
    ] {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn cell_name(strategy: &str, alpha: f64) -> String {
    format!("{strategy}-a{alpha}")
}

/// Runs ingest and, when dev files are configured, writes the dev corpus
/// tokenized under the training vocabularies.
fn ingest_stage(config: &PipelineConfig, paths: &ArtifactPaths) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&config.src, &config.tgt];
    if let (Some(ds), Some(dt)) = (&config.dev_src, &config.dev_tgt) {
        inputs.push(ds);
        inputs.push(dt);
    }
    let mut outputs: Vec<&Path> = vec![&paths.corpus];
    if let Some(dev) = &paths.dev_corpus {
        outputs.push(dev);
    }
    stage(
        &paths.stamps_dir,
        "ingest",
        &inputs,
        format!("max_vocab={}", config.max_vocab),
        &outputs,
        || {
            let corpus =
                commands::run_ingest(&config.src, &config.tgt, config.max_vocab, &paths.corpus)?;
            if let (Some(ds), Some(dt), Some(dev_path)) =
                (&config.dev_src, &config.dev_tgt, &paths.dev_corpus)
            {
                let dev = commands::load_dev_split(&corpus, ds, dt)?;
                dev.save(dev_path).context("writing dev corpus")?;
            }
            Ok(())
        },
    )?;
    Ok(())
}

/// Ingest and embed stages; shared by the pipeline and the ablation
/// runner. Returns the artifact paths.
pub fn run_front_stages(config: &PipelineConfig) -> Result<ArtifactPaths> {
    let seed = config.seed.expect("validated seed");
    let paths = artifact_paths(config);
    ensure_dirs(&paths)?;

    ingest_stage(config, &paths)?;

    let embed_seed = seeding::mix(seed, &[0xe3bed]);
    stage(
        &paths.stamps_dir,
        "embed",
        &[&paths.corpus],
        format!("dim={} seed={embed_seed}", config.dim),
        &[&paths.embeddings],
        || {
            commands::run_embed(&paths.corpus, &paths.embeddings, config.dim, embed_seed)?;
            Ok(())
        },
    )?;
    Ok(paths)
}

/// Runs the full pipeline; every stage is cached by content hash.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let seed = config.seed.expect("validated seed");
    let paths = run_front_stages(config)?;

    let params = config.retrieval_params();
    stage(
        &paths.stamps_dir,
        "neighbors",
        &[&paths.corpus, &paths.embeddings],
        format!(
            "k={} k_prime={} bleu_order={} direction={:?} approx={} seed={seed}",
            params.k, params.k_prime, params.bleu_order, params.direction, config.approx
        ),
        &[&paths.related],
        || {
            commands::run_neighbors(
                &paths.corpus,
                &paths.embeddings,
                &params,
                config.approx,
                seed,
                &paths.related,
            )?;
            Ok(())
        },
    )?;

    let eval_corpus = paths.dev_corpus.as_ref().unwrap_or(&paths.corpus);
    let mut cells = Vec::new();
    for strategy in &config.strategies {
        for &alpha in &config.alphas {
            let cell = train_and_eval_cell(config, &paths, strategy, alpha, eval_corpus)?;
            cells.push(cell);
        }
    }

    let report = render_report(config, &cells)?;
    Ok(report)
}

/// Trains one (strategy, alpha) cell and evaluates its checkpoint, both
/// behind content-hash stamps.
pub fn train_and_eval_cell(
    config: &PipelineConfig,
    paths: &ArtifactPaths,
    strategy: &str,
    alpha: f64,
    eval_corpus: &Path,
) -> Result<CellResult> {
    let name = cell_name(strategy, alpha);
    let model_path = paths.models_dir.join(format!("{name}.seqm"));
    let metrics_path = paths.metrics_dir.join(format!("{name}.jsonl"));
    let cell_path = paths.cells_dir.join(format!("{name}.json"));

    let needs_related = strategy == "semantic";
    let train_config = config.training_config(strategy, alpha)?;
    let mut inputs: Vec<&Path> = vec![&paths.corpus];
    if needs_related {
        inputs.push(&paths.related);
    }
    if let Some(dev) = &paths.dev_corpus {
        inputs.push(dev);
    }
    let params_desc = format!(
        "strategy={strategy} alpha={alpha} epochs={} lr={} batch={} clip={} d={} h={} seed={} token_ls={:?} swap={:?}/{:?} eval={}",
        config.epochs,
        config.lr,
        config.batch_size,
        config.clip_norm,
        config.d_model,
        config.hidden,
        config.seed.expect("validated seed"),
        config.token_ls,
        config.swap_count,
        config.swap_source,
        eval_corpus.display(),
    );
    stage(
        &paths.stamps_dir,
        &format!("train-{name}"),
        &inputs,
        params_desc,
        &[&model_path, &metrics_path, &cell_path],
        || {
            let corpus = seqsmooth_core::text::Corpus::load(&paths.corpus)?;
            let related = if needs_related {
                let sets = seqsmooth_core::retrieval::read_related_jsonl::<f64, _>(&paths.related)?;
                Some(seqsmooth_core::retrieval::into_related_map(sets))
            } else {
                None
            };
            let dev = match &paths.dev_corpus {
                Some(p) => Some(seqsmooth_core::text::Corpus::load(p)?),
                None => None,
            };
            let outcome =
                seqsmooth_core::seq2seq::train(&train_config, &corpus, dev.as_ref(), related.as_ref())?;
            seqsmooth_core::seq2seq::save_model(&outcome.model, &model_path)?;
            seqsmooth_core::seq2seq::write_metrics_jsonl(&outcome.metrics, &metrics_path)?;

            // The reported value comes from evaluating the checkpoint, so
            // `seqsmooth evaluate` on the cell model reproduces it exactly.
            let summary = commands::run_evaluate(&model_path, eval_corpus)?;
            let final_train_loss = outcome.metrics.last().expect("epochs >= 1").train_loss;
            let cell = CellResult {
                strategy: strategy.to_string(),
                alpha,
                dev_bleu4: summary.corpus_bleu4,
                final_train_loss,
                model: model_path.clone(),
            };
            fs::write(&cell_path, serde_json::to_string_pretty(&cell)?)?;
            Ok(())
        },
    )?;
    let text = fs::read_to_string(&cell_path)
        .with_context(|| format!("reading cell result {}", cell_path.display()))?;
    serde_json::from_str(&text).context("parsing cell result")
}

/// Renders the per-strategy table (best alpha per strategy, mirroring the
/// usual best-of-sweep reporting) and the machine-readable cell list.
fn render_report(config: &PipelineConfig, cells: &[CellResult]) -> Result<PipelineReport> {
    let mut rows = Vec::new();
    for strategy in &config.strategies {
        let best = cells
            .iter()
            .filter(|c| &c.strategy == strategy)
            .max_by(|a, b| a.dev_bleu4.partial_cmp(&b.dev_bleu4).expect("finite bleu"));
        if let Some(best) = best {
            rows.push(best.clone());
        }
    }

    let mut table = String::new();
    writeln!(table, "{:<14} {:>10} {:>12}", "strategy", "alpha", "dev BLEU4").expect("write");
    writeln!(table, "{}", "-".repeat(38)).expect("write");
    for row in &rows {
        let alpha = if row.strategy == "none" {
            "-".to_string()
        } else {
            format!("{}", row.alpha)
        };
        writeln!(
            table,
            "{:<14} {:>10} {:>12.4}",
            row.strategy, alpha, row.dev_bleu4
        )
        .expect("write");
    }

    let report_txt = config.out_dir.join("report.txt");
    let report_jsonl = config.out_dir.join("report.jsonl");
    fs::write(&report_txt, &table).context("writing report.txt")?;
    let mut jsonl = String::new();
    for cell in cells {
        jsonl.push_str(&serde_json::to_string(cell)?);
        jsonl.push('\n');
    }
    fs::write(&report_jsonl, jsonl).context("writing report.jsonl")?;

    Ok(PipelineReport {
        cells: cells.to_vec(),
        rows,
        table,
        report_txt,
        report_jsonl,
    })
}
