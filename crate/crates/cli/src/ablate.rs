//! Ablation runner: repeats neighbors -> train -> evaluate while sweeping
//! one retrieval knob (the rerank BLEU order, or the number of related
//! sequences k'), and emits a comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::commands;
use crate::config::PipelineConfig;
use crate::pipeline::{artifact_paths, run_front_stages, stage, train_and_eval_cell};

/// The swept knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    BleuOrder,
    KPrime,
}

impl AblationAxis {
    pub fn parse(text: &str) -> Result<AblationAxis> {
        match text {
            "bleu-order" => Ok(AblationAxis::BleuOrder),
            "k-prime" => Ok(AblationAxis::KPrime),
            other => bail!("unknown ablation axis '{other}' (expected 'bleu-order' or 'k-prime')"),
        }
    }

    pub fn default_values(&self) -> Vec<usize> {
        match self {
            AblationAxis::BleuOrder => vec![3, 4, 5],
            AblationAxis::KPrime => vec![3, 5, 10],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::BleuOrder => "bleu-order",
            AblationAxis::KPrime => "k-prime",
        }
    }

    fn label(&self, value: usize) -> String {
        match self {
            AblationAxis::BleuOrder => format!("semantic-bleu{value}"),
            AblationAxis::KPrime => format!("k-prime={value}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub value: usize,
    pub alpha: f64,
    pub dev_bleu4: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub axis_name: String,
    pub rows: Vec<AblationRow>,
    pub table: String,
    pub report_txt: PathBuf,
    pub report_jsonl: PathBuf,
}

/// Runs the semantic strategy once per axis value. The ingest and embed
/// stages are shared across cells; each cell gets its own related file,
/// model, and stamps under `out_dir/ablate-<value>/`.
pub fn run_ablation(
    config: &PipelineConfig,
    axis: AblationAxis,
    values: Option<Vec<usize>>,
) -> Result<AblationReport> {
    config.validate()?;
    let values = values.unwrap_or_else(|| axis.default_values());
    if values.is_empty() {
        bail!("ablation axis needs at least one value");
    }
    let seed = config.seed.expect("validated seed");
    let alpha = config.alphas[0];

    let parent = run_front_stages(config)?;

    let mut rows = Vec::new();
    for &value in &values {
        let mut cell_config = config.clone();
        match axis {
            AblationAxis::BleuOrder => {
                if !(3..=5).contains(&value) {
                    bail!("bleu-order values must be 3, 4, or 5 (got {value})");
                }
                cell_config.bleu_order = value;
            }
            AblationAxis::KPrime => {
                if value == 0 || value > cell_config.k {
                    bail!("k' must be in 1..=k ({}), got {value}", cell_config.k);
                }
                cell_config.k_prime = value;
            }
        }
        cell_config.strategies = vec!["semantic".into()];
        cell_config.alphas = vec![alpha];
        let suffix = match axis {
            AblationAxis::BleuOrder => format!("bleu{value}"),
            AblationAxis::KPrime => format!("kp{value}"),
        };
        cell_config.out_dir = config.out_dir.join(format!("ablate-{suffix}"));

        let mut cell_paths = artifact_paths(&cell_config);
        cell_paths.corpus = parent.corpus.clone();
        cell_paths.dev_corpus = parent.dev_corpus.clone();
        cell_paths.embeddings = parent.embeddings.clone();
        for dir in [
            &cell_paths.models_dir,
            &cell_paths.metrics_dir,
            &cell_paths.cells_dir,
            &cell_paths.stamps_dir,
        ] {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }

        let params = cell_config.retrieval_params();
        stage(
            &cell_paths.stamps_dir,
            "neighbors",
            &[&cell_paths.corpus, &cell_paths.embeddings],
            format!(
                "k={} k_prime={} bleu_order={} direction={:?} approx={} seed={seed}",
                params.k, params.k_prime, params.bleu_order, params.direction, config.approx
            ),
            &[&cell_paths.related],
            || {
                commands::run_neighbors(
                    &cell_paths.corpus,
                    &cell_paths.embeddings,
                    &params,
                    config.approx,
                    seed,
                    &cell_paths.related,
                )?;
                Ok(())
            },
        )?;

        let eval_corpus = cell_paths
            .dev_corpus
            .clone()
            .unwrap_or_else(|| cell_paths.corpus.clone());
        let cell = train_and_eval_cell(&cell_config, &cell_paths, "semantic", alpha, &eval_corpus)?;
        rows.push(AblationRow {
            label: axis.label(value),
            value,
            alpha,
            dev_bleu4: cell.dev_bleu4,
        });
    }

    let axis_name = axis.name().to_string();
    let mut table = String::new();
    writeln!(
        table,
        "{:<18} {:>10} {:>12}",
        axis_name.as_str(),
        "alpha",
        "dev BLEU4"
    )
    .expect("write");
    writeln!(table, "{}", "-".repeat(42)).expect("write");
    for row in &rows {
        writeln!(
            table,
            "{:<18} {:>10} {:>12.4}",
            row.label, row.alpha, row.dev_bleu4
        )
        .expect("write");
    }
    let report_txt = config.out_dir.join(format!("ablation-{axis_name}.txt"));
    let report_jsonl = config.out_dir.join(format!("ablation-{axis_name}.jsonl"));
    fs::write(&report_txt, &table).context("writing ablation table")?;
    let mut jsonl = String::new();
    for row in &rows {
        jsonl.push_str(&serde_json::to_string(row)?);
        jsonl.push('\n');
    }
    fs::write(&report_jsonl, jsonl).context("writing ablation jsonl")?;

    Ok(AblationReport {
        axis_name,
        rows,
        table,
        report_txt,
        report_jsonl,
    })
}
