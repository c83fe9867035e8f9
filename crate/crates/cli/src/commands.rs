//! Single-stage entry points shared by the CLI subcommands and the
//! pipeline runner.

use std::path::Path;

use anyhow::{Context, Result};

use seqsmooth_core::embedding::{fallback_embed, write_embeddings, EmbeddingStore, EmbeddingVector};
use seqsmooth_core::retrieval::{
    build_approx_index, build_index, precompute_related, read_related_jsonl, write_related_jsonl,
    ApproxParams, RetrievalParams,
};
use seqsmooth_core::seq2seq::{
    evaluate, load_model, save_model, train, write_metrics_jsonl, TrainingConfig,
};
use seqsmooth_core::text::{load_corpus, Corpus};
use seqsmooth_core::{DefaultScalar, RelatedMap};

/// ingest: parallel text files -> corpus.bin.
pub fn run_ingest(src: &Path, tgt: &Path, max_vocab: usize, out: &Path) -> Result<Corpus> {
    let corpus = load_corpus(src, tgt, max_vocab).context("loading parallel files")?;
    corpus.save(out).context("writing corpus")?;
    Ok(corpus)
}

/// embed: corpus targets -> SEQE store via the fallback embedder.
pub fn run_embed(corpus_path: &Path, out: &Path, dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let corpus = Corpus::load(corpus_path).context("loading corpus")?;
    let store = embed_corpus(&corpus, dim, seed)?;
    write_embeddings(&store, out).context("writing embeddings")?;
    Ok(store)
}

pub fn embed_corpus(corpus: &Corpus, dim: usize, seed: u64) -> Result<EmbeddingStore> {
    let vectors: Vec<EmbeddingVector<DefaultScalar>> = corpus
        .examples
        .iter()
        .map(|ex| fallback_embed(&ex.target, &corpus.tgt_vocab, dim, seed))
        .collect::<Result<_, _>>()
        .context("embedding targets")?;
    EmbeddingStore::from_vectors(&vectors).context("assembling store")
}

/// neighbors: corpus + embeddings -> related.jsonl.
pub fn run_neighbors(
    corpus_path: &Path,
    emb_path: &Path,
    params: &RetrievalParams,
    approx: bool,
    seed: u64,
    out: &Path,
) -> Result<usize> {
    let corpus = Corpus::load(corpus_path).context("loading corpus")?;
    let store =
        seqsmooth_core::embedding::load_embeddings(emb_path).context("loading embeddings")?;
    let sets = neighbors_for(&corpus, &store, params, approx, seed)?;
    write_related_jsonl(&sets, out).context("writing related sets")?;
    Ok(sets.len())
}

pub fn neighbors_for(
    corpus: &Corpus,
    store: &EmbeddingStore,
    params: &RetrievalParams,
    approx: bool,
    seed: u64,
) -> Result<Vec<seqsmooth_core::RelatedSet>> {
    let index = if approx {
        build_approx_index::<DefaultScalar>(store, ApproxParams::default(), seed)
    } else {
        build_index::<DefaultScalar>(store)
    }
    .context("building index")?;
    precompute_related(corpus, &index, params).context("precomputing related sets")
}

/// Loads dev lines under the training corpus vocabularies.
pub fn load_dev_split(
    corpus: &Corpus,
    dev_src: &Path,
    dev_tgt: &Path,
) -> Result<Corpus> {
    let src_text = std::fs::read_to_string(dev_src).context("reading dev source")?;
    let tgt_text = std::fs::read_to_string(dev_tgt).context("reading dev target")?;
    let src_lines: Vec<&str> = src_text.lines().collect();
    let tgt_lines: Vec<&str> = tgt_text.lines().collect();
    Corpus::with_vocabs(
        &src_lines,
        &tgt_lines,
        corpus.src_vocab.clone(),
        corpus.tgt_vocab.clone(),
    )
    .context("tokenizing dev split")
}

pub struct TrainArtifacts {
    pub dev_bleu4: f64,
    pub final_train_loss: f64,
}

/// train: corpus (+ related sets) -> model.seqm (+ metrics.jsonl).
#[allow(clippy::too_many_arguments)]
pub fn run_train(
    corpus_path: &Path,
    config: &TrainingConfig<DefaultScalar>,
    related_path: Option<&Path>,
    dev: Option<(&Path, &Path)>,
    out: &Path,
    metrics_out: Option<&Path>,
) -> Result<TrainArtifacts> {
    let corpus = Corpus::load(corpus_path).context("loading corpus")?;
    let related: Option<RelatedMap> = match related_path {
        Some(path) => {
            let sets = read_related_jsonl::<DefaultScalar, _>(path)
                .context("loading related sets")?;
            Some(seqsmooth_core::retrieval::into_related_map(sets))
        }
        None => None,
    };
    let dev_corpus = match dev {
        Some((s, t)) => Some(load_dev_split(&corpus, s, t)?),
        None => None,
    };
    let outcome = train(config, &corpus, dev_corpus.as_ref(), related.as_ref())
        .context("training")?;
    save_model(&outcome.model, out).context("writing checkpoint")?;
    if let Some(path) = metrics_out {
        write_metrics_jsonl(&outcome.metrics, path).context("writing metrics")?;
    }
    let last = outcome.metrics.last().expect("at least one epoch");
    Ok(TrainArtifacts {
        dev_bleu4: last.dev_bleu4,
        final_train_loss: last.train_loss,
    })
}

pub struct EvalSummary {
    pub corpus_bleu4: f64,
    pub sentences: usize,
    pub mean_sentence_bleu: f64,
}

/// evaluate: model + corpus -> corpus BLEU4 and per-sentence mean.
pub fn run_evaluate(model_path: &Path, corpus_path: &Path) -> Result<EvalSummary> {
    let model = load_model::<DefaultScalar, _>(model_path).context("loading model")?;
    let corpus = Corpus::load(corpus_path).context("loading corpus")?;
    let report = evaluate(&model, &corpus).context("evaluating")?;
    let mean = report.sentence_bleus.iter().sum::<f64>() / report.sentence_bleus.len() as f64;
    Ok(EvalSummary {
        corpus_bleu4: report.corpus_bleu4,
        sentences: report.sentence_bleus.len(),
        mean_sentence_bleu: mean,
    })
}
