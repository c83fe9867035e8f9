//! Property tests over the core invariants: tokenization round trips,
//! BLEU against a brute-force oracle, exact kNN against a full scan,
//! embedding round trips, and smoothing distribution shape.

use std::collections::HashSet;

use proptest::prelude::*;

use seqsmooth_core::bleu::{brevity_penalty, sentence_bleu, BleuConfig};
use seqsmooth_core::embedding::{cosine_similarity, EmbeddingStore, EmbeddingVector};
use seqsmooth_core::retrieval::build_index;
use seqsmooth_core::smoothing::token_uniform_target;
use seqsmooth_core::text::{detokenize, tokenize, Sequence, Vocabulary};

/// Brute-force sentence BLEU coded independently of the bleu module:
/// n-gram matching by window comparison, geometric mean via product and
/// a fractional power.
fn oracle_sentence_bleu(cand: &[u32], refr: &[u32], max_n: usize, eps: f64) -> f64 {
    let mut product = 1.0f64;
    for n in 1..=max_n {
        let total = cand.len().saturating_sub(n - 1);
        let p = if total == 0 {
            eps
        } else {
            let cand_windows: Vec<&[u32]> = cand.windows(n).collect();
            let ref_windows: Vec<&[u32]> = refr.windows(n).collect();
            let mut clipped = 0usize;
            let mut seen: Vec<&[u32]> = Vec::new();
            for g in &cand_windows {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let in_cand = cand_windows.iter().filter(|x| *x == g).count();
                let in_ref = ref_windows.iter().filter(|x| *x == g).count();
                clipped += in_cand.min(in_ref);
            }
            if clipped == 0 {
                eps / total as f64
            } else {
                clipped as f64 / total as f64
            }
        };
        product *= p;
    }
    let bp = if cand.len() >= refr.len() {
        1.0
    } else {
        (1.0 - refr.len() as f64 / cand.len() as f64).exp()
    };
    bp * product.powf(1.0 / max_n as f64)
}

fn token_seq() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(4u32..7, 1..=8)
}

proptest! {
    #[test]
    fn bleu_matches_oracle_on_random_pairs(cand in token_seq(), refr in token_seq(), max_n in 1usize..=5) {
        let cfg = BleuConfig::<f64>::new(max_n, 0.1).unwrap();
        let got = sentence_bleu(&Sequence::new(cand.clone()), &Sequence::new(refr.clone()), &cfg).unwrap();
        let want = oracle_sentence_bleu(&cand, &refr, max_n, 0.1);
        prop_assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn bleu_self_score_is_one(ids in token_seq()) {
        let max_n = ids.len().min(4);
        let cfg = BleuConfig::<f64>::new(max_n, 0.1).unwrap();
        let s = Sequence::new(ids);
        let score = sentence_bleu(&s, &s, &cfg).unwrap();
        prop_assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_monotone_in_candidate_length(ref_len in 1usize..40, a in 1usize..40, b in 1usize..40) {
        let (lo, hi) = (a.min(b), a.max(b));
        let bp_lo: f64 = brevity_penalty(lo, ref_len);
        let bp_hi: f64 = brevity_penalty(hi, ref_len);
        prop_assert!(bp_lo <= bp_hi);
    }

    #[test]
    fn tokenize_round_trip(words in prop::collection::vec("[a-z]{1,6}", 1..8)) {
        let line = words.join(" ");
        let vocab = Vocabulary::build([line.as_str()], 64);
        let seq = tokenize(&line, &vocab).unwrap();
        prop_assert_eq!(detokenize(&seq, &vocab), line);
    }

    #[test]
    fn embedding_store_round_trip(rows in prop::collection::vec(prop::collection::vec(-100.0f32..100.0, 4), 1..20)) {
        let vectors: Vec<EmbeddingVector<f32>> = rows.into_iter().map(EmbeddingVector::new).collect();
        let store = EmbeddingStore::from_vectors(&vectors).unwrap();
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        prop_assert_eq!(store, back);
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(
        a in prop::collection::vec(-10.0f64..10.0, 6),
        b in prop::collection::vec(-10.0f64..10.0, 6),
        lambda in 0.01f64..50.0,
    ) {
        let va = EmbeddingVector::new(a.clone());
        let vb = EmbeddingVector::new(b);
        prop_assume!(va.norm() > 1e-6 && vb.norm() > 1e-6);
        let ab = cosine_similarity(&va, &vb).unwrap();
        let ba = cosine_similarity(&vb, &va).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let scaled = EmbeddingVector::new(a.iter().map(|x| x * lambda).collect());
        let s = cosine_similarity(&scaled, &vb).unwrap();
        prop_assert!((ab - s).abs() < 1e-12);
    }

    #[test]
    fn exact_knn_equals_full_scan(
        rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 6), 1..120),
        k in 1usize..15,
    ) {
        let vectors: Vec<EmbeddingVector<f32>> = rows.iter().cloned().map(EmbeddingVector::new).collect();
        let store = EmbeddingStore::from_vectors(&vectors).unwrap();
        let index = build_index::<f64>(&store).unwrap();
        let query = EmbeddingVector::new(vec![0.3f64, -0.2, 0.9, 0.1, -0.5, 0.7]);

        let got: Vec<usize> = index
            .knn(&query, k, &HashSet::new())
            .unwrap()
            .into_iter()
            .map(|n| n.index)
            .collect();

        // Full scan oracle.
        let mut scored: Vec<(usize, f64)> = (0..store.count())
            .filter_map(|i| {
                let v = store.vector::<f64>(i);
                cosine_similarity(&query, &v).ok().map(|s| (i, s))
            })
            .collect();
        scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then_with(|| x.0.cmp(&y.0)));
        scored.truncate(k);
        let want: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn token_uniform_argmax_is_true_id(true_id in 0u32..12, alpha in 0.0f64..0.9) {
        let vocab_size = 12usize;
        prop_assume!(alpha < 1.0 - 1.0 / vocab_size as f64);
        let t = token_uniform_target::<f64>(true_id, alpha, vocab_size).unwrap();
        let argmax = t
            .probs()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        prop_assert_eq!(argmax, true_id as usize);
        let sum: f64 = t.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }
}

/// The randomized store-size sweep for exact kNN: sizes up to 5,000.
#[test]
fn exact_knn_equals_full_scan_large_stores() {
    use rand::Rng;
    let mut rng = seqsmooth_core::seeding::rng(1234);
    for _ in 0..4 {
        let count = rng.gen_range(1000..=5000);
        let dim = 12;
        let vectors: Vec<EmbeddingVector<f32>> = (0..count)
            .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
            .collect();
        let store = EmbeddingStore::from_vectors(&vectors).unwrap();
        let index = build_index::<f64>(&store).unwrap();
        let query =
            EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0f64..1.0)).collect());
        let got: Vec<usize> = index
            .knn(&query, 100, &HashSet::new())
            .unwrap()
            .into_iter()
            .map(|n| n.index)
            .collect();
        let mut scored: Vec<(usize, f64)> = (0..store.count())
            .map(|i| {
                let v = store.vector::<f64>(i);
                (i, cosine_similarity(&query, &v).unwrap())
            })
            .collect();
        scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then_with(|| x.0.cmp(&y.0)));
        scored.truncate(100);
        let want: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
        assert_eq!(got, want, "store of {count} vectors diverged from oracle");
    }
}
