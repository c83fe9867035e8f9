//! Fixed-dimension sentence embeddings. Vectors either come from an external
//! encoder through the SEQE binary format, or from the built-in fallback
//! embedder (a seeded hash of token unigrams and bigrams) so the whole
//! pipeline runs without any pretrained model.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::seeding::splitmix64;
use crate::text::{Sequence, Vocabulary};

const STORE_MAGIC: &[u8; 4] = b"SEQE";
const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad embedding file header")]
    FormatError,
    #[error("embedding file truncated")]
    TruncatedFile,
    #[error("non-finite entry in vector {0}")]
    CorruptVector(usize),
    #[error("cannot embed an empty sequence")]
    EmptySequence,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero-norm vector has no direction")]
    ZeroNorm,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A dense real vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<F: Scalar> {
    pub values: Vec<F>,
}

impl<F: Scalar> EmbeddingVector<F> {
    pub fn new(values: Vec<F>) -> EmbeddingVector<F> {
        EmbeddingVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> F {
        self.values
            .iter()
            .fold(F::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }
}

/// Cosine similarity dot(a,b)/(|a||b|).
pub fn cosine_similarity<F: Scalar>(
    a: &EmbeddingVector<F>,
    b: &EmbeddingVector<F>,
) -> Result<F, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == F::zero() || nb == F::zero() {
        return Err(EmbeddingError::ZeroNorm);
    }
    let mut dot = F::zero();
    for (&x, &y) in a.values.iter().zip(b.values.iter()) {
        dot += x * y;
    }
    Ok(dot / (na * nb))
}

/// In-memory image of a SEQE file: `count` rows of `dim` little-endian
/// f32 values, indexed by corpus index. Rows are kept as f32 so that a
/// write/load round trip is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> EmbeddingStore {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingStore {
            dim,
            data: Vec::new(),
        }
    }

    /// Rounds a set of vectors to f32 rows. All vectors must share one
    /// dimension.
    pub fn from_vectors<F: Scalar>(
        vectors: &[EmbeddingVector<F>],
    ) -> Result<EmbeddingStore, EmbeddingError> {
        let dim = vectors.first().map(|v| v.dim()).unwrap_or(0);
        if dim == 0 {
            return Err(EmbeddingError::FormatError);
        }
        let mut store = EmbeddingStore::new(dim);
        for v in vectors {
            if v.dim() != dim {
                return Err(EmbeddingError::DimMismatch {
                    left: dim,
                    right: v.dim(),
                });
            }
            store
                .data
                .extend(v.values.iter().map(|&x| x.to_f32().unwrap_or(f32::NAN)));
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    /// Widens one row into the requested scalar type (exact for f32 and f64).
    pub fn vector<F: Scalar>(&self, index: usize) -> EmbeddingVector<F> {
        EmbeddingVector::new(self.row(index).iter().map(|&x| F::from_f(x as f64)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        buf.extend_from_slice(STORE_MAGIC);
        buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.count() as u64).to_le_bytes());
        for &x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<EmbeddingStore, EmbeddingError> {
        if bytes.len() < HEADER_LEN {
            return Err(if bytes.len() >= 4 && &bytes[..4] == STORE_MAGIC {
                EmbeddingError::TruncatedFile
            } else {
                EmbeddingError::FormatError
            });
        }
        if &bytes[..4] != STORE_MAGIC {
            return Err(EmbeddingError::FormatError);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(EmbeddingError::FormatError);
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(EmbeddingError::FormatError);
        }
        let expected = HEADER_LEN + dim * count * 4;
        if bytes.len() < expected {
            return Err(EmbeddingError::TruncatedFile);
        }
        if bytes.len() > expected {
            return Err(EmbeddingError::FormatError);
        }
        let mut data = Vec::with_capacity(dim * count);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            if !x.is_finite() {
                return Err(EmbeddingError::CorruptVector(i / dim));
            }
            data.push(x);
        }
        Ok(EmbeddingStore { dim, data })
    }
}

/// Writes a store in the SEQE format.
pub fn write_embeddings<P: AsRef<Path>>(
    store: &EmbeddingStore,
    path: P,
) -> Result<(), EmbeddingError> {
    fs::write(path, store.to_bytes())?;
    Ok(())
}

/// Loads a SEQE file produced by [`write_embeddings`] or any external
/// encoder emitting the same layout.
pub fn load_embeddings<P: AsRef<Path>>(path: P) -> Result<EmbeddingStore, EmbeddingError> {
    let bytes = fs::read(path)?;
    EmbeddingStore::from_bytes(&bytes)
}

/// Deterministic bag-of-hashed-n-grams embedding: each token unigram and
/// adjacent bigram is hashed (with the seed) to a coordinate and a sign,
/// accumulated, and the result is L2-normalized. Token strings are hashed
/// rather than ids so the same surface text embeds identically under any
/// vocabulary.
pub fn fallback_embed<F: Scalar>(
    seq: &Sequence,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingVector<F>, EmbeddingError> {
    assert!(dim >= 8, "fallback embedding dimension must be at least 8");
    if seq.is_empty() {
        return Err(EmbeddingError::EmptySequence);
    }
    let token = |id| vocab.token(id).unwrap_or("<unk>");
    // A seed retry only fires if every accumulated n-gram cancels exactly.
    for attempt in 0..8u64 {
        let round_seed = seed.wrapping_add(attempt);
        let mut acc = vec![F::zero(); dim];
        for &id in seq.ids() {
            bump(&mut acc, hash_ngram(round_seed, &[token(id)]));
        }
        for pair in seq.ids().windows(2) {
            bump(&mut acc, hash_ngram(round_seed, &[token(pair[0]), token(pair[1])]));
        }
        let norm = acc.iter().fold(F::zero(), |s, &v| s + v * v).sqrt();
        if norm > F::zero() {
            for v in acc.iter_mut() {
                *v = *v / norm;
            }
            return Ok(EmbeddingVector::new(acc));
        }
    }
    Err(EmbeddingError::ZeroNorm)
}

fn bump<F: Scalar>(acc: &mut [F], h: u64) {
    let coord = ((h >> 1) % acc.len() as u64) as usize;
    if h & 1 == 0 {
        acc[coord] += F::one();
    } else {
        acc[coord] -= F::one();
    }
}

/// FNV-1a over the n-gram parts (order-tagged), finalized with splitmix64.
fn hash_ngram(seed: u64, parts: &[&str]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    h = fnv_step(h, &[parts.len() as u8]);
    for part in parts {
        h = fnv_step(h, part.as_bytes());
        h = fnv_step(h, &[0x1f]);
    }
    splitmix64(h)
}

fn fnv_step(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokenize, Vocabulary};

    fn vocab() -> Vocabulary {
        Vocabulary::build(["red green blue cyan violet amber teal rose"], 32)
    }

    fn embed(text: &str, seed: u64) -> EmbeddingVector<f64> {
        let v = vocab();
        let seq = tokenize(text, &v).unwrap();
        fallback_embed(&seq, &v, 64, seed).unwrap()
    }

    #[test]
    fn fallback_embed_is_deterministic() {
        assert_eq!(embed("red green blue", 17), embed("red green blue", 17));
    }

    #[test]
    fn fallback_embed_is_unit_norm() {
        let v = embed("red green blue cyan", 17);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fallback_embed_rejects_empty() {
        let v = vocab();
        let empty = Sequence::new(vec![]);
        assert!(matches!(
            fallback_embed::<f64>(&empty, &v, 64, 17),
            Err(EmbeddingError::EmptySequence)
        ));
    }

    #[test]
    fn cosine_basic_cases() {
        let v = EmbeddingVector::new(vec![1.0f64, 2.0, 3.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);

        let x = EmbeddingVector::new(vec![1.0f64, 0.0]);
        let y = EmbeddingVector::new(vec![0.0f64, 1.0]);
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);

        let d = EmbeddingVector::new(vec![1.0f64, 1.0]);
        let got = cosine_similarity(&x, &d).unwrap();
        assert!((got - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_error_cases() {
        let x = EmbeddingVector::new(vec![1.0f64, 0.0]);
        let longer = EmbeddingVector::new(vec![1.0f64, 0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&x, &longer),
            Err(EmbeddingError::DimMismatch { left: 2, right: 3 })
        ));
        let zero = EmbeddingVector::new(vec![0.0f64, 0.0]);
        assert!(matches!(
            cosine_similarity(&x, &zero),
            Err(EmbeddingError::ZeroNorm)
        ));
    }

    #[test]
    fn store_round_trip_is_bit_exact() {
        let rows = vec![
            EmbeddingVector::new(vec![0.25f32, -1.5, 3.75, 0.125]),
            EmbeddingVector::new(vec![1e-7f32, 2.0, -0.0, 9.5]),
        ];
        let store = EmbeddingStore::from_vectors(&rows).unwrap();
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(store, back);
    }

    #[test]
    fn store_parse_errors() {
        assert!(matches!(
            EmbeddingStore::from_bytes(b"WHATis this"),
            Err(EmbeddingError::FormatError)
        ));

        let store =
            EmbeddingStore::from_vectors(&[EmbeddingVector::new(vec![1.0f32; 4])]).unwrap();
        let mut bytes = store.to_bytes();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(EmbeddingError::TruncatedFile)
        ));

        // NaN planted in the second vector.
        let rows = vec![
            EmbeddingVector::new(vec![1.0f32; 4]),
            EmbeddingVector::new(vec![1.0f32; 4]),
        ];
        let mut bytes = EmbeddingStore::from_vectors(&rows).unwrap().to_bytes();
        let nan = f32::NAN.to_le_bytes();
        let offset = HEADER_LEN + 5 * 4;
        bytes[offset..offset + 4].copy_from_slice(&nan);
        assert!(matches!(
            EmbeddingStore::from_bytes(&bytes),
            Err(EmbeddingError::CorruptVector(1))
        ));
    }
}
