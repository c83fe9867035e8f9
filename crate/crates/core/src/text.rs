//! Corpus ingestion, tokenization, and vocabulary management for parallel
//! data. Tokenization is whitespace splitting with lowercasing; vocabularies
//! are built by frequency with lexicographic tie-breaking so the same files
//! always produce byte-identical vocabularies.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

/// Token id within a [`Vocabulary`].
pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

/// The four reserved tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

const CORPUS_MAGIC: &[u8; 4] = b"SEQC";
const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("input is empty after trimming")]
    EmptyInput,
    #[error("empty line {line} in {side} file")]
    EmptyLine { side: &'static str, line: usize },
    #[error("parallel files differ in length: {src_lines} source lines vs {tgt_lines} target lines")]
    ParallelMismatch { src_lines: usize, tgt_lines: usize },
    #[error("bad corpus file magic")]
    BadMagic,
    #[error("unsupported corpus file version {0}")]
    UnsupportedVersion(u32),
    #[error("corpus file truncated")]
    Truncated,
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    InvalidTokenId { id: TokenId, vocab_size: usize },
    #[error("corpus file contains invalid UTF-8 token")]
    InvalidUtf8,
    #[error("vocabulary does not start with the reserved special tokens")]
    InvalidVocabulary,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Token inventory with reserved ids 0..=3 for PAD, BOS, EOS, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from text lines. Tokens are counted after
    /// lowercasing and whitespace splitting, ranked by (frequency desc,
    /// token asc), and truncated so the total size including the four
    /// specials does not exceed `max_vocab`.
    pub fn build<'a, I>(lines: I, max_vocab: usize) -> Vocabulary
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for line in lines {
            for tok in line.to_lowercase().split_whitespace() {
                *freq.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let capacity = max_vocab.saturating_sub(SPECIAL_TOKENS.len());
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(capacity).map(|(t, _)| t));
        Self::from_token_list(tokens)
    }

    /// Restores a vocabulary from an explicit token list (specials first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary, TextError> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens[..SPECIAL_TOKENS.len()]
                .iter()
                .zip(SPECIAL_TOKENS.iter())
                .any(|(a, b)| a != b)
        {
            return Err(TextError::InvalidVocabulary);
        }
        Ok(Self::from_token_list(tokens))
    }

    fn from_token_list(tokens: Vec<String>) -> Vocabulary {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary { tokens, ids }
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// True when `id` is one of the four reserved ids.
    pub fn is_special(id: TokenId) -> bool {
        id < SPECIAL_TOKENS.len() as TokenId
    }
}

/// An ordered list of token ids; never contains PAD.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence {
    ids: Vec<TokenId>,
}

impl Sequence {
    pub fn new(ids: Vec<TokenId>) -> Sequence {
        Sequence { ids }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One line pair of a parallel corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub source: Sequence,
    pub target: Sequence,
    pub corpus_index: usize,
}

/// A parallel corpus with one vocabulary per side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub examples: Vec<ParallelExample>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

/// Lowercases, whitespace-splits, and maps tokens to ids; out-of-vocabulary
/// tokens become UNK.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Sequence, TextError> {
    let lowered = text.to_lowercase();
    let ids: Vec<TokenId> = lowered
        .split_whitespace()
        .map(|tok| vocab.id(tok).unwrap_or(UNK))
        .collect();
    if ids.is_empty() {
        return Err(TextError::EmptyInput);
    }
    Ok(Sequence::new(ids))
}

/// Inverse of [`tokenize`] for in-vocabulary ids; unknown ids render as UNK.
pub fn detokenize(seq: &Sequence, vocab: &Vocabulary) -> String {
    seq.ids()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Loads a parallel corpus from two line-aligned text files. Vocabularies
/// are built per side from the same files.
pub fn load_corpus<P: AsRef<Path>, Q: AsRef<Path>>(
    source_path: P,
    target_path: Q,
    max_vocab: usize,
) -> Result<Corpus, TextError> {
    let src_text = fs::read_to_string(source_path)?;
    let tgt_text = fs::read_to_string(target_path)?;
    let src_lines: Vec<&str> = src_text.lines().collect();
    let tgt_lines: Vec<&str> = tgt_text.lines().collect();
    Corpus::from_lines(&src_lines, &tgt_lines, max_vocab)
}

impl Corpus {
    /// Builds a corpus and both vocabularies from parallel lines.
    pub fn from_lines(
        src_lines: &[&str],
        tgt_lines: &[&str],
        max_vocab: usize,
    ) -> Result<Corpus, TextError> {
        if src_lines.len() != tgt_lines.len() {
            return Err(TextError::ParallelMismatch {
                src_lines: src_lines.len(),
                tgt_lines: tgt_lines.len(),
            });
        }
        let src_vocab = Vocabulary::build(src_lines.iter().copied(), max_vocab);
        let tgt_vocab = Vocabulary::build(tgt_lines.iter().copied(), max_vocab);
        Corpus::with_vocabs(src_lines, tgt_lines, src_vocab, tgt_vocab)
    }

    /// Tokenizes parallel lines under existing vocabularies (used for dev
    /// and test splits that must share the training vocabulary).
    pub fn with_vocabs(
        src_lines: &[&str],
        tgt_lines: &[&str],
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
    ) -> Result<Corpus, TextError> {
        if src_lines.len() != tgt_lines.len() {
            return Err(TextError::ParallelMismatch {
                src_lines: src_lines.len(),
                tgt_lines: tgt_lines.len(),
            });
        }
        let mut examples = Vec::with_capacity(src_lines.len());
        for (i, (src, tgt)) in src_lines.iter().zip(tgt_lines.iter()).enumerate() {
            let source = tokenize(src, &src_vocab).map_err(|e| match e {
                TextError::EmptyInput => TextError::EmptyLine {
                    side: "source",
                    line: i + 1,
                },
                other => other,
            })?;
            let target = tokenize(tgt, &tgt_vocab).map_err(|e| match e {
                TextError::EmptyInput => TextError::EmptyLine {
                    side: "target",
                    line: i + 1,
                },
                other => other,
            })?;
            examples.push(ParallelExample {
                source,
                target,
                corpus_index: i,
            });
        }
        Ok(Corpus {
            examples,
            src_vocab,
            tgt_vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn target(&self, corpus_index: usize) -> Option<&Sequence> {
        self.examples.get(corpus_index).map(|e| &e.target)
    }

    /// Serializes the corpus to the versioned SEQC binary format.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), TextError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CORPUS_MAGIC);
        buf.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
        write_vocab(&mut buf, &self.src_vocab);
        write_vocab(&mut buf, &self.tgt_vocab);
        buf.extend_from_slice(&(self.examples.len() as u64).to_le_bytes());
        for ex in &self.examples {
            write_sequence(&mut buf, &ex.source);
            write_sequence(&mut buf, &ex.target);
        }
        buf
    }

    /// Loads a corpus written by [`Corpus::save`].
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Corpus, TextError> {
        let bytes = fs::read(path)?;
        Corpus::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Corpus, TextError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CORPUS_MAGIC {
            return Err(TextError::BadMagic);
        }
        let version = r.u32()?;
        if version != CORPUS_VERSION {
            return Err(TextError::UnsupportedVersion(version));
        }
        let src_vocab = read_vocab(&mut r)?;
        let tgt_vocab = read_vocab(&mut r)?;
        let count = r.u64()? as usize;
        let mut examples = Vec::with_capacity(count);
        for i in 0..count {
            let source = read_sequence(&mut r, &src_vocab)?;
            let target = read_sequence(&mut r, &tgt_vocab)?;
            examples.push(ParallelExample {
                source,
                target,
                corpus_index: i,
            });
        }
        Ok(Corpus {
            examples,
            src_vocab,
            tgt_vocab,
        })
    }
}

fn write_vocab(buf: &mut Vec<u8>, vocab: &Vocabulary) {
    buf.extend_from_slice(&(vocab.size() as u32).to_le_bytes());
    for tok in vocab.tokens() {
        buf.extend_from_slice(&(tok.len() as u32).to_le_bytes());
        buf.extend_from_slice(tok.as_bytes());
    }
}

fn read_vocab(r: &mut Reader) -> Result<Vocabulary, TextError> {
    let count = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let bytes = r.take(len)?;
        let tok = std::str::from_utf8(bytes).map_err(|_| TextError::InvalidUtf8)?;
        tokens.push(tok.to_string());
    }
    Vocabulary::from_tokens(tokens)
}

fn write_sequence(buf: &mut Vec<u8>, seq: &Sequence) {
    buf.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    for &id in seq.ids() {
        buf.extend_from_slice(&id.to_le_bytes());
    }
}

fn read_sequence(r: &mut Reader, vocab: &Vocabulary) -> Result<Sequence, TextError> {
    let len = r.u32()? as usize;
    let mut ids = Vec::with_capacity(len);
    for _ in 0..len {
        let id = r.u32()?;
        if id as usize >= vocab.size() {
            return Err(TextError::InvalidTokenId {
                id,
                vocab_size: vocab.size(),
            });
        }
        ids.push(id);
    }
    Ok(Sequence::new(ids))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Reader<'a> {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TextError> {
        if self.pos + n > self.bytes.len() {
            return Err(TextError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TextError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, TextError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> Vocabulary {
        Vocabulary::build(["the cat", "the mat"], 16)
    }

    #[test]
    fn tokenize_maps_known_tokens() {
        let vocab = small_vocab();
        let seq = tokenize("The cat", &vocab).unwrap();
        assert_eq!(
            seq.ids(),
            &[vocab.id("the").unwrap(), vocab.id("cat").unwrap()]
        );
    }

    #[test]
    fn tokenize_maps_oov_to_unk() {
        let vocab = small_vocab();
        let seq = tokenize("zzz", &vocab).unwrap();
        assert_eq!(seq.ids(), &[UNK]);
    }

    #[test]
    fn tokenize_keeps_repetitions() {
        let vocab = Vocabulary::build(["a a a"], 8);
        let seq = tokenize("a a a", &vocab).unwrap();
        let a = vocab.id("a").unwrap();
        assert_eq!(seq.ids(), &[a, a, a]);
    }

    #[test]
    fn tokenize_rejects_blank_input() {
        let vocab = small_vocab();
        assert!(matches!(
            tokenize("   ", &vocab),
            Err(TextError::EmptyInput)
        ));
    }

    #[test]
    fn specials_occupy_first_four_ids() {
        let vocab = small_vocab();
        assert_eq!(vocab.token(PAD), Some("<pad>"));
        assert_eq!(vocab.token(BOS), Some("<bos>"));
        assert_eq!(vocab.token(EOS), Some("<eos>"));
        assert_eq!(vocab.token(UNK), Some("<unk>"));
    }

    #[test]
    fn vocab_ids_and_tokens_are_inverse() {
        let vocab = small_vocab();
        for (i, tok) in vocab.tokens().iter().enumerate() {
            assert_eq!(vocab.id(tok), Some(i as TokenId));
            assert_eq!(vocab.token(i as TokenId), Some(tok.as_str()));
        }
    }

    #[test]
    fn vocab_truncation_uses_frequency_then_lexicographic_order() {
        // "a b / b c / a c": a,b,c all occur twice; capacity for 2 regular
        // tokens keeps {a, b}. Frequencies counted by hand on the 3 lines.
        let vocab = Vocabulary::build(["a b", "b c", "a c"], 4 + 2);
        assert_eq!(vocab.size(), 6);
        assert!(vocab.id("a").is_some());
        assert!(vocab.id("b").is_some());
        assert!(vocab.id("c").is_none());
    }

    #[test]
    fn corpus_pairs_lines_by_index() {
        let corpus = Corpus::from_lines(&["a", "b", "c"], &["x", "y", "z"], 16).unwrap();
        assert_eq!(corpus.len(), 3);
        for (i, ex) in corpus.examples.iter().enumerate() {
            assert_eq!(ex.corpus_index, i);
        }
    }

    #[test]
    fn corpus_rejects_line_count_mismatch() {
        let err = Corpus::from_lines(&["a", "b", "c"], &["x", "y", "z", "w"], 16).unwrap_err();
        match err {
            TextError::ParallelMismatch {
                src_lines,
                tgt_lines,
            } => {
                assert_eq!((src_lines, tgt_lines), (3, 4));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn corpus_build_is_deterministic() {
        let a = Corpus::from_lines(&["a b", "b c"], &["x y", "y z"], 8).unwrap();
        let b = Corpus::from_lines(&["a b", "b c"], &["x y", "y z"], 8).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn corpus_binary_round_trip() {
        let corpus = Corpus::from_lines(&["a b", "b c a"], &["x y", "z"], 12).unwrap();
        let back = Corpus::from_bytes(&corpus.to_bytes()).unwrap();
        assert_eq!(corpus, back);
    }

    #[test]
    fn corpus_load_rejects_bad_magic() {
        assert!(matches!(
            Corpus::from_bytes(b"NOPE"),
            Err(TextError::BadMagic)
        ));
    }

    #[test]
    fn corpus_load_rejects_truncation() {
        let mut bytes = Corpus::from_lines(&["a"], &["x"], 8).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            Corpus::from_bytes(&bytes),
            Err(TextError::Truncated)
        ));
    }
}
