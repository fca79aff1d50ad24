//! Input preparation: length filtering, byte-level tokenization and
//! BOS-preserving shuffles.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Beginning-of-sequence id of the byte-level tokenizer.
pub const BOS_ID: u32 = 256;
/// 256 byte values plus BOS.
pub const BYTE_VOCAB: usize = 257;

/// Keeps sequences whose length in characters lies strictly between the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterSpec {
    l_min: usize,
    l_max: usize,
}

impl FilterSpec {
    pub fn new(l_min: usize, l_max: usize) -> Result<Self> {
        if l_min >= l_max {
            return Err(Error::Config(format!(
                "filter bounds must satisfy l_min < l_max, got ({l_min}, {l_max})"
            )));
        }
        Ok(Self { l_min, l_max })
    }

    pub fn l_min(&self) -> usize {
        self.l_min
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Length is counted in Unicode scalar values.
    pub fn accepts(&self, s: &str) -> bool {
        let n = s.chars().count();
        self.l_min < n && n < self.l_max
    }
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self { l_min: 100, l_max: 500 }
    }
}

pub fn filter_sequences(corpus: &[String], spec: &FilterSpec) -> Vec<String> {
    corpus.iter().filter(|s| spec.accepts(s)).cloned().collect()
}

/// Token ids starting with the BOS id. At least two tokens long.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    bos_id: u32,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, bos_id: u32) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvariantViolation(format!(
                "token sequence needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        if tokens[0] != bos_id {
            return Err(Error::InvariantViolation(format!(
                "first token {} is not BOS {bos_id}",
                tokens[0]
            )));
        }
        Ok(Self { tokens, bos_id })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn bos_id(&self) -> u32 {
        self.bos_id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `[BOS] ++ utf8_bytes(s)`.
pub fn tokenize_bytes(s: &str) -> Result<TokenSequence> {
    if s.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tokens = Vec::with_capacity(s.len() + 1);
    tokens.push(BOS_ID);
    tokens.extend(s.bytes().map(u32::from));
    TokenSequence::new(tokens, BOS_ID)
}

/// Permutes every token after the first; the BOS stays at index 0.
pub fn shuffle_tokens(seq: &TokenSequence, seed: u64) -> TokenSequence {
    let mut tokens = seq.tokens.clone();
    SeededRng::new(seed).shuffle(&mut tokens[1..]);
    TokenSequence {
        tokens,
        bos_id: seq.bos_id,
    }
}

/// Reads a newline-delimited UTF-8 corpus, one sequence per line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}
