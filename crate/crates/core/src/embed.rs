//! Sentence embeddings in the joint space.
//!
//! Real multilingual embeddings are produced by an external encoder and read
//! from disk ([`EmbeddingProvider::FileBacked`]). [`HashedEncoder`] is a
//! deterministic stand-in: every subword token maps to a seeded pseudo-random
//! vector in `[-1, 1]^d` and a sentence is the coordinate-wise max over its
//! tokens. Its distances only reflect token overlap, not meaning.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bpe::BpeModel;
use crate::corpus_io::{Corpus, EmbeddingMatrix};
use crate::vector;
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 1024;

/// Stand-in token for sentences that tokenize to nothing.
pub const EMPTY_TOKEN: &str = "\u{27E8}empty\u{27E9}";

/// `1 - u.v` for unit vectors, clamped to `[0, 2]`.
#[inline]
pub fn cosine_distance(u: &[f32], v: &[f32]) -> f32 {
    (1.0 - vector::dot(u, v)).clamp(0.0, 2.0)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded FNV-1a over the token bytes, finalized with splitmix64.
fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64 ^ splitmix64(seed);
    for b in token.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h)
}

/// Deterministic max-pooling encoder over hashed token vectors.
#[derive(Debug, Clone)]
pub struct HashedEncoder {
    dim: usize,
    seed: u64,
    bpe: Option<Arc<BpeModel>>,
    lowercase: bool,
}

impl HashedEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("embedding dimension must be positive"));
        }
        Ok(Self {
            dim,
            seed,
            bpe: None,
            lowercase: false,
        })
    }

    /// Tokenize with a BPE model instead of plain whitespace words.
    pub fn with_bpe(mut self, bpe: Arc<BpeModel>) -> Self {
        self.bpe = Some(bpe);
        self
    }

    pub fn with_lowercase(mut self, lowercase: bool) -> Self {
        self.lowercase = lowercase;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lowered;
        let text = if self.lowercase {
            lowered = text.to_lowercase();
            &lowered
        } else {
            text
        };
        match &self.bpe {
            Some(bpe) => bpe.apply(text),
            None => text.split_whitespace().map(str::to_string).collect(),
        }
    }

    /// Fills `out` with the token's vector, coordinates uniform in `[-1, 1)`.
    pub fn token_vector(&self, token: &str, out: &mut [f32]) {
        let h = token_hash(token, self.seed);
        for (j, x) in out.iter_mut().enumerate() {
            let z = splitmix64(h.wrapping_add((j as u64 + 1).wrapping_mul(GOLDEN_GAMMA)));
            // top 24 bits: exactly representable in f32
            *x = (z >> 40) as f32 * (2.0 / 16_777_216.0) - 1.0;
        }
    }

    /// Max-pools token vectors into `out` and normalizes it.
    ///
    /// The expected maximum of `m` uniform draws, `(m - 1) / (m + 1)`, is
    /// subtracted from every coordinate before normalizing; otherwise all
    /// multi-token sentences would share a large positive mean direction.
    pub fn embed_tokens_into<S: AsRef<str>>(&self, tokens: &[S], out: &mut [f32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::validation("cannot embed an empty token sequence"));
        }
        debug_assert_eq!(out.len(), self.dim);
        out.fill(f32::NEG_INFINITY);
        let mut scratch = vec![0f32; self.dim];
        for t in tokens {
            self.token_vector(t.as_ref(), &mut scratch);
            for (o, &x) in out.iter_mut().zip(&scratch) {
                *o = o.max(x);
            }
        }
        let m = tokens.len() as f32;
        let expected_max = (m - 1.0) / (m + 1.0);
        if expected_max != 0.0 {
            for o in out.iter_mut() {
                *o -= expected_max;
            }
        }
        if !vector::normalize(out) {
            return Err(Error::validation("pooled sentence vector is zero"));
        }
        Ok(())
    }

    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<f32>> {
        let mut out = vec![0f32; self.dim];
        self.embed_tokens_into(tokens, &mut out)?;
        Ok(out)
    }

    /// Tokenizes and embeds; empty sentences use [`EMPTY_TOKEN`].
    pub fn embed_text_into(&self, text: &str, out: &mut [f32]) -> Result<()> {
        let tokens = self.tokenize(text);
        if tokens.is_empty() {
            self.embed_tokens_into(&[EMPTY_TOKEN], out)
        } else {
            self.embed_tokens_into(&tokens, out)
        }
    }
}

/// Where sentence vectors come from.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    /// Precomputed vectors looked up by sentence id.
    FileBacked(EmbeddingMatrix),
    Hashed(HashedEncoder),
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::FileBacked(m) => m.dim(),
            EmbeddingProvider::Hashed(e) => e.dim(),
        }
    }
}

/// Embeds one tokenized sentence. Only the hashed encoder can embed
/// arbitrary text.
pub fn embed_sentence<S: AsRef<str>>(p: &EmbeddingProvider, tokens: &[S]) -> Result<Vec<f32>> {
    match p {
        EmbeddingProvider::Hashed(e) => e.embed_tokens(tokens),
        EmbeddingProvider::FileBacked(_) => Err(Error::validation(
            "file-backed embeddings can only be looked up by sentence id",
        )),
    }
}

/// Embeds every record of `corpus`, row `i` for record `i`.
pub fn embed_corpus(p: &EmbeddingProvider, corpus: &Corpus) -> Result<EmbeddingMatrix> {
    let ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    match p {
        EmbeddingProvider::Hashed(e) => {
            let dim = e.dim();
            let mut data = vec![0f32; corpus.len() * dim];
            data.par_chunks_mut(dim)
                .zip(corpus.records().par_iter())
                .try_for_each(|(row, rec)| e.embed_text_into(&rec.text, row))?;
            EmbeddingMatrix::new(ids, dim, data)
        }
        EmbeddingProvider::FileBacked(m) => {
            let index: HashMap<&str, usize> = m
                .ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            let rows = ids
                .iter()
                .map(|id| {
                    index.get(id.as_str()).copied().ok_or_else(|| {
                        Error::validation(format!("no embedding for sentence id {id:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(m.select(&rows))
        }
    }
}
