//! Filtering noisy parallel corpora and mining parallel sentences from
//! comparable corpora by thresholding cosine distances between sentence
//! embeddings in a shared multilingual space.
//!
//! The crate is organized as a pipeline:
//!
//! - [`corpus_io`]: corpus, gold alignment, embedding and pair file formats.
//! - [`preprocess`]: comma, length and language-identification filters.
//! - [`bpe`]: joint byte-pair-encoding vocabulary shared across languages.
//! - [`embed`]: unit-normalized sentence embeddings (file-backed or a hashed
//!   max-pooling baseline) and cosine distance.
//! - [`simsearch`]: blocked exact k-NN and an inverted-file index.
//! - [`mine`]: bitext scoring, threshold filtering and sweeps, k-NN mining.
//! - [`eval`]: precision/recall/F1 scoring, threshold tuning and synthetic
//!   comparable corpora with planted translation pairs.

pub mod bpe;
pub mod corpus_io;
pub mod embed;
mod error;
pub mod eval;
pub mod mine;
pub mod preprocess;
pub mod simsearch;
mod vector;

pub use error::{Error, Result};

pub use bpe::BpeModel;
pub use corpus_io::{Corpus, EmbeddingMatrix, GoldAlignment, SentenceRecord};
pub use embed::{cosine_distance, EmbeddingProvider, HashedEncoder};
pub use eval::{EvalReport, SyntheticData, SyntheticSpec};
pub use mine::{CandidatePair, LengthHistogram, SweepCurve, Threshold};
pub use preprocess::{LidModel, PreprocessConfig, StageReport};
pub use simsearch::{IvfIndex, Neighbor, SearchParams};
