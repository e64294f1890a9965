//! Precision/recall/F1 against gold alignments, F1-optimal threshold search,
//! and synthetic comparable corpora with planted translation pairs.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::corpus_io::{Corpus, EmbeddingMatrix, GoldAlignment, SentenceRecord};
use crate::mine::{best_per_source, quantize_distance, CandidatePair, Threshold};
use crate::vector;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub threshold: Option<f32>,
}

impl EvalReport {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            100.0 * true_positives as f64 / predicted as f64
        };
        let recall = if gold == 0 {
            0.0
        } else {
            100.0 * true_positives as f64 / gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
            threshold: None,
        }
    }

    pub fn false_positives(&self) -> usize {
        self.predicted - self.true_positives
    }

    pub fn with_threshold(mut self, t: Threshold) -> Self {
        self.threshold = Some(t.value());
        self
    }

    pub fn tsv_header() -> &'static str {
        "precision\trecall\tf1\ttrue_positives\tfalse_positives\tpredicted\tgold\tthreshold"
    }

    pub fn to_tsv_row(&self) -> String {
        let threshold = match self.threshold {
            Some(t) => format!("{t:.6}"),
            None => "NA".to_string(),
        };
        format!(
            "{:.1}\t{:.1}\t{:.1}\t{}\t{}\t{}\t{}\t{}",
            self.precision,
            self.recall,
            self.f1,
            self.true_positives,
            self.false_positives(),
            self.predicted,
            self.gold,
            threshold
        )
    }

    pub fn to_tsv(&self) -> String {
        format!("{}\n{}\n", Self::tsv_header(), self.to_tsv_row())
    }
}

/// Set-semantics scoring: duplicates in `predicted` count once.
pub fn score(predicted: &BTreeSet<(String, String)>, gold: &GoldAlignment) -> EvalReport {
    let tp = predicted
        .iter()
        .filter(|(s, t)| gold.contains(s, t))
        .count();
    EvalReport::from_counts(tp, predicted.len(), gold.len())
}

pub fn score_pairs(pairs: &[CandidatePair], gold: &GoldAlignment) -> EvalReport {
    let predicted = pairs
        .iter()
        .map(|p| (p.src_id.clone(), p.tgt_id.clone()))
        .collect();
    score(&predicted, gold)
}

/// Picks the threshold maximizing F1 when each source keeps only its closest
/// candidate. Every distinct distance plus 0 and 2 is tried; the smallest
/// threshold wins ties.
pub fn tune_threshold(
    candidates: &[CandidatePair],
    gold: &GoldAlignment,
) -> Result<(Threshold, EvalReport)> {
    if gold.is_empty() {
        return Err(Error::validation("threshold tuning needs at least one gold pair"));
    }
    let mut best = best_per_source(candidates);
    best.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let levels: Vec<i64> = best.iter().map(|p| quantize_distance(p.distance)).collect();
    let hits: Vec<bool> = best.iter().map(|p| gold.contains(&p.src_id, &p.tgt_id)).collect();

    let mut grid: Vec<f32> = Vec::with_capacity(best.len() + 2);
    grid.push(0.0);
    grid.extend(best.iter().map(|p| p.distance.clamp(0.0, 2.0)));
    grid.push(2.0);
    grid.dedup_by_key(|t| quantize_distance(*t));

    let mut chosen = (0.0f32, f64::NEG_INFINITY);
    let (mut predicted, mut tp) = (0usize, 0usize);
    for &t in &grid {
        let q = quantize_distance(t);
        while predicted < best.len() && levels[predicted] <= q {
            tp += usize::from(hits[predicted]);
            predicted += 1;
        }
        let f1 = EvalReport::from_counts(tp, predicted, gold.len()).f1;
        if f1 > chosen.1 {
            chosen = (t, f1);
        }
    }
    let threshold = Threshold::new(chosen.0)?;
    let kept: Vec<CandidatePair> = best
        .into_iter()
        .filter(|p| threshold.accepts(p.distance))
        .collect();
    Ok((threshold, score_pairs(&kept, gold).with_threshold(threshold)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub n_src: usize,
    pub n_tgt: usize,
    pub n_planted: usize,
    pub dim: usize,
    pub noise_sigma: f32,
    pub seed: u64,
    /// Chance of swapping each adjacent word pair when deriving planted
    /// target text from its source.
    pub word_swap_prob: f64,
}

impl SyntheticSpec {
    pub fn new(n_src: usize, n_tgt: usize, n_planted: usize, dim: usize, noise_sigma: f32, seed: u64) -> Self {
        Self {
            n_src,
            n_tgt,
            n_planted,
            dim,
            noise_sigma,
            seed,
            word_swap_prob: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_planted > self.n_src.min(self.n_tgt) {
            return Err(Error::validation(format!(
                "n_planted {} exceeds min(n_src, n_tgt) = {}",
                self.n_planted,
                self.n_src.min(self.n_tgt)
            )));
        }
        if self.dim == 0 {
            return Err(Error::validation("synthetic dimension must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::validation("noise_sigma must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.word_swap_prob) {
            return Err(Error::validation("word_swap_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub src: Corpus,
    pub tgt: Corpus,
    pub src_emb: EmbeddingMatrix,
    pub tgt_emb: EmbeddingMatrix,
    pub gold: GoldAlignment,
}

const SYLLABLE_ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const SYLLABLE_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(SYLLABLE_ONSETS[rng.random_range(0..SYLLABLE_ONSETS.len())]);
        w.push_str(SYLLABLE_VOWELS[rng.random_range(0..SYLLABLE_VOWELS.len())]);
    }
    w
}

fn pseudo_sentence(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(4..=14);
    (0..n).map(|_| pseudo_word(rng)).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize, out: &mut Vec<f32>) {
    let start = out.len();
    loop {
        out.extend((0..dim).map(|_| -> f32 { StandardNormal.sample(rng) }));
        if vector::normalize(&mut out[start..]) {
            return;
        }
        out.truncate(start);
    }
}

/// Random unit source vectors; the first `n_planted` targets are noisy
/// copies of the first `n_planted` sources, the rest independent. Both sides
/// are then shuffled and given ids `src-000001`, `tgt-000001`, ...
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut src_vecs = Vec::with_capacity(spec.n_src * d);
    for _ in 0..spec.n_src {
        random_unit(&mut rng, d, &mut src_vecs);
    }
    let noise = Normal::new(0.0f32, spec.noise_sigma).map_err(|e| Error::validation(e.to_string()))?;
    let mut tgt_vecs = Vec::with_capacity(spec.n_tgt * d);
    for i in 0..spec.n_planted {
        let start = tgt_vecs.len();
        loop {
            tgt_vecs.extend(src_vecs[i * d..(i + 1) * d].iter().map(|&x| x + noise.sample(&mut rng)));
            if vector::normalize(&mut tgt_vecs[start..]) {
                break;
            }
            tgt_vecs.truncate(start);
        }
    }
    for _ in spec.n_planted..spec.n_tgt {
        random_unit(&mut rng, d, &mut tgt_vecs);
    }

    let mut src_perm: Vec<usize> = (0..spec.n_src).collect();
    src_perm.shuffle(&mut rng);
    let mut tgt_perm: Vec<usize> = (0..spec.n_tgt).collect();
    tgt_perm.shuffle(&mut rng);

    let mut text_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    text_rng.set_stream(1);
    let src_words: Vec<Vec<String>> = (0..spec.n_src).map(|_| pseudo_sentence(&mut text_rng)).collect();
    let tgt_words: Vec<Vec<String>> = (0..spec.n_tgt)
        .map(|i| {
            if i < spec.n_planted {
                let mut w = src_words[i].clone();
                for j in 1..w.len() {
                    if text_rng.random_bool(spec.word_swap_prob) {
                        w.swap(j - 1, j);
                    }
                }
                w
            } else {
                pseudo_sentence(&mut text_rng)
            }
        })
        .collect();

    let side = |prefix: &str, perm: &[usize], vecs: &[f32], words: &[Vec<String>]| -> Result<(Corpus, EmbeddingMatrix, Vec<String>)> {
        let mut ids_by_original = vec![String::new(); perm.len()];
        let mut records = Vec::with_capacity(perm.len());
        let mut data = Vec::with_capacity(perm.len() * d);
        for (row, &orig) in perm.iter().enumerate() {
            let id = format!("{prefix}-{:06}", row + 1);
            ids_by_original[orig] = id.clone();
            records.push(SentenceRecord::new(id, prefix, words[orig].join(" ")));
            data.extend_from_slice(&vecs[orig * d..(orig + 1) * d]);
        }
        let ids = records.iter().map(|r| r.id.clone()).collect();
        Ok((Corpus::new(prefix, records)?, EmbeddingMatrix::new(ids, d, data)?, ids_by_original))
    };
    let (src, src_emb, src_ids) = side("src", &src_perm, &src_vecs, &src_words)?;
    let (tgt, tgt_emb, tgt_ids) = side("tgt", &tgt_perm, &tgt_vecs, &tgt_words)?;
    let gold = GoldAlignment::from_pairs(
        (0..spec.n_planted).map(|i| (src_ids[i].clone(), tgt_ids[i].clone())),
    );
    Ok(SyntheticData {
        src,
        tgt,
        src_emb,
        tgt_emb,
        gold,
    })
}
