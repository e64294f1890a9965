//! Distance filtering of line-aligned bitexts and k-NN mining across two
//! monolingual corpora.
//!
//! Filtering scores pair `i` of a bitext as the cosine distance between its
//! two sentence embeddings (linear in the corpus size). Mining searches, for
//! every source sentence, its `k` nearest target sentences (quadratic without
//! an index) and keeps those within the distance threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus_io::{Corpus, EmbeddingMatrix};
use crate::embed::cosine_distance;
use crate::preprocess::count_words;
use crate::simsearch::{knn_exact_with, knn_ivf, IvfIndex, Neighbor, SearchParams};
use crate::{Error, Result};

/// Threshold used for mining when no tuning data is available.
pub const DEFAULT_MINING_THRESHOLD: f32 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidatePair {
    pub src_id: String,
    pub tgt_id: String,
    pub distance: f32,
}

impl CandidatePair {
    pub fn new(src_id: impl Into<String>, tgt_id: impl Into<String>, distance: f32) -> Self {
        Self {
            src_id: src_id.into(),
            tgt_id: tgt_id.into(),
            distance,
        }
    }
}

/// Sorts by distance, then source id, then target id.
pub fn sort_candidates(pairs: &mut [CandidatePair]) {
    pairs.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.src_id.cmp(&b.src_id))
            .then_with(|| a.tgt_id.cmp(&b.tgt_id))
    });
}

/// Distance in millionths, the resolution of the pair file. Threshold
/// comparisons happen at this resolution so that a threshold read back from
/// a file selects exactly the pairs it selected before writing.
pub fn quantize_distance(d: f32) -> i64 {
    // f32 * 1e6 is exact in f64, and no f32 lies exactly halfway between
    // two millionths, so this agrees with `{:.6}` formatting.
    (f64::from(d) * 1e6).round() as i64
}

/// A cosine-distance cutoff in `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Threshold(f32);

impl Threshold {
    pub fn new(value: f32) -> Result<Self> {
        if !(0.0..=2.0).contains(&value) {
            return Err(Error::validation(format!("threshold {value} outside [0, 2]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f32 {
        self.0
    }

    pub fn accepts(self, distance: f32) -> bool {
        quantize_distance(distance) <= quantize_distance(self.0)
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(DEFAULT_MINING_THRESHOLD)
    }
}

/// Surviving pair counts as a function of the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    pub points: Vec<(f32, usize)>,
}

impl SweepCurve {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("threshold\tpairs\n");
        for (t, n) in &self.points {
            out.push_str(&format!("{t:.6}\t{n}\n"));
        }
        out
    }
}

/// Distance between the two sides of every pair of a line-aligned bitext.
pub fn score_bitext(
    src: &Corpus,
    tgt: &Corpus,
    src_emb: &EmbeddingMatrix,
    tgt_emb: &EmbeddingMatrix,
) -> Result<Vec<CandidatePair>> {
    if src.len() != tgt.len() {
        return Err(Error::LengthMismatch {
            what: "source vs target bitext lines",
            left: src.len(),
            right: tgt.len(),
        });
    }
    src_emb.check_aligned(src)?;
    tgt_emb.check_aligned(tgt)?;
    if src_emb.dim() != tgt_emb.dim() {
        return Err(Error::DimensionMismatch {
            expected: src_emb.dim(),
            actual: tgt_emb.dim(),
        });
    }
    Ok((0..src.len())
        .into_par_iter()
        .map(|i| {
            CandidatePair::new(
                src.records()[i].id.clone(),
                tgt.records()[i].id.clone(),
                cosine_distance(src_emb.row(i), tgt_emb.row(i)),
            )
        })
        .collect())
}

/// Keeps pairs with distance at most `t`, in input order.
pub fn filter_by_threshold(pairs: &[CandidatePair], t: Threshold) -> Vec<CandidatePair> {
    pairs.iter().filter(|p| t.accepts(p.distance)).cloned().collect()
}

/// Number of pairs surviving each threshold. Thresholds must be ascending.
pub fn sweep(pairs: &[CandidatePair], thresholds: &[f32]) -> Result<SweepCurve> {
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::validation("sweep thresholds must be sorted ascending"));
    }
    let mut distances: Vec<i64> = pairs.iter().map(|p| quantize_distance(p.distance)).collect();
    distances.sort_unstable();
    let points = thresholds
        .iter()
        .map(|&t| (t, distances.partition_point(|&d| d <= quantize_distance(t))))
        .collect();
    Ok(SweepCurve { points })
}

/// `from, from + step, ...` up to and including `to` (within half a step),
/// each rounded to 6 decimals.
pub fn threshold_grid(from: f32, to: f32, step: f32) -> Result<Vec<f32>> {
    if step.is_nan() || step <= 0.0 || to < from {
        return Err(Error::validation("threshold grid needs step > 0 and to >= from"));
    }
    let n = ((f64::from(to) - f64::from(from)) / f64::from(step) + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            let t = f64::from(from) + i as f64 * f64::from(step);
            ((t * 1e6).round() / 1e6) as f32
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MineOptions {
    pub search: SearchParams,
    pub threshold: Threshold,
    /// Keep a pair only when the source is also among the target's k nearest
    /// sources.
    pub bidirectional: bool,
}

fn check_index(index: &IvfIndex, targets: &EmbeddingMatrix) -> Result<()> {
    if index.len() != targets.len() || index.ids() != targets.ids() {
        return Err(Error::validation(
            "index was not built over the given target embeddings",
        ));
    }
    Ok(())
}

/// k nearest targets per source, through the index when one is given.
pub fn search(
    src: &EmbeddingMatrix,
    tgt: &EmbeddingMatrix,
    params: &SearchParams,
    index: Option<&IvfIndex>,
) -> Result<Vec<Vec<Neighbor>>> {
    if src.dim() != tgt.dim() {
        return Err(Error::DimensionMismatch {
            expected: tgt.dim(),
            actual: src.dim(),
        });
    }
    if src.is_empty() {
        return Ok(Vec::new());
    }
    match index {
        Some(idx) => {
            check_index(idx, tgt)?;
            knn_ivf(idx, src, params)
        }
        None => knn_exact_with(src, tgt, params),
    }
}

/// For every source sentence, all of its `k` nearest targets within the
/// threshold. Duplicate `(src_id, tgt_id)` pairs keep their smallest
/// distance; output is sorted by distance, then ids.
pub fn mine(
    src: &EmbeddingMatrix,
    tgt: &EmbeddingMatrix,
    opts: &MineOptions,
    index: Option<&IvfIndex>,
) -> Result<Vec<CandidatePair>> {
    let forward = search(src, tgt, &opts.search, index)?;
    let backward: Option<Vec<HashSet<usize>>> = if opts.bidirectional && !src.is_empty() {
        let lists = knn_exact_with(tgt, src, &opts.search)?;
        Some(
            lists
                .into_iter()
                .map(|l| l.into_iter().map(|n| n.index).collect())
                .collect(),
        )
    } else {
        None
    };

    let mut best: BTreeMap<(&str, &str), f32> = BTreeMap::new();
    for (s, neighbors) in forward.iter().enumerate() {
        for n in neighbors {
            if !opts.threshold.accepts(n.distance) {
                continue;
            }
            if let Some(back) = &backward {
                if !back[n.index].contains(&s) {
                    continue;
                }
            }
            let key = (src.ids()[s].as_str(), tgt.ids()[n.index].as_str());
            best.entry(key)
                .and_modify(|d| *d = d.min(n.distance))
                .or_insert(n.distance);
        }
    }
    let mut pairs: Vec<CandidatePair> = best
        .into_iter()
        .map(|((s, t), d)| CandidatePair::new(s, t, d))
        .collect();
    sort_candidates(&mut pairs);
    Ok(pairs)
}

/// The nearest target of every source sentence, one pair per source.
pub fn best_matches(
    src: &EmbeddingMatrix,
    tgt: &EmbeddingMatrix,
    params: &SearchParams,
    index: Option<&IvfIndex>,
) -> Result<Vec<CandidatePair>> {
    let params = SearchParams { k: 1, ..*params };
    let lists = search(src, tgt, &params, index)?;
    Ok(lists
        .iter()
        .enumerate()
        .filter_map(|(s, l)| {
            l.first()
                .map(|n| CandidatePair::new(src.ids()[s].clone(), tgt.ids()[n.index].clone(), n.distance))
        })
        .collect())
}

/// BUCC-style prediction: each source sentence is paired with its nearest
/// target when that distance is within the threshold.
pub fn predict_bucc(
    src: &EmbeddingMatrix,
    tgt: &EmbeddingMatrix,
    t: Threshold,
    params: &SearchParams,
    index: Option<&IvfIndex>,
) -> Result<BTreeSet<(String, String)>> {
    Ok(best_matches(src, tgt, params, index)?
        .into_iter()
        .filter(|p| t.accepts(p.distance))
        .map(|p| (p.src_id, p.tgt_id))
        .collect())
}

/// Reduces candidates to the closest target per source (ties by target id).
pub fn best_per_source(pairs: &[CandidatePair]) -> Vec<CandidatePair> {
    let mut best: HashMap<&str, &CandidatePair> = HashMap::new();
    for p in pairs {
        best.entry(p.src_id.as_str())
            .and_modify(|b| {
                let better = p
                    .distance
                    .total_cmp(&b.distance)
                    .then_with(|| p.tgt_id.cmp(&b.tgt_id))
                    .is_lt();
                if better {
                    *b = p;
                }
            })
            .or_insert(p);
    }
    let mut out: Vec<CandidatePair> = best.into_values().cloned().collect();
    sort_candidates(&mut out);
    out
}

/// Sentence length distribution in whitespace words.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthHistogram {
    pub bins: BTreeMap<usize, usize>,
    pub total: usize,
    /// 0 when the corpus is empty, see `mean_defined`.
    pub mean_length: f64,
    pub mean_defined: bool,
}

impl LengthHistogram {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("length\tcount\n");
        for (len, count) in &self.bins {
            out.push_str(&format!("{len}\t{count}\n"));
        }
        out.push_str(&format!("#total\t{}\n", self.total));
        if self.mean_defined {
            out.push_str(&format!("#mean\t{:.4}\n", self.mean_length));
        } else {
            out.push_str("#mean\tNA\n");
        }
        out
    }
}

pub fn length_histogram(corpus: &Corpus) -> LengthHistogram {
    let mut bins = BTreeMap::new();
    let mut sum = 0usize;
    for r in corpus {
        let n = count_words(&r.text);
        *bins.entry(n).or_insert(0) += 1;
        sum += n;
    }
    let total = corpus.len();
    LengthHistogram {
        bins,
        total,
        mean_length: if total > 0 { sum as f64 / total as f64 } else { 0.0 },
        mean_defined: total > 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simsearch::build_ivf;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, dim: usize, seed: u64, prefix: &str) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ids = (0..n).map(|i| format!("{prefix}{i:04}")).collect();
        EmbeddingMatrix::new(ids, dim, data).unwrap()
    }

    fn corpus_for(m: &EmbeddingMatrix, lang: &str) -> Corpus {
        Corpus::new(
            lang,
            m.ids()
                .iter()
                .map(|id| crate::SentenceRecord::new(id.clone(), lang, "x"))
                .collect(),
        )
        .unwrap()
    }

    fn opts(k: usize, t: f32) -> MineOptions {
        MineOptions {
            search: SearchParams::with_k(k),
            threshold: Threshold::new(t).unwrap(),
            bidirectional: false,
        }
    }

    #[test]
    fn threshold_range() {
        assert!(Threshold::new(-0.1).is_err());
        assert!(Threshold::new(2.1).is_err());
        assert!(Threshold::new(f32::NAN).is_err());
        assert_eq!(Threshold::default().value(), 0.55);
    }

    #[test]
    fn identical_bitext_scores_zero() {
        let m = random_matrix(10, 8, 1, "s");
        let c = corpus_for(&m, "en");
        let scored = score_bitext(&c, &c, &m, &m).unwrap();
        assert_eq!(scored.len(), 10);
        assert!(scored.iter().all(|p| p.distance <= 1e-6));
    }

    #[test]
    fn bitext_scores_match_naive_dot_products() {
        let es = random_matrix(50, 33, 2, "s");
        let et = random_matrix(50, 33, 3, "t");
        let (cs, ct) = (corpus_for(&es, "en"), corpus_for(&et, "de"));
        let scored = score_bitext(&cs, &ct, &es, &et).unwrap();
        for (i, p) in scored.iter().enumerate() {
            let dot: f64 = es.row(i).iter().zip(et.row(i)).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
            assert!((f64::from(p.distance) - (1.0 - dot)).abs() < 1e-5);
            assert_eq!(p.src_id, es.ids()[i]);
        }
    }

    #[test]
    fn bitext_length_mismatch() {
        let es = random_matrix(3, 4, 2, "s");
        let et = random_matrix(2, 4, 3, "t");
        let r = score_bitext(&corpus_for(&es, "en"), &corpus_for(&et, "de"), &es, &et);
        assert!(matches!(r, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn filter_edges() {
        let pairs = vec![
            CandidatePair::new("a", "b", 0.3),
            CandidatePair::new("c", "d", 1.7),
            CandidatePair::new("e", "f", 0.9),
        ];
        assert_eq!(filter_by_threshold(&pairs, Threshold::new(2.0).unwrap()), pairs);
        assert!(filter_by_threshold(&pairs, Threshold::new(0.0).unwrap()).is_empty());
        let kept = filter_by_threshold(&pairs, Threshold::new(1.0).unwrap());
        assert_eq!(kept.iter().map(|p| p.src_id.as_str()).collect::<Vec<_>>(), vec!["a", "e"]);
    }

    #[test]
    fn sweep_counts() {
        let pairs = vec![CandidatePair::new("a", "b", 0.3), CandidatePair::new("c", "d", 0.9)];
        assert_eq!(sweep(&pairs, &[2.0]).unwrap().points, vec![(2.0, 2)]);
        assert_eq!(sweep(&pairs, &[0.3, 0.5]).unwrap().points, vec![(0.3, 1), (0.5, 1)]);
        assert!(sweep(&pairs, &[0.5, 0.3]).is_err());
    }

    #[test]
    fn grid_is_inclusive() {
        let g = threshold_grid(0.8, 1.2, 0.05).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], 0.8);
        assert_eq!(*g.last().unwrap(), 1.2);
        assert!(threshold_grid(1.0, 0.5, 0.1).is_err());
        assert!(threshold_grid(0.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn mining_copies_recovers_every_source() {
        let src = random_matrix(40, 16, 4, "s");
        let tgt = EmbeddingMatrix::new(
            src.ids().iter().map(|i| format!("t{i}")).collect(),
            16,
            src.as_slice().to_vec(),
        )
        .unwrap();
        let pairs = mine(&src, &tgt, &opts(20, 0.01), None).unwrap();
        assert!(pairs.len() >= src.len());
        for id in src.ids() {
            assert!(pairs.iter().any(|p| &p.src_id == id && p.tgt_id == format!("t{id}")));
        }
    }

    #[test]
    fn threshold_below_minimum_distance_yields_nothing() {
        let src = random_matrix(20, 16, 5, "s");
        let tgt = random_matrix(20, 16, 6, "t");
        let min = src
            .rows()
            .flat_map(|s| tgt.rows().map(move |t| cosine_distance(s, t)))
            .fold(f32::INFINITY, f32::min);
        let pairs = mine(&src, &tgt, &opts(20, (min - 1e-3).max(0.0)), None).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn full_cross_product_at_max_threshold() {
        let src = random_matrix(30, 8, 7, "s");
        let tgt = random_matrix(25, 8, 8, "t");
        let pairs = mine(&src, &tgt, &opts(25, 2.0), None).unwrap();
        let mut oracle = BTreeSet::new();
        for s in src.ids() {
            for t in tgt.ids() {
                oracle.insert((s.clone(), t.clone()));
            }
        }
        let got: BTreeSet<_> = pairs.iter().map(|p| (p.src_id.clone(), p.tgt_id.clone())).collect();
        assert_eq!(got.len(), pairs.len());
        assert_eq!(got, oracle);
        assert!(pairs.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn duplicate_ids_keep_smallest_distance() {
        let src = EmbeddingMatrix::new(vec!["s".into()], 2, vec![1.0, 0.0]).unwrap();
        let tgt = EmbeddingMatrix::new(vec!["t".into(), "t".into()], 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let pairs = mine(&src, &tgt, &opts(2, 2.0), None).unwrap();
        assert_eq!(pairs, vec![CandidatePair::new("s", "t", 0.0)]);
    }

    #[test]
    fn target_order_does_not_matter() {
        let src = random_matrix(30, 12, 9, "s");
        let tgt = random_matrix(60, 12, 10, "t");
        let reversed: Vec<usize> = (0..tgt.len()).rev().collect();
        let a = mine(&src, &tgt, &opts(5, 1.0), None).unwrap();
        let b = mine(&src, &tgt.select(&reversed), &opts(5, 1.0), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn index_path_matches_exact_when_probing_everything() {
        let src = random_matrix(30, 12, 11, "s");
        let tgt = random_matrix(200, 12, 12, "t");
        let idx = build_ivf(&tgt, 8, 1).unwrap();
        let mut o = opts(5, 1.2);
        o.search.nprobe = 8;
        assert_eq!(mine(&src, &tgt, &o, Some(&idx)).unwrap(), mine(&src, &tgt, &o, None).unwrap());
        let other = random_matrix(200, 12, 13, "u");
        assert!(mine(&src, &other, &o, Some(&idx)).is_err());
    }

    #[test]
    fn bidirectional_is_a_subset() {
        let src = random_matrix(50, 8, 14, "s");
        let tgt = random_matrix(50, 8, 15, "t");
        let fwd = mine(&src, &tgt, &opts(3, 2.0), None).unwrap();
        let mut o = opts(3, 2.0);
        o.bidirectional = true;
        let both = mine(&src, &tgt, &o, None).unwrap();
        assert!(both.len() < fwd.len());
        assert!(both.iter().all(|p| fwd.contains(p)));
    }

    #[test]
    fn bucc_prediction_rules() {
        let src = random_matrix(40, 16, 16, "s");
        // planted one-to-one: target i is a slightly perturbed copy of source i
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut data = src.as_slice().to_vec();
        for x in data.iter_mut() {
            let noise: f32 = StandardNormal.sample(&mut rng);
            *x += 0.02 * noise;
        }
        let tgt_ids: Vec<String> = src.ids().iter().map(|i| format!("t{i}")).collect();
        let tgt = EmbeddingMatrix::new(tgt_ids, 16, data).unwrap();
        let params = SearchParams::default();
        let planted: BTreeSet<_> = src.ids().iter().map(|i| (i.clone(), format!("t{i}"))).collect();
        let pred = predict_bucc(&src, &tgt, Threshold::new(0.5).unwrap(), &params, None).unwrap();
        assert_eq!(pred, planted);
        assert!(predict_bucc(&src, &tgt, Threshold::new(0.0).unwrap(), &params, None)
            .unwrap()
            .is_empty());

        let mut prev = usize::MAX;
        for t in [2.0, 1.0, 0.5, 0.01, 0.0] {
            let n = predict_bucc(&src, &tgt, Threshold::new(t).unwrap(), &params, None).unwrap().len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn best_per_source_keeps_closest() {
        let pairs = vec![
            CandidatePair::new("a", "x", 0.4),
            CandidatePair::new("a", "y", 0.2),
            CandidatePair::new("b", "z", 0.3),
            CandidatePair::new("b", "w", 0.3),
        ];
        let best = best_per_source(&pairs);
        assert_eq!(
            best,
            vec![CandidatePair::new("a", "y", 0.2), CandidatePair::new("b", "w", 0.3)]
        );
    }

    #[test]
    fn histogram() {
        let h = length_histogram(&Corpus::from_texts("en", &["a b", "c d e f"]));
        assert_eq!(h.mean_length, 3.0);
        assert_eq!(h.bins, BTreeMap::from([(2, 1), (4, 1)]));
        let empty = length_histogram(&Corpus::from_texts::<&str>("en", &[]));
        assert!(empty.bins.is_empty());
        assert_eq!(empty.mean_length, 0.0);
        assert!(!empty.mean_defined);
        assert!(empty.to_tsv().contains("#mean\tNA"));
    }

    #[test]
    fn threshold_compares_at_file_resolution() {
        let t = Threshold::new(0.649930).unwrap();
        assert!(t.accepts(0.649_930_4));
        assert!(!t.accepts(0.649_931));
    }

    proptest! {
        #[test]
        fn quantization_matches_printed_form(d in 0.0f32..=2.0) {
            let printed: f64 = format!("{d:.6}").parse().unwrap();
            prop_assert_eq!(quantize_distance(d), (printed * 1e6).round() as i64);
        }

        #[test]
        fn sweep_is_monotone(
            dists in proptest::collection::vec(0.0f32..=2.0, 0..200),
            mut ts in proptest::collection::vec(0.0f32..=2.0, 1..30),
        ) {
            ts.sort_by(f32::total_cmp);
            let pairs: Vec<_> = dists.iter().enumerate().map(|(i, d)| CandidatePair::new(format!("s{i}"), "t", *d)).collect();
            let curve = sweep(&pairs, &ts).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            for (t, n) in &curve.points {
                prop_assert_eq!(*n, filter_by_threshold(&pairs, Threshold::new(*t).unwrap()).len());
            }
        }

        #[test]
        fn predictions_at_most_one_per_source(seed in 0u64..1000) {
            let src = random_matrix(15, 6, seed, "s");
            let tgt = random_matrix(15, 6, seed + 1, "t");
            let pred = predict_bucc(&src, &tgt, Threshold::new(2.0).unwrap(), &SearchParams::default(), None).unwrap();
            let sources: BTreeSet<_> = pred.iter().map(|(s, _)| s).collect();
            prop_assert_eq!(sources.len(), pred.len());
            prop_assert_eq!(pred.len(), 15);
        }
    }
}
