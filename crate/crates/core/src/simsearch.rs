//! k-nearest-neighbor search under cosine distance.
//!
//! [`knn_exact`] is the reference: a blocked brute-force scan. [`IvfIndex`]
//! partitions targets by their nearest k-means centroid and only scans the
//! `nprobe` closest partitions per query. Both paths compute distances with
//! the same kernel, so probing every partition reproduces exact search bit
//! for bit.
//!
//! Neighbor lists are sorted by ascending distance; equal distances are
//! ordered by target index. Results never depend on the thread count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus_io::{self, EmbeddingMatrix};
use crate::embed::cosine_distance;
use crate::vector::squared_l2;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_NPROBE: usize = 32;
pub const DEFAULT_BLOCK_ROWS: usize = 256;
pub const DEFAULT_KMEANS_ITERS: usize = 10;
/// Training points per centroid; larger target sets are subsampled.
pub const DEFAULT_TRAIN_PER_LIST: usize = 256;

const QUERY_BLOCK: usize = 32;

pub const INDEX_MAGIC: &[u8; 4] = b"BIVF";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f32,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(PartialEq)]
struct HeapItem(Neighbor);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `k` smallest neighbors seen so far under (distance, index).
struct TopK {
    k: usize,
    heap: BinaryHeap<HeapItem>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn push(&mut self, index: usize, distance: f32) {
        let n = Neighbor { index, distance };
        if self.heap.len() < self.k {
            self.heap.push(HeapItem(n));
        } else if let Some(mut top) = self.heap.peek_mut() {
            if n.key_cmp(&top.0) == Ordering::Less {
                *top = HeapItem(n);
            }
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|h| h.0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub k: usize,
    pub nprobe: usize,
    /// Target rows per tile in brute-force search.
    pub block_rows: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            nprobe: DEFAULT_NPROBE,
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }
}

impl SearchParams {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.nprobe == 0 {
            return Err(Error::validation("nprobe must be at least 1"));
        }
        if self.block_rows == 0 {
            return Err(Error::validation("block_rows must be at least 1"));
        }
        Ok(())
    }
}

fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Exact k-NN of every query row among the target rows.
pub fn knn_exact(queries: &EmbeddingMatrix, targets: &EmbeddingMatrix, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    knn_exact_with(queries, targets, &SearchParams::with_k(k))
}

/// [`knn_exact`] with an explicit tile size.
pub fn knn_exact_with(
    queries: &EmbeddingMatrix,
    targets: &EmbeddingMatrix,
    params: &SearchParams,
) -> Result<Vec<Vec<Neighbor>>> {
    params.validate()?;
    check_dims(targets.dim(), queries.dim())?;
    if targets.is_empty() {
        return Err(Error::validation("cannot search an empty target set"));
    }
    let dim = targets.dim();
    let k = params.k.min(targets.len());
    let tile = params.block_rows * dim;
    let target_data = targets.as_slice();

    let blocks: Vec<Vec<Vec<Neighbor>>> = queries
        .as_slice()
        .par_chunks(QUERY_BLOCK * dim)
        .map(|qblock| {
            let mut tops: Vec<TopK> = (0..qblock.len() / dim).map(|_| TopK::new(k)).collect();
            for (b, tblock) in target_data.chunks(tile).enumerate() {
                let base = b * params.block_rows;
                for (q, top) in qblock.chunks_exact(dim).zip(tops.iter_mut()) {
                    for (j, t) in tblock.chunks_exact(dim).enumerate() {
                        top.push(base + j, cosine_distance(q, t));
                    }
                }
            }
            tops.into_iter().map(TopK::into_sorted).collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Row-major centroid matrix produced by [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    dim: usize,
    data: Vec<f32>,
}

impl Centroids {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Index of the nearest centroid by squared L2 (ties to the lower index)
    /// and the squared distance.
    pub fn nearest(&self, v: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::INFINITY);
        for (c, row) in self.data.chunks_exact(self.dim).enumerate() {
            let d = squared_l2(v, row);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }
}

/// Lloyd's k-means with k-means++ seeding under squared Euclidean distance.
///
/// Clusters that end up empty are re-seeded with the points farthest from
/// their assigned centroid. Deterministic for a fixed seed.
pub fn kmeans(vectors: &EmbeddingMatrix, nlist: usize, iters: usize, seed: u64) -> Result<Centroids> {
    kmeans_rows(vectors.as_slice(), vectors.dim(), nlist, iters, seed)
}

/// [`kmeans`] over raw row-major data.
pub fn kmeans_rows(data: &[f32], dim: usize, nlist: usize, iters: usize, seed: u64) -> Result<Centroids> {
    if dim == 0 {
        return Err(Error::validation("dimension must be positive"));
    }
    let n = data.len() / dim;
    if nlist == 0 || nlist > n {
        return Err(Error::validation(format!(
            "nlist must be between 1 and the number of vectors ({n}), got {nlist}"
        )));
    }
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut d2: Vec<f32> = (0..n)
        .into_par_iter()
        .map(|i| squared_l2(row(i), row(first)))
        .collect();
    while chosen.len() < nlist {
        let total: f64 = d2.iter().map(|&x| f64::from(x)).sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &x) in d2.iter().enumerate() {
                if x <= 0.0 {
                    continue;
                }
                acc += f64::from(x);
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // every remaining point coincides with a chosen one
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        let c = row(next);
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            *d = d.min(squared_l2(row(i), c));
        });
    }
    let mut centroids = Centroids {
        dim,
        data: chosen.iter().flat_map(|&i| row(i).iter().copied()).collect(),
    };

    for _ in 0..iters {
        let assign: Vec<(usize, f32)> = (0..n)
            .into_par_iter()
            .map(|i| centroids.nearest(row(i)))
            .collect();
        let mut sums = vec![0f64; nlist * dim];
        let mut counts = vec![0usize; nlist];
        for (i, &(c, _)) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += f64::from(x);
            }
        }
        // farthest points first, ties by index
        let mut far: Vec<usize> = Vec::new();
        if counts.contains(&0) {
            far = (0..n).collect();
            far.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
        }
        let mut far = far.into_iter();
        for c in 0..nlist {
            let dst = &mut centroids.data[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (o, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *o = (s * inv) as f32;
                }
            } else if let Some(p) = far.next() {
                dst.copy_from_slice(row(p));
            }
        }
    }
    Ok(centroids)
}

/// Inverted-file index over a fixed set of target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    centroids: Centroids,
    /// `offsets[c]..offsets[c + 1]` is the slice of list `c` in `rows`/`vectors`.
    offsets: Vec<usize>,
    rows: Vec<u32>,
    vectors: Vec<f32>,
    ids: Vec<String>,
    trained_on: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IvfBuildParams {
    pub nlist: usize,
    pub iters: usize,
    pub seed: u64,
    pub train_per_list: usize,
}

impl IvfBuildParams {
    pub fn new(nlist: usize, seed: u64) -> Self {
        Self {
            nlist,
            iters: DEFAULT_KMEANS_ITERS,
            seed,
            train_per_list: DEFAULT_TRAIN_PER_LIST,
        }
    }
}

/// `ceil(sqrt(n))`, at least 1.
pub fn default_nlist(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).max(1)
}

/// Builds an index with default k-means settings.
pub fn build_ivf(targets: &EmbeddingMatrix, nlist: usize, seed: u64) -> Result<IvfIndex> {
    build_ivf_with(targets, &IvfBuildParams::new(nlist, seed))
}

pub fn build_ivf_with(targets: &EmbeddingMatrix, params: &IvfBuildParams) -> Result<IvfIndex> {
    let n = targets.len();
    let dim = targets.dim();
    if params.nlist == 0 || params.nlist > n {
        return Err(Error::validation(format!(
            "nlist must be between 1 and the number of vectors ({n}), got {}",
            params.nlist
        )));
    }
    let cap = params.nlist.saturating_mul(params.train_per_list.max(1));
    let centroids = if n > cap {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x005E_ED0F_7A11);
        let mut sample = index::sample(&mut rng, n, cap).into_vec();
        sample.sort_unstable();
        let data: Vec<f32> = sample.iter().flat_map(|&i| targets.row(i).iter().copied()).collect();
        kmeans_rows(&data, dim, params.nlist, params.iters, params.seed)?
    } else {
        kmeans(targets, params.nlist, params.iters, params.seed)?
    };
    let trained_on = n.min(cap);

    let assign: Vec<usize> = targets
        .as_slice()
        .par_chunks(dim)
        .map(|v| centroids.nearest(v).0)
        .collect();
    let mut offsets = vec![0usize; params.nlist + 1];
    for &c in &assign {
        offsets[c + 1] += 1;
    }
    for c in 0..params.nlist {
        offsets[c + 1] += offsets[c];
    }
    let mut cursor = offsets.clone();
    let mut rows = vec![0u32; n];
    let mut vectors = vec![0f32; n * dim];
    for (i, &c) in assign.iter().enumerate() {
        let slot = cursor[c];
        cursor[c] += 1;
        rows[slot] = corpus_io::to_u32(i, "row index")?;
        vectors[slot * dim..(slot + 1) * dim].copy_from_slice(targets.row(i));
    }
    Ok(IvfIndex {
        centroids,
        offsets,
        rows,
        vectors,
        ids: targets.ids().to_vec(),
        trained_on,
    })
}

impl IvfIndex {
    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    pub fn nlist(&self) -> usize {
        self.centroids.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn trained_on(&self) -> usize {
        self.trained_on
    }

    pub fn centroids(&self) -> &Centroids {
        &self.centroids
    }

    /// Ids of the indexed rows, in original row order.
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Original row indices stored in list `c`.
    pub fn list(&self, c: usize) -> &[u32] {
        &self.rows[self.offsets[c]..self.offsets[c + 1]]
    }

    pub fn list_lengths(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn probe_order(&self, q: &[f32], nprobe: usize) -> Vec<usize> {
        let mut order: Vec<(f32, usize)> = self
            .centroids
            .as_slice()
            .chunks_exact(self.dim())
            .enumerate()
            .map(|(c, row)| (squared_l2(q, row), c))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.truncate(nprobe);
        order.into_iter().map(|(_, c)| c).collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = [
            INDEX_VERSION,
            corpus_io::to_u32(self.len(), "row count")?,
            corpus_io::to_u32(self.dim(), "dimension")?,
            corpus_io::to_u32(self.nlist(), "nlist")?,
            corpus_io::to_u32(self.trained_on, "training size")?,
        ];
        let res: io::Result<()> = (|| {
            w.write_all(INDEX_MAGIC)?;
            for v in header {
                w.write_all(&v.to_le_bytes())?;
            }
            corpus_io::write_f32s(&mut w, self.centroids.as_slice())?;
            for &o in &self.offsets {
                w.write_all(&(o as u64).to_le_bytes())?;
            }
            for &r in &self.rows {
                w.write_all(&r.to_le_bytes())?;
            }
            corpus_io::write_f32s(&mut w, &self.vectors)?;
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))?;
        corpus_io::write_ids(&self.ids, &corpus_io::ids_path(path))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let format_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let actual_len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| format_err("file too short for header".into()))?;
        if &magic != INDEX_MAGIC {
            return Err(format_err(format!("bad magic {magic:?}, expected \"BIVF\"")));
        }
        let mut header = [0u32; 5];
        for h in header.iter_mut() {
            *h = corpus_io::read_u32(&mut r).map_err(|_| format_err("file too short for header".into()))?;
        }
        let [version, n, dim, nlist, trained_on] = header.map(|v| v as usize);
        if version != INDEX_VERSION as usize {
            return Err(format_err(format!("unsupported version {version}")));
        }
        if dim == 0 || nlist == 0 {
            return Err(format_err("dimension and nlist must be positive".into()));
        }
        let expected = 24 + 4 * (nlist * dim) as u64 + 8 * (nlist as u64 + 1) + 4 * n as u64 + 4 * (n * dim) as u64;
        if actual_len != expected {
            return Err(format_err(format!(
                "expected {expected} bytes for {n} rows, {nlist} lists, dim {dim}; found {actual_len}"
            )));
        }
        let body: io::Result<IndexBody> = (|| {
            let mut cdata = vec![0f32; nlist * dim];
            corpus_io::read_f32s(&mut r, &mut cdata)?;
            let mut offsets = Vec::with_capacity(nlist + 1);
            for _ in 0..=nlist {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                offsets.push(u64::from_le_bytes(b) as usize);
            }
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                rows.push(corpus_io::read_u32(&mut r)?);
            }
            let mut vectors = vec![0f32; n * dim];
            for chunk in vectors.chunks_mut(dim * 1024) {
                corpus_io::read_f32s(&mut r, chunk)?;
            }
            Ok((cdata, offsets, rows, vectors))
        })();
        let (cdata, offsets, rows, vectors) = body.map_err(|e| Error::io(path, e))?;
        if offsets[0] != 0 || offsets[nlist] != n || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(format_err("inconsistent list offsets".into()));
        }
        let mut seen = vec![false; n];
        for &row in &rows {
            let row = row as usize;
            if row >= n || std::mem::replace(&mut seen[row], true) {
                return Err(format_err(format!("row {row} missing or listed twice")));
            }
        }
        let ids = corpus_io::read_ids(&corpus_io::ids_path(path))?;
        if ids.len() != n {
            return Err(format_err(format!("id sidecar has {} ids, index has {n} rows", ids.len())));
        }
        Ok(Self {
            centroids: Centroids { dim, data: cdata },
            offsets,
            rows,
            vectors,
            ids,
            trained_on,
        })
    }
}

/// Approximate k-NN: scans only the `params.nprobe` lists whose centroids are
/// closest to each query. Returns at most `k` neighbors per query, indexed by
/// original target row.
/// Centroids, list offsets, row ids and list-major vectors.
type IndexBody = (Vec<f32>, Vec<usize>, Vec<u32>, Vec<f32>);

pub fn knn_ivf(index: &IvfIndex, queries: &EmbeddingMatrix, params: &SearchParams) -> Result<Vec<Vec<Neighbor>>> {
    params.validate()?;
    check_dims(index.dim(), queries.dim())?;
    if params.nprobe > index.nlist() {
        return Err(Error::validation(format!(
            "nprobe {} exceeds nlist {}",
            params.nprobe,
            index.nlist()
        )));
    }
    let dim = index.dim();
    let k = params.k.min(index.len().max(1));
    Ok(queries
        .as_slice()
        .par_chunks(dim)
        .map(|q| {
            let mut top = TopK::new(k);
            for c in index.probe_order(q, params.nprobe) {
                let (lo, hi) = (index.offsets[c], index.offsets[c + 1]);
                for (slot, v) in (lo..hi).zip(index.vectors[lo * dim..hi * dim].chunks_exact(dim)) {
                    top.push(index.rows[slot] as usize, cosine_distance(q, v));
                }
            }
            top.into_sorted()
        })
        .collect())
}

/// Fraction of exact neighbors found by an approximate search, averaged over
/// queries.
pub fn recall_at_k(exact: &[Vec<Neighbor>], approx: &[Vec<Neighbor>]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let total: f64 = exact
        .iter()
        .zip(approx)
        .map(|(e, a)| {
            if e.is_empty() {
                return 1.0;
            }
            let hits = e.iter().filter(|n| a.iter().any(|m| m.index == n.index)).count();
            hits as f64 / e.len() as f64
        })
        .sum();
    total / exact.len() as f64
}
