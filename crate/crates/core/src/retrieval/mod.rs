//! Cosine retrieval over unit-normalized `f32` vectors: an exhaustive
//! baseline, an inverted-file index with a k-means coarse quantizer, and the
//! MRR / latency / memory benchmark.

mod bench;
mod ivf;
mod kmeans;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;

pub use bench::{bench, time_search, BenchReport, QuerySet};
pub use ivf::{build_ivf, build_ivf_f32, decode_index, encode_index, load_index, save_index, search, IvfIndex, PostingList, INDEX_MAGIC};
pub use kmeans::{kmeans, KMeans};

pub const DEFAULT_NLIST: usize = 32;
pub const DEFAULT_NPROBE: usize = 5;
pub const MRR_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: u64,
    pub score: f32,
}

/// Descending score, then ascending id.
pub(crate) fn hit_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

pub(crate) fn top_k(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_unstable_by(hit_order);
    hits
}

/// The scoring kernel shared by every search path, so exhaustive and
/// fully-probed inverted-file results agree exactly.
#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

pub(crate) fn unit_f32(v: &[f64]) -> Result<Vec<f32>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Domain("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| (x / n) as f32).collect())
}

pub(crate) fn unit_f32_in_place(v: &mut [f32]) -> Result<()> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Domain("cannot normalize a zero or non-finite vector".into()));
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    Ok(())
}

pub(crate) fn check_unique(ids: &[u64]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(*id) {
            return Err(Error::Input(format!("duplicate vector id {id}")));
        }
    }
    Ok(())
}

/// Exhaustive store: every vector is scored for every query.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
}

impl FlatIndex {
    pub fn new(vectors: &EmbeddingMatrix, ids: &[u64]) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::Shape(format!("{} ids for {} vectors", ids.len(), vectors.rows())));
        }
        let data: Vec<f32> = vectors.data().iter().map(|x| *x as f32).collect();
        Self::from_f32(data, vectors.cols(), ids)
    }

    /// Rows are normalized exactly as the inverted-file builder does it.
    pub fn from_f32(mut data: Vec<f32>, dim: usize, ids: &[u64]) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim {
            return Err(Error::Shape(format!("{} values for {} vectors of width {dim}", data.len(), ids.len())));
        }
        check_unique(ids)?;
        for row in data.chunks_exact_mut(dim) {
            unit_f32_in_place(row)?;
        }
        Ok(Self {
            dim,
            ids: ids.to_vec(),
            vectors: data,
        })
    }

    /// The vectors an inverted-file index already holds, copied bit for bit.
    pub fn from_ivf(index: &IvfIndex) -> Self {
        let mut ids = Vec::with_capacity(index.total());
        let mut vectors = Vec::with_capacity(index.total() * index.dim());
        for list in index.lists() {
            ids.extend_from_slice(&list.ids);
            vectors.extend_from_slice(&list.vectors);
        }
        Self {
            dim: index.dim(),
            ids,
            vectors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub(crate) fn check_query(dim: usize, query: &[f64], k: usize) -> Result<Vec<f32>> {
    if query.len() != dim {
        return Err(Error::Shape(format!("query has width {}, index stores {dim}", query.len())));
    }
    if k == 0 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    unit_f32(query)
}

/// Full-scan cosine top-k.
pub fn exact_search(corpus: &FlatIndex, query: &[f64], k: usize) -> Result<Vec<Hit>> {
    let q = check_query(corpus.dim, query, k)?;
    let hits = corpus
        .ids
        .iter()
        .zip(corpus.vectors.chunks_exact(corpus.dim))
        .map(|(&id, v)| Hit {
            id,
            score: dot_f32(&q, v),
        })
        .collect();
    Ok(top_k(hits, k))
}

/// Mean reciprocal rank of each query's gold id within the first ten
/// results; a gold id ranked lower contributes zero.
pub fn mrr_at_10(rankings: &[(u64, Vec<u64>)], gold: &HashMap<u64, u64>) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::Input("no rankings to score".into()));
    }
    let mut total = 0.0;
    for (q, ranked) in rankings {
        let g = gold
            .get(q)
            .ok_or_else(|| Error::Input(format!("query {q} has no gold id")))?;
        if let Some(pos) = ranked.iter().take(MRR_CUTOFF).position(|id| id == g) {
            total += 1.0 / (pos + 1) as f64;
        }
    }
    Ok(total / rankings.len() as f64)
}

/// Mean fraction of each reference list found in the matching candidate list.
pub fn recall(candidates: &[Vec<u64>], reference: &[Vec<u64>]) -> Result<f64> {
    if candidates.len() != reference.len() || reference.is_empty() {
        return Err(Error::Shape("recall needs equally many non-empty result lists".into()));
    }
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(reference) {
        if r.is_empty() {
            return Err(Error::Input("empty reference list".into()));
        }
        let set: HashSet<&u64> = c.iter().collect();
        total += r.iter().filter(|id| set.contains(id)).count() as f64 / r.len() as f64;
    }
    Ok(total / reference.len() as f64)
}
