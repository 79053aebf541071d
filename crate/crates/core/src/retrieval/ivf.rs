use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{atomic_write, read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::{EmbeddingMatrix, Matrix};

use super::{check_query, check_unique, dot_f32, kmeans, top_k, unit_f32_in_place, Hit};

/// k-means trains on at most this many points per cell.
pub const TRAIN_POINTS_PER_CELL: usize = 256;
pub const KMEANS_ITERS: usize = 25;
pub const INDEX_MAGIC: &[u8; 4] = b"HPDI";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostingList {
    pub ids: Vec<u64>,
    /// Row-major unit vectors, one per id.
    pub vectors: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    dim: usize,
    /// `nlist×dim` unit rows.
    centroids: Vec<f32>,
    lists: Vec<PostingList>,
    total: usize,
}

impl IvfIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, cell: usize) -> &[f32] {
        &self.centroids[cell * self.dim..(cell + 1) * self.dim]
    }

    pub fn lists(&self) -> &[PostingList] {
        &self.lists
    }

    /// Cell whose centroid has the largest inner product with `v`, lowest
    /// index on ties.
    pub fn nearest_cell(&self, v: &[f32]) -> usize {
        let mut best = (0, f32::NEG_INFINITY);
        for c in 0..self.nlist() {
            let s = dot_f32(v, self.centroid(c));
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }

    /// Bytes of stored vector values.
    pub fn payload_bytes(&self) -> usize {
        self.total * self.dim * 4
    }

    /// Stored vectors, centroids, one `u64` id per vector and one `u64`
    /// length per posting list.
    pub fn memory_bytes(&self) -> usize {
        self.payload_bytes() + self.nlist() * self.dim * 4 + self.total * 8 + self.nlist() * 8
    }
}

pub fn build_ivf(vectors: &EmbeddingMatrix, ids: &[u64], nlist: usize, seed: u64) -> Result<IvfIndex> {
    let data: Vec<f32> = vectors.data().iter().map(|x| *x as f32).collect();
    build_ivf_f32(data, vectors.cols(), ids, nlist, seed)
}

/// Build from a row-major `f32` buffer. Rows are normalized in place;
/// k-means trains on a seeded subsample once the corpus exceeds
/// `TRAIN_POINTS_PER_CELL · nlist`, then every vector goes to its nearest
/// centroid.
pub fn build_ivf_f32(mut data: Vec<f32>, dim: usize, ids: &[u64], nlist: usize, seed: u64) -> Result<IvfIndex> {
    if dim == 0 || data.len() != ids.len() * dim {
        return Err(Error::Shape(format!(
            "{} values do not form {} vectors of width {dim}",
            data.len(),
            ids.len()
        )));
    }
    let n = ids.len();
    if nlist == 0 || n < nlist {
        return Err(Error::Input(format!("need at least nlist = {nlist} vectors, got {n}")));
    }
    check_unique(ids)?;
    for row in data.chunks_exact_mut(dim) {
        unit_f32_in_place(row)?;
    }

    let cap = TRAIN_POINTS_PER_CELL.saturating_mul(nlist);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<usize> = if n > cap {
        let mut s = rand::seq::index::sample(&mut rng, n, cap).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let train = Matrix::from_fn(sample.len(), dim, |r, c| data[sample[r] * dim + c] as f64);
    let km = kmeans(&train, nlist, seed, KMEANS_ITERS)?;
    let centroids: Vec<f32> = km.centroids.data().iter().map(|x| *x as f32).collect();

    let mut index = IvfIndex {
        dim,
        centroids,
        lists: vec![PostingList::default(); nlist],
        total: n,
    };
    for (row, &id) in data.chunks_exact(dim).zip(ids) {
        let c = index.nearest_cell(row);
        index.lists[c].ids.push(id);
        index.lists[c].vectors.extend_from_slice(row);
    }
    Ok(index)
}

/// Scan the `nprobe` cells whose centroids score highest against the query
/// and return the top `k` stored vectors by cosine.
pub fn search(index: &IvfIndex, query: &[f64], k: usize, nprobe: usize) -> Result<Vec<Hit>> {
    let q = check_query(index.dim, query, k)?;
    if nprobe == 0 || nprobe > index.nlist() {
        return Err(Error::Input(format!("nprobe must lie in 1..={}, got {nprobe}", index.nlist())));
    }
    let mut cells: Vec<(f32, usize)> = (0..index.nlist()).map(|c| (dot_f32(&q, index.centroid(c)), c)).collect();
    if nprobe < cells.len() {
        cells.select_nth_unstable_by(nprobe - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cells.truncate(nprobe);
    }
    let mut hits = Vec::new();
    for (_, c) in cells {
        let list = &index.lists[c];
        hits.extend(list.ids.iter().zip(list.vectors.chunks_exact(index.dim)).map(|(&id, v)| Hit {
            id,
            score: dot_f32(&q, v),
        }));
    }
    Ok(top_k(hits, k))
}

/// Magic, `dim` u32, `nlist` u32, `total` u64, the centroid block, then per
/// cell its length (u64), ids (u64 each) and vectors (`f32`).
pub fn encode_index(index: &IvfIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(INDEX_MAGIC);
    w.u32(index.dim as u32);
    w.u32(index.nlist() as u32);
    w.u64(index.total as u64);
    w.f32s(&index.centroids);
    for l in &index.lists {
        w.u64(l.ids.len() as u64);
        for id in &l.ids {
            w.u64(*id);
        }
        w.f32s(&l.vectors);
    }
    w.finish()
}

pub fn decode_index(bytes: &[u8], path: &Path) -> Result<IvfIndex> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(INDEX_MAGIC)?;
    let dim = r.u32()? as usize;
    let nlist = r.u32()? as usize;
    let total = r.u64()? as usize;
    if dim == 0 || nlist == 0 {
        return Err(r.error("index dimensions must be positive"));
    }
    let centroids = r.f32s(nlist.checked_mul(dim).ok_or_else(|| r.error("header overflow"))?)?;
    let mut lists = Vec::with_capacity(nlist);
    let mut seen = 0usize;
    for _ in 0..nlist {
        let count = r.u64()? as usize;
        if count > r.remaining() / 8 {
            return Err(r.error("posting list longer than the file"));
        }
        let ids = (0..count).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let vectors = r.f32s(count * dim)?;
        seen += count;
        lists.push(PostingList { ids, vectors });
    }
    r.finish()?;
    if seen != total {
        return Err(Error::format(path, format!("posting lists hold {seen} vectors, header says {total}")));
    }
    let all: Vec<u64> = lists.iter().flat_map(|l| l.ids.iter().copied()).collect();
    check_unique(&all).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(IvfIndex {
        dim,
        centroids,
        lists,
        total,
    })
}

pub fn save_index(index: &IvfIndex, path: &Path) -> Result<()> {
    atomic_write(path, &encode_index(index))
}

pub fn load_index(path: &Path) -> Result<IvfIndex> {
    decode_index(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{exact_search, FlatIndex};
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn ids(n: usize) -> Vec<u64> {
        (0..n as u64).collect()
    }

    #[test]
    fn single_list() {
        let m = random(50, 6, 1);
        let idx = build_ivf(&m, &ids(50), 1, 0).unwrap();
        assert_eq!(idx.lists()[0].ids.len(), 50);
    }

    #[test]
    fn one_cell_per_vector() {
        let m = random(40, 6, 2);
        let idx = build_ivf(&m, &ids(40), 40, 0).unwrap();
        let mut all: Vec<u64> = idx.lists().iter().flat_map(|l| l.ids.clone()).collect();
        all.sort();
        assert_eq!(all, ids(40));
        assert!(idx.lists().iter().all(|l| l.ids.len() <= 3));
    }

    #[test]
    fn partition_matches_brute_force() {
        let m = random(1000, 64, 3);
        let idx = build_ivf(&m, &ids(1000), 32, 7).unwrap();
        assert_eq!(idx.lists().iter().map(|l| l.ids.len()).sum::<usize>(), 1000);
        for c in 0..32 {
            let n: f64 = idx.centroid(c).iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        for (cell, list) in idx.lists().iter().enumerate() {
            for v in list.vectors.chunks_exact(64) {
                let score = |c: usize| -> f64 { v.iter().zip(idx.centroid(c)).map(|(a, b)| *a as f64 * *b as f64).sum() };
                let best = (0..32).map(score).fold(f64::MIN, f64::max);
                assert!(score(cell) >= best - 1e-6);
            }
        }
    }

    #[test]
    fn full_probe_equals_exact() {
        let m = random(500, 16, 4);
        let idx = build_ivf(&m, &ids(500), 8, 1).unwrap();
        let flat = FlatIndex::new(&m, &ids(500)).unwrap();
        let q = random(30, 16, 5);
        for r in q.iter_rows() {
            assert_eq!(search(&idx, r, 10, 8).unwrap(), exact_search(&flat, r, 10).unwrap());
        }
        let hits = search(&idx, m.row(17), 1, 8).unwrap();
        assert_eq!(hits[0].id, 17);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let m = random(10, 4, 6);
        assert!(matches!(build_ivf(&m, &[1, 1, 2, 3, 4, 5, 6, 7, 8, 9], 2, 0), Err(Error::Input(_))));
        assert!(matches!(build_ivf(&m, &ids(10), 11, 0), Err(Error::Input(_))));
        let idx = build_ivf(&m, &ids(10), 2, 0).unwrap();
        assert!(matches!(search(&idx, &[1.0; 3], 1, 1), Err(Error::Shape(_))));
        assert!(matches!(search(&idx, &[1.0; 4], 1, 3), Err(Error::Input(_))));
        assert!(matches!(search(&idx, &[1.0; 4], 1, 0), Err(Error::Input(_))));
    }

    #[test]
    fn memory_accounting() {
        let m = random(100, 8, 7);
        let idx = build_ivf(&m, &ids(100), 4, 0).unwrap();
        assert_eq!(idx.payload_bytes(), 100 * 8 * 4);
        assert_eq!(idx.memory_bytes(), 100 * 8 * 4 + 4 * 8 * 4 + 100 * 8 + 4 * 8);
    }

    #[test]
    fn file_round_trip() {
        let m = random(60, 5, 8);
        let idx = build_ivf(&m, &ids(60), 3, 0).unwrap();
        let bytes = encode_index(&idx);
        assert_eq!(&bytes[..4], b"HPDI");
        assert_eq!(bytes.len(), 20 + 3 * 5 * 4 + 3 * 8 + 60 * 8 + 60 * 5 * 4);
        assert_eq!(decode_index(&bytes, Path::new("i")).unwrap(), idx);
        assert!(decode_index(&bytes[..bytes.len() - 4], Path::new("i")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.hpdi");
        save_index(&idx, &p).unwrap();
        assert_eq!(load_index(&p).unwrap(), idx);
    }
}
