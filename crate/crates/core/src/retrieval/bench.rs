use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;

use super::{mrr_at_10, search, IvfIndex};

const WARMUP_QUERIES: usize = 10;

#[derive(Debug, Clone)]
pub struct QuerySet {
    pub ids: Vec<u64>,
    pub vectors: EmbeddingMatrix,
}

impl QuerySet {
    pub fn new(ids: Vec<u64>, vectors: EmbeddingMatrix) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(Error::Shape(format!("{} query ids for {} vectors", ids.len(), vectors.rows())));
        }
        Ok(Self { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub mrr_at_10: f64,
    /// Median over repetitions of the search time for the whole query set,
    /// scaled to 1000 queries.
    pub time_ms_per_1k: f64,
    pub memory_bytes: usize,
    pub payload_bytes: usize,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "mrr@10,time_ms_per_1k,mem_bytes";

    pub fn to_csv(&self) -> String {
        format!("{}\n{},{},{}\n", Self::CSV_HEADER, self.mrr_at_10, self.time_ms_per_1k, self.memory_bytes)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "MRR@10        {:.4}", self.mrr_at_10).unwrap();
        writeln!(s, "ms / 1k q     {:.3}", self.time_ms_per_1k).unwrap();
        writeln!(s, "memory        {} bytes ({:.2} MB)", self.memory_bytes, self.memory_bytes as f64 / 1e6).unwrap();
        s
    }
}

/// Ranked ids for each query, then the median wall-clock time of `repeats`
/// full passes after a short untimed warm-up, in ms per 1000 queries.
pub fn time_search(
    index: &IvfIndex,
    queries: &QuerySet,
    k: usize,
    nprobe: usize,
    repeats: usize,
) -> Result<(Vec<(u64, Vec<u64>)>, f64)> {
    if queries.is_empty() {
        return Err(Error::Input("no benchmark queries".into()));
    }
    if repeats == 0 {
        return Err(Error::Input("at least one timed repetition is needed".into()));
    }
    for q in queries.vectors.iter_rows().take(WARMUP_QUERIES) {
        search(index, q, k, nprobe)?;
    }
    let mut rankings = Vec::new();
    let mut times = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let start = Instant::now();
        let mut results = Vec::with_capacity(queries.len());
        for q in queries.vectors.iter_rows() {
            results.push(search(index, q, k, nprobe)?);
        }
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if rep == 0 {
            rankings = queries
                .ids
                .iter()
                .zip(results)
                .map(|(&id, hits)| (id, hits.iter().map(|h| h.id).collect()))
                .collect();
        }
    }
    times.sort_by(f64::total_cmp);
    let median = if repeats % 2 == 1 {
        times[repeats / 2]
    } else {
        (times[repeats / 2 - 1] + times[repeats / 2]) / 2.0
    };
    Ok((rankings, median * 1000.0 / queries.len() as f64))
}

pub fn bench(
    index: &IvfIndex,
    queries: &QuerySet,
    gold: &HashMap<u64, u64>,
    k: usize,
    nprobe: usize,
    repeats: usize,
) -> Result<BenchReport> {
    let (rankings, time_ms_per_1k) = time_search(index, queries, k, nprobe, repeats)?;
    Ok(BenchReport {
        mrr_at_10: mrr_at_10(&rankings, gold)?,
        time_ms_per_1k,
        memory_bytes: index.memory_bytes(),
        payload_bytes: index.payload_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::retrieval::build_ivf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn planted_duplicates_give_perfect_mrr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus = Matrix::from_fn(200, 16, |_, _| rng.random_range(-1.0..1.0));
        let ids: Vec<u64> = (0..200).collect();
        let idx = build_ivf(&corpus, &ids, 4, 0).unwrap();
        let qv = Matrix::from_fn(20, 16, |r, c| corpus.get(r * 10, c) * 2.0);
        let queries = QuerySet::new((100..120).collect(), qv).unwrap();
        let gold: HashMap<u64, u64> = (0..20).map(|i| (100 + i, i * 10)).collect();
        let report = bench(&idx, &queries, &gold, 10, 4, 3).unwrap();
        assert_eq!(report.mrr_at_10, 1.0);
        assert!(report.time_ms_per_1k > 0.0);
        assert_eq!(report.payload_bytes, 200 * 16 * 4);
        assert!(report.memory_bytes >= report.payload_bytes);
        let csv = report.to_csv();
        assert!(csv.starts_with("mrr@10,time_ms_per_1k,mem_bytes\n1,"));
    }

    #[test]
    fn doubled_corpus_doubles_payload() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Matrix::from_fn(100, 8, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(200, 8, |_, _| rng.random_range(-1.0..1.0));
        let ia = build_ivf(&a, &(0..100).collect::<Vec<_>>(), 4, 0).unwrap();
        let ib = build_ivf(&b, &(0..200).collect::<Vec<_>>(), 4, 0).unwrap();
        assert_eq!(ib.payload_bytes(), 2 * ia.payload_bytes());
    }

    #[test]
    fn empty_queries_rejected() {
        let m = Matrix::identity(4);
        let idx = build_ivf(&m, &[0, 1, 2, 3], 2, 0).unwrap();
        let q = QuerySet {
            ids: vec![],
            vectors: m.clone(),
        };
        assert!(time_search(&idx, &q, 1, 1, 1).is_err());
    }
}
