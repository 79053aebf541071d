use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix, Matrix};

#[derive(Debug, Clone)]
pub struct KMeans {
    /// `k×d`, unit rows.
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

fn unit_rows(m: &Matrix) -> Result<Vec<Vec<f64>>> {
    m.iter_rows()
        .map(|r| {
            let n = dot(r, r).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Domain("k-means input contains a zero vector".into()));
            }
            Ok(r.iter().map(|x| x / n).collect())
        })
        .collect()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, v) in centroids.iter().enumerate() {
        let s = dot(p, v);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

/// Spherical k-means: points and centroids live on the unit sphere and
/// similarity is the inner product. Seeding is k-means++ with squared chord
/// distance `2 − 2·cos`. A cluster that empties is reseeded with the point
/// farthest from its own centroid.
pub fn kmeans(vectors: &EmbeddingMatrix, k: usize, seed: u64, max_iters: usize) -> Result<KMeans> {
    let n = vectors.rows();
    if k == 0 || k > n {
        return Err(Error::Input(format!("cannot form {k} clusters from {n} vectors")));
    }
    let pts = unit_rows(vectors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(pts[first].clone());
    let mut d2: Vec<f64> = pts.iter().map(|p| (2.0 - 2.0 * dot(p, &centroids[0])).max(0.0)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().zip(&chosen).filter(|(_, c)| !**c).map(|(d, _)| d).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for i in 0..n {
                if chosen[i] || d2[i] <= 0.0 {
                    continue;
                }
                pick = Some(i);
                target -= d2[i];
                if target <= 0.0 {
                    break;
                }
            }
            pick.expect("positive total mass has a carrier")
        } else {
            // every remaining point coincides with a centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen[*i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.push(pts[pick].clone());
        let c = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(&pts) {
            *d = d.min((2.0 - 2.0 * dot(p, c)).max(0.0));
        }
    }

    let dim = vectors.cols();
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    for _ in 0..max_iters {
        let mut sims = vec![0.0; n];
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let (c, s) = nearest(p, &centroids);
            sims[i] = s;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in pts.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            let norm = dot(&sums[c], &sums[c]).sqrt();
            if counts[c] > 0 && norm > 1e-12 {
                centroids[c] = sums[c].iter().map(|x| x / norm).collect();
            } else {
                let far = (0..n)
                    .filter(|i| !taken[*i])
                    .min_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)))
                    .expect("k ≤ n leaves a point to reseed from");
                taken[far] = true;
                centroids[c] = pts[far].clone();
                sims[far] = 1.0;
            }
        }
    }
    // final assignment against the final centroids
    for (i, p) in pts.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    Ok(KMeans {
        centroids: Matrix::from_fn(k, dim, |r, c| centroids[r][c]),
        assignments,
        iterations,
    })
}
