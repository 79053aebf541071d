//! Training objectives: the supervised contrastive loss with in-batch and
//! hard negatives, and the mean-squared distillation loss. Both return
//! analytic gradients with respect to their input embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, EmbeddingMatrix, Matrix};

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of widths {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { temperature: 0.05 }
    }
}

/// Anchors with their entailment (positive) and contradiction (hard
/// negative) partners, one triplet per row.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    anchors: EmbeddingMatrix,
    positives: EmbeddingMatrix,
    negatives: EmbeddingMatrix,
}

impl TripletBatch {
    pub fn new(anchors: EmbeddingMatrix, positives: EmbeddingMatrix, negatives: EmbeddingMatrix) -> Result<Self> {
        let shape = (anchors.rows(), anchors.cols());
        for (name, m) in [("positives", &positives), ("negatives", &negatives)] {
            if (m.rows(), m.cols()) != shape {
                return Err(Error::Shape(format!(
                    "{name} are {}x{}, anchors are {}x{}",
                    m.rows(),
                    m.cols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        for (name, m) in [("anchor", &anchors), ("positive", &positives), ("negative", &negatives)] {
            if let Some(i) = m.iter_rows().position(|r| norm(r) == 0.0) {
                return Err(Error::Domain(format!("{name} row {i} has zero norm")));
            }
        }
        Ok(Self {
            anchors,
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn anchors(&self) -> &EmbeddingMatrix {
        &self.anchors
    }

    pub fn positives(&self) -> &EmbeddingMatrix {
        &self.positives
    }

    pub fn negatives(&self) -> &EmbeddingMatrix {
        &self.negatives
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grad_anchors: Matrix,
    pub grad_positives: Matrix,
    pub grad_negatives: Matrix,
}

struct Normalized {
    unit: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn normalize_rows(m: &Matrix) -> Normalized {
    let norms: Vec<f64> = m.iter_rows().map(norm).collect();
    let unit = m
        .iter_rows()
        .zip(&norms)
        .map(|(r, n)| r.iter().map(|v| v / n).collect())
        .collect();
    Normalized { unit, norms }
}

/// Adds `coef · ∂cos(a,b)/∂a` to `ga` and `coef · ∂cos(a,b)/∂b` to `gb`.
#[allow(clippy::too_many_arguments)]
fn cosine_backward(a: &Normalized, i: usize, b: &Normalized, j: usize, s: f64, coef: f64, ga: &mut [f64], gb: &mut [f64]) {
    let (au, bu) = (&a.unit[i], &b.unit[j]);
    let (ca, cb) = (coef / a.norms[i], coef / b.norms[j]);
    for k in 0..au.len() {
        ga[k] += ca * (bu[k] - s * au[k]);
        gb[k] += cb * (au[k] - s * bu[k]);
    }
}

/// Mean over anchors of
/// `-log( exp(s(eᵢ,eᵢ⁺)/τ) / Σⱼ [exp(s(eᵢ,eⱼ⁺)/τ) + exp(s(eᵢ,eⱼ⁻)/τ)] )`
/// with cosine similarity `s`. The denominator runs over every positive and
/// every hard negative in the batch, including the anchor's own pair.
pub fn contrastive_loss(batch: &TripletBatch, cfg: &ContrastiveConfig) -> Result<ContrastiveOutput> {
    let tau = cfg.temperature;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive, got {tau}")));
    }
    let n = batch.len();
    let d = batch.anchors.cols();
    let a = normalize_rows(&batch.anchors);
    let p = normalize_rows(&batch.positives);
    let q = normalize_rows(&batch.negatives);

    let mut ga = Matrix::zeros(n, d);
    let mut gp = Matrix::zeros(n, d);
    let mut gn = Matrix::zeros(n, d);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut sp = vec![0.0; n];
    let mut sn = vec![0.0; n];

    for i in 0..n {
        for j in 0..n {
            sp[j] = dot(&a.unit[i], &p.unit[j]).clamp(-1.0, 1.0);
            sn[j] = dot(&a.unit[i], &q.unit[j]).clamp(-1.0, 1.0);
        }
        let max = sp
            .iter()
            .chain(&sn)
            .fold(f64::NEG_INFINITY, |m, s| m.max(s / tau));
        let z: f64 = sp.iter().chain(&sn).map(|s| (s / tau - max).exp()).sum();
        let lse = max + z.ln();
        let li = lse - sp[i] / tau;
        if !li.is_finite() {
            return Err(Error::Numerical(format!("non-finite contrastive term for anchor {i}")));
        }
        total += li;

        let mut ga_i = vec![0.0; d];
        for j in 0..n {
            let wp = (sp[j] / tau - lse).exp();
            let coef = (wp - if i == j { 1.0 } else { 0.0 }) / tau * inv_n;
            cosine_backward(&a, i, &p, j, sp[j], coef, &mut ga_i, gp.row_mut(j));
            let wn = (sn[j] / tau - lse).exp();
            cosine_backward(&a, i, &q, j, sn[j], wn / tau * inv_n, &mut ga_i, gn.row_mut(j));
        }
        ga.row_mut(i).copy_from_slice(&ga_i);
    }
    Ok(ContrastiveOutput {
        loss: total * inv_n,
        grad_anchors: ga,
        grad_positives: gp,
        grad_negatives: gn,
    })
}

/// `(1/M) Σᵢ ‖sᵢ − tᵢ‖²` and its gradient `(2/M)(sᵢ − tᵢ)` with respect to
/// the student rows.
pub fn mse_loss(student: &EmbeddingMatrix, teacher: &EmbeddingMatrix) -> Result<(f64, Matrix)> {
    if student.rows() != teacher.rows() || student.cols() != teacher.cols() {
        return Err(Error::Shape(format!(
            "student {}x{} vs teacher {}x{}",
            student.rows(),
            student.cols(),
            teacher.rows(),
            teacher.cols()
        )));
    }
    let m = student.rows() as f64;
    let mut grad = Matrix::zeros(student.rows(), student.cols());
    let mut sum = 0.0;
    for ((g, s), t) in grad.data_mut().iter_mut().zip(student.data()).zip(teacher.data()) {
        let diff = s - t;
        sum += diff * diff;
        *g = 2.0 * diff / m;
    }
    Ok((sum / m, grad))
}

/// Gradients with magnitude below this are compared in absolute terms.
pub const FD_ABS_FLOOR: f64 = 1e-6;

/// Compare `analytic` against central differences of `loss_fn` at `x` on
/// `samples` randomly chosen coordinates (all of them when `samples ≥ len`).
/// Returns the largest `|a − n| / max(|a|, |n|, FD_ABS_FLOOR)`.
pub fn finite_diff_check(
    loss_fn: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    samples: usize,
    step: f64,
    seed: u64,
) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient width must match input width");
    assert!(step > 0.0, "finite-difference step must be positive");
    let coords: Vec<usize> = if samples >= x.len() {
        (0..x.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples).map(|_| rng.random_range(0..x.len())).collect()
    };
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for k in coords {
        let orig = probe[k];
        probe[k] = orig + step;
        let fp = loss_fn(&probe);
        probe[k] = orig - step;
        let fm = loss_fn(&probe);
        probe[k] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let denom = analytic[k].abs().max(numeric.abs()).max(FD_ABS_FLOOR);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    worst
}
