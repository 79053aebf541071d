//! Dimension reduction: PCA for the frozen teacher, PCA-whitening as a
//! post-processing baseline, and the learnable affine projection head that
//! reduces the student's pooled output.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{atomic_write, read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::linalg::{center_rows, eigh, gram, svd, EmbeddingMatrix, Matrix};

/// Leading eigenvalues at or below this cannot be whitened.
pub const MIN_WHITEN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// The sample spans fewer than `d` directions; trailing components carry
    /// zero variance.
    RankDeficient { rank: usize, requested: usize },
    /// Components `index` and `index + 1` have (numerically) equal variance,
    /// so their basis within the shared subspace is arbitrary.
    DegenerateSubspace { index: usize },
}

/// `h = Wᵀ (e − ē)` with orthonormal columns in `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    pub mean: Vec<f64>,
    /// `d′×d`.
    pub weights: Matrix,
    /// Leading covariance eigenvalues, descending. Empty when loaded from a
    /// transform file, which does not store them.
    pub explained_variances: Vec<f64>,
}

impl PcaTransform {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Evaluated as `Wᵀe − Wᵀē`, the same arithmetic as a projection head
    /// warm-started from this transform, so the two agree bit for bit.
    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "PCA expects width {}, got {}",
                self.mean.len(),
                e.len()
            )));
        }
        let mut h = self.weights.t_matvec(e)?;
        let shift = self.weights.t_matvec(&self.mean)?;
        h.iter_mut().zip(shift).for_each(|(v, s)| *v -= s);
        Ok(h)
    }

    pub fn apply_rows(&self, e: &EmbeddingMatrix) -> Result<Matrix> {
        map_rows(e, self.output_dim(), |r| self.apply(r))
    }

    /// `ē + W h`
    pub fn reconstruct(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.weights.matvec(h)?;
        out.iter_mut().zip(&self.mean).for_each(|(o, m)| *o += m);
        Ok(out)
    }
}

fn map_rows(e: &Matrix, out_dim: usize, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Matrix> {
    let mut data = Vec::with_capacity(e.rows() * out_dim);
    for row in e.iter_rows() {
        data.extend(f(row)?);
    }
    Matrix::new(e.rows(), out_dim, data)
}

fn check_fit_shape(samples: &Matrix, d: usize, allow_full: bool) -> Result<()> {
    let (m, width) = (samples.rows(), samples.cols());
    if d == 0 {
        return Err(Error::Input("target dimension must be at least 1".into()));
    }
    if d > width || (d == width && !allow_full) {
        return Err(Error::Input(format!(
            "target dimension {d} must be smaller than the input dimension {width}"
        )));
    }
    if m < d + 1 {
        return Err(Error::Input(format!("need at least {} samples to fit {d} components, got {m}", d + 1)));
    }
    Ok(())
}

/// Fit PCA and report rank or degeneracy problems alongside the transform.
///
/// The centered sample is arranged as a `d′×m` matrix `E` whose leading left
/// singular vectors become the columns of `W`. Explained variances are the
/// eigenvalues of `(1/m) E Eᵀ`.
pub fn fit_pca_report(samples: &EmbeddingMatrix, d: usize) -> Result<(PcaTransform, Vec<FitWarning>)> {
    check_fit_shape(samples, d, false)?;
    let m = samples.rows() as f64;
    let (mean, centered) = center_rows(samples);
    let e = centered.transpose();
    let res = svd(&e)?;
    let weights = res.v.leading_columns(d)?;
    let variances: Vec<f64> = res.s.iter().take(d).map(|s| s * s / m).collect();

    let mut warnings = Vec::new();
    let smax = res.s[0];
    let rank = res.s.iter().filter(|s| **s > smax * 1e-10 && **s > 0.0).count();
    if rank < d {
        warnings.push(FitWarning::RankDeficient { rank, requested: d });
    }
    for &index in res.degenerate.iter().filter(|i| **i + 1 < d.min(rank)) {
        warnings.push(FitWarning::DegenerateSubspace { index });
    }
    for w in &warnings {
        log::warn!("PCA fit: {w:?}");
    }
    Ok((
        PcaTransform {
            mean,
            weights,
            explained_variances: variances,
        },
        warnings,
    ))
}

pub fn fit_pca(samples: &EmbeddingMatrix, d: usize) -> Result<PcaTransform> {
    fit_pca_report(samples, d).map(|(t, _)| t)
}

/// Centering followed by projection onto the leading eigenvectors scaled by
/// `λ^{-1/2}`, so the fit sample comes out with identity covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    /// `d′×d`.
    pub weights: Matrix,
}

impl WhiteningTransform {
    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "whitening expects width {}, got {}",
                self.mean.len(),
                e.len()
            )));
        }
        let centered: Vec<f64> = e.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.weights.t_matvec(&centered)
    }

    pub fn apply_rows(&self, e: &EmbeddingMatrix) -> Result<Matrix> {
        map_rows(e, self.output_dim(), |r| self.apply(r))
    }
}

/// Unlike PCA, `d` may equal the input width (full-rank whitening).
pub fn fit_whitening(samples: &EmbeddingMatrix, d: usize) -> Result<WhiteningTransform> {
    check_fit_shape(samples, d, true)?;
    let m = samples.rows() as f64;
    let (mean, centered) = center_rows(samples);
    let mut cov = gram(&centered.transpose());
    cov.scale(1.0 / m);
    let eig = eigh(&cov)?;
    if eig.values[d - 1] <= MIN_WHITEN_EIGENVALUE {
        return Err(Error::Domain(format!(
            "cannot whiten: component {} has variance {:e}",
            d - 1,
            eig.values[d - 1]
        )));
    }
    let width = samples.cols();
    let weights = Matrix::from_fn(width, d, |r, c| eig.vectors.get(r, c) / eig.values[c].sqrt());
    Ok(WhiteningTransform { mean, weights })
}

/// Learnable `h = Wᵀ e + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    /// `d′ₛ×d`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectionGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::Shape(format!(
                "bias of width {} for a {}-dimensional output",
                bias.len(),
                weights.cols()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite projection bias".into()));
        }
        Ok(Self { weights, bias })
    }

    /// Gaussian weights scaled by `1/√d_in`, zero bias.
    pub fn random(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (d_in as f64).sqrt();
        let weights = Matrix::from_fn(d_in, d_out, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * s
        });
        Self {
            weights,
            bias: vec![0.0; d_out],
        }
    }

    /// Warm start from a teacher PCA: its weight rows are copied (truncated or
    /// zero-padded to `d_in`) and the bias absorbs the centering, so with
    /// matching widths the head reproduces the teacher's transform exactly.
    pub fn from_pca(pca: &PcaTransform, d_in: usize) -> Self {
        let d = pca.output_dim();
        let src = pca.input_dim();
        let weights = Matrix::from_fn(d_in, d, |r, c| if r < src { pca.weights.get(r, c) } else { 0.0 });
        let mean: Vec<f64> = (0..d_in).map(|r| if r < src { pca.mean[r] } else { 0.0 }).collect();
        let bias = weights
            .t_matvec(&mean)
            .expect("mean has d_in entries")
            .into_iter()
            .map(|v| -v)
            .collect();
        Self { weights, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn project(&self, e: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.weights.t_matvec(e)?;
        h.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        Ok(h)
    }

    pub fn project_rows(&self, e: &EmbeddingMatrix) -> Result<Matrix> {
        map_rows(e, self.output_dim(), |r| self.project(r))
    }

    /// Gradients of `upstream · project(e)`: `∂W = e ⊗ upstream`,
    /// `∂b = upstream`, `∂e = W · upstream`.
    pub fn project_backward(&self, e: &[f64], upstream: &[f64]) -> Result<ProjectionGrads> {
        if e.len() != self.input_dim() || upstream.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "projection {}→{} with input {} and upstream {}",
                self.input_dim(),
                self.output_dim(),
                e.len(),
                upstream.len()
            )));
        }
        let weights = Matrix::from_fn(self.input_dim(), self.output_dim(), |r, c| e[r] * upstream[c]);
        Ok(ProjectionGrads {
            weights,
            bias: upstream.to_vec(),
            input: self.weights.matvec(upstream)?,
        })
    }

    /// The single affine map equal to this head followed by `w`.
    pub fn then_whiten(&self, w: &WhiteningTransform) -> Result<ProjectionHead> {
        if w.input_dim() != self.output_dim() {
            return Err(Error::Shape(format!(
                "whitening expects width {}, head produces {}",
                w.input_dim(),
                self.output_dim()
            )));
        }
        let weights = self.weights.matmul(&w.weights)?;
        let shifted: Vec<f64> = self.bias.iter().zip(&w.mean).map(|(b, m)| b - m).collect();
        let bias = w.weights.t_matvec(&shifted)?;
        Ok(ProjectionHead { weights, bias })
    }
}

pub const TRANSFORM_MAGIC: &[u8; 4] = b"HPDT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum TransformKind {
    Pca = 0,
    Whiten = 1,
    Projection = 2,
}

/// Any reduction stage as stored in an `HPDT` file.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Pca(PcaTransform),
    Whiten(WhiteningTransform),
    Projection(ProjectionHead),
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Pca(_) => TransformKind::Pca,
            Transform::Whiten(_) => TransformKind::Whiten,
            Transform::Projection(_) => TransformKind::Projection,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Transform::Pca(t) => t.input_dim(),
            Transform::Whiten(t) => t.input_dim(),
            Transform::Projection(t) => t.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Transform::Pca(t) => t.output_dim(),
            Transform::Whiten(t) => t.output_dim(),
            Transform::Projection(t) => t.output_dim(),
        }
    }

    pub fn apply(&self, e: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Pca(t) => t.apply(e),
            Transform::Whiten(t) => t.apply(e),
            Transform::Projection(t) => t.project(e),
        }
    }

    /// Magic, kind byte, `d′` and `d` as `u32`, the mean (zeros for a
    /// projection), the `d′×d` weights row-major, then the bias for
    /// projections only. All values `f32` little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (mean, weights, bias): (Vec<f64>, &Matrix, Option<&[f64]>) = match self {
            Transform::Pca(t) => (t.mean.clone(), &t.weights, None),
            Transform::Whiten(t) => (t.mean.clone(), &t.weights, None),
            Transform::Projection(t) => (vec![0.0; t.input_dim()], &t.weights, Some(&t.bias)),
        };
        let mut w = ByteWriter::new();
        w.bytes(TRANSFORM_MAGIC);
        w.u8(self.kind() as u8);
        w.u32(weights.rows() as u32);
        w.u32(weights.cols() as u32);
        w.f64s_as_f32(&mean);
        w.f64s_as_f32(weights.data());
        if let Some(b) = bias {
            w.f64s_as_f32(b);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.expect_magic(TRANSFORM_MAGIC)?;
        let kind = r.u8()?;
        let din = r.u32()? as usize;
        let dout = r.u32()? as usize;
        if din == 0 || dout == 0 {
            return Err(r.error("transform dimensions must be positive"));
        }
        let mean = r.f32s_as_f64(din)?;
        let weights = Matrix::new(din, dout, r.f32s_as_f64(din * dout)?)?;
        let t = match kind {
            0 => Transform::Pca(PcaTransform {
                mean,
                weights,
                explained_variances: Vec::new(),
            }),
            1 => Transform::Whiten(WhiteningTransform { mean, weights }),
            2 => Transform::Projection(ProjectionHead::new(weights, r.f32s_as_f64(dout)?)?),
            k => return Err(r.error(format!("unknown transform kind {k}"))),
        };
        r.finish()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
