//! Training: contrastive teacher training, and distillation of a small
//! student plus projection head onto the frozen, PCA-reduced teacher.

mod hpd;
mod stored;
mod teacher;

use std::collections::HashSet;

use rayon::prelude::*;

use crate::data::TripletRecord;
use crate::encoder::{Backbone, ParamSet, TextEncoder, TokenSequence};
use crate::error::{Error, Result};

pub use hpd::{distill, distill_to_targets, teacher_targets, BestStudent, DistillState};
pub use stored::{teacher_from_file, StoredTeacher};
pub use teacher::{train_teacher, TeacherRun};

/// Anything that maps a sentence to a fixed-width vector.
pub trait Embedder: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
    fn dim(&self) -> usize;
}

impl Embedder for TextEncoder {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        TextEncoder::embed(self, text)
    }

    fn dim(&self) -> usize {
        TextEncoder::dim(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Validate every this many steps; 0 validates only at the start and end.
    pub eval_every: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 3,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            temperature: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 50,
            grad_clip: Some(1.0),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for the distillation stage, which uses a smaller step size.
    pub fn distillation() -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return bad("Adam betas must lie strictly between 0 and 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)` with bias-corrected moments.
pub fn adamw_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) || !params.same_layout(&state.v) {
        return Err(Error::Shape("parameters, gradients and moments differ in layout".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let (lr, wd, eps) = (cfg.learning_rate, cfg.weight_decay, cfg.epsilon);
    let tensors = params.iter_mut().zip(grads.iter()).zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m.data[i] / c1;
            let vhat = v.data[i] / c2;
            p.data[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * p.data[i]);
        }
    }
    Ok(())
}

/// Rescale all gradient sets together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut ParamSet], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}

/// Every distinct sentence of the triplets in first-seen order.
pub fn sentence_pool(triplets: &[TripletRecord]) -> Vec<String> {
    let mut seen = HashSet::new();
    triplets
        .iter()
        .flat_map(|t| t.sentences())
        .filter(|s| seen.insert(*s))
        .map(str::to_string)
        .collect()
}

pub(crate) fn encode_batch(backbone: &Backbone, seqs: &[&TokenSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter().map(|s| backbone.encode(s)).collect()
}

/// Sums per-item gradients in item order regardless of how the work was
/// scheduled, so results do not depend on the thread count.
pub(crate) fn sum_in_order(mut parts: Vec<ParamSet>) -> Result<ParamSet> {
    let mut iter = parts.drain(..);
    let mut total = iter.next().ok_or_else(|| Error::Input("empty batch".into()))?;
    for p in iter {
        total.add_assign(&p)?;
    }
    Ok(total)
}

pub(crate) fn batch_order(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}
