use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{ScoredPair, TripletRecord};
use crate::encoder::{TextEncoder, TokenSequence};
use crate::error::{Error, Result};
use crate::evalsts::eval_sts;
use crate::linalg::Matrix;
use crate::objectives::{contrastive_loss, ContrastiveConfig, TripletBatch};

use super::{adamw_step, batch_order, clip_global_norm, encode_batch, sum_in_order, AdamState, TrainConfig};

#[derive(Debug, Clone)]
pub struct TeacherRun {
    /// Best encoder by validation correlation, or the final one when no
    /// validation set was given.
    pub encoder: TextEncoder,
    /// Contrastive loss of each batch before its update.
    pub loss_trace: Vec<f64>,
    /// `(step, ρ)` for every validation pass.
    pub validation_trace: Vec<(usize, f64)>,
    pub best_step: usize,
    pub best_rho: Option<f64>,
}

/// Train with the in-batch contrastive objective: entailments are the
/// positives, contradictions the hard negatives.
pub fn train_teacher(
    mut encoder: TextEncoder,
    triplets: &[TripletRecord],
    cfg: &TrainConfig,
    validation: Option<&[ScoredPair]>,
) -> Result<TeacherRun> {
    cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::Input("no training triplets".into()));
    }
    let seqs: Vec<[TokenSequence; 3]> = triplets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let tok = |s: &str| encoder.tokenize(s).map_err(|e| e.context(format!("triplet {i}")));
            Ok([tok(&t.anchor)?, tok(&t.entailment)?, tok(&t.contradiction)?])
        })
        .collect::<Result<_>>()?;

    let loss_cfg = ContrastiveConfig {
        temperature: cfg.temperature,
    };
    let mut opt = AdamState::new(encoder.backbone.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_trace = Vec::new();
    let mut validation_trace = Vec::new();
    let mut best: Option<(f64, usize, TextEncoder)> = None;

    let mut validate = |enc: &TextEncoder, step: usize, best: &mut Option<(f64, usize, TextEncoder)>| -> Result<()> {
        if let Some(pairs) = validation {
            let rho = eval_sts(|s| enc.embed(s), pairs)?;
            log::info!("teacher step {step}: validation rho {rho:.4}");
            validation_trace.push((step, rho));
            if best.as_ref().is_none_or(|(b, _, _)| rho > *b) {
                *best = Some((rho, step, enc.clone()));
            }
        }
        Ok(())
    };
    validate(&encoder, 0, &mut best)?;

    let mut step = 0;
    let mut last_validated = 0;
    'outer: for _epoch in 0..cfg.epochs {
        let order = batch_order(seqs.len(), &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            let loss = teacher_step(&mut encoder, &seqs, chunk, &loss_cfg, &mut opt, cfg, step)?;
            loss_trace.push(loss);
            step += 1;
            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) {
                validate(&encoder, step, &mut best)?;
                last_validated = step;
            }
        }
    }
    if step > last_validated {
        validate(&encoder, step, &mut best)?;
    }

    let (encoder, best_step, best_rho) = match best {
        Some((rho, s, enc)) => (enc, s, Some(rho)),
        None => (encoder, step, None),
    };
    Ok(TeacherRun {
        encoder,
        loss_trace,
        validation_trace,
        best_step,
        best_rho,
    })
}

fn teacher_step(
    encoder: &mut TextEncoder,
    seqs: &[[TokenSequence; 3]],
    chunk: &[usize],
    loss_cfg: &ContrastiveConfig,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    step: usize,
) -> Result<f64> {
    let n = chunk.len();
    // anchors, then positives, then negatives
    let flat: Vec<&TokenSequence> = (0..3).flat_map(|role| chunk.iter().map(move |&i| &seqs[i][role])).collect();
    let embs = encode_batch(&encoder.backbone, &flat)?;
    if embs.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Diverged { step, loss: f64::NAN });
    }
    let dim = encoder.dim();
    let block = |role: usize| Matrix::new(n, dim, embs[role * n..(role + 1) * n].concat());
    let batch = TripletBatch::new(block(0)?, block(1)?, block(2)?)?;
    let out = contrastive_loss(&batch, loss_cfg)?;
    if !out.loss.is_finite() {
        return Err(Error::Diverged { step, loss: out.loss });
    }
    let upstream: Vec<&[f64]> = [&out.grad_anchors, &out.grad_positives, &out.grad_negatives]
        .into_iter()
        .flat_map(|g| g.iter_rows())
        .collect();
    let backbone = &encoder.backbone;
    let parts = flat
        .par_iter()
        .zip(upstream.par_iter())
        .map(|(s, u)| backbone.encode_backward(s, u))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = sum_in_order(parts)?;
    if !grads.all_finite() {
        return Err(Error::Diverged { step, loss: out.loss });
    }
    if let Some(c) = cfg.grad_clip {
        clip_global_norm(&mut [&mut grads], c);
    }
    adamw_step(encoder.backbone.params_mut(), &grads, opt, cfg)?;
    if !encoder.backbone.params().all_finite() {
        return Err(Error::Diverged { step, loss: out.loss });
    }
    Ok(out.loss)
}
