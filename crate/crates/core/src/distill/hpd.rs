use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::ScoredPair;
use crate::encoder::{Backbone, ParamSet, Tensor, TextEncoder, TokenSequence};
use crate::error::{Error, Result};
use crate::evalsts::eval_sts;
use crate::linalg::{EmbeddingMatrix, Matrix};
use crate::objectives::mse_loss;
use crate::reduce::{PcaTransform, ProjectionHead};

use super::{adamw_step, batch_order, clip_global_norm, encode_batch, sum_in_order, AdamState, Embedder, TrainConfig};

const HEAD_WEIGHT: &str = "proj.weight";
const HEAD_BIAS: &str = "proj.bias";

fn head_params(h: &ProjectionHead) -> ParamSet {
    ParamSet::new(vec![
        Tensor {
            name: HEAD_WEIGHT.into(),
            shape: vec![h.input_dim(), h.output_dim()],
            data: h.weights.data().to_vec(),
        },
        Tensor {
            name: HEAD_BIAS.into(),
            shape: vec![h.output_dim()],
            data: h.bias.clone(),
        },
    ])
    .expect("head tensors are well formed")
}

fn store_head(p: &ParamSet, h: &mut ProjectionHead) {
    h.weights.data_mut().copy_from_slice(&p.tensors()[0].data);
    h.bias.copy_from_slice(&p.tensors()[1].data);
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestStudent {
    pub step: usize,
    pub rho: f64,
    pub backbone: Backbone,
    pub head: ProjectionHead,
}

/// Trainable student encoder and projection head with their optimizer state.
#[derive(Debug, Clone)]
pub struct DistillState {
    pub student: TextEncoder,
    pub head: ProjectionHead,
    backbone_opt: AdamState,
    head_opt: AdamState,
    pub step: usize,
    /// Distillation loss of each batch before its update.
    pub loss_history: Vec<f64>,
    pub validation_history: Vec<(usize, f64)>,
    pub best: Option<BestStudent>,
}

impl DistillState {
    pub fn new(student: TextEncoder, head: ProjectionHead) -> Result<Self> {
        if head.input_dim() != student.dim() {
            return Err(Error::Config(format!(
                "projection expects width {}, student produces {}",
                head.input_dim(),
                student.dim()
            )));
        }
        Ok(Self {
            backbone_opt: AdamState::new(student.backbone.params()),
            head_opt: AdamState::new(&head_params(&head)),
            student,
            head,
            step: 0,
            loss_history: Vec::new(),
            validation_history: Vec::new(),
            best: None,
        })
    }

    /// Student embedding after projection.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.head.project(&self.student.embed(text)?)
    }

    /// The best validated student, or the current one if none was validated.
    pub fn into_best(self) -> (TextEncoder, ProjectionHead) {
        match self.best {
            Some(b) => (
                TextEncoder {
                    vocab: self.student.vocab,
                    backbone: b.backbone,
                },
                b.head,
            ),
            None => (self.student, self.head),
        }
    }

    fn validate(&mut self, pairs: Option<&[ScoredPair]>) -> Result<()> {
        let Some(pairs) = pairs else { return Ok(()) };
        let rho = eval_sts(|s| self.embed(s), pairs)?;
        log::info!("distill step {}: validation rho {rho:.4}", self.step);
        self.validation_history.push((self.step, rho));
        if self.best.as_ref().is_none_or(|b| rho > b.rho) {
            self.best = Some(BestStudent {
                step: self.step,
                rho,
                backbone: self.student.backbone.clone(),
                head: self.head.clone(),
            });
        }
        Ok(())
    }

    fn step_on(&mut self, seqs: &[&TokenSequence], targets: &Matrix, cfg: &TrainConfig) -> Result<f64> {
        let backbone = &self.student.backbone;
        let pooled = encode_batch(backbone, seqs)?;
        if pooled.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: self.step, loss: f64::NAN });
        }
        let projected = pooled.iter().map(|e| self.head.project(e)).collect::<Result<Vec<_>>>()?;
        let student = Matrix::new(seqs.len(), self.head.output_dim(), projected.concat())?;
        let (loss, grad) = mse_loss(&student, targets)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: self.step, loss });
        }
        let head = &self.head;
        let parts = seqs
            .par_iter()
            .zip(pooled.par_iter())
            .enumerate()
            .map(|(i, (s, e))| {
                let g = head.project_backward(e, grad.row(i))?;
                let hp = ParamSet::new(vec![
                    Tensor {
                        name: HEAD_WEIGHT.into(),
                        shape: vec![head.input_dim(), head.output_dim()],
                        data: g.weights.into_data(),
                    },
                    Tensor {
                        name: HEAD_BIAS.into(),
                        shape: vec![head.output_dim()],
                        data: g.bias,
                    },
                ])?;
                Ok((backbone.encode_backward(s, &g.input)?, hp))
            })
            .collect::<Result<Vec<_>>>()?;
        let (bparts, hparts): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let mut bgrad = sum_in_order(bparts)?;
        let mut hgrad = sum_in_order(hparts)?;
        if !(bgrad.all_finite() && hgrad.all_finite()) {
            return Err(Error::Diverged { step: self.step, loss });
        }
        if let Some(c) = cfg.grad_clip {
            clip_global_norm(&mut [&mut bgrad, &mut hgrad], c);
        }
        adamw_step(self.student.backbone.params_mut(), &bgrad, &mut self.backbone_opt, cfg)?;
        let mut hp = head_params(&self.head);
        adamw_step(&mut hp, &hgrad, &mut self.head_opt, cfg)?;
        store_head(&hp, &mut self.head);
        if !(hp.all_finite() && self.student.backbone.params().all_finite()) {
            return Err(Error::Diverged { step: self.step, loss });
        }
        Ok(loss)
    }
}

/// PCA-reduced teacher embedding of every sentence, one row each.
pub fn teacher_targets(teacher: &dyn Embedder, pca: &PcaTransform, sentences: &[String]) -> Result<EmbeddingMatrix> {
    if pca.input_dim() != teacher.dim() {
        return Err(Error::Config(format!(
            "PCA was fitted on width {}, teacher produces {}",
            pca.input_dim(),
            teacher.dim()
        )));
    }
    if sentences.is_empty() {
        return Err(Error::Input("no distillation sentences".into()));
    }
    let rows = sentences
        .par_iter()
        .map(|s| pca.apply(&teacher.embed(s)?))
        .collect::<Result<Vec<_>>>()?;
    Matrix::new(sentences.len(), pca.output_dim(), rows.concat())
}

/// Minimize the squared distance between the student's projected embedding
/// and the teacher's PCA-reduced embedding. The teacher side is computed once
/// up front and never updated.
pub fn distill(
    teacher: &dyn Embedder,
    pca: &PcaTransform,
    state: DistillState,
    sentences: &[String],
    cfg: &TrainConfig,
    validation: Option<&[ScoredPair]>,
) -> Result<DistillState> {
    if pca.output_dim() != state.head.output_dim() {
        return Err(Error::Config(format!(
            "teacher PCA reduces to {} dimensions but the projection produces {}",
            pca.output_dim(),
            state.head.output_dim()
        )));
    }
    let targets = teacher_targets(teacher, pca, sentences)?;
    distill_to_targets(state, sentences, &targets, cfg, validation)
}

/// The training loop of [`distill`] against precomputed targets.
pub fn distill_to_targets(
    mut state: DistillState,
    sentences: &[String],
    targets: &EmbeddingMatrix,
    cfg: &TrainConfig,
    validation: Option<&[ScoredPair]>,
) -> Result<DistillState> {
    cfg.validate()?;
    if targets.rows() != sentences.len() || targets.cols() != state.head.output_dim() {
        return Err(Error::Config(format!(
            "targets are {}x{} for {} sentences and a {}-dimensional projection",
            targets.rows(),
            targets.cols(),
            sentences.len(),
            state.head.output_dim()
        )));
    }
    let seqs = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| state.student.tokenize(s).map_err(|e| e.context(format!("sentence {i}"))))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if state.validation_history.is_empty() {
        state.validate(validation)?;
    }
    let start = state.step;
    let mut last_validated = state.step;
    'outer: for _epoch in 0..cfg.epochs {
        let order = batch_order(seqs.len(), &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| state.step - start >= m) {
                break 'outer;
            }
            let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
            let rows: Vec<f64> = chunk.iter().flat_map(|&i| targets.row(i).iter().copied()).collect();
            let t = Matrix::new(chunk.len(), targets.cols(), rows)?;
            let loss = state.step_on(&batch, &t, cfg)?;
            state.loss_history.push(loss);
            state.step += 1;
            if cfg.eval_every > 0 && state.step.is_multiple_of(cfg.eval_every) {
                state.validate(validation)?;
                last_validated = state.step;
            }
        }
    }
    if state.step > last_validated {
        state.validate(validation)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{encode_checkpoint, BagOfWords, BagOfWordsConfig, EncoderConfig, TransformerEncoder, Vocab};
    use crate::reduce::{fit_pca, Transform};

    fn sentences() -> Vec<String> {
        [
            "the big dog runs",
            "a small cat sleeps",
            "the old man sings in the park",
            "young children play outside",
            "a quiet bird rests",
            "the chef cooks dinner",
            "big cats run fast",
            "the dog sleeps in the house",
            "a man plays in the street",
            "the child sings",
            "an old bird eats",
            "the quiet chef rests",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    fn transformer(vocab: &Vocab, dim: usize, seed: u64) -> TextEncoder {
        let enc = TransformerEncoder::new(EncoderConfig {
            vocab_size: vocab.len(),
            layers: 1,
            model_dim: dim,
            heads: 2,
            ffn_dim: 2 * dim,
            max_len: 10,
            seed,
        })
        .unwrap();
        TextEncoder::new(vocab.clone(), enc).unwrap()
    }

    fn pca_of(teacher: &TextEncoder, sents: &[String], d: usize) -> PcaTransform {
        let rows: Vec<f64> = sents.iter().flat_map(|s| teacher.embed(s).unwrap()).collect();
        fit_pca(&Matrix::new(sents.len(), teacher.dim(), rows).unwrap(), d).unwrap()
    }

    #[test]
    fn exact_mimic_stays_at_zero() {
        let sents = sentences();
        let vocab = Vocab::build(sents.iter().map(|s| s.as_str()), 1);
        let teacher = transformer(&vocab, 8, 3);
        let pca = pca_of(&teacher, &sents, 4);
        let state = DistillState::new(teacher.clone(), ProjectionHead::from_pca(&pca, 8)).unwrap();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 40,
            max_steps: Some(100),
            ..TrainConfig::distillation()
        };
        let out = distill(&teacher, &pca, state, &sents, &cfg, None).unwrap();
        assert_eq!(out.loss_history.len(), 100);
        assert!(out.loss_history[0] <= 1e-12);
        assert!(out.loss_history.iter().all(|l| *l <= 1e-10), "{:?}", out.loss_history.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn teacher_is_untouched() {
        let sents = sentences();
        let vocab = Vocab::build(sents.iter().map(|s| s.as_str()), 1);
        let teacher = transformer(&vocab, 8, 3);
        let pca = pca_of(&teacher, &sents, 4);
        let before = (encode_checkpoint(&teacher.backbone), Transform::Pca(pca.clone()).to_bytes());
        let student = transformer(&vocab, 6, 5);
        let state = DistillState::new(student, ProjectionHead::random(6, 4, 1)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::distillation()
        };
        let out = distill(&teacher, &pca, state, &sents, &cfg, None).unwrap();
        assert_eq!(out.step, 6);
        let after = (encode_checkpoint(&teacher.backbone), Transform::Pca(pca).to_bytes());
        assert_eq!(before, after);
    }

    #[test]
    fn one_step_moves_student_and_bias() {
        let sents = sentences();
        let vocab = Vocab::build(sents.iter().map(|s| s.as_str()), 1);
        let teacher = transformer(&vocab, 8, 3);
        let pca = pca_of(&teacher, &sents, 4);
        let student = transformer(&vocab, 6, 5);
        let state = DistillState::new(student.clone(), ProjectionHead::random(6, 4, 1)).unwrap();
        let bias0 = state.head.bias.clone();
        let cfg = TrainConfig {
            max_steps: Some(1),
            ..TrainConfig::distillation()
        };
        let out = distill(&teacher, &pca, state, &sents, &cfg, None).unwrap();
        assert_eq!(out.step, 1);
        assert_ne!(out.head.bias, bias0);
        let changed = out
            .student
            .backbone
            .params()
            .iter()
            .zip(student.backbone.params().iter())
            .filter(|(a, b)| a.data != b.data)
            .count();
        assert!(changed >= 1);
    }

    #[test]
    fn dimension_mismatches() {
        let sents = sentences();
        let vocab = Vocab::build(sents.iter().map(|s| s.as_str()), 1);
        let teacher = transformer(&vocab, 8, 3);
        let pca = pca_of(&teacher, &sents, 4);
        let student = transformer(&vocab, 6, 5);
        assert!(matches!(DistillState::new(student.clone(), ProjectionHead::random(5, 4, 1)), Err(Error::Config(_))));
        let state = DistillState::new(student, ProjectionHead::random(6, 3, 1)).unwrap();
        let r = distill(&teacher, &pca, state, &sents, &TrainConfig::distillation(), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn linear_task_converges_with_identical_traces() {
        let sents = sentences();
        let vocab = Vocab::build(sents.iter().map(|s| s.as_str()), 1);
        let bow = |dim, seed| {
            let b = BagOfWords::new(BagOfWordsConfig {
                vocab_size: vocab.len(),
                dim,
                max_len: 10,
                seed,
            })
            .unwrap();
            TextEncoder::new(vocab.clone(), b).unwrap()
        };
        let teacher = bow(12, 1);
        let pca = pca_of(&teacher, &sents, 4);
        let run = || {
            let state = DistillState::new(bow(8, 2), ProjectionHead::random(8, 4, 3)).unwrap();
            let cfg = TrainConfig {
                learning_rate: 0.01,
                weight_decay: 0.0,
                batch_size: sents.len(),
                epochs: 200,
                grad_clip: None,
                ..TrainConfig::distillation()
            };
            distill(&teacher, &pca, state, &sents, &cfg, None).unwrap()
        };
        let a = run();
        let h = &a.loss_history;
        assert_eq!(h.len(), 200);
        assert!(h[199] <= 0.1 * h[0], "{} -> {}", h[0], h[199]);
        assert_eq!(h, &run().loss_history);
    }

    #[test]
    fn best_checkpoint_is_kept() {
        let sents = sentences();
        let vocab = Vocab::build(sents.iter().map(|s| s.as_str()), 1);
        let teacher = transformer(&vocab, 8, 3);
        let pca = pca_of(&teacher, &sents, 4);
        let val = vec![
            ScoredPair::new("the big dog runs", "big cats run fast", 3.0).unwrap(),
            ScoredPair::new("the big dog runs", "a quiet bird rests", 0.5).unwrap(),
            ScoredPair::new("the child sings", "young children play outside", 2.0).unwrap(),
        ];
        let state = DistillState::new(transformer(&vocab, 6, 5), ProjectionHead::random(6, 4, 1)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            eval_every: 3,
            learning_rate: 1e-2,
            ..TrainConfig::distillation()
        };
        let out = distill(&teacher, &pca, state, &sents, &cfg, Some(&val)).unwrap();
        assert_eq!(out.validation_history.len(), 4);
        let best = out.best.clone().unwrap();
        let top = out.validation_history.iter().map(|v| v.1).fold(f64::MIN, f64::max);
        assert_eq!(best.rho, top);
        let (enc, head) = out.into_best();
        let rho = eval_sts(|s| head.project(&enc.embed(s)?), &val).unwrap();
        assert_eq!(rho, top);
    }
}
