//! Symmetric contrastive training of clip and caption embeddings.
//!
//! Each step embeds a batch of clips and captions on one tape, forms the
//! cosine similarity matrix, and minimizes the mean of the two cross-entropy
//! directions (clip-to-caption and caption-to-clip) with the matched pairs on
//! the diagonal as targets. Optimization is Adam with two learning-rate
//! groups: parameter tensors that would come from a pretrained backbone move
//! slowly (with decoupled weight decay), newly introduced modules move fast.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embed::{sample_frames, SampleStrategy, VideoClip};
use crate::harness::dataset::ClipExample;
use crate::harness::metrics::{rank_metrics_diag, RetrievalResult};
use crate::model::Model;
use crate::params::{Forward, ParamGroup, ParamSet};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tensor, TensorError, TensorResult, Var};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite gradient for parameter '{0}'; optimizer step aborted")]
    NonFiniteGrad(String),
    #[error("batch size {batch} not usable with a training split of {split} clips")]
    BatchTooLarge { batch: usize, split: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-normalized `video x text^T` similarities plus which input rows were
/// degenerate (zero vectors left unnormalized).
pub struct Similarity {
    pub sim: Var,
    pub degenerate_video: Vec<usize>,
    pub degenerate_text: Vec<usize>,
}

/// `sim[i][j]` = cosine of clip `i` against caption `j`; both inputs `[B, d]`.
pub fn similarity_matrix(fw: &mut Forward, video: Var, text: Var) -> TensorResult<Similarity> {
    let (v, degenerate_video) = fw.tape.l2_normalize_rows(video)?;
    let (t, degenerate_text) = fw.tape.l2_normalize_rows(text)?;
    let tt = fw.tape.transpose(t)?;
    let sim = fw.tape.matmul(v, tt)?;
    Ok(Similarity {
        sim,
        degenerate_video,
        degenerate_text,
    })
}

fn cross_entropy_diag(fw: &mut Forward, z: Var) -> TensorResult<Var> {
    let lse = fw.tape.lse_rows(z)?;
    let diag = fw.tape.diag(z)?;
    let neg = fw.tape.scale(diag, -1.0)?;
    let per_row = fw.tape.add(lse, neg)?;
    fw.tape.mean_axis(per_row, 0)
}

/// Mean of the two softmax cross-entropies over a square similarity matrix,
/// scaled by `exp(logit_scale)` (capped at 100 so the temperature cannot run
/// away).
pub fn contrastive_loss(fw: &mut Forward, sim: Var, logit_scale: Var) -> TensorResult<Var> {
    let shape = fw.tape.value(sim).shape().to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(TensorError::BadShape {
            op: "contrastive_loss",
            expected: "square similarity matrix",
            got: shape,
        });
    }
    let scale = fw.tape.exp_clamped(logit_scale, 100.0)?;
    let z = fw.tape.scale_by(scale, sim)?;
    let video_to_text = cross_entropy_diag(fw, z)?;
    let zt = fw.tape.transpose(z)?;
    let text_to_video = cross_entropy_diag(fw, zt)?;
    let sum = fw.tape.add(video_to_text, text_to_video)?;
    fw.tape.scale(sum, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Learning rate for the pretrained-style group.
    pub lr_slow: f64,
    /// Learning rate for newly introduced modules.
    pub lr_new: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied to the slow group only.
    pub weight_decay_slow: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_slow: 1e-7,
            lr_new: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay_slow: 0.2,
        }
    }
}

impl OptimConfig {
    pub fn lr_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::PretrainedSlow => self.lr_slow,
            ParamGroup::NewModules => self.lr_new,
        }
    }

    fn weight_decay_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::PretrainedSlow => self.weight_decay_slow,
            ParamGroup::NewModules => 0.0,
        }
    }
}

/// Adam moments, indexed like the parameter set.
pub struct AdamState {
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = params
            .ids()
            .map(|id| Tensor::zeros(params.tensor(id).shape()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Self { step: 0, m, v }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient (absent from the step's
    /// graph) are left completely untouched, including weight decay. Any
    /// non-finite gradient aborts before anything is modified.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Option<Tensor>],
        cfg: &OptimConfig,
    ) -> Result<(), TrainError> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(TrainError::Tensor(TensorError::BadShape {
                op: "AdamState::step",
                expected: "one gradient slot per parameter",
                got: vec![grads.len(), self.m.len()],
            }));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.tensor(id).shape() {
                    return Err(TrainError::Tensor(TensorError::ShapeMismatch {
                        op: "AdamState::step",
                        lhs: g.shape().to_vec(),
                        rhs: params.tensor(id).shape().to_vec(),
                    }));
                }
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFiniteGrad(params.name(id).to_string()));
                }
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for (slot, (id, g)) in params.ids().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let group = params.group(id);
            let lr = cfg.lr_for(group);
            let wd = cfg.weight_decay_for(group);
            let m = self.m[slot].data_mut();
            let v = self.v[slot].data_mut();
            let p = params.tensor_mut(id).data_mut();
            for ((pi, gi), (mi, vi)) in p.iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + wd * *pi);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Run a validation retrieval eval every this many steps (0: final only).
    pub eval_every: usize,
    /// Frame sampling for training clips; evaluation always samples uniformly.
    pub sampling: SampleStrategy,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            batch_size: 8,
            eval_every: 0,
            sampling: SampleStrategy::Uniform,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr_slow: f64,
    pub lr_new: f64,
}

#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub step: usize,
    pub result: RetrievalResult,
}

pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub evals: Vec<EvalPoint>,
    pub final_eval: RetrievalResult,
}

/// Sample each example's frames once for the whole run (seeded by example id)
/// so repeated epochs see identical inputs.
fn sampled_clips(
    examples: &[ClipExample],
    frames: usize,
    strategy: SampleStrategy,
    seed: u64,
) -> TensorResult<Vec<VideoClip>> {
    examples
        .iter()
        .map(|ex| {
            let mut rng = stream_rng(seed, Stream::FrameSampling, ex.id as u64);
            let idx = sample_frames(ex.video.t(), frames, strategy, &mut rng)?;
            ex.video.select_frames(&idx)
        })
        .collect()
}

/// Embed a batch of (clip, caption) pairs on one tape and return stacked
/// `[B, d]` variables.
fn batch_embeddings(
    model: &Model,
    fw: &mut Forward,
    clips: &[&VideoClip],
    examples: &[&ClipExample],
) -> TensorResult<(Var, Var)> {
    let d = model.config.dim;
    let mut f_rows = Vec::with_capacity(examples.len());
    let mut g_rows = Vec::with_capacity(examples.len());
    for (clip, ex) in clips.iter().zip(examples) {
        let f = model.forward_clip(fw, clip, &ex.audio)?;
        f_rows.push(fw.tape.reshape(f, &[1, d])?);
        let g = model.encode_text(fw, &ex.text)?;
        g_rows.push(fw.tape.reshape(g, &[1, d])?);
    }
    let f = fw.tape.concat_rows(&f_rows)?;
    let g = fw.tape.concat_rows(&g_rows)?;
    Ok((f, g))
}

pub fn train(
    model: &mut Model,
    train_set: &[ClipExample],
    val_set: &[ClipExample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    if cfg.batch_size == 0 || cfg.batch_size > train_set.len() {
        return Err(TrainError::BatchTooLarge {
            batch: cfg.batch_size,
            split: train_set.len(),
        });
    }
    let frames = model.geometry.frames;
    let train_clips = sampled_clips(train_set, frames, cfg.sampling, seed)?;

    let mut adam = AdamState::new(&model.params);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut evals = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch: u64 = 0;
    order.shuffle(&mut stream_rng(seed, Stream::BatchShuffle, epoch));
    let mut cursor = 0usize;

    for step in 0..cfg.steps {
        if cursor + cfg.batch_size > order.len() {
            // drop the ragged tail and reshuffle
            epoch += 1;
            order.shuffle(&mut stream_rng(seed, Stream::BatchShuffle, epoch));
            cursor = 0;
        }
        let batch_idx = &order[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;

        let (loss_val, grads) = {
            let mut fw = Forward::new(&model.params, true);
            let clips: Vec<&VideoClip> = batch_idx.iter().map(|&i| &train_clips[i]).collect();
            let examples: Vec<&ClipExample> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let (f, g) = batch_embeddings(model, &mut fw, &clips, &examples)?;
            let sim = similarity_matrix(&mut fw, f, g)?;
            let scale = fw.param(model.logit_scale_id())?;
            let loss = contrastive_loss(&mut fw, sim.sim, scale)?;
            fw.tape.backward(loss)?;
            (fw.tape.value(loss).item()?, fw.grads())
        };
        adam.step(&mut model.params, &grads, &cfg.optim)?;
        records.push(StepRecord {
            step,
            loss: loss_val,
            lr_slow: cfg.optim.lr_slow,
            lr_new: cfg.optim.lr_new,
        });
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps {
            evals.push(EvalPoint {
                step: step + 1,
                result: evaluate(model, val_set)?,
            });
        }
    }
    let final_eval = evaluate(model, val_set)?;
    evals.push(EvalPoint {
        step: cfg.steps,
        result: final_eval.clone(),
    });
    Ok(TrainOutcome {
        records,
        evals,
        final_eval,
    })
}

fn l2_rows(t: &Tensor) -> Tensor {
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    Tensor::from_fn(&[rows, cols], |i| {
        let r = i / cols;
        let row = &t.data()[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            0.0
        } else {
            t.data()[i] / norm
        }
    })
}

/// Value-level embeddings for a whole split, one clip per tape: clip matrix
/// and caption matrix, both `[B, d]`, frames sampled uniformly.
pub fn embeddings_for(
    model: &Model,
    examples: &[ClipExample],
) -> Result<(Tensor, Tensor), TrainError> {
    let d = model.config.dim;
    let b = examples.len();
    let mut f = Vec::with_capacity(b * d);
    let mut g = Vec::with_capacity(b * d);
    let mut rng = stream_rng(0, Stream::FrameSampling, 0);
    for ex in examples {
        let idx = sample_frames(ex.video.t(), model.geometry.frames, SampleStrategy::Uniform, &mut rng)?;
        let clip = ex.video.select_frames(&idx)?;
        let mut fw = Forward::new(&model.params, false);
        let fv = model.forward_clip(&mut fw, &clip, &ex.audio)?;
        f.extend_from_slice(fw.tape.value(fv).data());
        let mut fw = Forward::new(&model.params, false);
        let gv = model.encode_text(&mut fw, &ex.text)?;
        g.extend_from_slice(fw.tape.value(gv).data());
    }
    Ok((
        Tensor::new(vec![b, d], f).map_err(TrainError::Tensor)?,
        Tensor::new(vec![b, d], g).map_err(TrainError::Tensor)?,
    ))
}

/// Caption-to-clip retrieval over a split: queries are captions, the gallery
/// is every clip in the split, truth is the paired clip.
pub fn evaluate(model: &Model, examples: &[ClipExample]) -> Result<RetrievalResult, TrainError> {
    let (f, g) = embeddings_for(model, examples)?;
    let fn_ = l2_rows(&f);
    let gn = l2_rows(&g);
    let (b, d) = (fn_.shape()[0], fn_.shape()[1]);
    let scores = Tensor::from_fn(&[b, b], |i| {
        let (q, j) = (i / b, i % b);
        let mut s = 0.0;
        for k in 0..d {
            s += gn.data()[q * d + k] * fn_.data()[j * d + k];
        }
        s
    });
    Ok(rank_metrics_diag(&scores)?)
}

pub fn write_loss_csv(path: &Path, records: &[StepRecord]) -> Result<(), TrainError> {
    let mut out = String::from("step,loss,lr_slow,lr_new\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.lr_slow, r.lr_new));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::dataset::{generate, DatasetSpec};
    use crate::model::{Model, ModelConfig};
    use crate::params::ParamSet;

    #[test]
    fn single_pair_loss_is_exactly_zero() {
        let set = ParamSet::new();
        let mut fw = Forward::new(&set, false);
        let sim = fw.input(Tensor::new(vec![1, 1], vec![0.37]).unwrap()).unwrap();
        let scale = fw.input(Tensor::scalar(2.0)).unwrap();
        let loss = contrastive_loss(&mut fw, sim, scale).unwrap();
        assert_eq!(fw.tape.value(loss).item().unwrap(), 0.0);
    }

    #[test]
    fn identity_similarity_pair_matches_hand_value() {
        // scale = exp(0) = 1, z = I2: each direction gives ln(1 + e^-1)
        let set = ParamSet::new();
        let mut fw = Forward::new(&set, false);
        let sim = fw
            .input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let scale = fw.input(Tensor::scalar(0.0)).unwrap();
        let loss = contrastive_loss(&mut fw, sim, scale).unwrap();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((fw.tape.value(loss).item().unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.31326168751822286).abs() < 1e-15);
    }

    #[test]
    fn loss_is_invariant_under_joint_permutation() {
        let mut rng = stream_rng(1, Stream::Inputs, 0);
        let sim = crate::params::gaussian(&mut rng, &[4, 4], 1.0);
        let perm = [2usize, 0, 3, 1];
        let permuted = Tensor::from_fn(&[4, 4], |i| {
            let (r, c) = (i / 4, i % 4);
            sim.at2(perm[r], perm[c])
        });
        let run = |m: Tensor| {
            let set = ParamSet::new();
            let mut fw = Forward::new(&set, false);
            let s = fw.input(m).unwrap();
            let scale = fw.input(Tensor::scalar(1.3)).unwrap();
            let loss = contrastive_loss(&mut fw, s, scale).unwrap();
            fw.tape.value(loss).item().unwrap()
        };
        assert!((run(sim) - run(permuted)).abs() <= 1e-12);
    }

    #[test]
    fn loss_rejects_rectangular_input() {
        let set = ParamSet::new();
        let mut fw = Forward::new(&set, false);
        let sim = fw.input(Tensor::zeros(&[2, 3])).unwrap();
        let scale = fw.input(Tensor::scalar(0.0)).unwrap();
        assert!(contrastive_loss(&mut fw, sim, scale).is_err());
    }

    #[test]
    fn similarity_matrix_is_pairwise_cosine() {
        let set = ParamSet::new();
        let mut fw = Forward::new(&set, false);
        let video = fw
            .input(Tensor::new(vec![2, 2], vec![3.0, 4.0, 5.0, 0.0]).unwrap())
            .unwrap();
        let text = fw
            .input(Tensor::new(vec![2, 2], vec![3.0, 4.0, 0.0, 2.0]).unwrap())
            .unwrap();
        let s = similarity_matrix(&mut fw, video, text).unwrap();
        let m = fw.tape.value(s.sim);
        assert!((m.at2(0, 0) - 1.0).abs() < 1e-12);
        assert!((m.at2(0, 1) - 0.8).abs() < 1e-12);
        assert!((m.at2(1, 0) - 0.6).abs() < 1e-12);
        assert!(m.at2(1, 1).abs() < 1e-12);
        assert!(s.degenerate_video.is_empty() && s.degenerate_text.is_empty());
    }

    #[test]
    fn degenerate_rows_are_reported() {
        let set = ParamSet::new();
        let mut fw = Forward::new(&set, false);
        let video = fw
            .input(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap())
            .unwrap();
        let text = fw.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let s = similarity_matrix(&mut fw, video, text).unwrap();
        assert_eq!(s.degenerate_video, vec![0]);
    }

    fn single_param_set(value: f64, group: ParamGroup) -> ParamSet {
        let mut set = ParamSet::new();
        set.add("x", group, Tensor::new(vec![1], vec![value]).unwrap());
        set
    }

    #[test]
    fn adam_first_step_matches_hand_trace() {
        // f(x) = x^2 at x = 1: g = 2, lr 0.1 -> x ~ 0.9
        let mut set = single_param_set(1.0, ParamGroup::NewModules);
        let mut adam = AdamState::new(&set);
        let cfg = OptimConfig {
            lr_new: 0.1,
            ..OptimConfig::default()
        };
        let grads = vec![Some(Tensor::new(vec![1], vec![2.0]).unwrap())];
        adam.step(&mut set, &grads, &cfg).unwrap();
        let id = set.find("x").unwrap();
        let x = set.tensor(id).item().unwrap();
        // exact: 1 - 0.1 * 2/(2 + 1e-8)
        assert!((x - 0.9).abs() < 1e-8, "x = {x}");
        assert!((x - (1.0 - 0.1 * (2.0 / (2.0 + 1e-8)))).abs() < 1e-15);
    }

    #[test]
    fn slow_group_gets_slow_lr_and_decay() {
        let mut set = single_param_set(1.0, ParamGroup::PretrainedSlow);
        let mut adam = AdamState::new(&set);
        let cfg = OptimConfig::default();
        let grads = vec![Some(Tensor::new(vec![1], vec![1.0]).unwrap())];
        adam.step(&mut set, &grads, &cfg).unwrap();
        let id = set.find("x").unwrap();
        let x = set.tensor(id).item().unwrap();
        let expect = 1.0 - 1e-7 * (1.0 / (1.0 + 1e-8) + 0.2);
        assert!((x - expect).abs() < 1e-15, "x = {x}");
    }

    #[test]
    fn params_without_gradients_do_not_move() {
        let mut set = ParamSet::new();
        set.add("a", ParamGroup::NewModules, Tensor::scalar(1.0));
        set.add("b", ParamGroup::PretrainedSlow, Tensor::scalar(2.0));
        let mut adam = AdamState::new(&set);
        let grads = vec![Some(Tensor::scalar(1.0)), None];
        adam.step(&mut set, &grads, &OptimConfig::default()).unwrap();
        let b = set.find("b").unwrap();
        assert_eq!(set.tensor(b).item().unwrap(), 2.0, "no grad, no decay, no move");
    }

    #[test]
    fn non_finite_gradient_aborts_whole_step_with_name() {
        let mut set = ParamSet::new();
        set.add("fine", ParamGroup::NewModules, Tensor::scalar(1.0));
        set.add("broken.w", ParamGroup::NewModules, Tensor::scalar(2.0));
        let mut adam = AdamState::new(&set);
        let grads = vec![
            Some(Tensor::scalar(1.0)),
            Some(Tensor::new(vec![1], vec![f64::NAN]).unwrap()),
        ];
        let err = adam.step(&mut set, &grads, &OptimConfig::default()).unwrap_err();
        assert!(err.to_string().contains("broken.w"), "{err}");
        // nothing moved, including the healthy parameter
        assert_eq!(set.tensor(set.find("fine").unwrap()).item().unwrap(), 1.0);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn training_smoke_run_records_every_step() {
        let spec = DatasetSpec {
            clips: 10,
            val_fraction: 0.2,
            ..DatasetSpec::default()
        };
        let ds = generate(&spec, 1).unwrap();
        let cfg = ModelConfig {
            dim: 8,
            heads: 2,
            layers: 1,
            av_blocks: 1,
            text_layers: 1,
            max_text_tokens: 8,
            audio_hidden: 4,
            ..ModelConfig::default()
        };
        let mut model = Model::new(cfg, ds.geometry(), 0).unwrap();
        let tc = TrainConfig {
            steps: 3,
            batch_size: 4,
            eval_every: 2,
            ..TrainConfig::default()
        };
        let out = train(&mut model, ds.train(), ds.val(), &tc, 0).unwrap();
        assert_eq!(out.records.len(), 3);
        for (i, r) in out.records.iter().enumerate() {
            assert_eq!(r.step, i);
            assert!(r.loss.is_finite());
            assert_eq!(r.lr_slow, 1e-7);
            assert_eq!(r.lr_new, 1e-4);
        }
        // eval at step 2 plus the final one
        assert_eq!(out.evals.len(), 2);
        assert_eq!(out.final_eval.ranks.len(), ds.val().len());

        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("loss.csv");
        write_loss_csv(&csv, &out.records).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("step,loss,lr_slow,lr_new\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let spec = DatasetSpec {
            clips: 6,
            val_fraction: 0.34,
            ..DatasetSpec::default()
        };
        let ds = generate(&spec, 1).unwrap();
        let mut model = Model::new(
            ModelConfig {
                dim: 8,
                heads: 2,
                layers: 1,
                av_blocks: 1,
                audio_hidden: 4,
                max_text_tokens: 8,
                ..ModelConfig::default()
            },
            ds.geometry(),
            0,
        )
        .unwrap();
        let tc = TrainConfig {
            steps: 1,
            batch_size: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut model, ds.train(), ds.val(), &tc, 0),
            Err(TrainError::BatchTooLarge { .. })
        ));
    }
}
