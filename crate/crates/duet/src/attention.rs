//! Multi-head attention and the dual-pathway block stack.
//!
//! Each block runs per-frame self-attention on the visual tokens, then two
//! gated cross-attentions that exchange information with the audio track:
//! audio-to-video (every frame token queries all audio timesteps) and
//! video-to-audio (each audio timestep queries its own frame's tokens). Both
//! cross-attentions read the *same* spatial output and the *same* incoming
//! audio, so the two pathways update in parallel. The cross-attention outputs
//! pass through zero-initialized linear gates: a freshly initialized model is
//! exactly the video-only model, and the audio pathway must earn its way in
//! during training.

use serde::{Deserialize, Serialize};

use crate::params::{Forward, ParamId};
use crate::tensor::{Tensor, TensorError, TensorResult, Var};

#[derive(Debug, Clone, Copy)]
pub struct LnParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct MhaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub heads: usize,
}

/// Zero-initialized `d x d` linear applied to a cross-attention output.
#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Pre-norm feed-forward: `x + W2 gelu(W1 ln(x))`, hidden width `4d`.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub ln: LnParams,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub spatial: MhaParams,
    pub ln1: LnParams,
    pub a2v: MhaParams,
    pub a2v_gate: GateParams,
    pub v2a: MhaParams,
    pub v2a_gate: GateParams,
    pub ffn: FfnParams,
}

/// Which attention pathways a block runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockVariant {
    /// Per-frame self-attention only; the audio track passes through.
    VideoOnly,
    /// Audio enriches the frames; the audio track itself never updates.
    A2vOnly,
    /// Both gated cross-attentions (the full dual pathway).
    A2vV2a,
    /// One self-attention over all frame and audio tokens concatenated.
    /// Quadratic in the joint token count; kept as the expensive baseline.
    JointAv,
}

impl std::fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BlockVariant::VideoOnly => "video_only",
            BlockVariant::A2vOnly => "a2v_only",
            BlockVariant::A2vV2a => "a2v_v2a",
            BlockVariant::JointAv => "joint_av",
        };
        f.write_str(s)
    }
}

/// Layer norm with fixed unit gain and zero bias (used on cross-attention
/// inputs, which carry no learnable norm of their own).
pub fn layer_norm_free(fw: &mut Forward, x: Var) -> TensorResult<Var> {
    let d = *fw.tape.value(x).shape().last().ok_or(TensorError::BadShape {
        op: "layer_norm_free",
        expected: "rank >= 1",
        got: vec![],
    })?;
    let gain = fw.tape.leaf(Tensor::filled(&[d], 1.0), false)?;
    let bias = fw.tape.leaf(Tensor::zeros(&[d]), false)?;
    fw.tape.layer_norm(x, gain, bias)
}

pub fn layer_norm(fw: &mut Forward, ln: &LnParams, x: Var) -> TensorResult<Var> {
    let gain = fw.param(ln.gain)?;
    let bias = fw.param(ln.bias)?;
    fw.tape.layer_norm(x, gain, bias)
}

/// Multi-head attention. Queries `[m,d]`, keys/values `[n,d]`; `h` heads of
/// width `d/h`, each scaled by `1/sqrt(d/h)`; concatenated head outputs pass
/// through the output projection.
pub fn mha(fw: &mut Forward, p: &MhaParams, q_in: Var, k_in: Var, v_in: Var) -> TensorResult<Var> {
    let d = fw.tape.value(q_in).shape()[1];
    if !d.is_multiple_of(p.heads) {
        return Err(TensorError::BadShape {
            op: "mha",
            expected: "model width divisible by head count",
            got: vec![d, p.heads],
        });
    }
    let dh = d / p.heads;
    let wq = fw.param(p.w_q)?;
    let wk = fw.param(p.w_k)?;
    let wv = fw.param(p.w_v)?;
    let wo = fw.param(p.w_o)?;
    let q = fw.tape.matmul(q_in, wq)?;
    let k = fw.tape.matmul(k_in, wk)?;
    let v = fw.tape.matmul(v_in, wv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (c0, c1) = (h * dh, (h + 1) * dh);
        let qh = fw.tape.slice_cols(q, c0, c1)?;
        let kh = fw.tape.slice_cols(k, c0, c1)?;
        let vh = fw.tape.slice_cols(v, c0, c1)?;
        let kt = fw.tape.transpose(kh)?;
        let scores = fw.tape.matmul(qh, kt)?;
        let scaled = fw.tape.scale(scores, scale)?;
        let weights = fw.tape.softmax_rows(scaled)?;
        heads.push(fw.tape.matmul(weights, vh)?);
    }
    let cat = fw.tape.concat_cols(&heads)?;
    fw.tape.matmul(cat, wo)
}

fn gate(fw: &mut Forward, g: &GateParams, x: Var) -> TensorResult<Var> {
    let w = fw.param(g.w)?;
    let b = fw.param(g.b)?;
    fw.tape.linear(x, w, Some(b))
}

/// Per-frame self-attention with pre-norm residual: `S_t = MHA(ln(V_t)) + V_t`.
/// Frames never see each other here; all cross-frame flow is via audio.
pub fn spatial_attention(
    fw: &mut Forward,
    p: &MhaParams,
    ln: &LnParams,
    frames: &[Var],
) -> TensorResult<Vec<Var>> {
    frames
        .iter()
        .map(|&v_t| {
            let x = layer_norm(fw, ln, v_t)?;
            let attn = mha(fw, p, x, x, x)?;
            fw.tape.add(attn, v_t)
        })
        .collect()
}

/// Audio-to-video: every token of frame `t` queries all `T` audio embeddings;
/// the gated result lands on the frame residually.
pub fn a2v_attention(
    fw: &mut Forward,
    p: &MhaParams,
    g: &GateParams,
    frames_s: &[Var],
    audio: Var,
) -> TensorResult<Vec<Var>> {
    let a_norm = layer_norm_free(fw, audio)?;
    frames_s
        .iter()
        .map(|&s_t| {
            let q = layer_norm_free(fw, s_t)?;
            let attn = mha(fw, p, q, a_norm, a_norm)?;
            let gated = gate(fw, g, attn)?;
            fw.tape.add(gated, s_t)
        })
        .collect()
}

/// Video-to-audio: audio timestep `t` (a single query row) attends over the
/// tokens of its own frame only, keeping the audio pathway local in time.
pub fn v2a_attention(
    fw: &mut Forward,
    p: &MhaParams,
    g: &GateParams,
    frames_s: &[Var],
    audio: Var,
) -> TensorResult<Var> {
    let t_steps = fw.tape.value(audio).shape()[0];
    if t_steps != frames_s.len() {
        return Err(TensorError::ShapeMismatch {
            op: "v2a_attention",
            lhs: vec![t_steps],
            rhs: vec![frames_s.len()],
        });
    }
    let mut rows = Vec::with_capacity(t_steps);
    for (t, &s_t) in frames_s.iter().enumerate() {
        let a_t = fw.tape.slice_rows(audio, t, t + 1)?;
        let q = layer_norm_free(fw, a_t)?;
        let kv = layer_norm_free(fw, s_t)?;
        let attn = mha(fw, p, q, kv, kv)?;
        let gated = gate(fw, g, attn)?;
        rows.push(fw.tape.add(gated, a_t)?);
    }
    fw.tape.concat_rows(&rows)
}

pub fn ffn(fw: &mut Forward, p: &FfnParams, x: Var) -> TensorResult<Var> {
    let normed = layer_norm(fw, &p.ln, x)?;
    let w1 = fw.param(p.w1)?;
    let b1 = fw.param(p.b1)?;
    let w2 = fw.param(p.w2)?;
    let b2 = fw.param(p.b2)?;
    let h = fw.tape.linear(normed, w1, Some(b1))?;
    let h = fw.tape.gelu(h)?;
    let out = fw.tape.linear(h, w2, Some(b2))?;
    fw.tape.add(out, x)
}

/// One block: spatial attention, the variant's cross-modal exchange, then a
/// feed-forward on the visual stream. Returns the updated frames and audio.
pub fn av_block(
    fw: &mut Forward,
    p: &BlockParams,
    frames: &[Var],
    audio: Var,
    variant: BlockVariant,
) -> TensorResult<(Vec<Var>, Var)> {
    let (visual, audio_next) = match variant {
        BlockVariant::VideoOnly => (spatial_attention(fw, &p.spatial, &p.ln1, frames)?, audio),
        BlockVariant::A2vOnly => {
            let s = spatial_attention(fw, &p.spatial, &p.ln1, frames)?;
            (a2v_attention(fw, &p.a2v, &p.a2v_gate, &s, audio)?, audio)
        }
        BlockVariant::A2vV2a => {
            let s = spatial_attention(fw, &p.spatial, &p.ln1, frames)?;
            // Both directions read the same spatial output and the same
            // incoming audio: a parallel, not sequential, update.
            let v = a2v_attention(fw, &p.a2v, &p.a2v_gate, &s, audio)?;
            let a = v2a_attention(fw, &p.v2a, &p.v2a_gate, &s, audio)?;
            (v, a)
        }
        BlockVariant::JointAv => {
            let t = frames.len();
            let tokens = fw.tape.value(frames[0]).shape()[0];
            let mut parts = frames.to_vec();
            parts.push(audio);
            let x = fw.tape.concat_rows(&parts)?;
            let normed = layer_norm(fw, &p.ln1, x)?;
            let attn = mha(fw, &p.spatial, normed, normed, normed)?;
            let joint = fw.tape.add(attn, x)?;
            let mut visual = Vec::with_capacity(t);
            for i in 0..t {
                visual.push(fw.tape.slice_rows(joint, i * tokens, (i + 1) * tokens)?);
            }
            let a = fw.tape.slice_rows(joint, t * tokens, t * tokens + t)?;
            (visual, a)
        }
    };
    let visual = visual
        .into_iter()
        .map(|v| ffn(fw, &p.ffn, v))
        .collect::<TensorResult<Vec<_>>>()?;
    Ok((visual, audio_next))
}

/// Output of the full backbone: final token states plus the pooled clip
/// embedding.
pub struct BackboneOut {
    pub frames: Vec<Var>,
    pub audio: Var,
    /// Mean of the per-frame CLS outputs, layer-normalized: the clip vector.
    pub clip_embedding: Var,
}

/// Run `blocks.len()` layers; the first `av_blocks` use `variant`, the rest
/// run video-only. Pools per-frame CLS outputs by temporal mean and applies
/// the final layer norm.
pub fn forward_video(
    fw: &mut Forward,
    blocks: &[BlockParams],
    final_ln: &LnParams,
    frames0: Vec<Var>,
    audio0: Var,
    variant: BlockVariant,
    av_blocks: usize,
) -> TensorResult<BackboneOut> {
    if av_blocks > blocks.len() {
        return Err(TensorError::OutOfBounds {
            op: "forward_video",
            index: av_blocks,
            bound: blocks.len(),
        });
    }
    let mut frames = frames0;
    let mut audio = audio0;
    for (i, block) in blocks.iter().enumerate() {
        let v = if i < av_blocks {
            variant
        } else {
            BlockVariant::VideoOnly
        };
        let (f, a) = av_block(fw, block, &frames, audio, v)?;
        frames = f;
        audio = a;
    }
    let cls_rows = frames
        .iter()
        .map(|&f| fw.tape.slice_rows(f, 0, 1))
        .collect::<TensorResult<Vec<_>>>()?;
    let stacked = fw.tape.concat_rows(&cls_rows)?;
    let pooled = fw.tape.mean_axis(stacked, 0)?;
    let clip_embedding = layer_norm(fw, final_ln, pooled)?;
    Ok(BackboneOut {
        frames,
        audio,
        clip_embedding,
    })
}

/// Cosine similarity between each final audio embedding and its frame's patch
/// tokens (CLS excluded): a `[T, N]` saliency map of where the soundtrack
/// "looks" in each frame. Values lie in `[-1, 1]`.
pub fn audio_patch_saliency(
    audio: &crate::embed::AudioTrack,
    grid: &crate::embed::TokenGrid,
) -> TensorResult<Tensor> {
    let (t_steps, tokens, d) = grid.dims();
    if audio.embeds.shape() != [t_steps, d] {
        return Err(TensorError::ShapeMismatch {
            op: "audio_patch_saliency",
            lhs: audio.embeds.shape().to_vec(),
            rhs: vec![t_steps, d],
        });
    }
    let n = tokens - 1;
    let mut out = Tensor::zeros(&[t_steps, n]);
    for t in 0..t_steps {
        let a = &audio.embeds.data()[t * d..(t + 1) * d];
        for p in 0..n {
            let tok = grid.token(t, p + 1);
            let c = crate::tensor::cosine(a, tok).clamp(-1.0, 1.0);
            out.data_mut()[t * n + p] = c;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{gaussian, xavier_uniform, ParamGroup, ParamSet};
    use crate::rng::{stream_rng, Stream};
    use rand_chacha::ChaCha12Rng;

    fn mk_mha(set: &mut ParamSet, rng: &mut ChaCha12Rng, d: usize, heads: usize, tag: &str) -> MhaParams {
        MhaParams {
            w_q: set.add(format!("{tag}.w_q"), ParamGroup::PretrainedSlow, xavier_uniform(rng, d, d)),
            w_k: set.add(format!("{tag}.w_k"), ParamGroup::PretrainedSlow, xavier_uniform(rng, d, d)),
            w_v: set.add(format!("{tag}.w_v"), ParamGroup::PretrainedSlow, xavier_uniform(rng, d, d)),
            w_o: set.add(format!("{tag}.w_o"), ParamGroup::PretrainedSlow, xavier_uniform(rng, d, d)),
            heads,
        }
    }

    fn rand_t(rng: &mut ChaCha12Rng, shape: &[usize]) -> Tensor {
        gaussian(rng, shape, 1.0)
    }

    /// Plain triple-loop attention, one head at a time — the oracle mha is
    /// compared against.
    #[allow(clippy::needless_range_loop)]
    fn mha_oracle(
        set: &ParamSet,
        p: &MhaParams,
        q_in: &Tensor,
        kv_in: &Tensor,
    ) -> Tensor {
        let d = q_in.shape()[1];
        let dh = d / p.heads;
        let proj = |x: &Tensor, w: &Tensor| {
            let (m, k) = (x.shape()[0], x.shape()[1]);
            let n = w.shape()[1];
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    for t in 0..k {
                        out[i * n + j] += x.data()[i * k + t] * w.data()[t * n + j];
                    }
                }
            }
            Tensor::new(vec![m, n], out).unwrap()
        };
        let q = proj(q_in, set.tensor(p.w_q));
        let k = proj(kv_in, set.tensor(p.w_k));
        let v = proj(kv_in, set.tensor(p.w_v));
        let (m, n) = (q.shape()[0], k.shape()[0]);
        let mut cat = vec![0.0; m * d];
        for h in 0..p.heads {
            for i in 0..m {
                let mut scores = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for t in 0..dh {
                        s += q.at2(i, h * dh + t) * k.at2(j, h * dh + t);
                    }
                    scores[j] = s / (dh as f64).sqrt();
                }
                let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for t in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += exps[j] / denom * v.at2(j, h * dh + t);
                    }
                    cat[i * d + h * dh + t] = acc;
                }
            }
        }
        proj(&Tensor::new(vec![m, d], cat).unwrap(), set.tensor(p.w_o))
    }

    #[test]
    fn mha_matches_triple_loop_oracle() {
        let mut rng = stream_rng(11, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 2, "t");
        let q0 = rand_t(&mut rng, &[5, 8]);
        let kv0 = rand_t(&mut rng, &[3, 8]);
        let expect = mha_oracle(&set, &p, &q0, &kv0);

        let mut fw = Forward::new(&set, false);
        let q = fw.input(q0).unwrap();
        let kv = fw.input(kv0).unwrap();
        let y = mha(&mut fw, &p, q, kv, kv).unwrap();
        assert!(fw.tape.value(y).max_abs_diff(&expect).unwrap() < 1e-10);
    }

    #[test]
    fn mha_single_query_single_key_is_projected_value() {
        // With one key the softmax weight is exactly 1, so out = v W_V W_O.
        let mut rng = stream_rng(3, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 4, 2, "t");
        let q0 = rand_t(&mut rng, &[1, 4]);
        let kv0 = rand_t(&mut rng, &[1, 4]);
        let mut fw = Forward::new(&set, false);
        let q = fw.input(q0).unwrap();
        let kv = fw.input(kv0.clone()).unwrap();
        let y = mha(&mut fw, &p, q, kv, kv).unwrap();
        let wv = fw.param(p.w_v).unwrap();
        let vv = fw.tape.matmul(kv, wv).unwrap();
        let wo = fw.param(p.w_o).unwrap();
        let expect = fw.tape.matmul(vv, wo).unwrap();
        let diff = fw.tape.value(y).max_abs_diff(fw.tape.value(expect)).unwrap();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn mha_is_invariant_to_duplicated_key_value_rows() {
        let mut rng = stream_rng(5, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 4, 2, "t");
        let q0 = rand_t(&mut rng, &[2, 4]);
        let kv = rand_t(&mut rng, &[2, 4]);
        let mut doubled = kv.data().to_vec();
        doubled.extend_from_slice(kv.data());
        let kv2 = Tensor::new(vec![4, 4], doubled).unwrap();

        let run = |kv_t: Tensor| {
            let mut fw = Forward::new(&set, false);
            let q = fw.input(q0.clone()).unwrap();
            let k = fw.input(kv_t).unwrap();
            let y = mha(&mut fw, &p, q, k, k).unwrap();
            fw.tape.value(y).clone()
        };
        let once = run(kv);
        let twice = run(kv2);
        assert!(once.max_abs_diff(&twice).unwrap() < 1e-12);
    }

    #[test]
    fn mha_attention_weights_are_row_stochastic() {
        let mut rng = stream_rng(9, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 4, "t");
        let mut fw = Forward::new(&set, false);
        let q = fw.input(rand_t(&mut rng, &[6, 8])).unwrap();
        let kv = fw.input(rand_t(&mut rng, &[3, 8])).unwrap();
        mha(&mut fw, &p, q, kv, kv).unwrap();
        let sums = fw.tape.softmax_row_sums();
        assert_eq!(sums.len(), 4 * 6); // heads x query rows
        for s in sums {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mha_rejects_indivisible_heads() {
        let mut rng = stream_rng(1, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 6, 4, "t");
        let mut fw = Forward::new(&set, false);
        let q = fw.input(Tensor::zeros(&[2, 6])).unwrap();
        assert!(mha(&mut fw, &p, q, q, q).is_err());
    }

    fn mk_block(set: &mut ParamSet, rng: &mut ChaCha12Rng, d: usize, heads: usize, tag: &str) -> BlockParams {
        let ln = |set: &mut ParamSet, name: String| LnParams {
            gain: set.add(format!("{name}.gain"), ParamGroup::PretrainedSlow, Tensor::filled(&[d], 1.0)),
            bias: set.add(format!("{name}.bias"), ParamGroup::PretrainedSlow, Tensor::zeros(&[d])),
        };
        let gate = |set: &mut ParamSet, name: String| GateParams {
            w: set.add(format!("{name}.w"), ParamGroup::NewModules, Tensor::zeros(&[d, d])),
            b: set.add(format!("{name}.b"), ParamGroup::NewModules, Tensor::zeros(&[d])),
        };
        let ln1 = ln(set, format!("{tag}.ln1"));
        let spatial = mk_mha(set, rng, d, heads, &format!("{tag}.spatial"));
        let a2v = mk_mha(set, rng, d, heads, &format!("{tag}.a2v"));
        let a2v_gate = gate(set, format!("{tag}.a2v_gate"));
        let v2a = mk_mha(set, rng, d, heads, &format!("{tag}.v2a"));
        let v2a_gate = gate(set, format!("{tag}.v2a_gate"));
        let ln2 = ln(set, format!("{tag}.ln2"));
        BlockParams {
            spatial,
            ln1,
            a2v,
            a2v_gate,
            v2a,
            v2a_gate,
            ffn: FfnParams {
                ln: ln2,
                w1: set.add(format!("{tag}.ffn.w1"), ParamGroup::NewModules, xavier_uniform(rng, d, 4 * d)),
                b1: set.add(format!("{tag}.ffn.b1"), ParamGroup::NewModules, Tensor::zeros(&[4 * d])),
                w2: set.add(format!("{tag}.ffn.w2"), ParamGroup::NewModules, xavier_uniform(rng, 4 * d, d)),
                b2: set.add(format!("{tag}.ffn.b2"), ParamGroup::NewModules, Tensor::zeros(&[d])),
            },
        }
    }

    fn randomize_gate(set: &mut ParamSet, g: &GateParams, rng: &mut ChaCha12Rng) {
        *set.tensor_mut(g.w) = xavier_uniform(rng, set.tensor(g.w).shape()[0], set.tensor(g.w).shape()[1]);
        *set.tensor_mut(g.b) = gaussian(rng, &[set.tensor(g.b).len()], 0.02);
    }

    #[test]
    fn spatial_attention_is_per_frame_local() {
        // Perturbing frame 1 must not move frame 0's output at all.
        let mut rng = stream_rng(21, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 2, "sp");
        let ln = LnParams {
            gain: set.add("ln.g", ParamGroup::PretrainedSlow, Tensor::filled(&[8], 1.0)),
            bias: set.add("ln.b", ParamGroup::PretrainedSlow, Tensor::zeros(&[8])),
        };
        let f0 = rand_t(&mut rng, &[5, 8]);
        let f1a = rand_t(&mut rng, &[5, 8]);
        let f1b = rand_t(&mut rng, &[5, 8]);

        let run = |other: Tensor| {
            let mut fw = Forward::new(&set, false);
            let a = fw.input(f0.clone()).unwrap();
            let b = fw.input(other).unwrap();
            let s = spatial_attention(&mut fw, &p, &ln, &[a, b]).unwrap();
            fw.tape.value(s[0]).clone()
        };
        let s0a = run(f1a);
        let s0b = run(f1b);
        assert_eq!(s0a, s0b, "frame 0 output changed with frame 1's pixels");
    }

    #[test]
    fn a2v_is_invariant_to_audio_timestep_permutation() {
        let mut rng = stream_rng(22, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 2, "a2v");
        let g = GateParams {
            w: set.add("g.w", ParamGroup::NewModules, Tensor::zeros(&[8, 8])),
            b: set.add("g.b", ParamGroup::NewModules, Tensor::zeros(&[8])),
        };
        randomize_gate(&mut set, &g, &mut rng);
        let frames: Vec<Tensor> = (0..3).map(|_| rand_t(&mut rng, &[4, 8])).collect();
        let audio = rand_t(&mut rng, &[3, 8]);
        let perm = [2usize, 0, 1];
        let mut permuted = vec![0.0; audio.len()];
        for (i, &src) in perm.iter().enumerate() {
            permuted[i * 8..(i + 1) * 8].copy_from_slice(&audio.data()[src * 8..(src + 1) * 8]);
        }
        let audio_perm = Tensor::new(vec![3, 8], permuted).unwrap();

        let run = |a: Tensor| {
            let mut fw = Forward::new(&set, false);
            let fvars: Vec<Var> = frames.iter().map(|f| fw.input(f.clone()).unwrap()).collect();
            let av = fw.input(a).unwrap();
            let out = a2v_attention(&mut fw, &p, &g, &fvars, av).unwrap();
            out.iter().map(|&v| fw.tape.value(v).clone()).collect::<Vec<_>>()
        };
        let base = run(audio);
        let perm = run(audio_perm);
        for (a, b) in base.iter().zip(&perm) {
            assert!(a.max_abs_diff(b).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn a2v_with_single_audio_step_broadcasts_one_embedding() {
        let mut rng = stream_rng(23, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 2, "a2v");
        let g = GateParams {
            w: set.add("g.w", ParamGroup::NewModules, Tensor::zeros(&[8, 8])),
            b: set.add("g.b", ParamGroup::NewModules, Tensor::zeros(&[8])),
        };
        randomize_gate(&mut set, &g, &mut rng);
        let frame = rand_t(&mut rng, &[4, 8]);
        let audio = rand_t(&mut rng, &[1, 8]);
        let mut fw = Forward::new(&set, false);
        let f = fw.input(frame.clone()).unwrap();
        let a = fw.input(audio).unwrap();
        let out = a2v_attention(&mut fw, &p, &g, &[f], a).unwrap();
        // delta = out - frame must be the same row for every token: the only
        // attention weight is 1, so every query receives the same value.
        let delta: Vec<f64> = fw.tape.value(out[0])
            .data()
            .iter()
            .zip(frame.data())
            .map(|(o, f)| o - f)
            .collect();
        for row in 1..4 {
            for j in 0..8 {
                assert!((delta[row * 8 + j] - delta[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn v2a_row_t_is_invariant_to_its_frames_token_permutation() {
        let mut rng = stream_rng(24, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 2, "v2a");
        let g = GateParams {
            w: set.add("g.w", ParamGroup::NewModules, Tensor::zeros(&[8, 8])),
            b: set.add("g.b", ParamGroup::NewModules, Tensor::zeros(&[8])),
        };
        randomize_gate(&mut set, &g, &mut rng);
        let frame = rand_t(&mut rng, &[4, 8]);
        let mut shuffled = vec![0.0; frame.len()];
        for (i, &src) in [3usize, 1, 0, 2].iter().enumerate() {
            shuffled[i * 8..(i + 1) * 8].copy_from_slice(&frame.data()[src * 8..(src + 1) * 8]);
        }
        let frame_perm = Tensor::new(vec![4, 8], shuffled).unwrap();
        let audio = rand_t(&mut rng, &[1, 8]);

        let run = |f: Tensor| {
            let mut fw = Forward::new(&set, false);
            let fv = fw.input(f).unwrap();
            let av = fw.input(audio.clone()).unwrap();
            let out = v2a_attention(&mut fw, &p, &g, &[fv], av).unwrap();
            fw.tape.value(out).clone()
        };
        assert!(run(frame).max_abs_diff(&run(frame_perm)).unwrap() <= 1e-10);
    }

    #[test]
    fn v2a_only_reads_its_own_frame() {
        // Changing frame 1 must leave audio row 0 untouched.
        let mut rng = stream_rng(25, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let p = mk_mha(&mut set, &mut rng, 8, 2, "v2a");
        let g = GateParams {
            w: set.add("g.w", ParamGroup::NewModules, Tensor::zeros(&[8, 8])),
            b: set.add("g.b", ParamGroup::NewModules, Tensor::zeros(&[8])),
        };
        randomize_gate(&mut set, &g, &mut rng);
        let f0 = rand_t(&mut rng, &[3, 8]);
        let f1a = rand_t(&mut rng, &[3, 8]);
        let f1b = rand_t(&mut rng, &[3, 8]);
        let audio = rand_t(&mut rng, &[2, 8]);
        let run = |f1: Tensor| {
            let mut fw = Forward::new(&set, false);
            let a = fw.input(f0.clone()).unwrap();
            let b = fw.input(f1).unwrap();
            let av = fw.input(audio.clone()).unwrap();
            let out = v2a_attention(&mut fw, &p, &g, &[a, b], av).unwrap();
            fw.tape.value(out).rows(0, 1).unwrap()
        };
        assert_eq!(run(f1a), run(f1b));
    }

    #[test]
    fn zero_gates_make_cross_attention_an_identity() {
        let mut rng = stream_rng(26, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let block = mk_block(&mut set, &mut rng, 8, 2, "b0");
        let frames: Vec<Tensor> = (0..2).map(|_| rand_t(&mut rng, &[4, 8])).collect();
        let audio = rand_t(&mut rng, &[2, 8]);

        let run = |variant: BlockVariant| {
            let mut fw = Forward::new(&set, false);
            let fv: Vec<Var> = frames.iter().map(|f| fw.input(f.clone()).unwrap()).collect();
            let av = fw.input(audio.clone()).unwrap();
            let (v, a) = av_block(&mut fw, &block, &fv, av, variant).unwrap();
            (
                v.iter().map(|&x| fw.tape.value(x).clone()).collect::<Vec<_>>(),
                fw.tape.value(a).clone(),
            )
        };
        let (v_full, a_full) = run(BlockVariant::A2vV2a);
        let (v_only, a_only) = run(BlockVariant::VideoOnly);
        for (a, b) in v_full.iter().zip(&v_only) {
            assert!(a.max_abs_diff(b).unwrap() <= 1e-10);
        }
        assert!(a_full.max_abs_diff(&a_only).unwrap() <= 1e-10);
    }

    #[test]
    fn a2v_only_leaves_audio_untouched() {
        let mut rng = stream_rng(27, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let block = mk_block(&mut set, &mut rng, 8, 2, "b0");
        randomize_gate(&mut set, &block.a2v_gate, &mut rng);
        let frames: Vec<Tensor> = (0..2).map(|_| rand_t(&mut rng, &[4, 8])).collect();
        let audio = rand_t(&mut rng, &[2, 8]);
        let mut fw = Forward::new(&set, false);
        let fv: Vec<Var> = frames.iter().map(|f| fw.input(f.clone()).unwrap()).collect();
        let av = fw.input(audio.clone()).unwrap();
        let (_, a) = av_block(&mut fw, &block, &fv, av, BlockVariant::A2vOnly).unwrap();
        assert_eq!(fw.tape.value(a), &audio);
    }

    #[test]
    fn joint_av_preserves_shapes_and_updates_audio() {
        let mut rng = stream_rng(28, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let block = mk_block(&mut set, &mut rng, 8, 2, "b0");
        let frames: Vec<Tensor> = (0..3).map(|_| rand_t(&mut rng, &[4, 8])).collect();
        let audio = rand_t(&mut rng, &[3, 8]);
        let mut fw = Forward::new(&set, false);
        let fv: Vec<Var> = frames.iter().map(|f| fw.input(f.clone()).unwrap()).collect();
        let av = fw.input(audio.clone()).unwrap();
        let (v, a) = av_block(&mut fw, &block, &fv, av, BlockVariant::JointAv).unwrap();
        assert_eq!(v.len(), 3);
        for x in &v {
            assert_eq!(fw.tape.value(*x).shape(), &[4, 8]);
        }
        assert_eq!(fw.tape.value(a).shape(), &[3, 8]);
        // joint attention mixes audio with video, so audio must move
        assert!(fw.tape.value(a).max_abs_diff(&audio).unwrap() > 1e-6);
    }

    #[test]
    fn forward_video_single_frame_single_block_matches_manual_stack() {
        let mut rng = stream_rng(29, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let block = mk_block(&mut set, &mut rng, 8, 2, "b0");
        let final_ln = LnParams {
            gain: set.add("final.g", ParamGroup::NewModules, Tensor::filled(&[8], 1.0)),
            bias: set.add("final.b", ParamGroup::NewModules, Tensor::zeros(&[8])),
        };
        let frame = rand_t(&mut rng, &[4, 8]);
        let audio = rand_t(&mut rng, &[1, 8]);

        let mut fw = Forward::new(&set, false);
        let fv = fw.input(frame.clone()).unwrap();
        let av = fw.input(audio.clone()).unwrap();
        let out = forward_video(
            &mut fw,
            std::slice::from_ref(&block),
            &final_ln,
            vec![fv],
            av,
            BlockVariant::A2vV2a,
            1,
        )
        .unwrap();

        // Oracle: materialize the single layer by hand, then pool.
        let mut fw2 = Forward::new(&set, false);
        let fv2 = fw2.input(frame).unwrap();
        let av2 = fw2.input(audio).unwrap();
        let (v, _a) = av_block(&mut fw2, &block, &[fv2], av2, BlockVariant::A2vV2a).unwrap();
        let cls = fw2.tape.slice_rows(v[0], 0, 1).unwrap();
        let pooled = fw2.tape.mean_axis(cls, 0).unwrap();
        let expect = layer_norm(&mut fw2, &final_ln, pooled).unwrap();

        let diff = fw.tape
            .value(out.clip_embedding)
            .max_abs_diff(fw2.tape.value(expect))
            .unwrap();
        assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn forward_video_rejects_more_av_blocks_than_layers() {
        let mut rng = stream_rng(30, Stream::ParamInit, 0);
        let mut set = ParamSet::new();
        let block = mk_block(&mut set, &mut rng, 8, 2, "b0");
        let final_ln = LnParams {
            gain: set.add("final.g", ParamGroup::NewModules, Tensor::filled(&[8], 1.0)),
            bias: set.add("final.b", ParamGroup::NewModules, Tensor::zeros(&[8])),
        };
        let mut fw = Forward::new(&set, false);
        let fv = fw.input(Tensor::zeros(&[2, 8])).unwrap();
        let av = fw.input(Tensor::zeros(&[1, 8])).unwrap();
        let r = forward_video(
            &mut fw,
            std::slice::from_ref(&block),
            &final_ln,
            vec![fv],
            av,
            BlockVariant::A2vV2a,
            2,
        );
        assert!(r.is_err());
    }
}
