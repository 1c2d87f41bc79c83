//! Raw inputs and how they become token sequences.
//!
//! A clip arrives as `T` RGB frames plus a `[T, M, C]` audio spectrogram whose
//! timesteps are aligned one-to-one with the sampled frames. Frames are cut
//! into non-overlapping `P x P` patches, linearly projected, prefixed with a
//! learned CLS token, and tagged with spatial and temporal position
//! embeddings. Audio goes through a pluggable [`AudioEncoder`]. Text is a
//! token id sequence run through a small pre-norm transformer; the output at
//! the prepended CLS position is the sentence embedding.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{ffn, layer_norm, mha, FfnParams, LnParams, MhaParams};
use crate::params::{Forward, ParamId};
use crate::tensor::{Tensor, TensorError, TensorResult, Var};

/// Token id reserved for the CLS position the text encoder prepends.
pub const CLS_TOKEN_ID: usize = 0;

/// `[T, H, W, 3]` RGB frames with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    frames: Tensor,
}

impl VideoClip {
    pub fn new(frames: Tensor) -> TensorResult<Self> {
        let s = frames.shape().to_vec();
        if s.len() != 4 || s[3] != 3 || s.contains(&0) {
            return Err(TensorError::BadShape {
                op: "VideoClip::new",
                expected: "[t, h, w, 3] with no zero dims",
                got: s,
            });
        }
        if frames.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(TensorError::NonFinite {
                op: "VideoClip::new: pixel outside [0, 1]",
            });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn t(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    /// Keep only the frames at `indices` (strictly increasing, in range).
    pub fn select_frames(&self, indices: &[usize]) -> TensorResult<Self> {
        let (h, w) = (self.height(), self.width());
        let stride = h * w * 3;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut prev: Option<usize> = None;
        for &i in indices {
            if i >= self.t() {
                return Err(TensorError::OutOfBounds {
                    op: "select_frames",
                    index: i,
                    bound: self.t(),
                });
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(TensorError::BadShape {
                    op: "select_frames",
                    expected: "strictly increasing frame indices",
                    got: indices.to_vec(),
                });
            }
            prev = Some(i);
            data.extend_from_slice(&self.frames.data()[i * stride..(i + 1) * stride]);
        }
        Ok(Self {
            frames: Tensor::new(vec![indices.len(), h, w, 3], data)?,
        })
    }
}

/// `[T, M, C]` log-mel style spectrogram, one `M x C` slab per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSpectrogram {
    data: Tensor,
}

impl AudioSpectrogram {
    pub fn new(data: Tensor) -> TensorResult<Self> {
        let s = data.shape().to_vec();
        if s.len() != 3 || s.contains(&0) {
            return Err(TensorError::BadShape {
                op: "AudioSpectrogram::new",
                expected: "[t, m, c] with no zero dims",
                got: s,
            });
        }
        if !data.is_finite() {
            return Err(TensorError::NonFinite {
                op: "AudioSpectrogram::new",
            });
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn t(&self) -> usize {
        self.data.shape()[0]
    }
}

/// Caption token ids. Id 0 is reserved for CLS and may not appear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSequence {
    ids: Vec<usize>,
}

impl TextSequence {
    pub fn new(ids: Vec<usize>, vocab_size: usize, max_tokens: usize) -> TensorResult<Self> {
        if ids.is_empty() || ids.len() > max_tokens {
            return Err(TensorError::OutOfBounds {
                op: "TextSequence::new: token count outside [1, max]",
                index: ids.len(),
                bound: max_tokens,
            });
        }
        for &id in &ids {
            if id == CLS_TOKEN_ID || id >= vocab_size {
                return Err(TensorError::OutOfBounds {
                    op: "TextSequence::new: token id reserved or out of vocab",
                    index: id,
                    bound: vocab_size,
                });
            }
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Final per-token visual states, `[T, N+1, d]`; index 0 of each frame is CLS.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    tokens: Tensor,
}

impl TokenGrid {
    pub fn new(tokens: Tensor) -> TensorResult<Self> {
        if tokens.rank() != 3 {
            return Err(TensorError::BadShape {
                op: "TokenGrid::new",
                expected: "[t, n+1, d]",
                got: tokens.shape().to_vec(),
            });
        }
        Ok(Self { tokens })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.tokens.shape();
        (s[0], s[1], s[2])
    }

    pub fn token(&self, t: usize, i: usize) -> &[f64] {
        let (_, tokens, d) = self.dims();
        let off = (t * tokens + i) * d;
        &self.tokens.data()[off..off + d]
    }
}

/// Final per-timestep audio states, `[T, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub embeds: Tensor,
}

/// How frame indices are drawn from the full-rate clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStrategy {
    /// Evenly spaced: index `i` is `floor(i * (total - 1) / (t - 1))`.
    Uniform,
    /// One index drawn uniformly from each of `t` equal segments.
    RandomSegment,
}

/// Pick `t` of `total` frame indices, strictly increasing. `Uniform` ignores
/// the rng.
pub fn sample_frames(
    total: usize,
    t: usize,
    strategy: SampleStrategy,
    rng: &mut ChaCha12Rng,
) -> TensorResult<Vec<usize>> {
    if t == 0 || t > total {
        return Err(TensorError::OutOfBounds {
            op: "sample_frames",
            index: t,
            bound: total,
        });
    }
    let idx = match strategy {
        SampleStrategy::Uniform => {
            if t == 1 {
                vec![0]
            } else {
                (0..t).map(|i| i * (total - 1) / (t - 1)).collect()
            }
        }
        SampleStrategy::RandomSegment => (0..t)
            .map(|s| {
                let lo = s * total / t;
                let hi = (s + 1) * total / t;
                rng.gen_range(lo..hi)
            })
            .collect(),
    };
    Ok(idx)
}

/// `[T, H, W, 3]` frames into `[T, N, 3 P^2]` patch vectors. Patches scan the
/// frame row-major; within a patch, features are `(row, col, channel)`
/// row-major, so a full-frame patch flattens to the frame's own layout.
pub fn patchify(frames: &Tensor, p: usize) -> TensorResult<Tensor> {
    let s = frames.shape();
    if s.len() != 4 || s[3] != 3 {
        return Err(TensorError::BadShape {
            op: "patchify",
            expected: "[t, h, w, 3]",
            got: s.to_vec(),
        });
    }
    let (t, h, w) = (s[0], s[1], s[2]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(TensorError::BadShape {
            op: "patchify",
            expected: "patch size dividing both height and width",
            got: vec![h, w, p],
        });
    }
    let (gh, gw) = (h / p, w / p);
    let n = gh * gw;
    let pd = 3 * p * p;
    let mut out = vec![0.0; t * n * pd];
    for ti in 0..t {
        for gy in 0..gh {
            for gx in 0..gw {
                let patch = gy * gw + gx;
                for py in 0..p {
                    for px in 0..p {
                        for c in 0..3 {
                            let src = ((ti * h + gy * p + py) * w + gx * p + px) * 3 + c;
                            let dst = (ti * n + patch) * pd + (py * p + px) * 3 + c;
                            out[dst] = frames.data()[src];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![t, n, pd], out)
}

/// Inverse of [`patchify`] for the given frame geometry.
pub fn unpatchify(patches: &Tensor, h: usize, w: usize, p: usize) -> TensorResult<Tensor> {
    let s = patches.shape();
    if s.len() != 3 || p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) || s[1] != (h / p) * (w / p) || s[2] != 3 * p * p
    {
        return Err(TensorError::BadShape {
            op: "unpatchify",
            expected: "[t, (h/p)(w/p), 3p^2] matching the frame geometry",
            got: s.to_vec(),
        });
    }
    let t = s[0];
    let (gh, gw) = (h / p, w / p);
    let n = gh * gw;
    let pd = 3 * p * p;
    let mut out = vec![0.0; t * h * w * 3];
    for ti in 0..t {
        for patch in 0..n {
            let (gy, gx) = (patch / gw, patch % gw);
            for py in 0..p {
                for px in 0..p {
                    for c in 0..3 {
                        let src = (ti * n + patch) * pd + (py * p + px) * 3 + c;
                        let dst = ((ti * h + gy * p + py) * w + gx * p + px) * 3 + c;
                        out[dst] = patches.data()[src];
                    }
                }
            }
        }
    }
    Tensor::new(vec![t, h, w, 3], out)
}

#[derive(Debug, Clone, Copy)]
pub struct VideoEmbedParams {
    /// `[3 P^2, d]` patch projection.
    pub patch_w: ParamId,
    pub patch_b: ParamId,
    /// `[1, d]` learned CLS token.
    pub cls: ParamId,
    /// `[N+1, d]`, added to every frame's token sequence.
    pub pos_spatial: ParamId,
    /// `[T, d]`, row `t` added to every token of frame `t`.
    pub pos_temporal: ParamId,
}

/// Project `[T, N, 3P^2]` patches and assemble per-frame token matrices
/// `[N+1, d]` (CLS first) with both position embeddings applied.
pub fn embed_video(
    fw: &mut Forward,
    p: &VideoEmbedParams,
    patches: &Tensor,
) -> TensorResult<Vec<Var>> {
    let s = patches.shape().to_vec();
    if s.len() != 3 {
        return Err(TensorError::BadShape {
            op: "embed_video",
            expected: "[t, n, patch_dim]",
            got: s,
        });
    }
    let (t, n, pd) = (s[0], s[1], s[2]);
    let flat = fw.input(patches.reshaped(&[t * n, pd])?)?;
    let w = fw.param(p.patch_w)?;
    let b = fw.param(p.patch_b)?;
    let proj = fw.tape.linear(flat, w, Some(b))?;
    let cls = fw.param(p.cls)?;
    let pos_s = fw.param(p.pos_spatial)?;
    let pos_t_rows = fw.params().tensor(p.pos_temporal).shape()[0];
    if t > pos_t_rows {
        return Err(TensorError::OutOfBounds {
            op: "embed_video: more frames than temporal positions",
            index: t,
            bound: pos_t_rows,
        });
    }
    let pos_t = fw.param(p.pos_temporal)?;
    let mut frames = Vec::with_capacity(t);
    for ti in 0..t {
        let rows = fw.tape.slice_rows(proj, ti * n, (ti + 1) * n)?;
        let with_cls = fw.tape.concat_rows(&[cls, rows])?;
        let spatial = fw.tape.add(with_cls, pos_s)?;
        let trow = fw.tape.slice_rows(pos_t, ti, ti + 1)?;
        frames.push(fw.tape.add_bias(spatial, trow)?);
    }
    Ok(frames)
}

/// Anything that turns a `[T, M, C]` spectrogram into `[T, d]` embeddings on
/// the tape. The default is a deliberately small per-timestep MLP standing in
/// for a real pretrained audio descriptor, which at full scale would run
/// frozen and off-tape.
pub trait AudioEncoder {
    fn encode(&self, fw: &mut Forward, spect: &Tensor) -> TensorResult<Var>;
}

/// Mean-pools each timestep's `M x C` slab to a scalar, then lifts it to `d`
/// dims with a one-hidden-layer MLP.
#[derive(Debug, Clone, Copy)]
pub struct ToyAudioEncoder {
    /// `[1, hidden]`
    pub w1: ParamId,
    pub b1: ParamId,
    /// `[hidden, d]`
    pub w2: ParamId,
    pub b2: ParamId,
}

impl AudioEncoder for ToyAudioEncoder {
    fn encode(&self, fw: &mut Forward, spect: &Tensor) -> TensorResult<Var> {
        let s = spect.shape().to_vec();
        if s.len() != 3 {
            return Err(TensorError::BadShape {
                op: "ToyAudioEncoder::encode",
                expected: "[t, m, c]",
                got: s,
            });
        }
        let (t, m, c) = (s[0], s[1], s[2]);
        let flat = fw.input(spect.reshaped(&[t, m * c])?)?;
        let mean = fw.tape.mean_axis(flat, 1)?;
        let col = fw.tape.reshape(mean, &[t, 1])?;
        let w1 = fw.param(self.w1)?;
        let b1 = fw.param(self.b1)?;
        let w2 = fw.param(self.w2)?;
        let b2 = fw.param(self.b2)?;
        let h = fw.tape.linear(col, w1, Some(b1))?;
        let h = fw.tape.gelu(h)?;
        fw.tape.linear(h, w2, Some(b2))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TextLayerParams {
    pub ln1: LnParams,
    pub attn: MhaParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone)]
pub struct TextEncoderParams {
    /// `[vocab, d]` token embedding table; row 0 is the CLS token.
    pub embed: ParamId,
    /// `[max_tokens + 1, d]` learned positions (slot 0 is CLS).
    pub pos: ParamId,
    pub layers: Vec<TextLayerParams>,
}

/// Encode a caption to a `[d]` vector: prepend CLS, add positions, run the
/// pre-norm layers, read the CLS output. No final norm here — the similarity
/// computation normalizes.
pub fn encode_text(
    fw: &mut Forward,
    p: &TextEncoderParams,
    text: &TextSequence,
) -> TensorResult<Var> {
    let mut ids = Vec::with_capacity(text.len() + 1);
    ids.push(CLS_TOKEN_ID);
    ids.extend_from_slice(text.ids());
    let pos_rows = fw.params().tensor(p.pos).shape()[0];
    if ids.len() > pos_rows {
        return Err(TensorError::OutOfBounds {
            op: "encode_text: sequence longer than position table",
            index: ids.len(),
            bound: pos_rows,
        });
    }
    let table = fw.param(p.embed)?;
    let mut x = fw.tape.embedding(table, &ids)?;
    let pos = fw.param(p.pos)?;
    let pos_slice = fw.tape.slice_rows(pos, 0, ids.len())?;
    x = fw.tape.add(x, pos_slice)?;
    for layer in &p.layers {
        let normed = layer_norm(fw, &layer.ln1, x)?;
        let attn = mha(fw, &layer.attn, normed, normed, normed)?;
        x = fw.tape.add(attn, x)?;
        x = ffn(fw, &layer.ffn, x)?;
    }
    let d = fw.params().tensor(p.embed).shape()[1];
    let cls_row = fw.tape.slice_rows(x, 0, 1)?;
    fw.tape.reshape(cls_row, &[d])
}
