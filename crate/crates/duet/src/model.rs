//! Model assembly: parameter construction and whole-clip forward passes.
//!
//! Parameter names are stable and double as the checkpoint format's keys, so
//! construction order here is a compatibility contract. Initialization draws
//! from one seeded stream in declaration order; the same seed always yields
//! bit-identical parameters.

use serde::{Deserialize, Serialize};

use crate::attention::{
    audio_patch_saliency, forward_video, BlockParams, BlockVariant, FfnParams, GateParams,
    LnParams, MhaParams,
};
use crate::embed::{
    embed_video, encode_text, patchify, AudioEncoder, AudioSpectrogram, AudioTrack, TextEncoderParams,
    TextLayerParams, TextSequence, TokenGrid, ToyAudioEncoder, VideoClip, VideoEmbedParams,
};
use crate::params::{gaussian, xavier_uniform, Forward, ParamGroup, ParamId, ParamSet};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tensor, TensorError, TensorResult, Var};

/// Temperature init for the contrastive similarity: `ln(1 / 0.07)`.
pub fn logit_scale_init() -> f64 {
    (1.0 / 0.07f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Model width `d`; must divide evenly into `heads`.
    pub dim: usize,
    pub heads: usize,
    /// Total transformer depth `F`.
    pub layers: usize,
    /// How many of the first layers run the audiovisual variant.
    pub av_blocks: usize,
    pub variant: BlockVariant,
    /// Hidden width of the toy audio MLP.
    pub audio_hidden: usize,
    pub text_layers: usize,
    pub max_text_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            heads: 4,
            layers: 2,
            av_blocks: 2,
            variant: BlockVariant::A2vV2a,
            audio_hidden: 8,
            text_layers: 1,
            max_text_tokens: 12,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> TensorResult<()> {
        if self.dim == 0 || self.heads == 0 || self.layers == 0 || self.audio_hidden == 0 {
            return Err(TensorError::BadShape {
                op: "ModelConfig: zero-sized field",
                expected: "positive dim/heads/layers/audio_hidden",
                got: vec![self.dim, self.heads, self.layers, self.audio_hidden],
            });
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(TensorError::BadShape {
                op: "ModelConfig",
                expected: "dim divisible by heads",
                got: vec![self.dim, self.heads],
            });
        }
        if self.av_blocks > self.layers {
            return Err(TensorError::OutOfBounds {
                op: "ModelConfig: av_blocks exceeds layers",
                index: self.av_blocks,
                bound: self.layers,
            });
        }
        if self.max_text_tokens == 0 {
            return Err(TensorError::BadShape {
                op: "ModelConfig",
                expected: "max_text_tokens >= 1",
                got: vec![0],
            });
        }
        Ok(())
    }
}

/// Input geometry the parameter shapes depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    /// Frames per clip (and audio timesteps — they are aligned).
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub vocab_size: usize,
}

impl Geometry {
    pub fn validate(&self) -> TensorResult<()> {
        if self.frames == 0
            || self.patch == 0
            || !self.height.is_multiple_of(self.patch)
            || !self.width.is_multiple_of(self.patch)
        {
            return Err(TensorError::BadShape {
                op: "Geometry",
                expected: "patch dividing height and width, frames >= 1",
                got: vec![self.frames, self.height, self.width, self.patch],
            });
        }
        if self.vocab_size < 2 {
            return Err(TensorError::BadShape {
                op: "Geometry",
                expected: "vocab_size >= 2 (id 0 is CLS)",
                got: vec![self.vocab_size],
            });
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub geometry: Geometry,
    pub params: ParamSet,
    video: VideoEmbedParams,
    blocks: Vec<BlockParams>,
    final_ln: LnParams,
    audio: ToyAudioEncoder,
    text: TextEncoderParams,
    logit_scale: ParamId,
}

impl Model {
    pub fn new(config: ModelConfig, geometry: Geometry, seed: u64) -> TensorResult<Self> {
        config.validate()?;
        geometry.validate()?;
        let mut rng = stream_rng(seed, Stream::ParamInit, 0);
        let rng = &mut rng;
        let d = config.dim;
        let n = geometry.n_patches();
        let pd = geometry.patch_dim();
        let mut set = ParamSet::new();

        let video = VideoEmbedParams {
            patch_w: set.add("video.patch_w", ParamGroup::NewModules, xavier_uniform(rng, pd, d)),
            patch_b: set.add("video.patch_b", ParamGroup::NewModules, Tensor::zeros(&[d])),
            cls: set.add("video.cls", ParamGroup::NewModules, gaussian(rng, &[1, d], 0.02)),
            pos_spatial: set.add(
                "video.pos_spatial",
                ParamGroup::NewModules,
                gaussian(rng, &[n + 1, d], 0.02),
            ),
            pos_temporal: set.add(
                "video.pos_temporal",
                ParamGroup::NewModules,
                gaussian(rng, &[geometry.frames, d], 0.02),
            ),
        };

        let mha = |set: &mut ParamSet, rng: &mut _, tag: &str, group: ParamGroup| MhaParams {
            w_q: set.add(format!("{tag}.w_q"), group, xavier_uniform(rng, d, d)),
            w_k: set.add(format!("{tag}.w_k"), group, xavier_uniform(rng, d, d)),
            w_v: set.add(format!("{tag}.w_v"), group, xavier_uniform(rng, d, d)),
            w_o: set.add(format!("{tag}.w_o"), group, xavier_uniform(rng, d, d)),
            heads: config.heads,
        };
        let ln = |set: &mut ParamSet, tag: &str, group: ParamGroup| LnParams {
            gain: set.add(format!("{tag}.gain"), group, Tensor::filled(&[d], 1.0)),
            bias: set.add(format!("{tag}.bias"), group, Tensor::zeros(&[d])),
        };
        // Zero weights and bias: at init the cross-modal pathways contribute
        // exactly nothing.
        let zero_gate = |set: &mut ParamSet, tag: &str| GateParams {
            w: set.add(format!("{tag}.w"), ParamGroup::NewModules, Tensor::zeros(&[d, d])),
            b: set.add(format!("{tag}.b"), ParamGroup::NewModules, Tensor::zeros(&[d])),
        };
        let ffn = |set: &mut ParamSet, rng: &mut _, tag: &str, group: ParamGroup| FfnParams {
            ln: ln(set, &format!("{tag}.ln"), group),
            w1: set.add(format!("{tag}.w1"), group, xavier_uniform(rng, d, 4 * d)),
            b1: set.add(format!("{tag}.b1"), group, Tensor::zeros(&[4 * d])),
            w2: set.add(format!("{tag}.w2"), group, xavier_uniform(rng, 4 * d, d)),
            b2: set.add(format!("{tag}.b2"), group, Tensor::zeros(&[d])),
        };

        let mut blocks = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let tag = format!("block{i}");
            blocks.push(BlockParams {
                ln1: ln(&mut set, &format!("{tag}.ln1"), ParamGroup::PretrainedSlow),
                spatial: mha(&mut set, rng, &format!("{tag}.spatial"), ParamGroup::PretrainedSlow),
                a2v: mha(&mut set, rng, &format!("{tag}.a2v"), ParamGroup::NewModules),
                a2v_gate: zero_gate(&mut set, &format!("{tag}.a2v_gate")),
                v2a: mha(&mut set, rng, &format!("{tag}.v2a"), ParamGroup::NewModules),
                v2a_gate: zero_gate(&mut set, &format!("{tag}.v2a_gate")),
                ffn: ffn(&mut set, rng, &format!("{tag}.ffn"), ParamGroup::NewModules),
            });
        }
        let final_ln = ln(&mut set, "final_ln", ParamGroup::NewModules);

        let audio = ToyAudioEncoder {
            w1: set.add(
                "audio.w1",
                ParamGroup::NewModules,
                xavier_uniform(rng, 1, config.audio_hidden),
            ),
            b1: set.add("audio.b1", ParamGroup::NewModules, Tensor::zeros(&[config.audio_hidden])),
            w2: set.add(
                "audio.w2",
                ParamGroup::NewModules,
                xavier_uniform(rng, config.audio_hidden, d),
            ),
            b2: set.add("audio.b2", ParamGroup::NewModules, Tensor::zeros(&[d])),
        };

        let mut text_layers = Vec::with_capacity(config.text_layers);
        for i in 0..config.text_layers {
            let tag = format!("text.layer{i}");
            text_layers.push(TextLayerParams {
                ln1: ln(&mut set, &format!("{tag}.ln1"), ParamGroup::PretrainedSlow),
                attn: mha(&mut set, rng, &format!("{tag}.attn"), ParamGroup::PretrainedSlow),
                ffn: ffn(&mut set, rng, &format!("{tag}.ffn"), ParamGroup::PretrainedSlow),
            });
        }
        let text = TextEncoderParams {
            embed: set.add(
                "text.embed",
                ParamGroup::PretrainedSlow,
                gaussian(rng, &[geometry.vocab_size, d], 0.02),
            ),
            pos: set.add(
                "text.pos",
                ParamGroup::PretrainedSlow,
                gaussian(rng, &[config.max_text_tokens + 1, d], 0.02),
            ),
            layers: text_layers,
        };

        let logit_scale = set.add(
            "logit_scale",
            ParamGroup::NewModules,
            Tensor::scalar(logit_scale_init()),
        );

        Ok(Self {
            config,
            geometry,
            params: set,
            video,
            blocks,
            final_ln,
            audio,
            text,
            logit_scale,
        })
    }

    pub fn logit_scale_id(&self) -> ParamId {
        self.logit_scale
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    fn check_inputs(&self, clip: &VideoClip, audio: &AudioSpectrogram) -> TensorResult<()> {
        if clip.t() != audio.t() {
            return Err(TensorError::ShapeMismatch {
                op: "forward: frames vs audio timesteps",
                lhs: vec![clip.t()],
                rhs: vec![audio.t()],
            });
        }
        if clip.height() != self.geometry.height || clip.width() != self.geometry.width {
            return Err(TensorError::BadShape {
                op: "forward: frame geometry",
                expected: "clip matching model geometry",
                got: vec![clip.height(), clip.width()],
            });
        }
        Ok(())
    }

    fn forward_backbone(
        &self,
        fw: &mut Forward,
        clip: &VideoClip,
        audio: &AudioSpectrogram,
    ) -> TensorResult<crate::attention::BackboneOut> {
        self.check_inputs(clip, audio)?;
        let patches = patchify(clip.frames(), self.geometry.patch)?;
        let frames = embed_video(fw, &self.video, &patches)?;
        let a = self.audio.encode(fw, audio.data())?;
        forward_video(
            fw,
            &self.blocks,
            &self.final_ln,
            frames,
            a,
            self.config.variant,
            self.config.av_blocks,
        )
    }

    /// Clip embedding `[d]` on the caller's tape (unnormalized).
    pub fn forward_clip(
        &self,
        fw: &mut Forward,
        clip: &VideoClip,
        audio: &AudioSpectrogram,
    ) -> TensorResult<Var> {
        Ok(self.forward_backbone(fw, clip, audio)?.clip_embedding)
    }

    /// Caption embedding `[d]` on the caller's tape (unnormalized).
    pub fn encode_text(&self, fw: &mut Forward, text: &TextSequence) -> TensorResult<Var> {
        encode_text(fw, &self.text, text)
    }

    /// Value-level forward for inspection: final token states, final audio
    /// states, and the pooled clip embedding.
    pub fn forward_states(
        &self,
        clip: &VideoClip,
        audio: &AudioSpectrogram,
    ) -> TensorResult<(TokenGrid, AudioTrack, Tensor)> {
        let mut fw = Forward::new(&self.params, false);
        let out = self.forward_backbone(&mut fw, clip, audio)?;
        let t = out.frames.len();
        let (tokens, d) = {
            let s = fw.tape.value(out.frames[0]).shape();
            (s[0], s[1])
        };
        let mut grid = Vec::with_capacity(t * tokens * d);
        for &f in &out.frames {
            grid.extend_from_slice(fw.tape.value(f).data());
        }
        let grid = TokenGrid::new(Tensor::new(vec![t, tokens, d], grid)?)?;
        let track = AudioTrack {
            embeds: fw.tape.value(out.audio).clone(),
        };
        let f = fw.tape.value(out.clip_embedding).clone();
        Ok((grid, track, f))
    }

    /// Saliency of each patch against its frame's final audio state, `[T, N]`.
    pub fn saliency(&self, clip: &VideoClip, audio: &AudioSpectrogram) -> TensorResult<Tensor> {
        let (grid, track, _) = self.forward_states(clip, audio)?;
        audio_patch_saliency(&track, &grid)
    }
}
