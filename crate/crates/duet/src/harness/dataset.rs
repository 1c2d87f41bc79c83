//! Synthetic retrieval benchmark with a controllable audio/video information
//! split.
//!
//! Each clip is generated from a small latent vector whose entries take one
//! of a few discrete levels. A fraction of the latent dims (`rho`) is painted
//! into the frames as smooth cosine patterns; the rest is expressed only in
//! the audio spectrogram, one dim per timestep, as the slab's mean level.
//! The caption spells out the full latent vector, one token per dim. A model
//! that ignores audio can at best distinguish clips by the video-visible
//! dims; recovering the rest requires reading the soundtrack, which is what
//! the dual-pathway ablations measure.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::io::{read_tensor, write_tensor, IoError};
use crate::embed::{AudioSpectrogram, TextSequence, VideoClip};
use crate::model::Geometry;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tensor, TensorError};

const MANIFEST_VERSION: u32 = 1;
/// Amplitude of the video cosine patterns. With every latent at the extreme
/// level the paint stays inside `[0, 1]` after noise.
const VIDEO_AMP: f64 = 0.28;
const VIDEO_NOISE: f64 = 0.02;
/// Audio slab mean is `0.5 + AUDIO_GAIN * z`; levels end up 0.16 apart,
/// far above the noise floor.
const AUDIO_GAIN: f64 = 0.4;
const AUDIO_TEXTURE: f64 = 0.1;
const AUDIO_NOISE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("bad dataset spec: {0}")]
    Spec(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    TensorFile(#[from] IoError),
    #[error(transparent)]
    File(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("dataset manifest problem: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub clips: usize,
    /// Timesteps per clip after sampling; also the audio step count.
    pub frames: usize,
    /// Full-rate frames stored per clip; sampling picks `frames` of these.
    pub total_frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    /// Spectrogram bins per timestep (rows).
    pub audio_bins: usize,
    /// Spectrogram frames per timestep (columns).
    pub audio_width: usize,
    pub text_len: usize,
    pub latent_dim: usize,
    /// Discrete values each latent dim can take.
    pub levels: usize,
    /// Fraction of latent dims visible in the frames; the rest are
    /// audio-only. 1.0 starves the audio pathway, 0.0 starves the video one.
    pub rho: f64,
    pub val_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            clips: 500,
            frames: 4,
            total_frames: 4,
            height: 8,
            width: 8,
            patch: 4,
            audio_bins: 6,
            audio_width: 4,
            text_len: 6,
            latent_dim: 6,
            levels: 5,
            rho: 0.3,
            val_fraction: 0.2,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.clips < 2 {
            return Err(DatasetError::Spec("need at least 2 clips"));
        }
        if self.frames == 0 || self.total_frames < self.frames {
            return Err(DatasetError::Spec("total_frames must be >= frames >= 1"));
        }
        if self.patch == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(DatasetError::Spec("patch must divide height and width"));
        }
        if self.audio_bins == 0 || self.audio_width == 0 {
            return Err(DatasetError::Spec("spectrogram dims must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(DatasetError::Spec("latent_dim must be >= 1"));
        }
        if self.levels < 2 {
            return Err(DatasetError::Spec("need at least 2 levels per latent dim"));
        }
        if self.text_len < self.latent_dim {
            return Err(DatasetError::Spec(
                "text_len must cover every latent dim at least once",
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(DatasetError::Spec("rho must lie in [0, 1]"));
        }
        let val = self.val_count();
        if val == 0 || val >= self.clips {
            return Err(DatasetError::Spec(
                "val_fraction must leave both splits non-empty",
            ));
        }
        Ok(())
    }

    /// Token 0 is CLS; each (dim, level) pair gets its own id.
    pub fn vocab_size(&self) -> usize {
        1 + self.latent_dim * self.levels
    }

    /// Latent dims painted into the frames.
    pub fn k_video(&self) -> usize {
        ((self.rho * self.latent_dim as f64).round() as usize).min(self.latent_dim)
    }

    /// Latent dims expressed only in audio.
    pub fn k_audio(&self) -> usize {
        self.latent_dim - self.k_video()
    }

    pub fn val_count(&self) -> usize {
        (self.clips as f64 * self.val_fraction).round() as usize
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            frames: self.frames,
            height: self.height,
            width: self.width,
            patch: self.patch,
            vocab_size: self.vocab_size(),
        }
    }

    fn level_value(&self, idx: usize) -> f64 {
        -0.8 + 1.6 * idx as f64 / (self.levels - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipExample {
    pub id: usize,
    pub video: VideoClip,
    pub audio: AudioSpectrogram,
    pub text: TextSequence,
    /// The generating latent vector, kept for analysis.
    pub latents: Vec<f64>,
}

pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub examples: Vec<ClipExample>,
}

impl SyntheticDataset {
    pub fn train(&self) -> &[ClipExample] {
        &self.examples[..self.spec.clips - self.spec.val_count()]
    }

    pub fn val(&self) -> &[ClipExample] {
        &self.examples[self.spec.clips - self.spec.val_count()..]
    }

    pub fn geometry(&self) -> Geometry {
        self.spec.geometry()
    }
}

/// Deterministically paint the whole corpus from `(spec, seed)`. Each clip
/// draws from its own rng streams, so clip `i` is identical no matter how
/// many clips surround it.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset, DatasetError> {
    spec.validate()?;
    let k_vid = spec.k_video();
    let k_aud = spec.k_audio();
    let (h, w) = (spec.height, spec.width);
    let mut examples = Vec::with_capacity(spec.clips);
    for clip in 0..spec.clips {
        let mut latent_rng = stream_rng(seed, Stream::DatasetLatents, clip as u64);
        let mut noise = stream_rng(seed, Stream::DatasetNoise, clip as u64);
        let level_idx: Vec<usize> = (0..spec.latent_dim)
            .map(|_| latent_rng.gen_range(0..spec.levels))
            .collect();
        let z: Vec<f64> = level_idx.iter().map(|&i| spec.level_value(i)).collect();

        // Static base image: superposed low-frequency cosines, one per
        // video-visible latent dim.
        let mut base = vec![0.0; h * w];
        for (a, &za) in z.iter().take(k_vid).enumerate() {
            let fy = std::f64::consts::PI * (a + 1) as f64 / h as f64;
            let fx = std::f64::consts::PI * (a + 1) as f64 / w as f64;
            for y in 0..h {
                for x in 0..w {
                    base[y * w + x] += za * (fy * (y as f64 + 0.5)).cos() * (fx * (x as f64 + 0.5)).cos();
                }
            }
        }
        let mut frames = Vec::with_capacity(spec.total_frames * h * w * 3);
        for _f in 0..spec.total_frames {
            for cell in base.iter().take(h * w) {
                for _c in 0..3 {
                    let v = 0.5 + VIDEO_AMP * cell + noise.gen_range(-VIDEO_NOISE..VIDEO_NOISE);
                    frames.push(v.clamp(0.0, 1.0));
                }
            }
        }
        let video = VideoClip::new(Tensor::new(vec![spec.total_frames, h, w, 3], frames)?)?;

        // Audio: timestep t carries audio-only dim (k_vid + t mod k_aud) as
        // the slab mean; the cosine texture sums to zero across bins, so a
        // mean-pooling encoder reads the level directly.
        let (m, c) = (spec.audio_bins, spec.audio_width);
        let mut spect = Vec::with_capacity(spec.frames * m * c);
        for t in 0..spec.frames {
            let mu = if k_aud == 0 {
                0.5
            } else {
                0.5 + AUDIO_GAIN * z[k_vid + (t % k_aud)]
            };
            for mi in 0..m {
                let texture =
                    AUDIO_TEXTURE * (2.0 * std::f64::consts::PI * (mi as f64 + 0.5) / m as f64).cos();
                for _ci in 0..c {
                    spect.push(mu + texture + noise.gen_range(-AUDIO_NOISE..AUDIO_NOISE));
                }
            }
        }
        let audio = AudioSpectrogram::new(Tensor::new(vec![spec.frames, m, c], spect)?)?;

        // Caption: position p names latent dim (p mod latent_dim) at its level.
        let ids: Vec<usize> = (0..spec.text_len)
            .map(|p| {
                let j = p % spec.latent_dim;
                1 + j * spec.levels + level_idx[j]
            })
            .collect();
        let text = TextSequence::new(ids, spec.vocab_size(), spec.text_len)?;

        examples.push(ClipExample {
            id: clip,
            video,
            audio,
            text,
            latents: z,
        });
    }
    Ok(SyntheticDataset {
        spec: *spec,
        seed,
        examples,
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    spec: DatasetSpec,
    vocab_size: usize,
    k_video: usize,
    k_audio: usize,
}

/// Write the dataset as a directory: a JSON manifest, stacked tensor files
/// for frames/audio/latents, and the captions as JSON.
pub fn save(ds: &SyntheticDataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let spec = &ds.spec;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: ds.seed,
        spec: *spec,
        vocab_size: spec.vocab_size(),
        k_video: spec.k_video(),
        k_audio: spec.k_audio(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    let mut frames = Vec::new();
    let mut audio = Vec::new();
    let mut latents = Vec::new();
    let mut texts: Vec<&[usize]> = Vec::new();
    for ex in &ds.examples {
        frames.extend_from_slice(ex.video.frames().data());
        audio.extend_from_slice(ex.audio.data().data());
        latents.extend_from_slice(&ex.latents);
        texts.push(ex.text.ids());
    }
    write_tensor(
        &dir.join("frames.bin"),
        &Tensor::new(
            vec![spec.clips, spec.total_frames, spec.height, spec.width, 3],
            frames,
        )?,
    )?;
    write_tensor(
        &dir.join("audio.bin"),
        &Tensor::new(
            vec![spec.clips, spec.frames, spec.audio_bins, spec.audio_width],
            audio,
        )?,
    )?;
    write_tensor(
        &dir.join("latents.bin"),
        &Tensor::new(vec![spec.clips, spec.latent_dim], latents)?,
    )?;
    fs::write(dir.join("texts.json"), serde_json::to_string(&texts)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<SyntheticDataset, DatasetError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(DatasetError::Manifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let spec = manifest.spec;
    spec.validate()?;
    if manifest.vocab_size != spec.vocab_size() {
        return Err(DatasetError::Manifest(
            "manifest vocab_size disagrees with spec".into(),
        ));
    }
    let frames = read_tensor(&dir.join("frames.bin"))?;
    let audio = read_tensor(&dir.join("audio.bin"))?;
    let latents = read_tensor(&dir.join("latents.bin"))?;
    let texts: Vec<Vec<usize>> = serde_json::from_str(&fs::read_to_string(dir.join("texts.json"))?)?;

    let want_frames = [spec.clips, spec.total_frames, spec.height, spec.width, 3];
    if frames.shape() != want_frames {
        return Err(DatasetError::Manifest("frames.bin shape mismatch".into()));
    }
    let want_audio = [spec.clips, spec.frames, spec.audio_bins, spec.audio_width];
    if audio.shape() != want_audio {
        return Err(DatasetError::Manifest("audio.bin shape mismatch".into()));
    }
    if latents.shape() != [spec.clips, spec.latent_dim] || texts.len() != spec.clips {
        return Err(DatasetError::Manifest("latents/texts count mismatch".into()));
    }

    let frame_stride = spec.total_frames * spec.height * spec.width * 3;
    let audio_stride = spec.frames * spec.audio_bins * spec.audio_width;
    let mut examples = Vec::with_capacity(spec.clips);
    for (clip, ids) in texts.into_iter().enumerate() {
        let video = VideoClip::new(Tensor::new(
            vec![spec.total_frames, spec.height, spec.width, 3],
            frames.data()[clip * frame_stride..(clip + 1) * frame_stride].to_vec(),
        )?)?;
        let aud = AudioSpectrogram::new(Tensor::new(
            vec![spec.frames, spec.audio_bins, spec.audio_width],
            audio.data()[clip * audio_stride..(clip + 1) * audio_stride].to_vec(),
        )?)?;
        let text = TextSequence::new(ids, spec.vocab_size(), spec.text_len)?;
        examples.push(ClipExample {
            id: clip,
            video,
            audio: aud,
            text,
            latents: latents.data()[clip * spec.latent_dim..(clip + 1) * spec.latent_dim].to_vec(),
        });
    }
    Ok(SyntheticDataset {
        spec,
        seed: manifest.seed,
        examples,
    })
}
