//! Export audio-to-patch saliency maps as JSON plus a viewable PGM strip.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::{sample_frames, SampleStrategy};
use crate::harness::dataset::ClipExample;
use crate::model::Model;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Tensor, TensorError, TensorResult};

#[derive(Debug, thiserror::Error)]
pub enum SaliencyError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaliencyExport {
    pub clip_id: usize,
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Row-major `[frames, grid_h * grid_w]` cosine values in `[-1, 1]`.
    pub values: Vec<f64>,
}

/// Cosine of each frame's final audio state against that frame's patch
/// tokens, on uniformly sampled frames.
pub fn compute(model: &Model, ex: &ClipExample) -> TensorResult<Tensor> {
    let mut rng = stream_rng(0, Stream::FrameSampling, 0);
    let idx = sample_frames(
        ex.video.t(),
        model.geometry.frames,
        SampleStrategy::Uniform,
        &mut rng,
    )?;
    let clip = ex.video.select_frames(&idx)?;
    model.saliency(&clip, &ex.audio)
}

/// Map `[-1, 1]` to `0..=255`.
fn to_gray(v: f64) -> u8 {
    (255.0 * (v.clamp(-1.0, 1.0) + 1.0) / 2.0).round() as u8
}

/// Binary PGM (P5): frames side by side, each patch drawn as a `cell x cell`
/// block, with a 2px black gutter between frames.
pub fn write_pgm(
    path: &Path,
    sal: &Tensor,
    grid_h: usize,
    grid_w: usize,
    cell: usize,
) -> Result<(), SaliencyError> {
    let (t, n) = (sal.shape()[0], sal.shape()[1]);
    if sal.rank() != 2 || n != grid_h * grid_w || cell == 0 {
        return Err(SaliencyError::Tensor(TensorError::BadShape {
            op: "write_pgm",
            expected: "[frames, grid_h * grid_w] with positive cell",
            got: sal.shape().to_vec(),
        }));
    }
    const GUTTER: usize = 2;
    let height = grid_h * cell;
    let width = t * grid_w * cell + (t - 1) * GUTTER;
    let mut pixels = vec![0u8; height * width];
    for f in 0..t {
        let x0 = f * (grid_w * cell + GUTTER);
        for gy in 0..grid_h {
            for gx in 0..grid_w {
                let g = to_gray(sal.at2(f, gy * grid_w + gx));
                for dy in 0..cell {
                    for dx in 0..cell {
                        pixels[(gy * cell + dy) * width + x0 + gx * cell + dx] = g;
                    }
                }
            }
        }
    }
    let mut file = fs::File::create(path)?;
    write!(file, "P5\n{width} {height}\n255\n")?;
    file.write_all(&pixels)?;
    Ok(())
}

/// Write `saliency_<id>.json` and `saliency_<id>.pgm` into `dir`; returns the
/// two paths.
pub fn export(
    model: &Model,
    ex: &ClipExample,
    dir: &Path,
    cell: usize,
) -> Result<(PathBuf, PathBuf), SaliencyError> {
    fs::create_dir_all(dir)?;
    let sal = compute(model, ex)?;
    let grid_h = model.geometry.height / model.geometry.patch;
    let grid_w = model.geometry.width / model.geometry.patch;
    let json_path = dir.join(format!("saliency_{}.json", ex.id));
    let pgm_path = dir.join(format!("saliency_{}.pgm", ex.id));
    let export = SaliencyExport {
        clip_id: ex.id,
        frames: sal.shape()[0],
        grid_h,
        grid_w,
        values: sal.data().to_vec(),
    };
    fs::write(&json_path, serde_json::to_string_pretty(&export)?)?;
    write_pgm(&pgm_path, &sal, grid_h, grid_w, cell)?;
    Ok((json_path, pgm_path))
}
