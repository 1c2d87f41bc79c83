//! JSON checkpoints: model config, input geometry, and every named parameter
//! tensor. JSON `f64` serialization round-trips exactly, so save/load is
//! bit-faithful; loading rebuilds the model and overwrites parameters by
//! name, rejecting any mismatch instead of guessing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Geometry, Model, ModelConfig};
use crate::params::ParamGroup;
use crate::tensor::{Tensor, TensorError};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint is missing parameter '{0}'")]
    Missing(String),
    #[error("checkpoint contains unknown parameter '{0}'")]
    Unknown(String),
    #[error("parameter '{name}': checkpoint shape {got:?} does not match model shape {want:?}")]
    Shape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("parameter '{0}': checkpoint group disagrees with the model")]
    Group(String),
    #[error("parameter '{0}' contains non-finite values")]
    NonFinite(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    seed: u64,
    config: ModelConfig,
    geometry: Geometry,
    params: Vec<ParamRecord>,
}

pub fn save(model: &Model, seed: u64, path: &Path) -> Result<(), CheckpointError> {
    let params = model
        .params
        .ids()
        .map(|id| {
            let t = model.params.tensor(id);
            ParamRecord {
                name: model.params.name(id).to_string(),
                group: model.params.group(id),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            }
        })
        .collect();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        seed,
        config: model.config,
        geometry: model.geometry,
        params,
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

/// Rebuild the model a checkpoint describes. Returns the model and the run
/// seed it was trained with.
pub fn load(path: &Path) -> Result<(Model, u64), CheckpointError> {
    let file: CheckpointFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(file.version));
    }
    let mut model = Model::new(file.config, file.geometry, 0)?;
    let mut seen = vec![false; model.params.len()];
    for rec in &file.params {
        let id = model
            .params
            .find(&rec.name)
            .ok_or_else(|| CheckpointError::Unknown(rec.name.clone()))?;
        if model.params.group(id) != rec.group {
            return Err(CheckpointError::Group(rec.name.clone()));
        }
        let want = model.params.tensor(id).shape().to_vec();
        if rec.shape != want {
            return Err(CheckpointError::Shape {
                name: rec.name.clone(),
                got: rec.shape.clone(),
                want,
            });
        }
        if rec.data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite(rec.name.clone()));
        }
        *model.params.tensor_mut(id) = Tensor::new(rec.shape.clone(), rec.data.clone())?;
        seen[id.index()] = true;
    }
    if let Some(slot) = seen.iter().position(|s| !s) {
        let id = model.params.ids().nth(slot).expect("slot within param count");
        return Err(CheckpointError::Missing(model.params.name(id).to_string()));
    }
    Ok((model, file.seed))
}
