//! Named parameter registry with a two-group learning-rate partition, and the
//! per-pass context that binds parameters onto a gradient tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, TensorResult, Var};

/// Optimizer group of a parameter.
///
/// `PretrainedSlow` holds the components that would arrive with pretrained
/// weights in a full-scale system (text encoder, per-frame self-attention and
/// their layer norms) and trains at a tiny learning rate with weight decay.
/// Everything added for the audio pathway trains in `NewModules`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    PretrainedSlow,
    NewModules,
}

/// Stable handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// All trainable tensors of a model, in a fixed registration order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id.0].group
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }
}

/// One forward pass: a tape plus lazy bindings of parameters to leaves.
///
/// A parameter is bound at most once per pass, so a tensor consumed in many
/// places shares one leaf and its gradient accumulates across all uses.
pub struct Forward<'p> {
    pub tape: Tape,
    params: &'p ParamSet,
    bound: Vec<Option<Var>>,
    trainable: bool,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p ParamSet, trainable: bool) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            trainable,
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    /// Leaf for a parameter; requires gradients iff the pass is trainable.
    pub fn param(&mut self, id: ParamId) -> TensorResult<Var> {
        if let Some(v) = self.bound[id.index()] {
            return Ok(v);
        }
        let v = self
            .tape
            .leaf(self.params.tensor(id).clone(), self.trainable)?;
        self.bound[id.index()] = Some(v);
        Ok(v)
    }

    /// Leaf for non-trainable input data.
    pub fn input(&mut self, t: Tensor) -> TensorResult<Var> {
        self.tape.leaf(t, false)
    }

    /// Gradients for every parameter after `tape.backward`, indexed like the
    /// [`ParamSet`]; `None` where a parameter was unused or unreached.
    pub fn grads(&self) -> Vec<Option<Tensor>> {
        self.bound
            .iter()
            .map(|slot| slot.and_then(|v| self.tape.grad(v)))
            .collect()
    }
}

/// Xavier/Glorot uniform init for a `[fan_in, fan_out]` weight matrix.
pub fn xavier_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-limit..limit))
}

/// Small-Gaussian init used for embeddings and the CLS token.
pub fn gaussian(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("std must be finite");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}
