//! Dense row-major tensors and the reverse-mode tape that differentiates
//! through them.
//!
//! Everything is `f64`. Values are validated to be finite after every
//! operation; a NaN or Inf anywhere is an error, not a silent poison.

mod tape;

pub use tape::{Tape, Var, GELU_CUBIC, LAYER_NORM_EPS, L2_DEGENERATE_EPS};

use serde::{Deserialize, Serialize};

/// Errors produced by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("data length {got} does not match shape {shape:?} (needs {want})")]
    DataLength {
        shape: Vec<usize>,
        want: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of bounds for extent {bound}")]
    OutOfBounds {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward root must be a scalar, got shape {got:?}")]
    NonScalarRoot { got: Vec<usize> },
    #[error("{op}: node {node} does not belong to this tape (len {len})")]
    StaleVar {
        op: &'static str,
        node: usize,
        len: usize,
    },
}

pub type TensorResult<T> = Result<T, TensorError>;

/// A dense row-major tensor of `f64` values.
///
/// `Tensor` is a plain value: cloning copies the buffer, and it is `Send +
/// Sync`, so values can move freely between threads. Gradients live on the
/// [`Tape`], not here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(TensorError::DataLength {
                shape,
                want,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Build from a generator over row-major flat indices.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat value of a rank-0/1 singleton tensor.
    pub fn item(&self) -> TensorResult<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::BadShape {
                op: "item",
                expected: "a single element",
                got: self.shape.clone(),
            })
        }
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret the buffer under a new shape of the same length.
    pub fn reshaped(&self, shape: &[usize]) -> TensorResult<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Copy rows `r0..r1` of a rank-2 tensor.
    pub fn rows(&self, r0: usize, r1: usize) -> TensorResult<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::BadShape {
                op: "rows",
                expected: "rank-2 tensor",
                got: self.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        if r0 > r1 || r1 > m {
            return Err(TensorError::OutOfBounds {
                op: "rows",
                index: r1,
                bound: m,
            });
        }
        Tensor::new(vec![r1 - r0, n], self.data[r0 * n..r1 * n].to_vec())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> TensorResult<f64> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a slice.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; returns 0 when either vector has norm below `1e-12`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
