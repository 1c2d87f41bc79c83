//! Reverse-mode automatic differentiation on a per-forward-pass tape.
//!
//! Every operation appends one node holding its forward value; `backward`
//! walks the tape once in reverse insertion order (which is a reverse
//! topological order by construction) and accumulates gradients by summation,
//! so values consumed several times receive the sum of their downstream
//! contributions.
//!
//! The tape also counts multiply-accumulate operations performed by matrix
//! products, which the cost model checks its closed forms against.

use super::{Tensor, TensorError, TensorResult};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that minted it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const INV_SQRT_2PI_2: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub const GELU_CUBIC: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const L2_DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    Reshape { x: usize },
    Add { a: usize, b: usize },
    AddBias { x: usize, b: usize },
    Scale { x: usize, c: f64 },
    Mul { a: usize, b: usize },
    SumAll { x: usize },
    MeanAxis { x: usize, axis: usize },
    SoftmaxRows { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize },
    L2NormRows { x: usize },
    Gelu { x: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceRows { x: usize, r0: usize },
    SliceCols { x: usize, c0: usize },
    Embed { table: usize, ids: Vec<usize> },
    LseRows { x: usize },
    Diag { x: usize },
    ExpClamped { x: usize, max: f64 },
    ScaleBy { s: usize, x: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    op: Op,
}

/// Gradient tape for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    macs: u64,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations executed by matrix products so far.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    /// Drop all recorded nodes (the MAC counter survives so callers can read
    /// it across passes; see [`Tape::reset_macs`]).
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn reset_macs(&mut self) {
        self.macs = 0;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if one was
    /// computed (i.e. `v` required gradients and was reachable from the root).
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape().to_vec(),
            data: g.clone(),
        })
    }

    /// Row sums of every softmax output recorded on the tape. Lets tests
    /// verify that every attention weight matrix anywhere in a model was
    /// row-stochastic without threading probes through the forward code.
    pub fn softmax_row_sums(&self) -> Vec<f64> {
        let mut sums = Vec::new();
        for node in &self.nodes {
            if let Op::SoftmaxRows { .. } = node.op {
                let n = node.value.shape()[1];
                for row in node.value.data().chunks(n) {
                    sums.push(row.iter().sum());
                }
            }
        }
        sums
    }

    fn check(&self, v: Var, op: &'static str) -> TensorResult<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::StaleVar {
                op,
                node: v.0,
                len: self.nodes.len(),
            })
        }
    }

    fn push(&mut self, op: Op, value: Tensor, op_name: &'static str) -> TensorResult<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let needs_grad = match &op {
            Op::Leaf => false, // overridden by `leaf`
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Mul { a, b } => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
            Op::AddBias { x, b } => self.nodes[*x].needs_grad || self.nodes[*b].needs_grad,
            Op::LayerNorm { x, gain, bias } => {
                self.nodes[*x].needs_grad
                    || self.nodes[*gain].needs_grad
                    || self.nodes[*bias].needs_grad
            }
            Op::ScaleBy { s, x } => self.nodes[*s].needs_grad || self.nodes[*x].needs_grad,
            Op::ConcatRows { parts } | Op::ConcatCols { parts } => {
                parts.iter().any(|p| self.nodes[*p].needs_grad)
            }
            Op::Embed { table, .. } => self.nodes[*table].needs_grad,
            Op::Transpose { x }
            | Op::Reshape { x }
            | Op::Scale { x, .. }
            | Op::SumAll { x }
            | Op::MeanAxis { x, .. }
            | Op::SoftmaxRows { x }
            | Op::L2NormRows { x }
            | Op::Gelu { x }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::LseRows { x }
            | Op::Diag { x }
            | Op::ExpClamped { x, .. } => self.nodes[*x].needs_grad,
        };
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Insert a constant or trainable input.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorResult<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            needs_grad: requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, op: &'static str) -> TensorResult<(usize, usize)> {
        let t = self.value(v);
        if t.rank() == 2 {
            Ok((t.shape()[0], t.shape()[1]))
        } else {
            Err(TensorError::BadShape {
                op,
                expected: "rank-2 tensor",
                got: t.shape().to_vec(),
            })
        }
    }

    /// `a[m,k] . b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let (m, ka) = self.dims2(a, "matmul")?;
        let (kb, n) = self.dims2(b, "matmul")?;
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let out = matmul_data(
            self.value(a).data(),
            self.value(b).data(),
            m,
            ka,
            n,
        );
        self.macs += (m * ka * n) as u64;
        self.push(
            Op::MatMul { a: a.0, b: b.0 },
            Tensor::new(vec![m, n], out)?,
            "matmul",
        )
    }

    pub fn transpose(&mut self, x: Var) -> TensorResult<Var> {
        self.check(x, "transpose")?;
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Op::Transpose { x: x.0 }, Tensor::new(vec![n, m], out)?, "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> TensorResult<Var> {
        self.check(x, "reshape")?;
        let value = self.value(x).reshaped(shape)?;
        self.push(Op::Reshape { x: x.0 }, value, "reshape")
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Add { a: a.0, b: b.0 }, Tensor::new(shape, data)?, "add")
    }

    /// Add a length-`n` vector to every row of an `[m,n]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> TensorResult<Var> {
        self.check(x, "add_bias")?;
        self.check(b, "add_bias")?;
        let (m, n) = self.dims2(x, "add_bias")?;
        if self.value(b).len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: vec![m, n],
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let bias = self.value(b).data().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bias[i % n])
            .collect();
        self.push(
            Op::AddBias { x: x.0, b: b.0 },
            Tensor::new(vec![m, n], data)?,
            "add_bias",
        )
    }

    /// Multiply by a compile-time-known scalar. Division is `scale(x, 1/c)`.
    pub fn scale(&mut self, x: Var, c: f64) -> TensorResult<Var> {
        self.check(x, "scale")?;
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::Scale { x: x.0, c }, Tensor::new(shape, data)?, "scale")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Op::Mul { a: a.0, b: b.0 }, Tensor::new(shape, data)?, "mul")
    }

    pub fn sum_all(&mut self, x: Var) -> TensorResult<Var> {
        self.check(x, "sum_all")?;
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Op::SumAll { x: x.0 }, Tensor::scalar(s), "sum_all")
    }

    /// Mean over one axis of a rank-1 or rank-2 tensor. Axis 0 of `[m,n]`
    /// yields `[n]`; axis 1 yields `[m]`; axis 0 of `[n]` yields a scalar.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> TensorResult<Var> {
        self.check(x, "mean_axis")?;
        let t = self.value(x);
        let (value, op_axis) = match (t.rank(), axis) {
            (1, 0) => {
                let m = t.len() as f64;
                (Tensor::scalar(t.data().iter().sum::<f64>() / m), 0)
            }
            (2, 0) => {
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let mut out = vec![0.0; n];
                for row in t.data().chunks_exact(n) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|v| *v /= m as f64);
                (Tensor::new(vec![n], out)?, 0)
            }
            (2, 1) => {
                let (m, n) = (t.shape()[0], t.shape()[1]);
                let out = (0..m)
                    .map(|i| t.data()[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
                    .collect();
                (Tensor::new(vec![m], out)?, 1)
            }
            _ => {
                return Err(TensorError::BadShape {
                    op: "mean_axis",
                    expected: "rank-1 axis 0 or rank-2 axis 0/1",
                    got: t.shape().to_vec(),
                })
            }
        };
        self.push(Op::MeanAxis { x: x.0, axis: op_axis }, value, "mean_axis")
    }

    /// Row-wise softmax of an `[m,n]` matrix, stabilized by subtracting each
    /// row's maximum before exponentiation.
    pub fn softmax_rows(&mut self, x: Var) -> TensorResult<Var> {
        self.check(x, "softmax_rows")?;
        let (m, n) = self.dims2(x, "softmax_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                out[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                out[i * n + j] /= denom;
            }
        }
        self.push(
            Op::SoftmaxRows { x: x.0 },
            Tensor::new(vec![m, n], out)?,
            "softmax_rows",
        )
    }

    /// Layer normalization over the last axis with learnable gain and bias
    /// (`eps = 1e-5` inside the square root).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> TensorResult<Var> {
        self.check(x, "layer_norm")?;
        self.check(gain, "layer_norm")?;
        self.check(bias, "layer_norm")?;
        let t = self.value(x);
        let d = *t.shape().last().ok_or(TensorError::BadShape {
            op: "layer_norm",
            expected: "rank >= 1",
            got: t.shape().to_vec(),
        })?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![d],
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = vec![0.0; t.len()];
        for (v, o) in t.data().chunks(d).zip(out.chunks_mut(d)) {
            let mean = v.iter().sum::<f64>() / d as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..d {
                o[j] = (v[j] - mean) * inv * g[j] + b[j];
            }
        }
        let shape = t.shape().to_vec();
        self.push(
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
            },
            Tensor::new(shape, out)?,
            "layer_norm",
        )
    }

    /// Normalize each last-axis vector to unit Euclidean length. Vectors with
    /// norm below `1e-12` pass through unchanged; their row indices are
    /// returned as flags for the caller to surface.
    pub fn l2_normalize_rows(&mut self, x: Var) -> TensorResult<(Var, Vec<usize>)> {
        self.check(x, "l2_normalize")?;
        let t = self.value(x);
        let d = *t.shape().last().ok_or(TensorError::BadShape {
            op: "l2_normalize",
            expected: "rank >= 1",
            got: t.shape().to_vec(),
        })?;
        let mut out = vec![0.0; t.len()];
        let mut degenerate = Vec::new();
        for (row, (v, o)) in t.data().chunks(d).zip(out.chunks_mut(d)).enumerate() {
            let n = super::norm(v);
            if n < L2_DEGENERATE_EPS {
                degenerate.push(row);
                o.copy_from_slice(v);
            } else {
                for j in 0..d {
                    o[j] = v[j] / n;
                }
            }
        }
        let shape = t.shape().to_vec();
        let var = self.push(
            Op::L2NormRows { x: x.0 },
            Tensor::new(shape, out)?,
            "l2_normalize",
        )?;
        Ok((var, degenerate))
    }

    /// GELU activation (tanh approximation).
    pub fn gelu(&mut self, x: Var) -> TensorResult<Var> {
        self.check(x, "gelu")?;
        let data = self.value(x).data().iter().map(|&v| gelu_value(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::Gelu { x: x.0 }, Tensor::new(shape, data)?, "gelu")
    }

    /// Stack rank-2 tensors with equal column counts along the row (token)
    /// axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> TensorResult<Var> {
        self.concat(parts, true)
    }

    /// Stack rank-2 tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> TensorResult<Var> {
        self.concat(parts, false)
    }

    fn concat(&mut self, parts: &[Var], rows: bool) -> TensorResult<Var> {
        let name: &'static str = if rows { "concat_rows" } else { "concat_cols" };
        if parts.is_empty() {
            return Err(TensorError::BadShape {
                op: name,
                expected: "at least one part",
                got: vec![],
            });
        }
        for p in parts {
            self.check(*p, name)?;
            self.dims2(*p, name)?;
        }
        let first = self.value(parts[0]).shape().to_vec();
        if rows {
            let n = first[1];
            let mut data = Vec::new();
            let mut m = 0;
            for p in parts {
                let t = self.value(*p);
                if t.shape()[1] != n {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        lhs: first,
                        rhs: t.shape().to_vec(),
                    });
                }
                m += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let ids = parts.iter().map(|p| p.0).collect();
            self.push(Op::ConcatRows { parts: ids }, Tensor::new(vec![m, n], data)?, name)
        } else {
            let m = first[0];
            let mut widths = Vec::with_capacity(parts.len());
            let mut n = 0;
            for p in parts {
                let t = self.value(*p);
                if t.shape()[0] != m {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        lhs: first,
                        rhs: t.shape().to_vec(),
                    });
                }
                widths.push(t.shape()[1]);
                n += t.shape()[1];
            }
            let mut data = vec![0.0; m * n];
            let mut offset = 0;
            for (p, w) in parts.iter().zip(&widths) {
                let t = self.value(*p);
                for i in 0..m {
                    data[i * n + offset..i * n + offset + w]
                        .copy_from_slice(&t.data()[i * w..(i + 1) * w]);
                }
                offset += w;
            }
            let ids = parts.iter().map(|p| p.0).collect();
            self.push(Op::ConcatCols { parts: ids }, Tensor::new(vec![m, n], data)?, name)
        }
    }

    /// Rows `r0..r1` of an `[m,n]` matrix.
    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> TensorResult<Var> {
        self.check(x, "slice_rows")?;
        let (m, _n) = self.dims2(x, "slice_rows")?;
        if r0 >= r1 || r1 > m {
            return Err(TensorError::OutOfBounds {
                op: "slice_rows",
                index: r1,
                bound: m,
            });
        }
        let value = self.value(x).rows(r0, r1)?;
        self.push(Op::SliceRows { x: x.0, r0 }, value, "slice_rows")
    }

    /// Columns `c0..c1` of an `[m,n]` matrix.
    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> TensorResult<Var> {
        self.check(x, "slice_cols")?;
        let (m, n) = self.dims2(x, "slice_cols")?;
        if c0 >= c1 || c1 > n {
            return Err(TensorError::OutOfBounds {
                op: "slice_cols",
                index: c1,
                bound: n,
            });
        }
        let src = self.value(x).data();
        let w = c1 - c0;
        let mut data = vec![0.0; m * w];
        for i in 0..m {
            data[i * w..(i + 1) * w].copy_from_slice(&src[i * n + c0..i * n + c1]);
        }
        self.push(
            Op::SliceCols { x: x.0, c0 },
            Tensor::new(vec![m, w], data)?,
            "slice_cols",
        )
    }

    /// Gather rows of an embedding table `[v,d]` by id; gradients scatter-add
    /// back into the table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> TensorResult<Var> {
        self.check(table, "embedding")?;
        let (v, d) = self.dims2(table, "embedding")?;
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::OutOfBounds {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.push(
            Op::Embed {
                table: table.0,
                ids: ids.to_vec(),
            },
            Tensor::new(vec![ids.len(), d], data)?,
            "embedding",
        )
    }

    /// Row-wise `log(sum(exp(.)))` of an `[m,n]` matrix, shift-stabilized.
    pub fn lse_rows(&mut self, x: Var) -> TensorResult<Var> {
        self.check(x, "lse_rows")?;
        let (m, n) = self.dims2(x, "lse_rows")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let s: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            out[i] = max + s.ln();
        }
        self.push(Op::LseRows { x: x.0 }, Tensor::new(vec![m], out)?, "lse_rows")
    }

    /// Main diagonal of a square matrix as a vector.
    pub fn diag(&mut self, x: Var) -> TensorResult<Var> {
        self.check(x, "diag")?;
        let (m, n) = self.dims2(x, "diag")?;
        if m != n {
            return Err(TensorError::BadShape {
                op: "diag",
                expected: "square matrix",
                got: vec![m, n],
            });
        }
        let src = self.value(x).data();
        let out = (0..m).map(|i| src[i * n + i]).collect();
        self.push(Op::Diag { x: x.0 }, Tensor::new(vec![m], out)?, "diag")
    }

    /// `min(exp(x), max)` on a scalar; the gradient is zero on the clamped
    /// branch. Used for the learnable similarity temperature.
    pub fn exp_clamped(&mut self, x: Var, max: f64) -> TensorResult<Var> {
        self.check(x, "exp_clamped")?;
        let v = self.value(x).item()?;
        let y = v.exp().min(max);
        self.push(Op::ExpClamped { x: x.0, max }, Tensor::scalar(y), "exp_clamped")
    }

    /// Multiply a tensor by a scalar held in a 1-element node (so the scalar
    /// itself can receive gradients).
    pub fn scale_by(&mut self, s: Var, x: Var) -> TensorResult<Var> {
        self.check(s, "scale_by")?;
        self.check(x, "scale_by")?;
        let sv = self.value(s).item()?;
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(
            Op::ScaleBy { s: s.0, x: x.0 },
            Tensor::new(shape, data)?,
            "scale_by",
        )
    }

    /// `x . w (+ bias)` where `x` may be rank 1 (`[k]`) or rank 2 (`[m,k]`);
    /// built from `matmul`/`add_bias` so it differentiates for free.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> TensorResult<Var> {
        let t = self.value(x);
        let (x2, restore) = match t.rank() {
            1 => {
                let k = t.len();
                (self.reshape(x, &[1, k])?, true)
            }
            2 => (x, false),
            _ => {
                return Err(TensorError::BadShape {
                    op: "linear",
                    expected: "rank-1 or rank-2 input",
                    got: t.shape().to_vec(),
                })
            }
        };
        let mut y = self.matmul(x2, w)?;
        if let Some(b) = bias {
            y = self.add_bias(y, b)?;
        }
        if restore {
            let n = self.value(y).shape()[1];
            y = self.reshape(y, &[n])?;
        }
        Ok(y)
    }

    /// Reverse pass from a scalar root. Gradients accumulate by summation
    /// into every node that requires them; each node is visited exactly once,
    /// in reverse insertion order.
    pub fn backward(&mut self, root: Var) -> TensorResult<()> {
        self.check(root, "backward")?;
        if self.value(root).len() != 1 {
            return Err(TensorError::NonScalarRoot {
                got: self.value(root).shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let gy = match self.nodes[idx].grad.take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[idx].op.clone();
            self.apply_backward(idx, &op, &gy);
            self.nodes[idx].grad = Some(gy);
        }
        Ok(())
    }

    fn accum(&mut self, target: usize, contribution: impl FnOnce(&Self) -> Vec<f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        let c = contribution(self);
        match &mut self.nodes[target].grad {
            Some(g) => g.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(c),
        }
    }

    fn apply_backward(&mut self, idx: usize, op: &Op, gy: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.nodes[*a].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[*b].value.shape()[1];
                self.accum(*a, |t| {
                    // ga = gy . b^T
                    let bd = t.nodes[*b].value.data();
                    let mut out = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gy[i * n + j];
                            for p in 0..k {
                                out[i * k + p] += g * bd[p * n + j];
                            }
                        }
                    }
                    out
                });
                self.accum(*b, |t| {
                    // gb = a^T . gy
                    let ad = t.nodes[*a].value.data();
                    let mut out = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ad[i * k + p];
                            for j in 0..n {
                                out[p * n + j] += av * gy[i * n + j];
                            }
                        }
                    }
                    out
                });
            }
            Op::Transpose { x } => {
                let (n, m) = {
                    let s = self.nodes[idx].value.shape();
                    (s[0], s[1])
                };
                self.accum(*x, |_| {
                    let mut out = vec![0.0; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            out[j * n + i] = gy[i * m + j];
                        }
                    }
                    out
                });
            }
            Op::Reshape { x } => self.accum(*x, |_| gy.to_vec()),
            Op::Add { a, b } => {
                self.accum(*a, |_| gy.to_vec());
                self.accum(*b, |_| gy.to_vec());
            }
            Op::AddBias { x, b } => {
                self.accum(*x, |_| gy.to_vec());
                let n = self.nodes[*b].value.len();
                self.accum(*b, |_| {
                    let mut out = vec![0.0; n];
                    for (i, g) in gy.iter().enumerate() {
                        out[i % n] += g;
                    }
                    out
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accum(*x, |_| gy.iter().map(|g| g * c).collect());
            }
            Op::Mul { a, b } => {
                self.accum(*a, |t| {
                    t.nodes[*b]
                        .value
                        .data()
                        .iter()
                        .zip(gy)
                        .map(|(v, g)| v * g)
                        .collect()
                });
                self.accum(*b, |t| {
                    t.nodes[*a]
                        .value
                        .data()
                        .iter()
                        .zip(gy)
                        .map(|(v, g)| v * g)
                        .collect()
                });
            }
            Op::SumAll { x } => {
                let len = self.nodes[*x].value.len();
                self.accum(*x, |_| vec![gy[0]; len]);
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.nodes[*x].value.shape().to_vec();
                let axis = *axis;
                self.accum(*x, |_| {
                    if shape.len() == 1 {
                        vec![gy[0] / shape[0] as f64; shape[0]]
                    } else {
                        let (m, n) = (shape[0], shape[1]);
                        let mut out = vec![0.0; m * n];
                        if axis == 0 {
                            for i in 0..m {
                                for j in 0..n {
                                    out[i * n + j] = gy[j] / m as f64;
                                }
                            }
                        } else {
                            for i in 0..m {
                                for j in 0..n {
                                    out[i * n + j] = gy[i] / n as f64;
                                }
                            }
                        }
                        out
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let y = self.nodes[idx].value.clone();
                let n = y.shape()[1];
                self.accum(*x, |_| {
                    let mut out = vec![0.0; y.len()];
                    for (row, (yv, gv)) in y.data().chunks(n).zip(gy.chunks(n)).enumerate() {
                        let inner: f64 = yv.iter().zip(gv).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            out[row * n + j] = yv[j] * (gv[j] - inner);
                        }
                    }
                    out
                });
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.nodes[*x].value.clone();
                let g = self.nodes[*gain].value.data().to_vec();
                let d = *xv.shape().last().unwrap();
                // Recompute per-vector statistics; cheaper than storing them.
                let mut stats = Vec::with_capacity(xv.len() / d);
                for v in xv.data().chunks(d) {
                    let mean = v.iter().sum::<f64>() / d as f64;
                    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                    stats.push((mean, 1.0 / (var + LAYER_NORM_EPS).sqrt()));
                }
                self.accum(*x, |_| {
                    let mut out = vec![0.0; xv.len()];
                    for (row, v) in xv.data().chunks(d).enumerate() {
                        let (mean, inv) = stats[row];
                        let gyr = &gy[row * d..(row + 1) * d];
                        let mut m_dxh = 0.0;
                        let mut m_dxh_xh = 0.0;
                        for j in 0..d {
                            let xh = (v[j] - mean) * inv;
                            let dxh = gyr[j] * g[j];
                            m_dxh += dxh;
                            m_dxh_xh += dxh * xh;
                        }
                        m_dxh /= d as f64;
                        m_dxh_xh /= d as f64;
                        for j in 0..d {
                            let xh = (v[j] - mean) * inv;
                            let dxh = gyr[j] * g[j];
                            out[row * d + j] = inv * (dxh - m_dxh - xh * m_dxh_xh);
                        }
                    }
                    out
                });
                self.accum(*gain, |_| {
                    let mut out = vec![0.0; d];
                    for (row, v) in xv.data().chunks(d).enumerate() {
                        let (mean, inv) = stats[row];
                        for j in 0..d {
                            out[j] += gy[row * d + j] * (v[j] - mean) * inv;
                        }
                    }
                    out
                });
                self.accum(*bias, |_| {
                    let mut out = vec![0.0; d];
                    for row in 0..xv.len() / d {
                        for j in 0..d {
                            out[j] += gy[row * d + j];
                        }
                    }
                    out
                });
            }
            Op::L2NormRows { x } => {
                let xv = self.nodes[*x].value.clone();
                let y = self.nodes[idx].value.clone();
                let d = *xv.shape().last().unwrap();
                self.accum(*x, |_| {
                    let mut out = vec![0.0; xv.len()];
                    for (row, v) in xv.data().chunks(d).enumerate() {
                        let n = super::norm(v);
                        let gyr = &gy[row * d..(row + 1) * d];
                        if n < L2_DEGENERATE_EPS {
                            out[row * d..(row + 1) * d].copy_from_slice(gyr);
                        } else {
                            let yr = &y.data()[row * d..(row + 1) * d];
                            let inner: f64 = gyr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for j in 0..d {
                                out[row * d + j] = (gyr[j] - inner * yr[j]) / n;
                            }
                        }
                    }
                    out
                });
            }
            Op::Gelu { x } => {
                self.accum(*x, |t| {
                    t.nodes[*x]
                        .value
                        .data()
                        .iter()
                        .zip(gy)
                        .map(|(&v, g)| gelu_derivative(v) * g)
                        .collect()
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[*p].value.len();
                    let slice = gy[offset..offset + len].to_vec();
                    self.accum(*p, |_| slice);
                    offset += len;
                }
            }
            Op::ConcatCols { parts } => {
                let m = self.nodes[idx].value.shape()[0];
                let n = self.nodes[idx].value.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.nodes[*p].value.shape()[1];
                    let mut slice = vec![0.0; m * w];
                    for i in 0..m {
                        slice[i * w..(i + 1) * w]
                            .copy_from_slice(&gy[i * n + offset..i * n + offset + w]);
                    }
                    self.accum(*p, |_| slice);
                    offset += w;
                }
            }
            Op::SliceRows { x, r0 } => {
                let n = self.nodes[*x].value.shape()[1];
                let len = self.nodes[*x].value.len();
                let start = r0 * n;
                self.accum(*x, |_| {
                    let mut out = vec![0.0; len];
                    out[start..start + gy.len()].copy_from_slice(gy);
                    out
                });
            }
            Op::SliceCols { x, c0 } => {
                let (m, n) = {
                    let s = self.nodes[*x].value.shape();
                    (s[0], s[1])
                };
                let w = self.nodes[idx].value.shape()[1];
                let c0 = *c0;
                self.accum(*x, |_| {
                    let mut out = vec![0.0; m * n];
                    for i in 0..m {
                        out[i * n + c0..i * n + c0 + w].copy_from_slice(&gy[i * w..(i + 1) * w]);
                    }
                    out
                });
            }
            Op::Embed { table, ids } => {
                let (v, d) = {
                    let s = self.nodes[*table].value.shape();
                    (s[0], s[1])
                };
                self.accum(*table, |_| {
                    let mut out = vec![0.0; v * d];
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            out[id * d + j] += gy[i * d + j];
                        }
                    }
                    out
                });
            }
            Op::LseRows { x } => {
                let xv = self.nodes[*x].value.clone();
                let n = xv.shape()[1];
                self.accum(*x, |_| {
                    let mut out = vec![0.0; xv.len()];
                    for (row, v) in xv.data().chunks(n).enumerate() {
                        let max = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                        let denom: f64 = v.iter().map(|&x| (x - max).exp()).sum();
                        for j in 0..n {
                            out[row * n + j] = (v[j] - max).exp() / denom * gy[row];
                        }
                    }
                    out
                });
            }
            Op::Diag { x } => {
                let n = self.nodes[*x].value.shape()[0];
                self.accum(*x, |_| {
                    let mut out = vec![0.0; n * n];
                    for i in 0..n {
                        out[i * n + i] = gy[i];
                    }
                    out
                });
            }
            Op::ExpClamped { x, max } => {
                let y = self.nodes[idx].value.data()[0];
                let pass = y < *max;
                self.accum(*x, |_| vec![if pass { y * gy[0] } else { 0.0 }]);
            }
            Op::ScaleBy { s, x } => {
                let sv = self.nodes[*s].value.data()[0];
                self.accum(*s, |t| {
                    let inner: f64 = t.nodes[*x]
                        .value
                        .data()
                        .iter()
                        .zip(gy)
                        .map(|(v, g)| v * g)
                        .sum();
                    vec![inner]
                });
                self.accum(*x, |_| gy.iter().map(|g| g * sv).collect());
            }
        }
    }
}

fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn gelu_value(x: f64) -> f64 {
    let u = INV_SQRT_2PI_2 * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let u = INV_SQRT_2PI_2 * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * INV_SQRT_2PI_2 * (1.0 + 3.0 * GELU_CUBIC * x * x)
}
