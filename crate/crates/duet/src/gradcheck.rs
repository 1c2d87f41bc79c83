//! Central finite-difference gradient oracle.
//!
//! This module never touches the tape's backward pass: it re-evaluates a
//! scalar-valued closure at perturbed inputs, so it stays an independent
//! reference that analytic gradients are compared against in tests.

use crate::tensor::{Tape, Tensor, TensorResult, Var};

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`: `(f(x+eps e_i) - f(x-eps e_i)) / 2 eps`.
pub fn numerical_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let keep = point[i];
        point[i] = keep + eps;
        let fp = f(&point);
        point[i] = keep - eps;
        let fm = f(&point);
        point[i] = keep;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Worst relative disagreement between two gradient vectors.
///
/// The denominator is floored at `1e-2` so that coordinates whose true
/// gradient is (near) zero are judged on an absolute scale instead of
/// amplifying finite-difference noise.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-2))
        .fold(0.0, f64::max)
}

/// Check the tape gradient of a scalar-valued graph with respect to one leaf.
///
/// `build` receives a fresh tape and the leaf under test and must return a
/// scalar node. Returns the worst relative error between the tape gradient
/// and the central-difference estimate.
pub fn check_leaf_gradient(
    x0: &Tensor,
    eps: f64,
    build: impl Fn(&mut Tape, Var) -> TensorResult<Var>,
) -> f64 {
    let eval = |data: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let x = tape
            .leaf(Tensor::new(x0.shape().to_vec(), data.to_vec()).unwrap(), false)
            .unwrap();
        let y = build(&mut tape, x).unwrap();
        tape.value(y).item().unwrap()
    };

    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true).unwrap();
    let y = build(&mut tape, x).unwrap();
    tape.backward(y).unwrap();
    let analytic = tape.grad(x).expect("leaf requires grad");

    let mut f = eval;
    let numeric = numerical_grad(&mut f, x0.data(), eps);
    max_rel_err(analytic.data(), &numeric)
}
