//! Differentiation contract for scalar losses over a flat parameter vector.
//!
//! Supported vocabulary: dense matmul, sparse matmul, elementwise
//! add/sub/mul/scale/tanh, row broadcasts, column gathers and concatenation,
//! sums and dot products, per-row 3x3 determinant and trace, squared
//! Frobenius norms, positive fractional powers, and fixed linear operators.
//!
//! Parameter gradients come from a reverse sweep over the whole loss.
//! Derivatives of network outputs with respect to network inputs are
//! forward-mode tangents built from the same operations, so they remain
//! differentiable in the parameters (forward-over-reverse).

mod tape;

pub use tape::{Gradients, LinearOperator, Tape, Var};

use crate::error::{DemError, Result};
use crate::tensor::Tensor;

/// A pure scalar function of the parameter vector.
pub trait DiffProgram {
    fn n_params(&self) -> usize;

    /// Records the loss on `tape`; `theta` is a `1 x n_params` value.
    fn build(&self, tape: &mut Tape, theta: Var) -> Result<Var>;
}

impl<P: DiffProgram + ?Sized> DiffProgram for &P {
    fn n_params(&self) -> usize {
        (**self).n_params()
    }

    fn build(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        (**self).build(tape, theta)
    }
}

/// Adapter turning a closure into a [`DiffProgram`].
pub struct FnProgram<F> {
    n_params: usize,
    f: F,
}

impl<F> FnProgram<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    pub fn new(n_params: usize, f: F) -> Self {
        Self { n_params, f }
    }
}

impl<F> DiffProgram for FnProgram<F>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn build(&self, tape: &mut Tape, theta: Var) -> Result<Var> {
        (self.f)(tape, theta)
    }
}

fn check_len(prog: &dyn DiffProgram, theta: &[f64]) -> Result<()> {
    if theta.len() != prog.n_params() {
        return Err(DemError::Contract(format!(
            "parameter vector has length {}, program expects {}",
            theta.len(),
            prog.n_params()
        )));
    }
    Ok(())
}

fn scalar_output(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(DemError::Contract(format!("loss must be 1x1, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Loss value only; no reverse sweep is recorded.
pub fn value(prog: &dyn DiffProgram, theta: &[f64]) -> Result<f64> {
    check_len(prog, theta)?;
    let mut tape = Tape::new();
    let t = tape.constant(Tensor::from_vec(1, theta.len(), theta.to_vec()));
    let out = prog.build(&mut tape, t)?;
    scalar_output(&tape, out)
}

/// Loss and its gradient with respect to every parameter.
pub fn value_and_parameter_gradient(prog: &dyn DiffProgram, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(prog, theta)?;
    let mut tape = Tape::new();
    let t = tape.parameter(Tensor::from_vec(1, theta.len(), theta.to_vec()));
    let out = prog.build(&mut tape, t)?;
    let loss = scalar_output(&tape, out)?;
    if !tape.needs_grad(out) {
        return Ok((loss, vec![0.0; theta.len()]));
    }
    let mut grads = tape.backward(out)?;
    let g = grads
        .take(t)
        .map(Tensor::into_vec)
        .unwrap_or_else(|| vec![0.0; theta.len()]);
    Ok((loss, g))
}

/// A map from node positions (`n x 3`) to node values (`n x 3`) that can
/// propagate input tangents alongside its output.
pub trait TangentMap {
    fn n_params(&self) -> usize;

    /// Records the output and one tangent per input direction. Each entry of
    /// `directions` is an `n x 3` value holding a direction per node.
    fn forward_with_tangents(
        &self,
        tape: &mut Tape,
        theta: Var,
        x: Var,
        directions: &[Var],
    ) -> Result<(Var, Vec<Var>)>;
}

/// Jacobian-vector product `(du/dX) d` of a [`TangentMap`] at fixed parameters.
pub fn input_directional_derivative(
    map: &dyn TangentMap,
    theta: &[f64],
    x: &Tensor,
    direction: &Tensor,
) -> Result<Tensor> {
    if theta.len() != map.n_params() {
        return Err(DemError::Contract(format!(
            "parameter vector has length {}, map expects {}",
            theta.len(),
            map.n_params()
        )));
    }
    if direction.shape() != x.shape() || x.cols() != 3 {
        return Err(DemError::Contract(format!(
            "direction shape {:?} does not match positions {:?}",
            direction.shape(),
            x.shape()
        )));
    }
    let mut tape = Tape::new();
    let t = tape.constant(Tensor::from_vec(1, theta.len(), theta.to_vec()));
    let xv = tape.constant(x.clone());
    let dv = tape.constant(direction.clone());
    let (_, tangents) = map.forward_with_tangents(&mut tape, t, xv, &[dv])?;
    Ok(tape.value(tangents[0]).clone())
}

/// The same direction at every node.
pub fn uniform_direction(n: usize, d: [f64; 3]) -> Tensor {
    Tensor::from_fn(n, 3, |_, c| d[c])
}
