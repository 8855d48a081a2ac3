//! Reverse-mode differentiation of the DAG forward pass.
//!
//! A [`Tape`] owns the per-neuron buffers of one evaluation and can be reused
//! across inputs, which is what the trainer does. The backward sweep walks
//! the topological order in reverse; ReLU passes the adjoint only when its
//! pre-activation is strictly positive and a pooling neuron passes it to the
//! antecedent it selected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::abs_forward;
use crate::net::{check_input, check_params, evaluate_into, Activation, Architecture, ParamVector, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½ ‖R − y‖²`.
    SquaredError,
    /// Softmax cross-entropy against a probability vector `y`; with a single
    /// output, binary logistic loss against `y ∈ [0, 1]`.
    Logistic,
}

impl LossKind {
    /// Loss value and its gradient with respect to the outputs.
    pub fn eval(self, out: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossKind::SquaredError => {
                let diff: Vec<f64> = out.iter().zip(target).map(|(r, y)| r - y).collect();
                (0.5 * diff.iter().map(|d| d * d).sum::<f64>(), diff)
            }
            LossKind::Logistic if out.len() == 1 => {
                let (z, y) = (out[0], target[0]);
                // log(1 + e^z) computed without overflow
                let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
                let sigma = 1.0 / (1.0 + (-z).exp());
                (softplus - y * z, vec![sigma - y])
            }
            LossKind::Logistic => {
                let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = out.iter().map(|z| (z - m).exp()).collect();
                let total: f64 = exps.iter().sum();
                let log_total = total.ln() + m;
                let loss = out.iter().zip(target).map(|(z, y)| y * (log_total - z)).sum();
                let grad = exps.iter().zip(target).map(|(e, y)| e / total - y).collect();
                (loss, grad)
            }
        }
    }
}

/// How the outputs are reduced to the differentiated scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregate<'a> {
    SumOutputs,
    Loss { target: &'a [f64], kind: LossKind },
}

/// Forward values and adjoints of one evaluation.
#[derive(Debug, Clone)]
pub struct Tape {
    trace: Trace,
    scratch: Vec<(f64, usize)>,
    adjoint: Vec<f64>,
    grad: Vec<f64>,
    outputs: Vec<f64>,
}

impl Tape {
    pub fn new(arch: &Architecture) -> Self {
        let n = arch.num_neurons();
        Self {
            trace: Trace { values: vec![0.0; n], pre: vec![0.0; n], selected: vec![None; n] },
            scratch: Vec::new(),
            adjoint: vec![0.0; n],
            grad: vec![0.0; arch.num_params()],
            outputs: Vec::with_capacity(arch.outputs().len()),
        }
    }

    /// Records a forward pass and returns the outputs.
    pub fn forward(&mut self, arch: &Architecture, theta: &ParamVector, x: &[f64]) -> Result<&[f64]> {
        check_params(arch, theta)?;
        check_input(arch, x)?;
        if self.adjoint.len() != arch.num_neurons() || self.grad.len() != arch.num_params() {
            *self = Tape::new(arch);
        }
        evaluate_into(arch, theta, x, &mut self.trace, &mut self.scratch);
        self.outputs.clear();
        self.outputs.extend(arch.outputs().iter().map(|&v| self.trace.values[v]));
        Ok(&self.outputs)
    }

    /// Back-propagates `seed = ∂s/∂R` through the recorded pass; the
    /// gradient is accumulated into [`Tape::gradient`] when `accumulate`.
    pub fn backward(&mut self, arch: &Architecture, theta: &ParamVector, seed: &[f64], accumulate: bool) {
        if !accumulate {
            self.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.adjoint.iter_mut().for_each(|a| *a = 0.0);
        for (&v, &s) in arch.outputs().iter().zip(seed) {
            self.adjoint[v] += s;
        }
        let values = &self.trace.values;
        for v in (0..arch.num_neurons()).rev() {
            let a = self.adjoint[v];
            if a == 0.0 {
                continue;
            }
            let Some(bc) = arch.bias_coord(v) else { continue };
            match arch.activation(v) {
                Activation::Kpool(_) => {
                    let e = self.trace.selected[v].expect("pooling neuron evaluated");
                    let u = arch.edge(e).0;
                    self.grad[bc] += a;
                    self.grad[e] += a * values[u];
                    self.adjoint[u] += a * theta[e];
                }
                act => {
                    if act == Activation::Relu && self.trace.pre[v] <= 0.0 {
                        continue;
                    }
                    self.grad[bc] += a;
                    for &e in arch.incoming(v) {
                        let u = arch.edge(e).0;
                        self.grad[e] += a * values[u];
                        self.adjoint[u] += a * theta[e];
                    }
                }
            }
        }
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn values(&self) -> &[f64] {
        &self.trace.values
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }
}

/// Value of the aggregated scalar and its gradient over every coordinate.
pub fn value_and_grad(arch: &Architecture, theta: &ParamVector, x: &[f64], aggregate: Aggregate) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new(arch);
    let out = tape.forward(arch, theta, x)?.to_vec();
    let (value, seed) = reduce(arch, &out, aggregate)?;
    tape.backward(arch, theta, &seed, false);
    Ok((value, tape.grad))
}

pub fn grad_scalar(arch: &Architecture, theta: &ParamVector, x: &[f64], aggregate: Aggregate) -> Result<Vec<f64>> {
    Ok(value_and_grad(arch, theta, x, aggregate)?.1)
}

/// Scalar value of the aggregate, without differentiating.
pub fn scalar_value(arch: &Architecture, theta: &ParamVector, x: &[f64], aggregate: Aggregate) -> Result<f64> {
    let out = crate::net::forward(arch, theta, x)?;
    Ok(reduce(arch, &out, aggregate)?.0)
}

fn reduce(arch: &Architecture, out: &[f64], aggregate: Aggregate) -> Result<(f64, Vec<f64>)> {
    match aggregate {
        Aggregate::SumOutputs => Ok((out.iter().sum(), vec![1.0; out.len()])),
        Aggregate::Loss { target, kind } => {
            if target.len() != arch.outputs().len() {
                return Err(Error::DimensionMismatch { expected: arch.outputs().len(), got: target.len() });
            }
            Ok(kind.eval(out, target))
        }
    }
}

/// Summed loss over a batch and its gradient.
pub fn batch_loss_grad(
    arch: &Architecture,
    theta: &ParamVector,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    kind: LossKind,
    tape: &mut Tape,
) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.len() });
    }
    tape.grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let out = tape.forward(arch, theta, x)?.to_vec();
        let (loss, seed) = reduce(arch, &out, Aggregate::Loss { target: y, kind })?;
        total += loss;
        tape.backward(arch, theta, &seed, true);
    }
    Ok((total, tape.grad.clone()))
}

pub fn batch_loss(arch: &Architecture, theta: &ParamVector, inputs: &[Vec<f64>], targets: &[Vec<f64>], kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new(arch);
    let mut total = 0.0;
    for (x, y) in inputs.iter().zip(targets) {
        let out = tape.forward(arch, theta, x)?.to_vec();
        total += reduce(arch, &out, Aggregate::Loss { target: y, kind })?.0;
    }
    Ok(total)
}

/// `∇_θ ‖Φ(θ)‖₁`, by one forward and one backward sweep of the
/// abs-transformed network, with `sign(0) = 0`.
pub fn grad_path_norm(arch: &Architecture, theta: &ParamVector) -> Result<Vec<f64>> {
    check_params(arch, theta)?;
    let mut values = vec![0.0; arch.num_neurons()];
    let mut adjoint = vec![0.0; arch.num_neurons()];
    let mut grad = vec![0.0; arch.num_params()];
    grad_path_norm_into(arch, theta, &mut values, &mut adjoint, &mut grad);
    Ok(grad)
}

pub(crate) fn grad_path_norm_into(arch: &Architecture, theta: &[f64], values: &mut [f64], adjoint: &mut [f64], grad: &mut [f64]) {
    abs_forward(arch, theta, 1.0, values);
    adjoint.iter_mut().for_each(|a| *a = 0.0);
    for &v in arch.outputs() {
        adjoint[v] = 1.0;
    }
    for v in (0..arch.num_neurons()).rev() {
        let a = adjoint[v];
        let Some(bc) = arch.bias_coord(v) else { continue };
        grad[bc] = a * sign(theta[bc]);
        for &e in arch.incoming(v) {
            let u = arch.edge(e).0;
            grad[e] = a * sign(theta[e]) * values[u];
            adjoint[u] += a * theta[e].abs();
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The network whose output sum on the all-ones input is `‖Φ(θ)‖₁`: every
/// hidden neuron becomes a plain sum and every parameter its absolute value.
pub fn abs_sum_network(arch: &Architecture, theta: &ParamVector) -> Result<(Architecture, ParamVector)> {
    check_params(arch, theta)?;
    let summed = arch.map_activations(|_, act| match act {
        Activation::Input => Activation::Input,
        _ => Activation::Identity,
    })?;
    Ok((summed, theta.map(|_, x| x.abs())))
}

/// Central finite differences of `f` at `theta`, one coordinate at a time.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, 1)` over the coordinates not in `skip`.
pub fn max_relative_error(a: &[f64], b: &[f64], skip: &[usize]) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(i, _)| !skip.contains(i))
        .map(|(_, (x, y))| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Compares [`grad_scalar`] with central differences of step `eps`; the
/// caller lists coordinates too close to an activation boundary in `skip`.
pub fn grad_check(arch: &Architecture, theta: &ParamVector, x: &[f64], aggregate: Aggregate, eps: f64, skip: &[usize]) -> Result<f64> {
    let analytic = grad_scalar(arch, theta, x, aggregate)?;
    let numeric = finite_difference(
        |t| scalar_value(arch, &ParamVector::from_vec(t.to_vec()), x, aggregate).expect("checked dimensions"),
        theta,
        eps,
    );
    Ok(max_relative_error(&analytic, &numeric, skip))
}
