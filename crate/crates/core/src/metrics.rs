//! Path-norms and `ℓ¹` path-metrics without enumerating paths.
//!
//! `‖Φ(θ)‖_q^q` is one forward pass of the network with every parameter
//! replaced by `|·|^q`, every pooling neuron replaced by a sum and the
//! all-ones input. The path-metric `‖Φ(θ) − Φ(θ′)‖₁` is bracketed by the
//! difference of two path-norms (exact when one lifting dominates the other)
//! and by two upper bounds computed on normalized parameters.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixtures;
use crate::net::{check_params, Architecture, ParamVector};
use crate::paths::{default_path_cap, PathOracle};
use crate::transforms::{normalize_with, NormalizeOptions};

/// `‖Φ(θ)‖_q^q`.
pub fn path_norm_fast(arch: &Architecture, theta: &ParamVector, q: f64) -> Result<f64> {
    check_params(arch, theta)?;
    Ok(path_norm_raw(arch, theta, q))
}

pub(crate) fn path_norm_raw(arch: &Architecture, theta: &[f64], q: f64) -> f64 {
    let mut values = vec![0.0; arch.num_neurons()];
    abs_forward(arch, theta, q, &mut values);
    arch.outputs().iter().map(|&v| values[v]).sum()
}

/// Forward pass of the abs-transformed network on the all-ones input;
/// `values[v] = ‖Φ^{→v}(θ)‖_q^q`.
pub(crate) fn abs_forward(arch: &Architecture, theta: &[f64], q: f64, values: &mut [f64]) {
    let pow = |x: f64| if q == 1.0 { x.abs() } else { x.abs().powf(q) };
    for v in 0..arch.num_neurons() {
        values[v] = match arch.bias_coord(v) {
            None => 1.0,
            Some(c) => {
                let mut acc = pow(theta[c]);
                for &e in arch.incoming(v) {
                    acc += pow(theta[e]) * values[arch.edge(e).0];
                }
                acc
            }
        };
    }
}

/// `|‖Φ(θ)‖₁ − ‖Φ(θ′)‖₁|`, a lower bound on the path-metric.
pub fn path_metric_lower(arch: &Architecture, theta: &ParamVector, other: &ParamVector) -> Result<f64> {
    Ok((path_norm_fast(arch, theta, 1.0)? - path_norm_fast(arch, other, 1.0)?).abs())
}

/// How a dominance `|Φ(θ)| ≥ |Φ(θ′)|` with matching signs was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// `|θ| ≥ |θ′|` and `θ_i θ′_i ≥ 0` coordinatewise.
    Coordinatewise,
    /// Same with the roles of `θ` and `θ′` swapped.
    CoordinatewiseReversed,
    /// Coordinatewise comparison of the enumerated liftings.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactMetric {
    pub value: f64,
    pub certificate: Certificate,
}

/// `‖Φ(θ) − Φ(θ′)‖₁ = ‖Φ(θ)‖₁ − ‖Φ(θ′)‖₁` when one lifting dominates the other
/// in magnitude with the same signs. Falls back to the path oracle (default
/// cap) when the parameters themselves are not ordered.
pub fn path_metric_exact_dominated(arch: &Architecture, theta: &ParamVector, other: &ParamVector) -> Result<ExactMetric> {
    check_params(arch, theta)?;
    check_params(arch, other)?;
    let dominates = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.abs() >= y.abs() && x * y >= 0.0);
    let pn = |t: &ParamVector| path_norm_raw(arch, t, 1.0);
    if dominates(theta, other) {
        return Ok(ExactMetric { value: pn(theta) - pn(other), certificate: Certificate::Coordinatewise });
    }
    if dominates(other, theta) {
        return Ok(ExactMetric { value: pn(other) - pn(theta), certificate: Certificate::CoordinatewiseReversed });
    }
    let oracle = match PathOracle::with_cap(arch, default_path_cap()) {
        Ok(o) => o,
        Err(Error::PathExplosion { .. }) => return Err(Error::DominanceUnverified),
        Err(e) => return Err(e),
    };
    let (phi, phi_other) = (oracle.lifting(theta)?, oracle.lifting(other)?);
    let value = if dominates(&phi.values, &phi_other.values) {
        pn(theta) - pn(other)
    } else if dominates(&phi_other.values, &phi.values) {
        pn(other) - pn(theta)
    } else {
        return Err(Error::DominanceUnverified);
    };
    Ok(ExactMetric { value, certificate: Certificate::Oracle })
}

/// Width used by the coarse bound: number of outputs, or the largest number
/// of incoming coordinates of a neuron (its edges plus its bias when the bias
/// is nonzero in either parameter vector).
pub fn coarse_width(arch: &Architecture, theta: &[f64], other: &[f64]) -> usize {
    (0..arch.num_neurons())
        .map(|v| {
            let biased = arch.bias_coord(v).is_some_and(|c| theta[c] != 0.0 || other[c] != 0.0);
            arch.incoming(v).len() + usize::from(biased)
        })
        .chain(std::iter::once(arch.outputs().len()))
        .max()
        .unwrap_or(0)
}

/// Coarse upper bound
/// `[(W² + min(‖Φ(θ)‖_q^q, ‖Φ(θ′)‖_q^q) · L · W) · ‖N(θ) − N(θ′)‖_∞^q]^{1/q}`
/// with `L` the maximum path length minus one.
pub fn path_metric_upper_coarse(arch: &Architecture, theta: &ParamVector, other: &ParamVector, q: f64) -> Result<f64> {
    let (n, n_other) = canonical_pair(arch, theta, other, q)?;
    let w = coarse_width(arch, theta, other) as f64;
    let l = arch.depth().saturating_sub(1) as f64;
    let min_pn = path_norm_raw(arch, theta, q).min(path_norm_raw(arch, other, q));
    let sup = n.sup_distance(&n_other);
    Ok(((w * w + min_pn * l * w) * sup.powf(q)).powf(1.0 / q))
}

/// Refined upper bound on normalized parameters: the output neurons'
/// incoming discrepancies plus the minimal path-norm times the largest sum
/// of hidden-neuron discrepancies along a path, by longest-path dynamic
/// programming.
pub fn path_metric_upper_refined(arch: &Architecture, theta: &ParamVector, other: &ParamVector, q: f64) -> Result<f64> {
    let (n, n_other) = canonical_pair(arch, theta, other, q)?;
    let pow = |x: f64| if q == 1.0 { x.abs() } else { x.abs().powf(q) };
    let disc = |v: usize| -> f64 {
        arch.incoming(v).iter().copied().chain(arch.bias_coord(v)).map(|c| pow(n[c] - n_other[c])).sum()
    };
    let mut best = vec![0.0f64; arch.num_neurons()];
    let mut output_term = 0.0;
    let mut longest = 0.0f64;
    for v in 0..arch.num_neurons() {
        if arch.is_input(v) {
            continue;
        }
        let through = arch.incoming(v).iter().map(|&e| best[arch.edge(e).0]).fold(0.0, f64::max);
        let d = disc(v);
        best[v] = d + through;
        if arch.is_output(v) {
            output_term += d;
            longest = longest.max(through);
        }
    }
    let min_pn = path_norm_raw(arch, theta, q).min(path_norm_raw(arch, other, q));
    Ok((output_term + min_pn * longest).powf(1.0 / q))
}

pub fn path_metric_upper(arch: &Architecture, theta: &ParamVector, other: &ParamVector, q: f64, refined: bool) -> Result<f64> {
    if refined {
        path_metric_upper_refined(arch, theta, other, q)
    } else {
        path_metric_upper_coarse(arch, theta, other, q)
    }
}

fn canonical_pair(arch: &Architecture, theta: &ParamVector, other: &ParamVector, q: f64) -> Result<(ParamVector, ParamVector)> {
    let opts = NormalizeOptions::canonical(q);
    Ok((normalize_with(arch, theta, opts)?, normalize_with(arch, other, opts)?))
}

/// Every path-metric estimate for one pair of parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMetricReport {
    pub lower: f64,
    pub exact: Option<f64>,
    pub certificate: Option<Certificate>,
    pub upper_coarse: f64,
    pub upper_refined: f64,
    /// Enumerated `‖Φ(θ) − Φ(θ′)‖₁`, when the path count is under the cap.
    pub oracle: Option<f64>,
}

impl PathMetricReport {
    pub fn dominance_certified(&self) -> bool {
        self.certificate.is_some()
    }
}

pub fn path_metric_report(arch: &Architecture, theta: &ParamVector, other: &ParamVector) -> Result<PathMetricReport> {
    let (exact, certificate) = match path_metric_exact_dominated(arch, theta, other) {
        Ok(m) => (Some(m.value), Some(m.certificate)),
        Err(Error::DominanceUnverified) => (None, None),
        Err(e) => return Err(e),
    };
    let oracle = match PathOracle::new(arch) {
        Ok(o) => Some(o.lifting(theta)?.distance_l1(&o.lifting(other)?)),
        Err(Error::PathExplosion { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(PathMetricReport {
        lower: path_metric_lower(arch, theta, other)?,
        exact,
        certificate,
        upper_coarse: path_metric_upper_coarse(arch, theta, other, 1.0)?,
        upper_refined: path_metric_upper_refined(arch, theta, other, 1.0)?,
        oracle,
    })
}

/// Row-major matrix, `rows × cols`.
pub type Matrix = Vec<Vec<f64>>;

/// Bias-free layered network `x ↦ M_L relu(… relu(M_1 x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Matrix>,
}

impl Mlp {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        let mut expected = layers[0].first().map_or(0, Vec::len);
        for (l, m) in layers.iter().enumerate() {
            if l > 0 && m.iter().any(|r| r.len() != expected) {
                let got = m.iter().map(Vec::len).find(|&n| n != expected).unwrap_or(0);
                return Err(Error::RaggedLayers { layer: l, expected, got });
            }
            if m.is_empty() || m.iter().any(|r| r.len() != m[0].len()) {
                return Err(Error::RaggedLayers { layer: l, expected: m.first().map_or(0, Vec::len), got: 0 });
            }
            expected = m.len();
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer widths including the input layer.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0][0].len()).chain(self.layers.iter().map(Vec::len)).collect()
    }

    pub fn max_row_l1(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|m| m.iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()))
            .fold(0.0, f64::max)
    }

    /// The same network as a DAG (see [`fixtures::layered`]) with zero biases.
    pub fn to_network(&self) -> (Architecture, ParamVector) {
        let widths = self.widths();
        let arch = fixtures::layered(&widths);
        let mut theta = vec![0.0; arch.num_params()];
        let base = layer_offsets(&widths);
        for (l, m) in self.layers.iter().enumerate() {
            for (j, row) in m.iter().enumerate() {
                for (i, &w) in row.iter().enumerate() {
                    let e = arch.edge_index(base[l] + i, base[l + 1] + j).expect("layered edge");
                    theta[e] = w;
                }
            }
        }
        (arch, ParamVector::from_vec(theta))
    }

    /// Reads the weights of a network built by [`Mlp::to_network`].
    pub fn from_network(widths: &[usize], arch: &Architecture, theta: &ParamVector) -> Result<Self> {
        check_params(arch, theta)?;
        let base = layer_offsets(widths);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let mut m = vec![vec![0.0; widths[l]]; widths[l + 1]];
            for (j, row) in m.iter_mut().enumerate() {
                for (i, w) in row.iter_mut().enumerate() {
                    let e = arch
                        .edge_index(base[l] + i, base[l + 1] + j)
                        .ok_or_else(|| Error::RaggedLayers { layer: l, expected: widths[l], got: i })?;
                    *w = theta[e];
                }
            }
            layers.push(m);
        }
        Self::new(layers)
    }
}

fn layer_offsets(widths: &[usize]) -> Vec<usize> {
    let mut base = vec![0];
    for &w in widths {
        base.push(base.last().unwrap() + w);
    }
    base
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MlpBounds {
    pub width: usize,
    pub layers: usize,
    pub radius: f64,
    pub sup_distance: f64,
    /// `L W² R^{L−1} ‖θ − θ′‖_∞`, an upper bound on the path-metric.
    pub path_metric_ub: f64,
    /// `(W ‖x‖_∞ + 1) W L² R^{L−1} ‖θ − θ′‖_∞`.
    pub legacy: f64,
    /// `max(‖x‖_∞, 1) L W² R^{L−1} ‖θ − θ′‖_∞`, valid for same-sign pairs.
    pub recovered_same_sign: f64,
    /// Twice the same-sign bound, valid for every pair.
    pub recovered_any_sign: f64,
}

pub fn mlp_bounds(theta: &Mlp, other: &Mlp, x: &[f64]) -> Result<MlpBounds> {
    let widths = theta.widths();
    if widths != other.widths() {
        let layer = widths.iter().zip(other.widths()).position(|(a, b)| *a != b).unwrap_or(widths.len());
        return Err(Error::RaggedLayers {
            layer,
            expected: widths.get(layer).copied().unwrap_or(0),
            got: other.widths().get(layer).copied().unwrap_or(0),
        });
    }
    if x.len() != widths[0] {
        return Err(Error::DimensionMismatch { expected: widths[0], got: x.len() });
    }
    let w = *widths.iter().max().unwrap() as f64;
    let l = theta.depth() as f64;
    let r = theta.max_row_l1().max(other.max_row_l1()).max(1.0);
    let sup = theta
        .layers
        .iter()
        .flatten()
        .flatten()
        .zip(other.layers.iter().flatten().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let x_inf = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let growth = r.powf(l - 1.0);
    let path_metric_ub = l * w * w * growth * sup;
    let recovered_same_sign = x_inf.max(1.0) * path_metric_ub;
    Ok(MlpBounds {
        width: w as usize,
        layers: theta.depth(),
        radius: r,
        sup_distance: sup,
        path_metric_ub,
        legacy: (w * x_inf + 1.0) * w * l * l * growth * sup,
        recovered_same_sign,
        recovered_any_sign: 2.0 * recovered_same_sign,
    })
}
