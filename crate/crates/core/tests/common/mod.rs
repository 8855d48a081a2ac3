//! Reference computations written independently of the crate's path code:
//! paths are found by depth-first search from every neuron and keyed by
//! their neuron sequence, and the forward pass is re-implemented directly.
#![allow(dead_code)]

use std::collections::BTreeMap;

use pathlift::net::Architecture;
use pathlift::{Activation, ParamVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300) || a == b
}

pub fn all_close(a: &[f64], b: &[f64], rel: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| rel_close(*x, *y, rel))
}

/// Every path as its neuron sequence.
pub fn ref_paths(arch: &Architecture) -> Vec<Vec<usize>> {
    fn walk(arch: &Architecture, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let v = *prefix.last().unwrap();
        if arch.is_output(v) {
            out.push(prefix.clone());
        }
        for &e in arch.outgoing(v) {
            prefix.push(arch.edge(e).1);
            walk(arch, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for v in 0..arch.num_neurons() {
        walk(arch, &mut vec![v], &mut out);
    }
    out
}

fn edge_of(arch: &Architecture, u: usize, v: usize) -> usize {
    arch.edges().iter().position(|&(a, b)| a == u && b == v).expect("consecutive neurons share an edge")
}

/// `Φ_p(θ)` per neuron sequence.
pub fn ref_lifting(arch: &Architecture, theta: &[f64]) -> BTreeMap<Vec<usize>, f64> {
    ref_paths(arch)
        .into_iter()
        .map(|p| {
            let mut value = if arch.is_input(p[0]) { 1.0 } else { theta[arch.bias_coord(p[0]).unwrap()] };
            for w in p.windows(2) {
                value *= theta[edge_of(arch, w[0], w[1])];
            }
            (p, value)
        })
        .collect()
}

pub fn ref_norm(arch: &Architecture, theta: &[f64]) -> f64 {
    ref_lifting(arch, theta).values().map(|v| v.abs()).sum()
}

pub fn ref_metric(arch: &Architecture, theta: &[f64], other: &[f64]) -> f64 {
    let (a, b) = (ref_lifting(arch, theta), ref_lifting(arch, other));
    a.iter().map(|(p, x)| (x - b[p]).abs()).sum()
}

/// Neuron values, pre-activations and the selected antecedent of each pool.
pub struct RefTrace {
    pub values: Vec<f64>,
    pub pre: Vec<f64>,
    pub selected: Vec<Option<usize>>,
}

pub fn ref_trace(arch: &Architecture, theta: &[f64], x: &[f64]) -> RefTrace {
    let n = arch.num_neurons();
    let mut t = RefTrace { values: vec![0.0; n], pre: vec![0.0; n], selected: vec![None; n] };
    let mut next_input = 0;
    for v in 0..n {
        let act = arch.activation(v);
        if act == Activation::Input {
            t.values[v] = x[next_input];
            next_input += 1;
            continue;
        }
        let b = theta[arch.bias_coord(v).unwrap()];
        let contribs: Vec<(usize, f64)> = (0..v)
            .filter_map(|u| arch.edge_index(u, v).map(|e| (u, theta[e] * t.values[u])))
            .collect();
        match act {
            Activation::Kpool(k) => {
                let mut sorted = contribs.clone();
                sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                t.selected[v] = Some(sorted[k - 1].0);
                t.values[v] = b + sorted[k - 1].1;
                t.pre[v] = t.values[v];
            }
            _ => {
                let s = b + contribs.iter().map(|c| c.1).sum::<f64>();
                t.pre[v] = s;
                t.values[v] = if act == Activation::Relu { s.max(0.0) } else { s };
            }
        }
    }
    t
}

pub fn ref_forward(arch: &Architecture, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let t = ref_trace(arch, theta, x);
    arch.outputs().iter().map(|&v| t.values[v]).collect()
}

/// Whether every neuron after the first passes the signal along the path.
pub fn ref_active(arch: &Architecture, trace: &RefTrace, path: &[usize]) -> bool {
    path.iter().enumerate().all(|(i, &v)| match arch.activation(v) {
        Activation::Relu => trace.pre[v] > 0.0,
        Activation::Kpool(_) => i == 0 || trace.selected[v] == Some(path[i - 1]),
        _ => true,
    })
}

/// `Σ_p Φ_p a_p x_{start(p)}` with `x_start = 1` for bias paths, per output.
pub fn ref_linearized(arch: &Architecture, theta: &[f64], x: &[f64]) -> Vec<f64> {
    let trace = ref_trace(arch, theta, x);
    let lifting = ref_lifting(arch, theta);
    let mut out = vec![0.0; arch.outputs().len()];
    for (p, phi) in &lifting {
        if !ref_active(arch, &trace, p) {
            continue;
        }
        let start = if arch.is_input(p[0]) { trace.values[p[0]] } else { 1.0 };
        let slot = arch.outputs().iter().position(|&o| o == *p.last().unwrap()).unwrap();
        out[slot] += phi * start;
    }
    out
}

/// `Σ_{p ∋ i} |Φ_p|` per coordinate, where a path contains its edges and the
/// bias of its first neuron.
pub fn ref_path_mag(arch: &Architecture, theta: &[f64]) -> Vec<f64> {
    let mut scores = vec![0.0; theta.len()];
    for (p, phi) in ref_lifting(arch, theta) {
        if !arch.is_input(p[0]) {
            scores[arch.bias_coord(p[0]).unwrap()] += phi.abs();
        }
        for w in p.windows(2) {
            scores[edge_of(arch, w[0], w[1])] += phi.abs();
        }
    }
    scores
}

pub fn params(arch: &Architecture, values: Vec<f64>) -> ParamVector {
    ParamVector::new(arch, values).unwrap()
}
