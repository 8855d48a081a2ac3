//! DAG-ReLU networks: architecture validation, parameter vectors and the
//! forward pass.
//!
//! Neurons are stored in one fixed topological order (ties broken by id) and
//! every index used by the crate refers to a position in that order. The
//! parameter vector has one coordinate per edge followed by one bias
//! coordinate per non-input neuron:
//!
//! ```text
//! [ w(e_0) .. w(e_{|E|-1}) | b(v) for v in topological order, v not an input ]
//! ```
//!
//! Edges are sorted by (source position, target position), so the coordinate
//! order is canonical and independent of how the network was described.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation attached to a neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Input,
    Identity,
    Relu,
    /// k-th largest of the antecedent contributions.
    Kpool(usize),
}

impl Activation {
    pub fn is_pool(self) -> bool {
        matches!(self, Activation::Kpool(_))
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Input => write!(f, "input"),
            Activation::Identity => write!(f, "identity"),
            Activation::Relu => write!(f, "relu"),
            Activation::Kpool(k) => write!(f, "kpool({k})"),
        }
    }
}

/// Unvalidated description of an architecture.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArchSpec {
    pub neurons: Vec<(String, Activation)>,
    pub edges: Vec<(String, String)>,
}

impl ArchSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn neuron(mut self, id: impl Into<String>, activation: Activation) -> Self {
        self.neurons.push((id.into(), activation));
        self
    }

    pub fn edge(mut self, src: impl Into<String>, dst: impl Into<String>) -> Self {
        self.edges.push((src.into(), dst.into()));
        self
    }
}

/// One coordinate of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    Edge(usize),
    Bias(usize),
}

/// A validated DAG architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    ids: Vec<String>,
    activations: Vec<Activation>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    bias_coord: Vec<Option<usize>>,
    bias_owner: Vec<usize>,
}

/// Validates a raw description and fixes the topological order.
pub fn validate_architecture(spec: &ArchSpec) -> Result<Architecture> {
    Architecture::build(spec, true)
}

impl Architecture {
    fn build(spec: &ArchSpec, strict_outputs: bool) -> Result<Self> {
        let mut raw_index: HashMap<&str, usize> = HashMap::with_capacity(spec.neurons.len());
        for (i, (id, _)) in spec.neurons.iter().enumerate() {
            if raw_index.insert(id.as_str(), i).is_some() {
                return Err(Error::DuplicateNeuron(id.clone()));
            }
        }
        let n = spec.neurons.len();
        let mut raw_edges = Vec::with_capacity(spec.edges.len());
        let mut seen = HashSet::with_capacity(spec.edges.len());
        for (src, dst) in &spec.edges {
            let lookup = |name: &String| {
                raw_index.get(name.as_str()).copied().ok_or_else(|| Error::DanglingEdge {
                    src: src.clone(),
                    dst: dst.clone(),
                    missing: name.clone(),
                })
            };
            let (u, v) = (lookup(src)?, lookup(dst)?);
            if !seen.insert((u, v)) {
                return Err(Error::DuplicateEdge(src.clone(), dst.clone()));
            }
            raw_edges.push((u, v));
        }

        // Kahn's algorithm, smallest id first among ready neurons.
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in &raw_edges {
            indeg[v] += 1;
            succ[u].push(v);
        }
        let ids: Vec<&str> = spec.neurons.iter().map(|(id, _)| id.as_str()).collect();
        let mut heap: BinaryHeap<Reverse<(&str, usize)>> = (0..n)
            .filter(|&i| indeg[i] == 0)
            .map(|i| Reverse((ids[i], i)))
            .collect();
        let mut remaining = indeg.clone();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse((_, u))) = heap.pop() {
            order.push(u);
            for &v in &succ[u] {
                remaining[v] -= 1;
                if remaining[v] == 0 {
                    heap.push(Reverse((ids[v], v)));
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n)
                .filter(|&i| remaining[i] > 0)
                .min_by_key(|&i| ids[i])
                .expect("cycle leaves a neuron with positive in-degree");
            return Err(Error::CycleDetected(ids[stuck].to_string()));
        }

        let mut pos = vec![0usize; n];
        for (p, &raw) in order.iter().enumerate() {
            pos[raw] = p;
        }
        let mut edges: Vec<(usize, usize)> = raw_edges.iter().map(|&(u, v)| (pos[u], pos[v])).collect();
        edges.sort_unstable();

        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (e, &(u, v)) in edges.iter().enumerate() {
            incoming[v].push(e);
            outgoing[u].push(e);
        }

        let mut out_ids = Vec::with_capacity(n);
        let mut activations = Vec::with_capacity(n);
        for &raw in &order {
            let (id, act) = &spec.neurons[raw];
            out_ids.push(id.clone());
            activations.push(*act);
        }

        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for v in 0..n {
            let id = &out_ids[v];
            let n_ant = incoming[v].len();
            match activations[v] {
                Activation::Input if n_ant > 0 => {
                    return Err(Error::InputMismatch { id: id.clone(), declared: "input", antecedents: n_ant })
                }
                Activation::Input => inputs.push(v),
                _ if n_ant == 0 => {
                    return Err(Error::InputMismatch { id: id.clone(), declared: "non-input", antecedents: 0 })
                }
                Activation::Kpool(k) if k == 0 || k > n_ant => {
                    return Err(Error::BadPoolArity { id: id.clone(), k, arity: n_ant })
                }
                _ => {}
            }
            if outgoing[v].is_empty() {
                if strict_outputs && !matches!(activations[v], Activation::Identity | Activation::Input) {
                    return Err(Error::NonIdentityOutput(id.clone()));
                }
                outputs.push(v);
            }
        }

        let mut bias_coord = vec![None; n];
        let mut bias_owner = Vec::new();
        for v in 0..n {
            if activations[v] != Activation::Input {
                bias_coord[v] = Some(edges.len() + bias_owner.len());
                bias_owner.push(v);
            }
        }

        let index = out_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self {
            ids: out_ids,
            activations,
            index,
            edges,
            incoming,
            outgoing,
            inputs,
            outputs,
            bias_coord,
            bias_owner,
        })
    }

    /// Re-describes the architecture; `validate_architecture(&a.spec())` is `a`.
    pub fn spec(&self) -> ArchSpec {
        ArchSpec {
            neurons: self.ids.iter().cloned().zip(self.activations.iter().copied()).collect(),
            edges: self
                .edges
                .iter()
                .map(|&(u, v)| (self.ids[u].clone(), self.ids[v].clone()))
                .collect(),
        }
    }

    /// Same graph with every activation replaced through `f`.
    pub fn map_activations(&self, f: impl Fn(usize, Activation) -> Activation) -> Result<Self> {
        let mut spec = self.spec();
        for (v, (_, act)) in spec.neurons.iter_mut().enumerate() {
            *act = f(v, *act);
        }
        Self::build(&spec, false)
    }

    pub fn num_neurons(&self) -> usize {
        self.ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// |E| + |N \ N_in|.
    pub fn num_params(&self) -> usize {
        self.edges.len() + self.bias_owner.len()
    }

    pub fn id(&self, v: usize) -> &str {
        &self.ids[v]
    }

    pub fn activation(&self, v: usize) -> Activation {
        self.activations[v]
    }

    pub fn neuron(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNeuron(id.to_string()))
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let inc = &self.incoming[v];
        inc.binary_search_by_key(&u, |&e| self.edges[e].0).ok().map(|i| inc[i])
    }

    /// Incoming edge indices of `v`, ordered by source position.
    pub fn incoming(&self, v: usize) -> &[usize] {
        &self.incoming[v]
    }

    pub fn outgoing(&self, v: usize) -> &[usize] {
        &self.outgoing[v]
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    pub fn is_input(&self, v: usize) -> bool {
        self.activations[v] == Activation::Input
    }

    pub fn is_output(&self, v: usize) -> bool {
        self.outgoing[v].is_empty()
    }

    pub fn is_hidden(&self, v: usize) -> bool {
        !self.is_input(v) && !self.is_output(v)
    }

    pub fn bias_coord(&self, v: usize) -> Option<usize> {
        self.bias_coord[v]
    }

    pub fn coord(&self, i: usize) -> Coord {
        if i < self.edges.len() {
            Coord::Edge(i)
        } else {
            Coord::Bias(self.bias_owner[i - self.edges.len()])
        }
    }

    /// Human-readable name of a coordinate: `u->v` or `b[v]`.
    pub fn coord_label(&self, i: usize) -> String {
        match self.coord(i) {
            Coord::Edge(e) => {
                let (u, v) = self.edges[e];
                format!("{}->{}", self.ids[u], self.ids[v])
            }
            Coord::Bias(v) => format!("b[{}]", self.ids[v]),
        }
    }

    /// Position of input neuron `v` in the input vector.
    pub fn input_slot(&self, v: usize) -> Option<usize> {
        self.inputs.binary_search(&v).ok()
    }

    /// Maximum length (in edges) over all paths.
    pub fn depth(&self) -> usize {
        let mut longest = vec![0usize; self.num_neurons()];
        for v in 0..self.num_neurons() {
            longest[v] = self.incoming[v].iter().map(|&e| longest[self.edges[e].0] + 1).max().unwrap_or(0);
        }
        longest.into_iter().max().unwrap_or(0)
    }

    pub fn max_in_degree(&self) -> usize {
        self.incoming.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Neurons that may be rescaled: hidden ReLU, identity and (optionally) pooling neurons.
    pub fn rescalable(&self, v: usize, include_pool: bool) -> bool {
        self.is_hidden(v) && (include_pool || !self.activations[v].is_pool())
    }
}

/// `G^{->v}`: the sub-network of everything that reaches `v`, with `v` as its
/// only output. The activation of `v` is kept, so evaluating the sub-network
/// yields `v(θ, x)`.
pub fn subgraph_to(arch: &Architecture, v: &str) -> Result<Architecture> {
    let target = arch.neuron(v)?;
    let keep = ancestors(arch, target);
    let mut spec = ArchSpec::new();
    for u in 0..arch.num_neurons() {
        if keep[u] {
            spec.neurons.push((arch.ids[u].clone(), arch.activations[u]));
        }
    }
    for &(a, b) in &arch.edges {
        if keep[a] && keep[b] {
            spec.edges.push((arch.ids[a].clone(), arch.ids[b].clone()));
        }
    }
    Architecture::build(&spec, false)
}

/// Projects `θ` onto a sub-network produced by [`subgraph_to`].
pub fn restrict_params(arch: &Architecture, sub: &Architecture, theta: &ParamVector) -> Result<ParamVector> {
    check_params(arch, theta)?;
    let mut values = vec![0.0; sub.num_params()];
    for (i, value) in values.iter_mut().enumerate() {
        *value = match sub.coord(i) {
            Coord::Edge(e) => {
                let (a, b) = sub.edge(e);
                let (u, v) = (arch.neuron(sub.id(a))?, arch.neuron(sub.id(b))?);
                let edge = arch
                    .edge_index(u, v)
                    .ok_or_else(|| Error::UnknownNeuron(format!("{}->{}", sub.id(a), sub.id(b))))?;
                theta[edge]
            }
            Coord::Bias(v) => {
                let w = arch.neuron(sub.id(v))?;
                arch.bias_coord(w).map_or(0.0, |c| theta[c])
            }
        };
    }
    Ok(ParamVector(values))
}

fn ancestors(arch: &Architecture, target: usize) -> Vec<bool> {
    let mut keep = vec![false; arch.num_neurons()];
    keep[target] = true;
    for v in (0..=target).rev() {
        if keep[v] {
            for &e in arch.incoming(v) {
                keep[arch.edge(e).0] = true;
            }
        }
    }
    keep
}

/// Parameters bound to an architecture: edge weights then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Checks the length and that pooling neurons carry a zero bias.
    pub fn new(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        let theta = ParamVector(values);
        check_params(arch, &theta)?;
        for v in 0..arch.num_neurons() {
            if arch.activation(v).is_pool() {
                let c = arch.bias_coord(v).expect("pool neurons are not inputs");
                if theta.0[c] != 0.0 {
                    return Err(Error::NonZeroPoolBias(arch.id(v).to_string()));
                }
            }
        }
        Ok(theta)
    }

    pub fn zeros(arch: &Architecture) -> Self {
        ParamVector(vec![0.0; arch.num_params()])
    }

    /// Builds `θ` from named weights and biases; unlisted coordinates are zero.
    pub fn from_named(arch: &Architecture, weights: &[(&str, &str, f64)], biases: &[(&str, f64)]) -> Result<Self> {
        let mut values = vec![0.0; arch.num_params()];
        for &(u, v, w) in weights {
            let (a, b) = (arch.neuron(u)?, arch.neuron(v)?);
            let e = arch.edge_index(a, b).ok_or_else(|| Error::UnknownNeuron(format!("{u}->{v}")))?;
            values[e] = w;
        }
        for &(v, b) in biases {
            let c = arch.bias_coord(arch.neuron(v)?).ok_or_else(|| Error::UnknownNeuron(format!("b[{v}]")))?;
            values[c] = b;
        }
        Self::new(arch, values)
    }

    pub(crate) fn from_vec(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// New vector with `f` applied to every coordinate.
    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> Self {
        ParamVector(self.0.iter().enumerate().map(|(i, &x)| f(i, x)).collect())
    }

    /// `θ_{-i}`: the same vector with coordinate `i` zeroed.
    pub fn without(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v[i] = 0.0;
        ParamVector(v)
    }

    pub fn sup_distance(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_params(arch: &Architecture, theta: &ParamVector) -> Result<()> {
    if theta.len() != arch.num_params() {
        return Err(Error::ParamMismatch { expected: arch.num_params(), got: theta.len() });
    }
    Ok(())
}

pub(crate) fn check_input(arch: &Architecture, x: &[f64]) -> Result<()> {
    if x.len() != arch.inputs().len() {
        return Err(Error::DimensionMismatch { expected: arch.inputs().len(), got: x.len() });
    }
    Ok(())
}

/// Per-neuron values of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// `v(θ, x)` for every neuron, in topological order.
    pub values: Vec<f64>,
    /// Pre-activations (for pooling neurons, the selected contribution).
    pub pre: Vec<f64>,
    /// For pooling neurons, the incoming edge that won the selection.
    pub selected: Vec<Option<usize>>,
}

impl Trace {
    pub fn outputs(&self, arch: &Architecture) -> Vec<f64> {
        arch.outputs().iter().map(|&v| self.values[v]).collect()
    }
}

/// Realization `R_θ(x)` over the output neurons.
pub fn forward(arch: &Architecture, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(arch, theta, x)?.outputs(arch))
}

/// Forward pass keeping every neuron value.
pub fn forward_trace(arch: &Architecture, theta: &ParamVector, x: &[f64]) -> Result<Trace> {
    check_params(arch, theta)?;
    check_input(arch, x)?;
    let n = arch.num_neurons();
    let mut trace = Trace { values: vec![0.0; n], pre: vec![0.0; n], selected: vec![None; n] };
    let mut scratch = Vec::new();
    evaluate_into(arch, theta, x, &mut trace, &mut scratch);
    Ok(trace)
}

/// Core evaluation loop; buffers are reused across calls.
pub(crate) fn evaluate_into(
    arch: &Architecture,
    theta: &[f64],
    x: &[f64],
    trace: &mut Trace,
    scratch: &mut Vec<(f64, usize)>,
) {
    let mut next_input = 0;
    for v in 0..arch.num_neurons() {
        let bias = arch.bias_coord(v).map_or(0.0, |c| theta[c]);
        match arch.activation(v) {
            Activation::Input => {
                trace.values[v] = x[next_input];
                trace.pre[v] = x[next_input];
                next_input += 1;
            }
            Activation::Identity | Activation::Relu => {
                let mut pre = bias;
                for &e in arch.incoming(v) {
                    pre += trace.values[arch.edge(e).0] * theta[e];
                }
                trace.pre[v] = pre;
                trace.values[v] = if arch.activation(v) == Activation::Relu && pre <= 0.0 { 0.0 } else { pre };
            }
            Activation::Kpool(k) => {
                scratch.clear();
                scratch.extend(arch.incoming(v).iter().map(|&e| (bias + trace.values[arch.edge(e).0] * theta[e], e)));
                let (value, e) = kth_largest(scratch, k);
                trace.pre[v] = value;
                trace.values[v] = value;
                trace.selected[v] = Some(e);
            }
        }
    }
}

/// k-th largest entry; among equal values the earliest one wins.
pub(crate) fn kth_largest(items: &mut [(f64, usize)], k: usize) -> (f64, usize) {
    // stable sort keeps antecedent order among ties
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    items[k - 1]
}
