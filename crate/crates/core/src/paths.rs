//! Exact path combinatorics: enumeration, the path-lifting `Φ(θ)`, the
//! path-activation vector `a(θ, x)` and the fixed incidence matrix `A`.
//!
//! Everything here materializes one entry per path, so it only scales to
//! small networks. It is the ground truth the fast routines in
//! [`crate::metrics`] and [`crate::pruning`] are checked against.
//!
//! Paths are kept in one canonical order: by end neuron, then start neuron,
//! then lexicographically by neuron sequence (positions in the topological
//! order).

use std::env;

use crate::error::{Error, Result};
use crate::net::{check_input, check_params, forward_trace, Activation, Architecture, ParamVector};

pub const DEFAULT_PATH_CAP: u128 = 1_000_000;

/// Environment variable overriding [`DEFAULT_PATH_CAP`].
pub const PATH_CAP_ENV: &str = "PATHLIFT_PATH_CAP";

pub fn default_path_cap() -> u128 {
    env::var(PATH_CAP_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_PATH_CAP)
}

/// Number of paths ending at `end` (or at any output neuron), by dynamic
/// programming over the topological order. Saturates at `u128::MAX`.
pub fn count_paths(arch: &Architecture, end: Option<usize>) -> u128 {
    let mut ending_at = vec![0u128; arch.num_neurons()];
    for v in 0..arch.num_neurons() {
        ending_at[v] = arch
            .incoming(v)
            .iter()
            .fold(1u128, |acc, &e| acc.saturating_add(ending_at[arch.edge(e).0]));
    }
    match end {
        Some(v) => ending_at[v],
        None => arch.outputs().iter().fold(0u128, |acc, &v| acc.saturating_add(ending_at[v])),
    }
}

/// A sequence of neurons linked by edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub neurons: Vec<usize>,
    pub edges: Vec<usize>,
}

impl Path {
    pub fn start(&self) -> usize {
        self.neurons[0]
    }

    pub fn end(&self) -> usize {
        *self.neurons.last().expect("paths are never empty")
    }

    /// Number of edges.
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Parameter coordinates the path goes through: its edges, plus the bias
    /// of its first neuron when that neuron is not an input.
    pub fn coords<'a>(&'a self, arch: &'a Architecture) -> impl Iterator<Item = usize> + 'a {
        self.edges.iter().copied().chain(arch.bias_coord(self.start()))
    }

    pub fn display(&self, arch: &Architecture) -> String {
        self.neurons.iter().map(|&v| arch.id(v)).collect::<Vec<_>>().join("->")
    }
}

/// All paths ending at `end` (or at every output), in canonical order.
pub fn enumerate_paths(arch: &Architecture, end: Option<&str>, cap: u128) -> Result<Vec<Path>> {
    let ends = match end {
        Some(id) => vec![arch.neuron(id)?],
        None => arch.outputs().to_vec(),
    };
    let count = ends.iter().fold(0u128, |acc, &v| acc.saturating_add(count_paths(arch, Some(v))));
    if count > cap {
        return Err(Error::PathExplosion { count, cap });
    }
    let mut paths = Vec::with_capacity(count as usize);
    for &v in &ends {
        let mut block = Vec::new();
        let mut rev_neurons = vec![v];
        let mut rev_edges = Vec::new();
        collect_backwards(arch, &mut rev_neurons, &mut rev_edges, &mut block);
        block.sort_by(|a: &Path, b: &Path| a.start().cmp(&b.start()).then_with(|| a.neurons.cmp(&b.neurons)));
        paths.extend(block);
    }
    Ok(paths)
}

fn collect_backwards(arch: &Architecture, rev_neurons: &mut Vec<usize>, rev_edges: &mut Vec<usize>, out: &mut Vec<Path>) {
    out.push(Path {
        neurons: rev_neurons.iter().rev().copied().collect(),
        edges: rev_edges.iter().rev().copied().collect(),
    });
    let head = *rev_neurons.last().expect("non-empty");
    for &e in arch.incoming(head) {
        rev_neurons.push(arch.edge(e).0);
        rev_edges.push(e);
        collect_backwards(arch, rev_neurons, rev_edges, out);
        rev_neurons.pop();
        rev_edges.pop();
    }
}

/// `Φ(θ)` in canonical path order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLifting {
    pub values: Vec<f64>,
    /// Whether each path starts at an input neuron (the `Φ^I` block).
    pub from_input: Vec<bool>,
    /// End neuron of each path.
    pub ends: Vec<usize>,
}

impl PathLifting {
    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn input_block(&self) -> Vec<f64> {
        self.block(true)
    }

    pub fn hidden_block(&self) -> Vec<f64> {
        self.block(false)
    }

    fn block(&self, from_input: bool) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.from_input)
            .filter(|(_, &f)| f == from_input)
            .map(|(&v, _)| v)
            .collect()
    }

    /// `‖Φ(θ) − Φ(θ′)‖₁`.
    pub fn distance_l1(&self, other: &PathLifting) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Per end neuron: (`‖ΔΦ^I‖₁`, `‖ΔΦ^H‖₁`) restricted to paths ending there.
    pub fn split_distance(&self, other: &PathLifting, end: usize) -> (f64, f64) {
        let mut split = (0.0, 0.0);
        for p in 0..self.values.len() {
            if self.ends[p] != end {
                continue;
            }
            let d = (self.values[p] - other.values[p]).abs();
            if self.from_input[p] {
                split.0 += d;
            } else {
                split.1 += d;
            }
        }
        split
    }
}

/// Binary path-activation vector `a(θ, x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationVector(pub Vec<bool>);

impl ActivationVector {
    pub fn as_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }
}

/// Rows are paths; each row holds a single one, in the column of its input
/// neuron or in the trailing bias column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    /// Column of the single one in each row.
    pub columns: Vec<usize>,
    pub num_inputs: usize,
}

impl IncidenceMatrix {
    pub fn bias_column(&self) -> usize {
        self.num_inputs
    }

    pub fn row(&self, p: usize) -> Vec<u8> {
        let mut row = vec![0u8; self.num_inputs + 1];
        row[self.columns[p]] = 1;
        row
    }

    pub fn dense(&self) -> Vec<Vec<u8>> {
        (0..self.columns.len()).map(|p| self.row(p)).collect()
    }

    /// `A (x; 1)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|&c| if c == self.num_inputs { 1.0 } else { x[c] }).collect()
    }
}

/// Enumerated paths of one architecture, reused across parameter vectors.
#[derive(Debug, Clone)]
pub struct PathOracle<'a> {
    arch: &'a Architecture,
    paths: Vec<Path>,
}

impl<'a> PathOracle<'a> {
    pub fn new(arch: &'a Architecture) -> Result<Self> {
        Self::with_cap(arch, default_path_cap())
    }

    pub fn with_cap(arch: &'a Architecture, cap: u128) -> Result<Self> {
        Ok(Self { arch, paths: enumerate_paths(arch, None, cap)? })
    }

    pub fn arch(&self) -> &Architecture {
        self.arch
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn lifting(&self, theta: &ParamVector) -> Result<PathLifting> {
        check_params(self.arch, theta)?;
        let arch = self.arch;
        let values = self
            .paths
            .iter()
            .map(|p| {
                let head = arch.bias_coord(p.start()).map_or(1.0, |c| theta[c]);
                p.edges.iter().fold(head, |acc, &e| acc * theta[e])
            })
            .collect();
        Ok(PathLifting {
            values,
            from_input: self.paths.iter().map(|p| arch.is_input(p.start())).collect(),
            ends: self.paths.iter().map(Path::end).collect(),
        })
    }

    pub fn activations(&self, theta: &ParamVector, x: &[f64]) -> Result<ActivationVector> {
        check_input(self.arch, x)?;
        let arch = self.arch;
        let trace = forward_trace(arch, theta, x)?;
        let neuron_on = |v: usize| arch.activation(v) != Activation::Relu || trace.pre[v] > 0.0;
        let edge_on = |e: usize| {
            let v = arch.edge(e).1;
            match arch.activation(v) {
                Activation::Kpool(_) => trace.selected[v] == Some(e),
                Activation::Relu => trace.pre[v] > 0.0,
                Activation::Identity | Activation::Input => true,
            }
        };
        Ok(ActivationVector(
            self.paths
                .iter()
                .map(|p| neuron_on(p.start()) && p.edges.iter().all(|&e| edge_on(e)))
                .collect(),
        ))
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        let arch = self.arch;
        let num_inputs = arch.inputs().len();
        IncidenceMatrix {
            columns: self
                .paths
                .iter()
                .map(|p| arch.input_slot(p.start()).unwrap_or(num_inputs))
                .collect(),
            num_inputs,
        }
    }

    /// `⟨Φ^{→v}(θ) ⊙ a^{→v}(θ, x), A^{→v}(x; 1)⟩` for every output `v`.
    pub fn linearized_output(&self, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        let phi = self.lifting(theta)?;
        let act = self.activations(theta, x)?;
        let ax = self.incidence().apply(x);
        let outputs = self.arch.outputs();
        let mut out = vec![0.0; outputs.len()];
        for p in 0..self.paths.len() {
            if act.0[p] {
                let slot = outputs.binary_search(&phi.ends[p]).expect("paths end at outputs");
                out[slot] += phi.values[p] * ax[p];
            }
        }
        Ok(out)
    }

    /// `Σ_{p ∋ i} |Φ_p(θ)|` for every coordinate `i`.
    pub fn path_mass_per_coord(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let phi = self.lifting(theta)?;
        let mut mass = vec![0.0; self.arch.num_params()];
        for (p, path) in self.paths.iter().enumerate() {
            let m = phi.values[p].abs();
            for c in path.coords(self.arch) {
                mass[c] += m;
            }
        }
        Ok(mass)
    }
}

pub fn path_lifting(arch: &Architecture, theta: &ParamVector) -> Result<PathLifting> {
    PathOracle::new(arch)?.lifting(theta)
}

pub fn path_activations(arch: &Architecture, theta: &ParamVector, x: &[f64]) -> Result<ActivationVector> {
    PathOracle::new(arch)?.activations(theta, x)
}

pub fn incidence_matrix(arch: &Architecture) -> Result<IncidenceMatrix> {
    Ok(PathOracle::new(arch)?.incidence())
}

pub fn linearized_output(arch: &Architecture, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    PathOracle::new(arch)?.linearized_output(theta, x)
}
