//! Seeded random networks, parameters and inputs for property checks,
//! plus the large fixed-shape networks used for scale tests.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::net::{validate_architecture, Activation, ArchSpec, Architecture, Coord, ParamVector};

/// Shape of the random DAGs drawn by [`random_architecture`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DagShape {
    /// Number of neuron layers, input and output included (at least 2).
    pub max_layers: usize,
    pub max_width: usize,
    /// Probability of each edge between consecutive layers.
    pub edge_prob: f64,
    /// Probability of each edge skipping at least one layer.
    pub skip_prob: f64,
    pub pool_prob: f64,
    pub identity_prob: f64,
}

impl Default for DagShape {
    fn default() -> Self {
        Self { max_layers: 5, max_width: 6, edge_prob: 0.6, skip_prob: 0.1, pool_prob: 0.25, identity_prob: 0.15 }
    }
}

/// Layered DAG with random widths, random edges (every non-input neuron has
/// an antecedent, every hidden neuron a successor), skip connections and a
/// mix of ReLU, identity and k-max-pool hidden neurons.
pub fn random_architecture<R: Rng>(rng: &mut R, shape: &DagShape) -> Architecture {
    let n_layers = rng.random_range(2..=shape.max_layers.max(2));
    let widths: Vec<usize> = (0..n_layers).map(|_| rng.random_range(1..=shape.max_width.max(1))).collect();
    let id = |l: usize, i: usize| format!("n{l}_{i}");
    let mut edges: Vec<(usize, usize, usize, usize)> = Vec::new();
    for l in 1..n_layers {
        for j in 0..widths[l] {
            let mut has_parent = false;
            for i in 0..widths[l - 1] {
                if rng.random_bool(shape.edge_prob) {
                    edges.push((l - 1, i, l, j));
                    has_parent = true;
                }
            }
            if !has_parent {
                edges.push((l - 1, rng.random_range(0..widths[l - 1]), l, j));
            }
            for src in 0..l.saturating_sub(1) {
                for i in 0..widths[src] {
                    if rng.random_bool(shape.skip_prob) {
                        edges.push((src, i, l, j));
                    }
                }
            }
        }
    }
    for l in 1..n_layers.saturating_sub(1) {
        for i in 0..widths[l] {
            if !edges.iter().any(|&(sl, si, _, _)| sl == l && si == i) {
                edges.push((l, i, l + 1, rng.random_range(0..widths[l + 1])));
            }
        }
    }
    let mut spec = ArchSpec::new();
    for (l, &w) in widths.iter().enumerate() {
        for i in 0..w {
            let act = if l == 0 {
                Activation::Input
            } else if l == n_layers - 1 {
                Activation::Identity
            } else {
                let arity = edges.iter().filter(|&&(_, _, dl, di)| dl == l && di == i).count();
                let u: f64 = rng.random();
                if u < shape.pool_prob {
                    Activation::Kpool(rng.random_range(1..=arity))
                } else if u < shape.pool_prob + shape.identity_prob {
                    Activation::Identity
                } else {
                    Activation::Relu
                }
            };
            spec.neurons.push((id(l, i), act));
        }
    }
    for &(sl, si, dl, di) in &edges {
        spec.edges.push((id(sl, si), id(dl, di)));
    }
    validate_architecture(&spec).expect("generated DAG is well formed")
}

/// Range of the magnitudes drawn by [`random_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min_abs: f64,
    pub max_abs: f64,
    /// Probability that a bias is nonzero.
    pub bias_prob: f64,
}

impl Default for ParamRange {
    fn default() -> Self {
        Self { min_abs: 0.1, max_abs: 1.5, bias_prob: 0.7 }
    }
}

/// Random signs, magnitudes in `[min_abs, max_abs]`, zero pool biases.
pub fn random_params<R: Rng>(rng: &mut R, arch: &Architecture, range: &ParamRange) -> ParamVector {
    let mut values = vec![0.0; arch.num_params()];
    for value in values.iter_mut().take(arch.num_edges()) {
        *value = signed(rng, range);
    }
    for v in 0..arch.num_neurons() {
        if let Some(c) = arch.bias_coord(v) {
            if !arch.activation(v).is_pool() && rng.random_bool(range.bias_prob) {
                values[c] = signed(rng, range);
            }
        }
    }
    ParamVector::new(arch, values).expect("pool biases are zero")
}

fn signed<R: Rng>(rng: &mut R, range: &ParamRange) -> f64 {
    let m = rng.random_range(range.min_abs..=range.max_abs);
    if rng.random_bool(0.5) {
        m
    } else {
        -m
    }
}

/// A second parameter vector with `θ_i θ′_i ≥ 0` everywhere: each coordinate
/// keeps its sign with a new magnitude, or is zeroed with probability
/// `zero_prob`.
pub fn same_sign_partner<R: Rng>(rng: &mut R, arch: &Architecture, theta: &ParamVector, range: &ParamRange, zero_prob: f64) -> ParamVector {
    let values = theta
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let pool_bias = matches!(arch.coord(i), Coord::Bias(v) if arch.activation(v).is_pool());
            if x == 0.0 || pool_bias || rng.random_bool(zero_prob) {
                0.0
            } else {
                x.signum() * rng.random_range(range.min_abs..=range.max_abs)
            }
        })
        .collect();
    ParamVector::new(arch, values).expect("pool biases stay zero")
}

/// Uniform input in `[−scale, scale]^d`.
pub fn random_input<R: Rng>(rng: &mut R, arch: &Architecture, scale: f64) -> Vec<f64> {
    (0..arch.inputs().len()).map(|_| rng.random_range(-scale..=scale)).collect()
}

/// Random nonempty subset of `0..n` given as a mask drop list.
pub fn random_subset<R: Rng>(rng: &mut R, n: usize, prob: f64) -> Vec<usize> {
    (0..n).filter(|_| rng.random_bool(prob)).collect()
}

/// One element of a slice.
pub fn pick<'a, R: Rng, T>(rng: &mut R, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("non-empty")
}

/// Convolutional DAG on a `side × side` single-channel image:
/// 3×3 conv to `c1` ReLU channels, 2×2 max-pool, 3×3 conv to `c2` ReLU
/// channels, dense layer to `classes` outputs. Weights are not shared: each
/// edge is its own coordinate.
pub fn cnn(side: usize, c1: usize, c2: usize, classes: usize) -> Architecture {
    let mut spec = ArchSpec::new();
    let s1 = side - 2;
    let p = s1 / 2;
    let s2 = p - 2;
    for r in 0..side {
        for c in 0..side {
            spec.neurons.push((format!("a_{r:03}_{c:03}"), Activation::Input));
        }
    }
    for ch in 0..c1 {
        for r in 0..s1 {
            for c in 0..s1 {
                let me = format!("b_{ch:02}_{r:03}_{c:03}");
                spec.neurons.push((me.clone(), Activation::Relu));
                for dr in 0..3 {
                    for dc in 0..3 {
                        spec.edges.push((format!("a_{:03}_{:03}", r + dr, c + dc), me.clone()));
                    }
                }
            }
        }
    }
    for ch in 0..c1 {
        for r in 0..p {
            for c in 0..p {
                let me = format!("c_{ch:02}_{r:03}_{c:03}");
                spec.neurons.push((me.clone(), Activation::Kpool(1)));
                for dr in 0..2 {
                    for dc in 0..2 {
                        spec.edges.push((format!("b_{ch:02}_{:03}_{:03}", 2 * r + dr, 2 * c + dc), me.clone()));
                    }
                }
            }
        }
    }
    for ch in 0..c2 {
        for r in 0..s2 {
            for c in 0..s2 {
                let me = format!("d_{ch:02}_{r:03}_{c:03}");
                spec.neurons.push((me.clone(), Activation::Relu));
                for src in 0..c1 {
                    for dr in 0..3 {
                        for dc in 0..3 {
                            spec.edges.push((format!("c_{src:02}_{:03}_{:03}", r + dr, c + dc), me.clone()));
                        }
                    }
                }
            }
        }
    }
    for k in 0..classes {
        let me = format!("e_{k:02}");
        spec.neurons.push((me.clone(), Activation::Identity));
        for ch in 0..c2 {
            for r in 0..s2 {
                for c in 0..s2 {
                    spec.edges.push((format!("d_{ch:02}_{r:03}_{c:03}"), me.clone()));
                }
            }
        }
    }
    validate_architecture(&spec).expect("cnn is well formed")
}
