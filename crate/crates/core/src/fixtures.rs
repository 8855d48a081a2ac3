//! Small hand-built networks used by examples, tests and the CLI.

use crate::net::{validate_architecture, Activation, ArchSpec, Architecture, ParamVector};

/// One input, two ReLU neurons `h1`, `h2`, one output: `in -> {h1, h2} -> out`.
pub fn diamond() -> Architecture {
    let spec = ArchSpec::new()
        .neuron("in", Activation::Input)
        .neuron("h1", Activation::Relu)
        .neuron("h2", Activation::Relu)
        .neuron("out", Activation::Identity)
        .edge("in", "h1")
        .edge("in", "h2")
        .edge("h1", "out")
        .edge("h2", "out");
    validate_architecture(&spec).expect("diamond is well formed")
}

/// Weights `(in->h1, in->h2, h1->out, h2->out) = (1, -2, 3, 1)`, zero biases.
pub fn diamond_params() -> ParamVector {
    diamond_with(&[1.0, -2.0, 3.0, 1.0])
}

pub fn diamond_with(weights: &[f64; 4]) -> ParamVector {
    let arch = diamond();
    let mut values = vec![0.0; arch.num_params()];
    values[..4].copy_from_slice(weights);
    ParamVector::new(&arch, values).expect("diamond has 7 coordinates")
}

/// Two inputs feeding a 1-max-pool neuron `m`, followed by `m -> out`.
pub fn pool_pair() -> Architecture {
    let spec = ArchSpec::new()
        .neuron("a", Activation::Input)
        .neuron("b", Activation::Input)
        .neuron("m", Activation::Kpool(1))
        .neuron("out", Activation::Identity)
        .edge("a", "m")
        .edge("b", "m")
        .edge("m", "out");
    validate_architecture(&spec).expect("pool pair is well formed")
}

/// `a->m = wa`, `b->m = wb`, `m->out = 1`.
pub fn pool_params(wa: f64, wb: f64) -> ParamVector {
    let arch = pool_pair();
    ParamVector::from_named(&arch, &[("a", "m", wa), ("b", "m", wb), ("m", "out", 1.0)], &[])
        .expect("pool pair coordinates")
}

/// `v0 -> v1 -> ... -> vd` with ReLU hidden neurons.
pub fn chain(len: usize) -> Architecture {
    assert!(len >= 1, "a chain needs at least one edge");
    let mut spec = ArchSpec::new().neuron("v0", Activation::Input);
    for i in 1..=len {
        let act = if i == len { Activation::Identity } else { Activation::Relu };
        spec = spec.neuron(format!("v{i}"), act).edge(format!("v{}", i - 1), format!("v{i}"));
    }
    validate_architecture(&spec).expect("chain is well formed")
}

/// Fully connected layered network; `widths[0]` inputs, ReLU hidden layers,
/// identity outputs. Neuron ids are `l{layer}_{index}` with zero padding so
/// that the stored order is layer by layer.
pub fn layered(widths: &[usize]) -> Architecture {
    assert!(widths.len() >= 2);
    let last = widths.len() - 1;
    let mut spec = ArchSpec::new();
    for (l, &w) in widths.iter().enumerate() {
        for i in 0..w {
            let act = match l {
                0 => Activation::Input,
                l if l == last => Activation::Identity,
                _ => Activation::Relu,
            };
            spec.neurons.push((layer_id(l, i), act));
        }
    }
    for l in 1..widths.len() {
        for j in 0..widths[l] {
            for i in 0..widths[l - 1] {
                spec.edges.push((layer_id(l - 1, i), layer_id(l, j)));
            }
        }
    }
    validate_architecture(&spec).expect("layered network is well formed")
}

pub fn layer_id(layer: usize, index: usize) -> String {
    format!("l{layer}_{index:05}")
}
