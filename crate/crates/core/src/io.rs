//! JSON network files and plain-text tables.
//!
//! ```json
//! {
//!   "neurons": [{"id": "x", "activation": "input"},
//!               {"id": "m", "activation": {"kpool": 1}}, ...],
//!   "edges":   [{"src": "x", "dst": "m", "weight": 1.5}, ...],
//!   "biases":  {"m": 0.0, ...}
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so `load ∘ save` is the
//! identity bit for bit. Missing biases default to zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{validate_architecture, Activation, ArchSpec, Architecture, ParamVector};
use crate::paths::Path as NetPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronEntry {
    pub id: String,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub src: String,
    pub dst: String,
    pub weight: f64,
}

/// On-disk form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub neurons: Vec<NeuronEntry>,
    pub edges: Vec<EdgeEntry>,
    #[serde(default)]
    pub biases: BTreeMap<String, f64>,
}

impl NetworkFile {
    pub fn from_network(arch: &Architecture, theta: &ParamVector) -> Result<Self> {
        crate::net::check_params(arch, theta)?;
        let neurons = (0..arch.num_neurons())
            .map(|v| NeuronEntry { id: arch.id(v).to_string(), activation: arch.activation(v) })
            .collect();
        let edges = arch
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(u, v))| EdgeEntry { src: arch.id(u).to_string(), dst: arch.id(v).to_string(), weight: theta[e] })
            .collect();
        let biases = (0..arch.num_neurons())
            .filter_map(|v| arch.bias_coord(v).map(|c| (arch.id(v).to_string(), theta[c])))
            .collect();
        Ok(Self { neurons, edges, biases })
    }

    /// Validates the graph and binds the weights to coordinates.
    pub fn to_network(&self) -> Result<(Architecture, ParamVector)> {
        let spec = ArchSpec {
            neurons: self.neurons.iter().map(|n| (n.id.clone(), n.activation)).collect(),
            edges: self.edges.iter().map(|e| (e.src.clone(), e.dst.clone())).collect(),
        };
        let arch = validate_architecture(&spec)?;
        let mut values = vec![0.0; arch.num_params()];
        for e in &self.edges {
            let (u, v) = (arch.neuron(&e.src)?, arch.neuron(&e.dst)?);
            let idx = arch.edge_index(u, v).expect("validated edge");
            values[idx] = e.weight;
        }
        for (id, &b) in &self.biases {
            let v = arch.neuron(id)?;
            let c = arch.bias_coord(v).ok_or_else(|| Error::Parse(format!("key `biases.{id}`: input neurons carry no bias")))?;
            values[c] = b;
        }
        let theta = ParamVector::new(&arch, values)?;
        Ok((arch, theta))
    }
}

/// Parses a network document.
pub fn parse_network(text: &str) -> Result<(Architecture, ParamVector)> {
    let file: NetworkFile = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
    file.to_network()
}

pub fn network_to_string(arch: &Architecture, theta: &ParamVector) -> Result<String> {
    let file = NetworkFile::from_network(arch, theta)?;
    let mut s = serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<(Architecture, ParamVector)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_network(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_network(path: impl AsRef<Path>, arch: &Architecture, theta: &ParamVector) -> Result<()> {
    let path = path.as_ref();
    let text = network_to_string(arch, theta)?;
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// One row per path: `index<TAB>path<TAB>value`.
pub fn path_table(arch: &Architecture, paths: &[NetPath], values: &[f64]) -> String {
    let mut out = String::new();
    for (i, (p, v)) in paths.iter().zip(values).enumerate() {
        let _ = writeln!(out, "{i}\t{}\t{v}", p.display(arch));
    }
    out
}
