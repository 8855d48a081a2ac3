//! Path-lifting toolkit for DAG-ReLU networks with max-pooling.
//!
//! The crate evaluates networks described as directed acyclic graphs,
//! enumerates their paths, computes path-norms and path-metrics, checks the
//! path-metric Lipschitz bound and implements path-magnitude pruning.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod fixtures;
pub mod io;
pub mod lipschitz;
pub mod net;
pub mod metrics;
pub mod paths;
pub mod pruning;
pub mod sample;
pub mod transforms;

pub use error::{Error, Result};
pub use net::{forward, forward_trace, validate_architecture, Activation, ArchSpec, Architecture, ParamVector};
pub use paths::{PathLifting, PathOracle};
