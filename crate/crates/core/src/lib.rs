//! Communication-efficient l0-penalized least squares.
//!
//! The single-machine solver lives in [`sdar`]; [`distributed`] runs the
//! same iteration over a simulated cluster, [`tuning`] sweeps the sparsity
//! level under HBIC, and [`bench`] drives replicated experiments.

pub mod bench;
pub mod config;
pub mod data;
pub mod distributed;
pub mod error;
pub mod linalg;
pub mod sdar;
pub mod sparse;
pub mod tuning;

pub use data::{Dataset, GroundTruth, SyntheticSpec};
pub use error::{Error, Result};
pub use linalg::DenseMatrix;
pub use sdar::{esdar_fit, FitOutput, IterState, SolverConfig};
pub use sparse::SparseCoefficients;
