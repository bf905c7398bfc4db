//! Causal representation learning by swapping latent cause and effect
//! codes between paired samples.
//!
//! - [`graph`]: acyclicity penalty, DAG utilities, TPR/FDR/SHD.
//! - [`datagen`]: pendulum and flow structural causal models, vector
//!   observations, pairing, graph variants and the Gaussian counterexample.
//! - [`mic`]: MIC/TIC estimators with an exhaustive oracle.
//! - [`model`]: encoder, causal discovery layer, do-cause/do-effect swaps,
//!   losses, reverse-mode gradients and training.
//! - [`eval`]: latent matching, Pos/Neg metrics, F1, reports and the
//!   metric-adequacy study.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod mic;
pub mod model;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};

/// Dense row-by-column matrix used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;

pub use graph::{BinaryGraph, GraphRubrics, WeightedDigraph};
pub use mic::{CharacteristicMatrix, MicParams};
