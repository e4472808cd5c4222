//! Layerwise injectivity diagnostics for finite point clouds of hidden
//! states: nearest-neighbor margins, co-Lipschitz ratios, exact and near
//! collisions, activation quantization safety, and bootstrap intervals.

pub mod bootstrap;
pub mod collision;
pub mod emit;
pub mod error;
pub mod metrics;
pub mod quant;
pub mod report;
pub mod rng;
pub mod robust;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use metrics::Points;
pub use store::{Matrix, TokenSet};
