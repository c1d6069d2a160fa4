//! Synthetic prediction worlds with known ground truth, and an exact
//! decomposition of prediction error into model-approximation,
//! target-measurement and feature-measurement gains plus irreducible
//! aleatoric noise.

pub mod cli;
pub mod decomp;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod rng;
pub mod stats;
pub mod world;
