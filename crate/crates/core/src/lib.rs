//! Probing agent activations for latent world-model structure: trajectory
//! datasets, synthetic generators, linear and MLP probes, bootstrap and
//! permutation statistics, EDMD Koopman estimation and descriptive analyses.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod koopman;
pub mod linalg;
pub mod pipeline;
pub mod plot;
pub mod probes;
pub mod rng;
pub mod stats;
pub mod synth;
