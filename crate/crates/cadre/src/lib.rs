//! Causal discovery and representation learning for noisy time series.
//!
//! The crate simulates sequences from a structural equation model with
//! latent autoregressive drivers and a causal DAG over the observations,
//! fits a flow-prior variational autoencoder under sparsity and DAG
//! penalties, reads causal graphs out of the fitted Jacobians, and scores
//! recovery with structure and representation metrics. The `cadre` binary
//! exposes the pipeline as `generate | train | extract | evaluate |
//! experiment | ingest | plot`.

pub mod archive;
pub mod config;
pub mod dgp;
pub mod error;
pub mod graphs;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod plot;
pub mod rng;
pub mod train;
