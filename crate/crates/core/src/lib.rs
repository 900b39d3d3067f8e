//! Multi-source heterogeneous information network embedding trainer.
//!
//! Trains knowledge-graph-style embeddings over a graph partitioned into
//! subgraph sources, balancing training samples across sources and
//! optionally aligning per-source embedding distributions with a distance
//! measure (KL / JS / MMD) or an adversarial domain classifier. Includes an
//! inductive link-prediction and node-classification evaluation harness.

pub mod alignment;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nn;
pub mod sampling;
pub mod scoring;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
