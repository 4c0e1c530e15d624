//! Federated lineage classification over monthly, per-country data shards.
//!
//! Each country trains a local feed-forward network on its own shard; only
//! weights leave the client. Every month the server merges local weights
//! into a global model, and each local model restarts from a blend of its
//! previous weights and the global ones.

pub mod checkpoint;
pub mod datagen;
pub mod encode;
pub mod error;
pub mod fed;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod partition;
pub mod seeds;
pub mod tsv;

pub use error::{Error, Result};
