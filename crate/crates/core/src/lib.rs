//! flowsentry classifies network flow traffic by learning over both the
//! communication graph and the temporal order of flows.
//!
//! The pipeline: flow CSVs are cleaned, encoded, and reduced to a compact
//! feature set; sliding windows over the event stream become per-window
//! traffic graphs; a graph-convolutional encoder produces per-entity
//! embeddings, a bidirectional LSTM reads the window's event sequence, and
//! multi-head self-attention weighs the timeline before classification.
//! Everything runs on a self-contained f64 autodiff tape; no external ML
//! runtime is involved.

pub mod autograd;
pub mod config;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod train;
pub mod schema;

pub use error::{Error, Result};
