//! Continuous-time dynamic graph learning.
//!
//! The crate bundles a transformer-based sequence model over node interaction
//! histories, a non-trainable edge-memory baseline, and the evaluation
//! protocol (chronological splits, three negative-sampling strategies,
//! AP/AUC-ROC, diagnostic analyses), all on top of a small reverse-mode
//! differentiation core.

pub mod autodiff;
pub mod config;
pub mod edgebank;
pub mod encoding;
pub mod eval;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod sequence;
pub mod error;

pub use error::CtdgError;
