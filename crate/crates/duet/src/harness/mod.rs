//! Synthetic benchmark, retrieval metrics, ablation drivers, and artifact
//! export.

pub mod ablate;
pub mod dataset;
pub mod io;
pub mod metrics;
pub mod saliency;
