//! duet: a dual-pathway audiovisual transformer for long-range text-to-video
//! retrieval, built at desk scale.
//!
//! Long videos are expensive to read frame-by-frame; their audio track is
//! cheap and covers the gaps between sparsely sampled frames. This crate
//! models that trade: a per-frame visual transformer exchanges information
//! with a per-timestep audio track through gated cross-attention in both
//! directions, and a text encoder maps queries into the same space for
//! retrieval.
//!
//! The crate is self-contained: dense-tensor numerics with reverse-mode
//! autodiff ([`tensor`]), video/audio/text embeddings ([`embed`]), the
//! attention stack ([`attention`]), contrastive training ([`training`]), an
//! analytic compute-cost model ([`cost`]), and a synthetic benchmark harness
//! with a CLI ([`harness`]).

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod cost;
pub mod embed;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use tensor::{Tape, Tensor, TensorError, TensorResult, Var};
