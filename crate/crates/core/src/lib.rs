//! Training and evaluation library for time-gated (phased) LSTM cells over
//! irregularly sampled event sequences.
//!
//! The crate is organized bottom-up:
//!
//! - [`diffmath`]: dense arrays, a reverse-mode tape, and the
//!   finite-difference oracle that verifies it;
//! - [`cells`]: the LSTM step, the rhythmic time gate, and the gated step;
//! - [`network`]: models, seeded init, batched sequence forward, losses,
//!   update accounting, and weight files;
//! - [`tasks`]: seeded generators for the synthetic benchmarks and the
//!   newline-delimited dataset format;
//! - [`training`]: Adam, the training loop, evaluation, and reports;
//! - [`gradcheck`]: the end-to-end gradient verifier.
//!
//! Everything numeric is generic over [`real::Real`] (`f64` by default,
//! `f32` opt-in for speed runs).

pub mod cells;
pub mod diffmath;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod real;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
