//! A categorical-prior variational autoencoder, from the tape up.
//!
//! The crate builds everything it needs in plain Rust: reverse-mode autodiff
//! over f64 tensors, the encoder/decoder networks, the training objective
//! with its information-maximization term, Adam, IDX data loading, kernel
//! density evaluation, and a binary checkpoint format. Everything is
//! single-threaded and seeded, so a (seed, config) pair reproduces a run
//! bit for bit.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objective;
pub mod train;

pub use autodiff::{Graph, NodeId, Rng, Tensor};
pub use error::{Error, Result};
