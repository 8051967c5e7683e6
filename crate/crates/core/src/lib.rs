//! Training engine for discrete-time leaky integrate-and-fire (LIF) spiking
//! networks using surrogate-gradient backpropagation through time.
//!
//! The backward pass can include or omit the temporal dependency that the
//! hard reset `(1 - S[t])` introduces between consecutive membrane
//! potentials. Everything is hand-derived; there is no autodiff.
//!
//! Module map:
//!
//! - [`snn`]: domain types and the forward simulation.
//! - [`gradients`]: Van Rossum loss, surrogate primitives, BPTT.
//! - [`gradcheck`]: a fully smoothed model checked against finite differences.
//! - [`data`]: spike-train generators and the IDX (MNIST) reader.
//! - [`train`]: SGD loops, the single-neuron experiment, sweeps, classifier.
//! - [`checkpoint`]: versioned text checkpoints of network weights.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradients;
pub mod matrix;
pub mod snn;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
