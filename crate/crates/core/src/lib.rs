//! Efficient quadratic neurons for convolutional networks.
//!
//! The quadratic neuron computes `x^T M x + w^T x + b`. Its matrix is
//! symmetrized, eigendecomposed, and truncated to the k largest-magnitude
//! eigenpairs, so the quadratic term costs `(k+1)n + 2k` multiply-accumulates
//! instead of `n^2`. The k intermediate products `f = Q^T x` are emitted as
//! extra output channels, which lets a convolutional layer reach its channel
//! budget with fewer neurons.

pub mod costmodel;
pub mod data;
pub mod error;
pub mod network;
pub mod neurons;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
