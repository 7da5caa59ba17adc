//! Dense tensors, deterministic pseudorandomness, and symmetric-matrix
//! linear algebra.

mod linalg;
mod rng;
mod tensor;

pub use linalg::{eigh, frobenius, symmetrize, topk_truncate, EighResult, EIGH_TOL};
pub use rng::Rng;
pub use tensor::{dot, outer, Tensor};
