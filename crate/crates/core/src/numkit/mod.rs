//! Dense linear algebra and deterministic randomness.

mod chol;
mod matrix;
mod rng;

pub use chol::{backward_substitute, cholesky, forward_substitute, solve_chol};
pub use matrix::{dot, Matrix};
pub(crate) use matrix::{gemm_nn, gemm_nt, gemm_tn};
pub use rng::{mix64, stream_key, DrawKind, RngStream};
