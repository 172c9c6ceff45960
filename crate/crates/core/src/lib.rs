//! Prototype-based pooling and cross-batch metric learning.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense matrices, SPD solves, ridge fits, reverse-mode gradients.
//! - [`transport`]: exact small-instance optimal transport with dual certificates.
//! - [`pooling`]: hard and entropy-smoothed histogram operators, GAP, prototype
//!   convex combinations and the GAP/PCC discrepancy check.
//! - [`prototypes`]: greedy k-center covers, recursive prototype estimation with
//!   forgetting, and the two-half split/combine identity.
//! - [`loss`]: contrastive loss, the cross-batch regularizer and their mix.
//! - [`harness`]: synthetic parts data, a toy encoder, SGD training, retrieval
//!   metrics and the cross-class evaluation protocol.
//! - [`verify`]: the acceptance checks, runnable from tests or the CLI.

// NaN-rejecting guards are written as `!(x >= 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod loss;
pub mod pooling;
pub mod prototypes;
pub mod tensor;
pub mod transport;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use tensor::Mat;
