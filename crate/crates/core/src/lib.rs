//! Out-of-distribution gated defense against black-box model extraction.
//!
//! Queries are embedded by a frozen feature extractor and scored with a
//! class-conditional Mahalanobis detector. In-distribution queries get the
//! victim's prediction; out-of-distribution queries get a random confident
//! prediction with probability `p`. The crate also ships desk-scale
//! extraction attackers and the harness that measures clone accuracy against
//! benign accuracy.

// `!(x > 0.0)` is the NaN-rejecting form used throughout the validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gate;
pub mod attack;
pub mod evalkit;
pub mod datagen;
pub mod io;
pub mod nets;
pub mod numkit;
pub mod ood;

pub use error::{Error, Result};
pub use numkit::{Matrix, RngStream};
