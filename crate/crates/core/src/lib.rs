//! Deep clustering with a fusion autoencoder.
//!
//! A variational autoencoder whose decoder is also trained adversarially
//! against a discriminator, followed by a dense embedding head trained to
//! match pairwise t-kernel similarities of the latent means, and k-means on
//! the resulting embeddings.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datasets;
mod error;
pub mod fae;
pub mod head;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;
