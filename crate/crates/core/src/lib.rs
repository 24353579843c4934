//! Full-vocabulary output extraction, image recovery and auditing for
//! language-model APIs that expose top-k log-probabilities and a logit bias.
//!
//! A softmax output layer confines every next-token distribution to a
//! `d`-dimensional subspace of the `v`-dimensional log-ratio space. This
//! crate extracts full distributions through restricted APIs
//! ([`extraction`]), recovers that subspace and uses it for cheap
//! extraction, attribution and update auditing ([`image`]), and ships a
//! simulated model with known ground truth to test against ([`mock`]).

pub mod algebra;
mod error;
pub mod extraction;
pub mod image;
pub mod io;
pub mod mock;

pub use error::{Error, ErrorClass, Result};
pub use extraction::{ApiSession, BiasSpec, Capabilities, TopKApi, TopKResponse};

/// Token identifier: an index into the vocabulary.
pub type TokenId = u32;
