//! Concept-learning dual VAE toolkit.
//!
//! The crate is organised around the pipeline it supports:
//!
//! - [`synthgen`] samples labelled data from an anti-causal latent model with
//!   known ground truth, checks the heterogeneity assumptions and offers exact
//!   evidence oracles for tractable instances.
//! - [`model`] holds the trainable parameters: a prediction encoder, a
//!   label-conditioned concept encoder sharing its style weights, one decoder
//!   `f = f' ∘ B`, a linear classifier `ψ = ψ' ∘ C` and the two priors.
//! - [`objectives`] computes both evidence lower bounds, the KL terms and the
//!   group-sparsity penalty coupling decoder and classifier columns.
//! - [`trainer`] optimises the combined objective under a named training mode.
//! - [`evalkit`] measures alignment with ground truth, encoder agreement,
//!   support recovery and prediction quality.
//! - [`interpret`] produces latent traversals and global/local weight reports.

pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod interpret;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
