//! User-level membership auditing for small text-generation models.
//!
//! The crate trains recurrent next-word and encoder-decoder models, exposes
//! them through a rank-only black-box query surface, and decides whether a
//! user's text was part of a model's training set using shadow models,
//! rank-histogram features and a linear audit classifier.

pub mod analysis;
pub mod audit;
pub mod blackbox;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod textgen;
pub mod train;

pub use error::{Error, Result};
