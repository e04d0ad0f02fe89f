//! Feature-grounded word embeddings and module-swap experiments.
//!
//! The pipeline: filter a vocabulary and encode per-token knowledge features
//! ([`features`]), pretrain an embedding against them through fixed
//! token-specific saturation operators ([`saturation`], [`grounding`]), plug
//! the result into tiny encoder classifiers ([`classifier`]), and measure what
//! happens when trained blocks are exchanged between models ([`swap`]).

pub mod error;
pub mod exec;
pub mod features;
pub mod classifier;
pub mod grounding;
pub mod io;
pub mod numerics;
pub mod rng;
pub mod saturation;
pub mod swap;

pub use error::{Error, ErrorClass, Result};
pub use exec::Exec;
