//! Contrastive multimodal time-series training at desk scale.
//!
//! The crate generates synthetic paired audio-visual corpora with
//! controllable extractor-family structure, trains a small weakly
//! supervised parsing model with contrastive objectives over exact
//! tape-based gradients, evaluates alignment and parsing metrics against
//! brute-force-checked definitions, and compares feature-extractor
//! collocations under a traversal protocol and a fast overfitting-based
//! upper-bound protocol.

pub mod accept;
pub mod cli;
pub mod config;
pub mod data;
pub mod datagen;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod numgrad;
pub mod metrics;
pub mod model;
pub mod seeding;
pub mod selector;
pub mod trainer;

pub use error::{Error, Result};
