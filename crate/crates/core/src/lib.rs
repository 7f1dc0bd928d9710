#![deny(unsafe_code)]
//! Workbench for studying what leaks through "secure" federated-learning
//! protocols. The crate simulates vertical and horizontal linear-model
//! training plus gradient-boosted trees with encryption modeled as opaque
//! envelopes, then runs transcript-level attacks that reconstruct private
//! training data and hidden tree thresholds, and measures how well they do.
//!
//! Module map:
//! - [`recovery`]: solves A A^T = C with partial known entries and an
//!   optional linear view; the numerical core every other attack feeds.
//! - [`protocols`]: deterministic protocol simulators producing per-party
//!   transcripts with envelope-sealed ciphertext stand-ins.
//! - [`attacks`]: transcript-only reconstruction pipelines for the
//!   regression protocols plus their leakage-rate formulas.
//! - [`tree`]: gradient-boosted tree training across parties and the
//!   inference-query attack that steals hidden split thresholds.
//! - [`workbench`]: datasets, scenario configs, report files, and the glue
//!   that runs train-attack-evaluate end to end.

pub mod attacks;
pub mod error;
pub mod linalg;
pub mod protocols;
pub mod recovery;
pub mod tree;
pub mod workbench;

pub use error::{Error, Result};
