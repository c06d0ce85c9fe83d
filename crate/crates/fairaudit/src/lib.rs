//! Fairness auditing for LLM-backed library reference services.
//!
//! Pipeline: synthesize a demographically balanced patron cohort, generate
//! reference-question email responses from a model (or a deterministic mock),
//! then audit the response corpus in two phases — cross-validated classifiers
//! that try to recover patron demographics from the text, and an unpenalized
//! multinomial model whose coefficients localize any detected signal to
//! specific terms. Multiple audited models can be compared by consensus
//! clustering.

pub mod charts;
pub mod cli;
pub mod config;
pub mod consensus;
pub mod corpus;
pub mod error;
pub mod features;
pub mod gateway;
pub mod learners;
pub mod parallel;
pub mod persona;
pub mod query;
pub mod stats;

pub use error::{AuditError, Result};
