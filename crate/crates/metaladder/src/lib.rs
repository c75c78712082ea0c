//! Data-engineering toolchain for analogical-reasoning math training sets.
//!
//! The pipeline: ingest problem corpora, synthesize reflective annotations
//! (strategy, analogous problem, analogous solution) through a teacher
//! endpoint, compose instruction-tuning datasets in the metaladder family
//! of response grammars, run answer-verified self-evolution rounds, drive
//! full and shortcut student inference, and grade Pass@1 accuracy — all
//! testable offline against the bundled deterministic mock endpoint.
//!
//! Batch grading and similarity run data-parallel under the default
//! `parallel` feature (rayon); disable default features for the
//! sequential fallback.

pub mod annotator;
pub mod cli;
pub mod client;
pub mod composer;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod evolve;
pub mod grader;
pub mod inference;
pub mod mockllm;
pub mod prompts;
pub mod similarity;

pub use error::{Error, Result};
