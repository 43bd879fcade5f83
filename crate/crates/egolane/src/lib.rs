//! Ego-lane identification from streaming lane-marking match quality.
//!
//! The pipeline: a synthetic scenario simulator stands in for recorded
//! drives; a multi-hypothesis tracker follows one candidate pose per lane
//! and scores how well perceived lane markings match the map under each
//! hypothesis; a gradient-boosted classifier turns score histories into
//! per-hypothesis probabilities; a trigger function decides at each time
//! step whether to commit to the most probable hypothesis or wait; and the
//! trigger parameters are tuned by two-objective optimization of
//! availability cost against accuracy cost.
//!
//! See the crate examples for runnable entry points into each stage, and
//! the `egolane` binary for the file-based pipeline.

pub mod classifier;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod mmq;
pub mod moo;
pub mod sim;
pub mod tracker;
pub mod trigger;
pub mod util;

pub mod tree;

pub use error::{Error, Result};
