//! Shuffled autoregressive motion interpolation.
//!
//! Frames between a start pose and an end pose are generated in an arbitrary
//! order whose conditioning sets form a DAG. The DAG is turned into a
//! flexible dependency attention mask that lets a single GPT-style temporal
//! decoder carry out every generation step.

pub mod cli;
pub mod dataio;
pub mod depgraph;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod nn;
pub mod training;

pub use error::{Result, SarError};
