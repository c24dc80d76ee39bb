//! Dataset handling, defense assembly, attack archives, and the
//! evaluation protocol around the glimpse reconstruction core.
//!
//! The flow mirrors how the pieces are used: ingest or synthesize a
//! dataset, train the models, generate attack archives once, then
//! score defense modes against those archives and render reports.

pub mod archive;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalloop;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
