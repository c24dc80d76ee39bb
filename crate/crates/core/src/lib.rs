//! Core algorithms for a foveal-peripheral glimpse defense pipeline.
//!
//! The crate is organized around the stages of the pipeline:
//!
//! - [`sampling`]: grid partitioning and stochastic foveal-peripheral
//!   retention masks.
//! - [`recon`]: the recurrent predictive reconstructor that integrates
//!   glimpses into a full-resolution rendition, plus its hybrid
//!   MSE/SSIM training loss.
//! - [`saccade`]: the advantage actor-critic controller that places the
//!   fovea, with no-repeat action masking.
//! - [`attacks`]: L-inf bounded adversarial example generation (momentum
//!   FGSM, SPSA, PGD) used to evaluate the defense.
//! - [`classify`]: classifier adapters and the small reference models
//!   used for desk-scale experiments.
//! - [`nn`]: the deterministic f64 neural-network substrate everything
//!   above is built on.
//!
//! All randomness is drawn from counter-based ChaCha substreams so that
//! identical seeds reproduce identical results bit for bit on any host.

pub mod attacks;
pub mod checkpoint;
pub mod classify;
pub mod error;
pub mod img;
pub mod nn;
pub mod recon;
pub mod rng;
pub mod saccade;
pub mod sampling;

pub use error::{Error, Result};
pub use img::Image;
