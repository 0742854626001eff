//! Foveated model-observer image quality metrics.
//!
//! Detectability (d') varies across the visual field; this crate computes
//! per-eccentricity d' curves for foveated CHO and NPWE observers on
//! synthetic power-law noise, collapses them into single figures of merit
//! through several eccentricity weighting schemes, and cross-validates the
//! shorthand metrics against a foveated search model that replays fixations
//! and integrates likelihood ratios.

pub mod detectability;
pub mod error;
pub mod fft;
pub mod fit;
pub mod fsm;
pub mod io;
pub mod stimulus;
pub mod templates;
pub mod weighting;

pub use error::{Error, Result};
