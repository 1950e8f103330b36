//! Controllable accent-intensity speech synthesis at desk scale.
//!
//! The pipeline runs in two stages. A ranking function is learned over
//! prosodic functionals of paired native (L1) and accented (L2) renditions
//! of the same text, and its normalized scores become per-utterance accent
//! intensity labels. An acoustic model then learns to produce log-mel
//! spectrograms conditioned on speaker, accent and that intensity, with a
//! consistency loss that reads the intensity back from its own output.

pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod nn;
pub mod ranker;

pub use error::{Error, Result};
