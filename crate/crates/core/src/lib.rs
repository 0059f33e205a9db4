//! Multichannel speech enhancement with mask-driven GEV beamforming and
//! student-teacher distillation of the mask estimator.

pub mod audio_io;
pub mod beamformer;
pub mod config;
pub mod corpus;
pub mod distill;
pub mod dsp;
pub mod error;
pub mod linalg;
pub mod masks;
pub mod metrics;
pub mod nn;
pub mod par;

pub use error::{Error, Result};
