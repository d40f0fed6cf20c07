//! Conversational emotion recognition from EEG, audio and video.
//!
//! The pipeline encodes EEG with a subject-adaptive encoder that runs
//! mutual-cross attention within and across frequency bands, embeds every
//! modality into a shared space, fuses the segments of a dialogue on a
//! weighted hypergraph and classifies each segment.

pub mod abema;
pub mod autograd;
pub mod classifier;
pub mod data;
pub mod encoders;
pub mod error;
pub mod hypergraph;
pub mod nn;
pub mod report;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
