//! Audio-driven talking-head generation with two decoupled diffusion stages.
//!
//! Stage one denoises expression and head-pose coefficient sequences of a
//! linear morphable face model from frame-aligned audio features, using
//! band-masked cross-attention transformers ([`motiongen`]). Stage two
//! denoises per-frame latent images in a small autoencoder's latent space
//! ([`latentcodec`]), conditioned on the motion coefficients and on a
//! reference-image latent through two separate cross-attention layers
//! ([`framegen`]). Both stages predict the clean signal and share the sampler
//! in [`diffcore`].
//!
//! Everything runs on the CPU in 64-bit floats and trains on a procedural
//! corpus ([`harness::corpus`]) whose audio, motion, and frames are tied by
//! construction, so behavior can be verified against exact oracles.

pub mod audiofeat;
pub mod diffcore;
pub mod error;
pub mod face3d;
pub mod framegen;
pub mod gradcheck;
pub mod harness;
pub mod latentcodec;
pub mod lipexpert;
pub mod metrics;
pub mod motiongen;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};

/// Video and audio-feature frame rate.
pub const FPS: usize = 25;
