//! Minimal layer library on top of candle's autodiff.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names; models are
//! built through a [`ParamBuilder`] that either initializes fresh weights or
//! fetches them from a loaded store, so one constructor serves both paths.

mod attention;
mod layers;
mod optim;
mod params;

pub use attention::{band_bias, CrossAttention};
pub use layers::{sigmoid, Conv2d, GroupNorm, LayerNorm, Linear};
pub use optim::Adam;
pub use params::{Init, ParamBuilder, ParamStore};
