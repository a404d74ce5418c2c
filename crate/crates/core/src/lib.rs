//! Ground-level air temperature estimation at 100 m resolution.
//!
//! The crate bundles everything the `uhinet` pipeline needs:
//!
//! * [`numerics`] – a small dense-tensor kernel with the layers, tape-based
//!   backward pass and optimizers a convolutional encoder-decoder needs.
//! * [`unet`] – the encoder / latent-fusion / decoder network, training loop
//!   and checkpoint format.
//! * [`datapipe`] – rasters, `[-1, 1]` normalization, patch tiling, example
//!   assembly and the deterministic synthetic world used in place of
//!   reanalysis and urban-climate model output.
//! * [`lwt`] – daily synoptic features and local-weather-type clustering.
//! * [`hotspot`] – the relative temperature index used to locate hotspots.
//! * [`eval`] – regression metrics, station series and hourly aggregates.

pub mod datapipe;
pub mod error;
pub mod eval;
pub mod hotspot;
pub mod lwt;
pub mod numerics;
pub mod unet;

pub use error::{Error, Result};
