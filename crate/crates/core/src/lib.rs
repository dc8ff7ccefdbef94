//! Multispectral fusion and sensor-degradation toolkit.
//!
//! The crate covers the whole desk-scale workflow: planar rasters and their
//! resampling primitives ([`raster`]), simulated Sentinel-2 style observations
//! ([`degradation`]), a small reverse-mode differentiation engine ([`nn`]),
//! the GLP-inspired neural fusion network ([`fusion`]), classical
//! pansharpening baselines ([`classic`]), toy-scale conditional diffusion
//! ([`diffusion`]), quality metrics ([`metrics`]) and synthetic scenes
//! ([`scene`]).

pub mod classic;
pub mod degradation;
pub mod diffusion;
mod error;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
pub use raster::{BandSpec, Kernel2D, Raster};
pub use rng::SeededRng;
