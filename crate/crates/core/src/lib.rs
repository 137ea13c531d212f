//! Fusion of coarse multispectral satellite rasters with fine UAS imagery.
//!
//! The crate covers the whole chain: simulating satellite bands from
//! hyperspectral cubes ([`spectral`]), snapping and registering fine rasters
//! against the coarse grid ([`align`]), SRCNN-style super-resolution
//! ([`nn`]), fidelity metrics ([`metrics`]), random-forest regression on
//! quadrat features ([`forest`]) and a synthetic scene harness ([`synth`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod align;
pub mod error;
pub mod forest;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod raster;
pub mod scalar;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{Band, GeoGrid, Raster};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;

/// Double-precision SRCNN, the default for training.
pub type Srcnn = nn::SrcnnModel<f64>;
/// Single-precision SRCNN for fast inference.
pub type SrcnnF32 = nn::SrcnnModel<f32>;
pub type Tensor64 = nn::Tensor<f64>;
