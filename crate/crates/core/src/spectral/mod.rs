//! Simulation of multispectral sensor bands from hyperspectral cubes.
//!
//! Each target band's response function is approximated by a nonnegative
//! combination of the camera's narrow band responses ([`nnls`]); the
//! normalized weights then turn a cube into simulated sensor bands.

mod camera;
pub mod nnls;
mod srf;
mod weights;

pub use camera::{
    gaussian_design_matrix, measured_design_matrix, HyperBandSpec, DEFAULT_CAMERA_BANDS, DEFAULT_CAMERA_FWHM,
    DEFAULT_CAMERA_RANGE,
};
pub use nnls::{kkt_violation, nnls, nnls_with_limit, NnlsSolution};
pub use srf::{SpectralResponseTable, SrfBand, SENTINEL2_VNIR};
pub use weights::{fit_band_weights, fit_band_weights_measured, simulate_bands, BandWeights, TargetWeights};
