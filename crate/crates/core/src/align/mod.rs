//! Cross-platform alignment: snapping fine rasters onto the coarse sensor
//! lattice and estimating the residual whole-pixel translation.
//!
//! Transformations are only ever applied to the fine raster; the coarse
//! raster is treated as the reference.

mod register;
mod score;
mod snap;

pub use register::{
    register, register_with, RegisterOptions, RegistrationReport, Search, ShiftEstimate, COARSE_STRIDE,
};
pub use score::{score_shift, BandFit, PixelShift, ShiftScore, ShiftScorer, MIN_COVERED};
pub use snap::{apply_shift, snap_to_grid};
