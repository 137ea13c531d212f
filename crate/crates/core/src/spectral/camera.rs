use serde::{Deserialize, Serialize};

use super::srf::SpectralResponseTable;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Band centers and common FWHM of a hyperspectral camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBandSpec {
    pub centers: Vec<f64>,
    pub fwhm: f64,
}

/// First and last band centers (nm) and band count of the default camera.
pub const DEFAULT_CAMERA_RANGE: (f64, f64) = (397.9, 1002.9);
pub const DEFAULT_CAMERA_BANDS: usize = 269;
pub const DEFAULT_CAMERA_FWHM: f64 = 6.0;

impl HyperBandSpec {
    pub fn new(centers: Vec<f64>, fwhm: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Validation("camera has no bands".into()));
        }
        if centers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("band centers must be strictly increasing".into()));
        }
        if !(fwhm > 0.0) {
            return Err(Error::Validation("fwhm must be positive".into()));
        }
        Ok(HyperBandSpec { centers, fwhm })
    }

    /// `count` evenly spaced centers from `first` to `last` inclusive.
    pub fn linear(first: f64, last: f64, count: usize, fwhm: f64) -> Result<Self> {
        if count < 2 {
            return Err(Error::Validation("linear camera needs at least two bands".into()));
        }
        let step = (last - first) / (count - 1) as f64;
        Self::new((0..count).map(|k| first + k as f64 * step).collect(), fwhm)
    }

    /// 269 bands over 397.9–1002.9 nm with 6 nm FWHM.
    pub fn default269() -> Self {
        let (lo, hi) = DEFAULT_CAMERA_RANGE;
        Self::linear(lo, hi, DEFAULT_CAMERA_BANDS, DEFAULT_CAMERA_FWHM).unwrap()
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Gaussian standard deviation matching the FWHM.
    pub fn sigma(&self) -> f64 {
        self.fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
    }
}

/// `A[i, k] = exp(-(grid_i - λ_k)² / 2σ²)`.
pub fn gaussian_design_matrix<T: Scalar>(spec: &HyperBandSpec, grid: &[f64]) -> Result<Matrix<T>> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Validation("wavelength grid must be strictly increasing".into()));
    }
    let two_var = 2.0 * spec.sigma().powi(2);
    Ok(Matrix::from_fn(grid.len(), spec.len(), |i, k| {
        let d = grid[i] - spec.centers[k];
        T::lit((-d * d / two_var).exp())
    }))
}

/// Design matrix from measured per-band camera responses. The table must
/// hold one curve per camera band, in band order.
pub fn measured_design_matrix<T: Scalar>(
    spec: &HyperBandSpec,
    measured: &SpectralResponseTable,
    grid: &[f64],
) -> Result<Matrix<T>> {
    if measured.bands.len() != spec.len() {
        return Err(Error::Schema(format!(
            "measured response has {} curves, camera has {} bands",
            measured.bands.len(),
            spec.len()
        )));
    }
    Ok(Matrix::from_fn(grid.len(), spec.len(), |i, k| T::lit(measured.bands[k].response_at(grid[i]))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_camera_endpoints() {
        let c = HyperBandSpec::default269();
        assert_eq!(c.len(), 269);
        assert_eq!(c.centers[0], 397.9);
        assert!((c.centers[268] - 1002.9).abs() < 1e-9);
        assert!((c.centers[1] - c.centers[0] - 605.0 / 268.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_entries() {
        let c = HyperBandSpec::new(vec![500.0], 6.0).unwrap();
        let s = c.sigma();
        let grid = [500.0 - 3.0, 500.0, 503.0, 500.0 + 3.0 * s];
        let a: Matrix<f64> = gaussian_design_matrix(&c, &grid).unwrap();
        assert_eq!(a.get(1, 0), 1.0);
        assert!((a.get(0, 0) - 0.5).abs() < 1e-9);
        assert!((a.get(2, 0) - 0.5).abs() < 1e-9);
        assert!((a.get(3, 0) - (-4.5f64).exp()).abs() < 1e-15);
        assert!((a.get(3, 0) - 0.0111).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(HyperBandSpec::new(vec![500.0, 499.0], 6.0).is_err());
        assert!(HyperBandSpec::new(vec![500.0], 0.0).is_err());
        let c = HyperBandSpec::default269();
        assert!(gaussian_design_matrix::<f64>(&c, &[2.0, 1.0]).is_err());
    }
}
