use std::path::Path;

use serde::{Deserialize, Serialize};

use super::camera::{gaussian_design_matrix, measured_design_matrix, HyperBandSpec};
use super::nnls::{nnls, DEFAULT_TOL};
use super::srf::{SpectralResponseTable, SrfBand};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::raster::{Band, Raster};

/// Fitted weights for one target band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub name: String,
    /// Normalized weights (sum to one), one per camera band.
    pub weights: Vec<f64>,
    /// `‖Aw − s‖₂` of the raw NNLS fit on the 1 nm grid.
    pub residual: f64,
    /// Sum of the raw NNLS weights; raw = normalized × normalization.
    pub normalization: f64,
}

impl TargetWeights {
    pub fn raw_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w * self.normalization).collect()
    }

    pub fn active_bands(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Weighted mean of the camera band centers.
    pub fn center_nm(&self, camera: &HyperBandSpec) -> f64 {
        self.weights.iter().zip(&camera.centers).map(|(w, c)| w * c).sum()
    }
}

/// Weights mapping every camera band onto each simulated sensor band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandWeights {
    pub camera: HyperBandSpec,
    pub bands: Vec<TargetWeights>,
}

impl BandWeights {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let w: BandWeights = serde_json::from_slice(&std::fs::read(path)?)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.camera.len();
        for b in &self.bands {
            if b.weights.len() != k {
                return Err(Error::Schema(format!(
                    "band {} has {} weights, camera has {k} bands",
                    b.name,
                    b.weights.len()
                )));
            }
            if b.weights.iter().any(|&w| !(w >= 0.0)) || !b.weights.iter().any(|&w| w > 0.0) {
                return Err(Error::Schema(format!("band {} weights must be nonnegative and not all zero", b.name)));
            }
        }
        Ok(())
    }

    pub fn band(&self, name: &str) -> Option<&TargetWeights> {
        self.bands.iter().find(|b| b.name == name)
    }

    /// Total number of camera bands used by at least one target band.
    pub fn activated_camera_bands(&self) -> usize {
        (0..self.camera.len()).filter(|&k| self.bands.iter().any(|b| b.weights[k] > 0.0)).count()
    }
}

/// Fits each SRF band by NNLS against Gaussian camera band responses.
pub fn fit_band_weights(srf: &SpectralResponseTable, spec: &HyperBandSpec) -> Result<BandWeights> {
    fit_with(srf, spec, |grid| gaussian_design_matrix(spec, grid))
}

/// Same as [`fit_band_weights`] with measured camera responses.
pub fn fit_band_weights_measured(
    srf: &SpectralResponseTable,
    spec: &HyperBandSpec,
    measured: &SpectralResponseTable,
) -> Result<BandWeights> {
    fit_with(srf, spec, |grid| measured_design_matrix(spec, measured, grid))
}

fn fit_with(
    srf: &SpectralResponseTable,
    spec: &HyperBandSpec,
    design: impl Fn(&[f64]) -> Result<Matrix<f64>>,
) -> Result<BandWeights> {
    if srf.bands.is_empty() {
        return Err(Error::Domain("response table has no bands".into()));
    }
    let bands = srf.bands.iter().map(|band| fit_one(band, spec, &design)).collect::<Result<Vec<_>>>()?;
    Ok(BandWeights { camera: spec.clone(), bands })
}

fn fit_one(
    band: &SrfBand,
    spec: &HyperBandSpec,
    design: &impl Fn(&[f64]) -> Result<Matrix<f64>>,
) -> Result<TargetWeights> {
    // Fit where the camera has response: band centers ± 3σ.
    let reach = 3.0 * spec.sigma();
    let lo = spec.centers[0] - reach;
    let hi = spec.centers[spec.len() - 1] + reach;
    let grid: Vec<f64> = band.nm_grid().into_iter().filter(|&nm| nm >= lo && nm <= hi).collect();
    let target: Vec<f64> = grid.iter().map(|&nm| band.response_at(nm)).collect();
    if grid.is_empty() || !target.iter().any(|&r| r > 0.0) {
        return Err(Error::Domain(format!(
            "band {} has no response inside the camera range {lo:.1}-{hi:.1} nm",
            band.name
        )));
    }
    let a = design(&grid)?;
    let sol = nnls(&a, &target, DEFAULT_TOL)?;
    let total: f64 = sol.x.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain(format!("band {}: fit assigned no positive weight", band.name)));
    }
    Ok(TargetWeights {
        name: band.name.clone(),
        weights: sol.x.iter().map(|w| w / total).collect(),
        residual: sol.residual,
        normalization: total,
    })
}

/// Applies normalized weights to a hyperspectral cube, producing one band
/// per target band. Pixel validity is carried over from the cube.
pub fn simulate_bands(cube: &Raster, weights: &BandWeights) -> Result<Raster> {
    let k = weights.camera.len();
    if cube.n_bands() != k {
        return Err(Error::Schema(format!("cube has {} bands, weights expect {k}", cube.n_bands())));
    }
    for (i, (b, &c)) in cube.bands().iter().zip(&weights.camera.centers).enumerate() {
        match b.wavelength_nm {
            Some(wl) if (wl - c).abs() <= 0.01 => {}
            Some(wl) => {
                return Err(Error::Schema(format!("cube band {i} at {wl} nm does not match camera center {c} nm")))
            }
            None => return Err(Error::Schema(format!("cube band {i} has no wavelength"))),
        }
    }
    weights.validate()?;
    let n = cube.grid().len();
    let mask = cube.mask();
    let bands = weights
        .bands
        .iter()
        .map(|t| {
            let mut acc = vec![0f64; n];
            for (w, b) in t.weights.iter().zip(cube.bands()) {
                if *w == 0.0 {
                    continue;
                }
                for (a, &v) in acc.iter_mut().zip(&b.data) {
                    *a += w * v as f64;
                }
            }
            let data = acc.iter().zip(mask).map(|(&v, &ok)| if ok { v as f32 } else { 0.0 }).collect();
            Band::new(t.name.clone(), data).with_wavelength(t.center_nm(&weights.camera))
        })
        .collect();
    Raster::new(*cube.grid(), bands, Some(mask.to_vec()))
}
