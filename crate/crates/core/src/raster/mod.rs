//! Geo-referenced multi-band rasters with an explicit validity mask.
//!
//! Every stage of the pipeline passes [`Raster`] values around. Bands are
//! stored band-planar as `f32`; reductions over them accumulate in `f64`.

mod bsf;
mod resample;

pub use bsf::{read_bsf, read_bsf_bytes, write_bsf, write_bsf_bytes, BSF_MAGIC};
pub use resample::{block_mean, stack_bands, upsample_bicubic};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar grid geometry. Rows advance downward from the upper-left corner,
/// so `pixel_h` is stored positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
    pub width: usize,
    pub height: usize,
}

impl GeoGrid {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64, width: usize, height: usize) -> Result<Self> {
        let g = GeoGrid { origin_x, origin_y, pixel_w, pixel_h, width, height };
        g.validate()?;
        Ok(g)
    }

    /// Unit-pixel grid anchored at the origin.
    pub fn pixels(width: usize, height: usize) -> Result<Self> {
        Self::new(0.0, 0.0, 1.0, 1.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_w > 0.0 && self.pixel_w.is_finite()) || !(self.pixel_h > 0.0 && self.pixel_h.is_finite()) {
            return Err(Error::Validation(format!(
                "pixel size must be positive, got {}x{}",
                self.pixel_w, self.pixel_h
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Validation("grid origin must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!("grid must be at least 1x1, got {}x{}", self.width, self.height)));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Planar coordinates of the center of pixel (col, row).
    #[inline]
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (self.origin_x + (col as f64 + 0.5) * self.pixel_w, self.origin_y - (row as f64 + 0.5) * self.pixel_h)
    }

    /// GDAL-style geotransform `[origin_x, pixel_w, 0, origin_y, 0, -pixel_h]`.
    /// Same dimensions, with origin and pixel size equal up to rounding.
    pub fn matches(&self, other: &GeoGrid) -> bool {
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-9 * scale.max(1.0);
        self.width == other.width
            && self.height == other.height
            && close(self.origin_x, other.origin_x, self.pixel_w)
            && close(self.origin_y, other.origin_y, self.pixel_h)
            && close(self.pixel_w, other.pixel_w, self.pixel_w)
            && close(self.pixel_h, other.pixel_h, self.pixel_h)
    }

    pub fn geotransform(&self) -> [f64; 6] {
        [self.origin_x, self.pixel_w, 0.0, self.origin_y, 0.0, -self.pixel_h]
    }

    /// Grid of the same footprint with pixel size multiplied by `factor`.
    pub fn coarsened(&self, factor: usize) -> GeoGrid {
        GeoGrid {
            pixel_w: self.pixel_w * factor as f64,
            pixel_h: self.pixel_h * factor as f64,
            width: self.width / factor,
            height: self.height / factor,
            ..*self
        }
    }

    pub fn refined(&self, factor: usize) -> GeoGrid {
        GeoGrid {
            pixel_w: self.pixel_w / factor as f64,
            pixel_h: self.pixel_h / factor as f64,
            width: self.width * factor,
            height: self.height * factor,
            ..*self
        }
    }
}

/// One named band plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub name: String,
    /// Center wavelength in nm, when known.
    pub wavelength_nm: Option<f64>,
    pub data: Vec<f32>,
}

impl Band {
    pub fn new(name: impl Into<String>, data: Vec<f32>) -> Self {
        Band { name: name.into(), wavelength_nm: None, data }
    }

    pub fn with_wavelength(mut self, nm: f64) -> Self {
        self.wavelength_nm = Some(nm);
        self
    }
}

/// Multi-band raster. `mask[i]` is true when pixel `i` (row-major) is valid
/// in every band.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    grid: GeoGrid,
    bands: Vec<Band>,
    mask: Vec<bool>,
}

impl Raster {
    /// Builds a raster, checking plane sizes. Pixels holding a non-finite
    /// value in any band are marked invalid.
    pub fn new(grid: GeoGrid, bands: Vec<Band>, mask: Option<Vec<bool>>) -> Result<Self> {
        grid.validate()?;
        let n = grid.len();
        for b in &bands {
            if b.data.len() != n {
                return Err(Error::Dimension(format!(
                    "band '{}' has {} values, grid has {} pixels",
                    b.name,
                    b.data.len(),
                    n
                )));
            }
        }
        let mut mask = match mask {
            Some(m) if m.len() != n => {
                return Err(Error::Dimension(format!("mask has {} entries, grid has {} pixels", m.len(), n)))
            }
            Some(m) => m,
            None => vec![true; n],
        };
        for b in &bands {
            for (m, v) in mask.iter_mut().zip(&b.data) {
                if !v.is_finite() {
                    *m = false;
                }
            }
        }
        Ok(Raster { grid, bands, mask })
    }

    /// Raster with `n_bands` bands named `b0, b1, ...` all set to `value`.
    pub fn filled(grid: GeoGrid, n_bands: usize, value: f32) -> Result<Self> {
        let bands = (0..n_bands).map(|i| Band::new(format!("b{i}"), vec![value; grid.len()])).collect();
        Raster::new(grid, bands, None)
    }

    #[inline]
    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.grid.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.grid.height
    }

    #[inline]
    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    #[inline]
    pub fn band(&self, i: usize) -> &Band {
        &self.bands[i]
    }

    #[inline]
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    #[inline]
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn is_valid(&self, col: usize, row: usize) -> bool {
        self.mask[row * self.grid.width + col]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    #[inline]
    pub fn get(&self, band: usize, col: usize, row: usize) -> f32 {
        self.bands[band].data[row * self.grid.width + col]
    }

    pub fn band_names(&self) -> Vec<&str> {
        self.bands.iter().map(|b| b.name.as_str()).collect()
    }

    /// Replaces the grid geometry, keeping pixel data. Dimensions must match.
    pub fn with_grid(mut self, grid: GeoGrid) -> Result<Self> {
        grid.validate()?;
        if grid.width != self.grid.width || grid.height != self.grid.height {
            return Err(Error::Dimension("replacement grid changes dimensions".into()));
        }
        self.grid = grid;
        Ok(self)
    }

    /// Marks additional pixels invalid.
    pub fn restrict_mask(&mut self, keep: &[bool]) -> Result<()> {
        if keep.len() != self.mask.len() {
            return Err(Error::Dimension("mask length mismatch".into()));
        }
        for (m, &k) in self.mask.iter_mut().zip(keep) {
            *m &= k;
        }
        Ok(())
    }

    /// Subset of bands by index, in the given order.
    pub fn select_bands(&self, indices: &[usize]) -> Result<Raster> {
        let mut bands = Vec::with_capacity(indices.len());
        for &i in indices {
            let b = self
                .bands
                .get(i)
                .ok_or_else(|| Error::Schema(format!("band index {i} out of range ({} bands)", self.n_bands())))?;
            bands.push(b.clone());
        }
        Raster::new(self.grid, bands, Some(self.mask.clone()))
    }

    /// Rectangular window in pixel coordinates; the grid origin moves with it.
    pub fn crop(&self, col0: usize, row0: usize, width: usize, height: usize) -> Result<Raster> {
        if width == 0 || height == 0 || col0 + width > self.width() || row0 + height > self.height() {
            return Err(Error::Dimension(format!(
                "crop {width}x{height}+{col0}+{row0} outside {}x{} raster",
                self.width(),
                self.height()
            )));
        }
        let grid = GeoGrid {
            origin_x: self.grid.origin_x + col0 as f64 * self.grid.pixel_w,
            origin_y: self.grid.origin_y - row0 as f64 * self.grid.pixel_h,
            width,
            height,
            ..self.grid
        };
        let w = self.width();
        let take = |src: &[f32]| -> Vec<f32> {
            let mut out = Vec::with_capacity(width * height);
            for r in row0..row0 + height {
                out.extend_from_slice(&src[r * w + col0..r * w + col0 + width]);
            }
            out
        };
        let bands = self
            .bands
            .iter()
            .map(|b| Band { name: b.name.clone(), wavelength_nm: b.wavelength_nm, data: take(&b.data) })
            .collect();
        let mut mask = Vec::with_capacity(width * height);
        for r in row0..row0 + height {
            mask.extend_from_slice(&self.mask[r * w + col0..r * w + col0 + width]);
        }
        Raster::new(grid, bands, Some(mask))
    }
}
