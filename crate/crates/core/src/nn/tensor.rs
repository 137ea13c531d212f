use crate::error::{Error, Result};
use crate::raster::{Band, GeoGrid, Raster};
use crate::scalar::Scalar;

/// Channel-major `C × H × W` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!("{} values do not fill {channels}x{height}x{width}", data.len())));
        }
        Ok(Tensor { channels, height, width, data })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Raster bands as tensor channels; invalid pixels become zero.
    pub fn from_raster(r: &Raster) -> Self {
        let mask = r.mask();
        let mut data = Vec::with_capacity(r.n_bands() * r.grid().len());
        for b in r.bands() {
            data.extend(b.data.iter().zip(mask).map(|(&v, &ok)| if ok { T::lit(v as f64) } else { T::zero() }));
        }
        Tensor { channels: r.n_bands(), height: r.height(), width: r.width(), data }
    }

    /// Window `[y0, y0+h) × [x0, x0+w)` of every channel.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Tensor<T> {
        assert!(y0 + h <= self.height && x0 + w <= self.width, "crop out of bounds");
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                let src = ((c * self.height + y0 + y) * self.width) + x0;
                let dst = (c * h + y) * w;
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (*a - *b).abs().as_f64()).fold(0.0, f64::max)
    }

    pub fn to_raster(&self, grid: GeoGrid, names: &[String], mask: Option<Vec<bool>>) -> Result<Raster> {
        if grid.width != self.width || grid.height != self.height {
            return Err(Error::Shape("grid does not match tensor size".into()));
        }
        let n = self.plane_len();
        let mask = mask.unwrap_or_else(|| vec![true; n]);
        let bands = (0..self.channels)
            .map(|c| {
                let name = names.get(c).cloned().unwrap_or_else(|| format!("sr{c}"));
                let data =
                    self.plane(c).iter().zip(&mask).map(|(v, &ok)| if ok { v.as_f64() as f32 } else { 0.0 }).collect();
                Band::new(name, data)
            })
            .collect();
        Raster::new(grid, bands, Some(mask))
    }
}
