//! Regression-scored comparison of a translated fine raster against the
//! coarse raster, with block sums taken from integral images.

use serde::{Deserialize, Serialize};

use super::snap::integer_ratio;
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, Matrix};
use crate::raster::Raster;

/// Minimum number of coarse pixels that must take part in a regression.
pub const MIN_COVERED: usize = 16;

/// Whole fine-pixel translation: `x` columns right, `y` rows down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelShift {
    pub x: i64,
    pub y: i64,
}

impl PixelShift {
    pub const ZERO: PixelShift = PixelShift { x: 0, y: 0 };

    pub fn new(x: i64, y: i64) -> Self {
        PixelShift { x, y }
    }

    pub fn norm2(&self) -> i64 {
        self.x * self.x + self.y * self.y
    }
}

/// Linear fit of one coarse band on the fine block means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFit {
    /// One gain per regressor (a single entry for band-to-band fits).
    pub gains: Vec<f64>,
    pub offset: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftScore {
    pub shift: PixelShift,
    /// Sum of per-band residual sums of squares.
    pub score: f64,
    pub fits: Vec<BandFit>,
    pub n_pixels: usize,
}

/// Summed-area table with a zero top row and left column.
pub(crate) struct Integral {
    width: usize,
    data: Vec<f64>,
}

impl Integral {
    pub(crate) fn new(width: usize, height: usize, value: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut data = vec![0f64; stride * (height + 1)];
        for r in 0..height {
            let mut row_sum = 0.0;
            for c in 0..width {
                row_sum += value(r * width + c);
                data[(r + 1) * stride + c + 1] = data[r * stride + c + 1] + row_sum;
            }
        }
        Integral { width, data }
    }

    /// Sum over columns `[c0, c1)` and rows `[r0, r1)`.
    #[inline]
    pub(crate) fn sum(&self, c0: usize, r0: usize, c1: usize, r1: usize) -> f64 {
        let s = self.width + 1;
        self.data[r1 * s + c1] - self.data[r0 * s + c1] - self.data[r1 * s + c0] + self.data[r0 * s + c0]
    }
}

/// Precomputed state for scoring many shifts of one raster pair.
pub struct ShiftScorer<'a> {
    coarse: &'a Raster,
    factor: usize,
    /// Fine pixel offset of the coarse origin.
    col_off: i64,
    row_off: i64,
    fine_w: i64,
    fine_h: i64,
    band_sums: Vec<Integral>,
    valid: Integral,
    univariate: bool,
}

impl<'a> ShiftScorer<'a> {
    pub fn new(fine: &Raster, coarse: &'a Raster) -> Result<Self> {
        let fg = fine.grid();
        let cg = coarse.grid();
        if fine.n_bands() == 0 || coarse.n_bands() == 0 {
            return Err(Error::Validation("rasters must have bands".into()));
        }
        let fx = integer_ratio(cg.pixel_w, fg.pixel_w, "x")?;
        let fy = integer_ratio(cg.pixel_h, fg.pixel_h, "y")?;
        if fx != fy {
            return Err(Error::Geometry(format!("non-square scale factor {fx}x{fy}")));
        }
        let off = |d: f64, px: f64, what: &str| -> Result<i64> {
            let v = d / px;
            let n = v.round();
            if (v - n).abs() > 1e-6 {
                return Err(Error::Geometry(format!(
                    "{what}: coarse origin is not on the fine pixel lattice (offset {v} px); snap first"
                )));
            }
            Ok(n as i64)
        };
        let col_off = off(cg.origin_x - fg.origin_x, fg.pixel_w, "x")?;
        let row_off = off(fg.origin_y - cg.origin_y, fg.pixel_h, "y")?;
        let (w, h) = (fg.width, fg.height);
        let mask = fine.mask();
        let band_sums = fine
            .bands()
            .iter()
            .map(|b| Integral::new(w, h, |i| if mask[i] { b.data[i] as f64 } else { 0.0 }))
            .collect();
        let valid = Integral::new(w, h, |i| if mask[i] { 1.0 } else { 0.0 });
        let univariate = fine.band_names() == coarse.band_names();
        Ok(ShiftScorer {
            coarse,
            factor: fx,
            col_off,
            row_off,
            fine_w: w as i64,
            fine_h: h as i64,
            band_sums,
            valid,
            univariate,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Fine window of coarse pixel (col, row) under `shift`, if it lies
    /// inside the fine raster after growing it by `margin` on every side.
    #[inline]
    fn window(&self, col: usize, row: usize, shift: PixelShift, margin: i64) -> Option<(usize, usize)> {
        let f = self.factor as i64;
        let c0 = self.col_off + col as i64 * f - shift.x;
        let r0 = self.row_off + row as i64 * f - shift.y;
        if c0 - margin < 0 || r0 - margin < 0 || c0 + f + margin > self.fine_w || r0 + f + margin > self.fine_h {
            return None;
        }
        Some((c0 as usize, r0 as usize))
    }

    fn fully_valid(&self, c0: usize, r0: usize, size: usize) -> bool {
        let n = self.valid.sum(c0, r0, c0 + size, r0 + size);
        n >= (size * size) as f64 - 0.5
    }

    /// Coarse pixels usable at `shift`.
    pub fn covered(&self, shift: PixelShift) -> Vec<(usize, usize)> {
        self.covered_with_margin(shift, 0)
    }

    /// Coarse pixels usable for every shift within `±radius` of `center` in
    /// both axes.
    pub fn covered_with_margin(&self, center: PixelShift, radius: i64) -> Vec<(usize, usize)> {
        let cg = self.coarse.grid();
        let f = self.factor;
        let mut out = Vec::new();
        for row in 0..cg.height {
            for col in 0..cg.width {
                if !self.coarse.is_valid(col, row) {
                    continue;
                }
                if let Some((c0, r0)) = self.window(col, row, center, radius) {
                    let r = radius as usize;
                    if self.fully_valid(c0 - r, r0 - r, f + 2 * r) {
                        out.push((col, row));
                    }
                }
            }
        }
        out
    }

    /// Scores `shift` over its own covered pixel set.
    pub fn score(&self, shift: PixelShift) -> Result<ShiftScore> {
        let pixels = self.covered(shift);
        self.score_on(shift, &pixels)
    }

    /// Scores `shift` over a caller-chosen set of coarse pixels, each of
    /// which must be covered at this shift.
    pub fn score_on(&self, shift: PixelShift, pixels: &[(usize, usize)]) -> Result<ShiftScore> {
        if pixels.len() < MIN_COVERED {
            return Err(Error::Coverage(format!(
                "only {} coarse pixels covered at shift ({}, {}); need {MIN_COVERED}",
                pixels.len(),
                shift.x,
                shift.y
            )));
        }
        let f = self.factor;
        let area = (f * f) as f64;
        let nb = self.band_sums.len();
        // Block means, regressor-major.
        let mut means = vec![Vec::with_capacity(pixels.len()); nb];
        for &(col, row) in pixels {
            let (c0, r0) = self
                .window(col, row, shift, 0)
                .ok_or_else(|| Error::Coverage(format!("coarse pixel ({col}, {row}) not covered at shift")))?;
            for (m, s) in means.iter_mut().zip(&self.band_sums) {
                m.push(s.sum(c0, r0, c0 + f, r0 + f) / area);
            }
        }
        let cw = self.coarse.width();
        let mut fits = Vec::with_capacity(self.coarse.n_bands());
        for (b, band) in self.coarse.bands().iter().enumerate() {
            let y: Vec<f64> = pixels.iter().map(|&(c, r)| band.data[r * cw + c] as f64).collect();
            let fit = if self.univariate {
                regress(&[&means[b]], &y)
            } else {
                let xs: Vec<&[f64]> = means.iter().map(|m| m.as_slice()).collect();
                regress(&xs, &y)
            };
            fits.push(fit);
        }
        let score = fits.iter().map(|f| f.rss).sum();
        Ok(ShiftScore { shift, score, fits, n_pixels: pixels.len() })
    }
}

/// Ordinary least squares of `y` on the regressors plus intercept, solved on
/// centered data. Constant regressors get zero gain.
pub(crate) fn regress(xs: &[&[f64]], y: &[f64]) -> BandFit {
    let n = y.len() as f64;
    let p = xs.len();
    let ybar = y.iter().sum::<f64>() / n;
    let xbar: Vec<f64> = xs.iter().map(|x| x.iter().sum::<f64>() / n).collect();
    let mut cov = Matrix::<f64>::zeros(p, p);
    let mut rhs = vec![0f64; p];
    for j in 0..p {
        for k in j..p {
            let s: f64 = xs[j].iter().zip(xs[k]).map(|(a, b)| (a - xbar[j]) * (b - xbar[k])).sum();
            cov.set(j, k, s);
            cov.set(k, j, s);
        }
        rhs[j] = xs[j].iter().zip(y).map(|(a, b)| (a - xbar[j]) * (b - ybar)).sum();
    }
    // Drop regressors without variance.
    let live: Vec<usize> = (0..p).filter(|&j| cov.get(j, j) > 1e-300).collect();
    let mut gains = vec![0f64; p];
    if !live.is_empty() {
        let sub = Matrix::from_fn(live.len(), live.len(), |a, b| cov.get(live[a], live[b]));
        let r: Vec<f64> = live.iter().map(|&j| rhs[j]).collect();
        if let Ok(g) = solve_spd(&sub, &r) {
            for (&j, v) in live.iter().zip(g) {
                gains[j] = v;
            }
        }
    }
    let offset = ybar - gains.iter().zip(&xbar).map(|(g, m)| g * m).sum::<f64>();
    let rss = (0..y.len())
        .map(|i| {
            let pred = offset + (0..p).map(|j| gains[j] * xs[j][i]).sum::<f64>();
            (y[i] - pred).powi(2)
        })
        .sum();
    BandFit { gains, offset, rss }
}

/// Scores one shift of `fine` (already snapped onto the coarse lattice)
/// against `coarse`. The coarse raster is only read.
pub fn score_shift(fine: &Raster, coarse: &Raster, shift: PixelShift) -> Result<ShiftScore> {
    ShiftScorer::new(fine, coarse)?.score(shift)
}
