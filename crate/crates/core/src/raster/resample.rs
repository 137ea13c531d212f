use super::{Band, Raster};
use crate::error::{Error, Result};

/// Aggregates `factor`×`factor` blocks into their mean over valid pixels.
///
/// An output pixel is valid when at least half of its block is valid. The
/// output keeps the input origin and scales the pixel size by `factor`.
pub fn block_mean(r: &Raster, factor: usize) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::Validation("block factor must be positive".into()));
    }
    let (w, h) = (r.width(), r.height());
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::Dimension(format!("{w}x{h} raster is not divisible by block factor {factor}; crop first")));
    }
    let grid = r.grid().coarsened(factor);
    let (cw, ch) = (grid.width, grid.height);
    let mask = r.mask();

    let mut counts = vec![0usize; cw * ch];
    for row in 0..h {
        for col in 0..w {
            if mask[row * w + col] {
                counts[(row / factor) * cw + col / factor] += 1;
            }
        }
    }
    let block = factor * factor;
    let out_mask: Vec<bool> = counts.iter().map(|&c| 2 * c >= block && c > 0).collect();

    let bands = r
        .bands()
        .iter()
        .map(|b| {
            let mut sums = vec![0f64; cw * ch];
            for row in 0..h {
                let base = (row / factor) * cw;
                let src = &b.data[row * w..(row + 1) * w];
                let m = &mask[row * w..(row + 1) * w];
                for col in 0..w {
                    if m[col] {
                        sums[base + col / factor] += src[col] as f64;
                    }
                }
            }
            let data = sums
                .iter()
                .zip(&counts)
                .zip(&out_mask)
                .map(|((&s, &c), &ok)| if ok { (s / c as f64) as f32 } else { 0.0 })
                .collect();
            Band { name: b.name.clone(), wavelength_nm: b.wavelength_nm, data }
        })
        .collect();
    Raster::new(grid, bands, Some(out_mask))
}

/// Catmull-Rom weights for the taps at offsets -1, 0, 1, 2 from the base.
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0), 0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)]
}

/// Per output index: clamped source indices and weights.
fn taps(n_in: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..n_in * factor)
        .map(|o| {
            let x = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = x.floor();
            let wts = catmull_rom(x - base);
            let mut idx = [0usize; 4];
            for (k, slot) in idx.iter_mut().enumerate() {
                let i = base as i64 - 1 + k as i64;
                *slot = i.clamp(0, n_in as i64 - 1) as usize;
            }
            (idx, wts)
        })
        .collect()
}

/// Catmull-Rom bicubic upsampling on pixel centers with clamped edges.
///
/// Output pixels whose nonzero-weight taps include an invalid input pixel
/// are marked invalid.
pub fn upsample_bicubic(r: &Raster, factor: usize) -> Result<Raster> {
    if factor == 0 {
        return Err(Error::Validation("upsampling factor must be at least 1".into()));
    }
    let (w, h) = (r.width(), r.height());
    let grid = r.grid().refined(factor);
    let (ow, oh) = (grid.width, grid.height);
    let tx = taps(w, factor);
    let ty = taps(h, factor);
    let mask = r.mask();

    let mut out_mask = vec![true; ow * oh];
    for (oy, (iy, wy)) in ty.iter().enumerate() {
        for (ox, (ix, wx)) in tx.iter().enumerate() {
            let mut ok = true;
            'outer: for j in 0..4 {
                if wy[j] == 0.0 {
                    continue;
                }
                for i in 0..4 {
                    if wx[i] != 0.0 && !mask[iy[j] * w + ix[i]] {
                        ok = false;
                        break 'outer;
                    }
                }
            }
            out_mask[oy * ow + ox] = ok;
        }
    }

    let bands = r
        .bands()
        .iter()
        .map(|b| {
            // Horizontal pass into f64 rows, then vertical pass.
            let mut horiz = vec![0f64; h * ow];
            for row in 0..h {
                let src = &b.data[row * w..(row + 1) * w];
                let dst = &mut horiz[row * ow..(row + 1) * ow];
                for (ox, (ix, wx)) in tx.iter().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        if wx[k] != 0.0 {
                            acc += wx[k] * src[ix[k]] as f64;
                        }
                    }
                    dst[ox] = acc;
                }
            }
            let mut data = vec![0f32; ow * oh];
            for (oy, (iy, wy)) in ty.iter().enumerate() {
                let dst = &mut data[oy * ow..(oy + 1) * ow];
                for (ox, d) in dst.iter_mut().enumerate() {
                    if !out_mask[oy * ow + ox] {
                        continue;
                    }
                    let mut acc = 0.0;
                    for k in 0..4 {
                        if wy[k] != 0.0 {
                            acc += wy[k] * horiz[iy[k] * ow + ox];
                        }
                    }
                    *d = acc as f32;
                }
            }
            Band { name: b.name.clone(), wavelength_nm: b.wavelength_nm, data }
        })
        .collect();
    Raster::new(grid, bands, Some(out_mask))
}

/// Concatenates the bands of `a` and `b`; the result is valid where both are.
pub fn stack_bands(a: &Raster, b: &Raster) -> Result<Raster> {
    if a.n_bands() == 0 || b.n_bands() == 0 {
        return Err(Error::Validation("cannot stack a raster with no bands".into()));
    }
    if !a.grid().matches(b.grid()) {
        return Err(Error::Alignment(format!("grids differ: {:?} vs {:?}", a.grid(), b.grid())));
    }
    let mask = a.mask().iter().zip(b.mask()).map(|(&x, &y)| x && y).collect();
    let bands = a.bands().iter().chain(b.bands()).cloned().collect();
    Raster::new(*a.grid(), bands, Some(mask))
}
