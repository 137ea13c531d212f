use crate::error::{Error, Result};
use crate::raster::{Band, GeoGrid, Raster};

/// Integer ratio `coarse / fine`, or a geometry error.
pub(crate) fn integer_ratio(coarse: f64, fine: f64, what: &str) -> Result<usize> {
    let r = coarse / fine;
    let n = r.round();
    if n < 1.0 || (r - n).abs() > 1e-6 * n {
        return Err(Error::Geometry(format!("{what}: coarse pixel {coarse} m is not an integer multiple of {fine} m")));
    }
    Ok(n as usize)
}

/// Resamples `fine` by nearest neighbor onto a `target_pixel` grid whose
/// origin lies on a corner of `coarse_grid`.
///
/// The output covers the bounding box of coarse pixels whose every target
/// pixel center falls on a valid fine pixel; coarse pixels inside that box
/// that are only partly covered are masked out entirely. No output pixel
/// straddles a coarse pixel boundary.
pub fn snap_to_grid(fine: &Raster, coarse_grid: &GeoGrid, target_pixel: f64) -> Result<Raster> {
    coarse_grid.validate()?;
    if !(target_pixel > 0.0) {
        return Err(Error::Geometry("target pixel size must be positive".into()));
    }
    let fx = integer_ratio(coarse_grid.pixel_w, target_pixel, "x")?;
    let fy = integer_ratio(coarse_grid.pixel_h, target_pixel, "y")?;
    let fg = fine.grid();

    // Coarse lattice columns/rows touching the fine footprint (lattice may
    // extend beyond the coarse raster itself).
    let fine_x1 = fg.origin_x + fg.width as f64 * fg.pixel_w;
    let fine_y1 = fg.origin_y - fg.height as f64 * fg.pixel_h;
    let c0 = ((fg.origin_x - coarse_grid.origin_x) / coarse_grid.pixel_w).floor() as i64;
    let c1 = ((fine_x1 - coarse_grid.origin_x) / coarse_grid.pixel_w).ceil() as i64;
    let r0 = ((coarse_grid.origin_y - fg.origin_y) / coarse_grid.pixel_h).floor() as i64;
    let r1 = ((coarse_grid.origin_y - fine_y1) / coarse_grid.pixel_h).ceil() as i64;
    let ncols = (c1 - c0).max(0) as usize;
    let nrows = (r1 - r0).max(0) as usize;
    if ncols == 0 || nrows == 0 {
        return Err(Error::Coverage("fine raster does not overlap the coarse lattice".into()));
    }

    let ow = ncols * fx;
    let oh = nrows * fy;
    let ox0 = coarse_grid.origin_x + c0 as f64 * coarse_grid.pixel_w;
    let oy0 = coarse_grid.origin_y - r0 as f64 * coarse_grid.pixel_h;
    let step_x = coarse_grid.pixel_w / fx as f64;
    let step_y = coarse_grid.pixel_h / fy as f64;

    // Source index for each output column/row; None when outside the fine raster.
    let src_cols: Vec<Option<usize>> = (0..ow)
        .map(|k| {
            let x = ox0 + (k as f64 + 0.5) * step_x;
            let u = ((x - fg.origin_x) / fg.pixel_w).floor();
            (u >= 0.0 && u < fg.width as f64).then_some(u as usize)
        })
        .collect();
    let src_rows: Vec<Option<usize>> = (0..oh)
        .map(|k| {
            let y = oy0 - (k as f64 + 0.5) * step_y;
            let v = ((fg.origin_y - y) / fg.pixel_h).floor();
            (v >= 0.0 && v < fg.height as f64).then_some(v as usize)
        })
        .collect();

    let fmask = fine.mask();
    let mut valid = vec![false; ow * oh];
    for (orow, sr) in src_rows.iter().enumerate() {
        let Some(sr) = *sr else { continue };
        for (ocol, sc) in src_cols.iter().enumerate() {
            if let Some(sc) = *sc {
                valid[orow * ow + ocol] = fmask[sr * fg.width + sc];
            }
        }
    }

    // Whole coarse blocks that are fully valid.
    let mut block_ok = vec![false; ncols * nrows];
    for br in 0..nrows {
        for bc in 0..ncols {
            block_ok[br * ncols + bc] =
                (br * fy..(br + 1) * fy).all(|r| valid[r * ow + bc * fx..r * ow + (bc + 1) * fx].iter().all(|&v| v));
        }
    }
    let covered: Vec<(usize, usize)> =
        (0..nrows).flat_map(|r| (0..ncols).map(move |c| (c, r))).filter(|&(c, r)| block_ok[r * ncols + c]).collect();
    if covered.is_empty() {
        return Err(Error::Coverage("no coarse pixel is fully covered by valid fine data".into()));
    }
    let bc0 = covered.iter().map(|p| p.0).min().unwrap();
    let bc1 = covered.iter().map(|p| p.0).max().unwrap() + 1;
    let br0 = covered.iter().map(|p| p.1).min().unwrap();
    let br1 = covered.iter().map(|p| p.1).max().unwrap() + 1;

    let grid = GeoGrid::new(
        ox0 + bc0 as f64 * coarse_grid.pixel_w,
        oy0 - br0 as f64 * coarse_grid.pixel_h,
        step_x,
        step_y,
        (bc1 - bc0) * fx,
        (br1 - br0) * fy,
    )?;
    let (w, h) = (grid.width, grid.height);
    let col_off = bc0 * fx;
    let row_off = br0 * fy;
    let mut mask = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            let bc = (c + col_off) / fx;
            let br = (r + row_off) / fy;
            mask[r * w + c] = block_ok[br * ncols + bc];
        }
    }
    let bands = fine
        .bands()
        .iter()
        .map(|b| {
            let mut data = vec![0f32; w * h];
            for r in 0..h {
                for c in 0..w {
                    if !mask[r * w + c] {
                        continue;
                    }
                    let sr = src_rows[r + row_off].unwrap();
                    let sc = src_cols[c + col_off].unwrap();
                    data[r * w + c] = b.data[sr * fg.width + sc];
                }
            }
            Band { name: b.name.clone(), wavelength_nm: b.wavelength_nm, data }
        })
        .collect();
    Raster::new(grid, bands, Some(mask))
}

/// Translates a raster by whole pixels by moving its georeference; `dx`
/// columns to the right and `dy` rows down.
pub fn apply_shift(r: &Raster, dx: i64, dy: i64) -> Result<Raster> {
    let g = *r.grid();
    let grid =
        GeoGrid { origin_x: g.origin_x + dx as f64 * g.pixel_w, origin_y: g.origin_y - dy as f64 * g.pixel_h, ..g };
    r.clone().with_grid(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine(origin_x: f64, origin_y: f64, w: usize, h: usize) -> Raster {
        let g = GeoGrid::new(origin_x, origin_y, 0.125, 0.125, w, h).unwrap();
        let data = (0..w * h).map(|i| (i % 97) as f32 / 97.0).collect();
        Raster::new(g, vec![Band::new("a", data)], None).unwrap()
    }

    #[test]
    fn aligned_input_is_identity() {
        let f = fine(0.0, 2.0, 32, 16);
        let coarse = GeoGrid::new(0.0, 2.0, 1.0, 1.0, 4, 2).unwrap();
        let s = snap_to_grid(&f, &coarse, 0.125).unwrap();
        assert_eq!(s, f);
    }

    #[test]
    fn eighty_fine_pixels_per_coarse_pixel() {
        let f = fine(0.0, 20.0, 160, 160);
        let coarse = GeoGrid::new(0.0, 20.0, 10.0, 10.0, 2, 2).unwrap();
        let s = snap_to_grid(&f, &coarse, 0.125).unwrap();
        assert_eq!(s.width(), 160);
        assert_eq!(integer_ratio(10.0, 0.125, "x").unwrap(), 80);
    }

    #[test]
    fn non_integral_ratio_is_geometry_error() {
        let f = fine(0.0, 2.0, 32, 16);
        let coarse = GeoGrid::new(0.0, 2.0, 1.0, 1.0, 4, 2).unwrap();
        assert!(matches!(snap_to_grid(&f, &coarse, 0.3), Err(Error::Geometry(_))));
    }

    #[test]
    fn no_overlap_is_coverage_error() {
        let f = fine(100.0, 2.0, 8, 8);
        let coarse = GeoGrid::new(0.0, 2.0, 2.0, 2.0, 4, 1).unwrap();
        // The fine raster is 1 m wide, smaller than one 2 m coarse pixel.
        assert!(matches!(snap_to_grid(&f, &coarse, 0.125), Err(Error::Coverage(_))));
    }

    #[test]
    fn shift_moves_origin() {
        let f = fine(0.0, 2.0, 4, 4);
        let s = apply_shift(&f, 3, -2).unwrap();
        assert_eq!(s.grid().origin_x, 0.375);
        assert_eq!(s.grid().origin_y, 2.25);
    }
}
