use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scene::{scene_rng, Purpose, SceneConfig};
use crate::error::{Error, Result};
use crate::raster::{Band, GeoGrid, Raster};

/// Coarse counterpart of `fine` for scene `index`: the content is taken
/// `cfg.shift` fine pixels away from each coarse pixel's nominal footprint,
/// block-averaged by `cfg.scale`, passed through the per-band gain/offset,
/// perturbed by Gaussian noise of `cfg.noise_sigma` and clipped to [0, 1].
///
/// The coarse grid keeps the fine lattice: for a shift `s`, registering the
/// fine raster against the result recovers `−s`.
pub fn degrade_at(fine: &Raster, cfg: &SceneConfig, index: usize) -> Result<Raster> {
    let f = cfg.scale;
    if f == 0 {
        return Err(Error::Config("scale must be positive".into()));
    }
    let [sx, sy] = cfg.shift;
    let (w, h) = (fine.width() as i64, fine.height() as i64);
    let (off_x, off_y) = ((-sx).max(0), (-sy).max(0));
    let cw = (w - sx.abs()).div_euclid(f as i64);
    let ch = (h - sy.abs()).div_euclid(f as i64);
    if cw < 1 || ch < 1 {
        return Err(Error::Geometry(format!(
            "shift ({sx}, {sy}) leaves no full {f}x{f} block inside the {w}x{h} raster"
        )));
    }
    let nb = fine.n_bands();
    let gains = per_band(&cfg.gains, nb, 1.0, "gains")?;
    let offsets = per_band(&cfg.offsets, nb, 0.0, "offsets")?;
    let (cw, ch) = (cw as usize, ch as usize);
    let fg = fine.grid();
    let grid = GeoGrid {
        origin_x: fg.origin_x + off_x as f64 * fg.pixel_w,
        origin_y: fg.origin_y - off_y as f64 * fg.pixel_h,
        pixel_w: fg.pixel_w * f as f64,
        pixel_h: fg.pixel_h * f as f64,
        width: cw,
        height: ch,
    };
    let fw = fine.width();
    let mask = fine.mask();
    let mut out_mask = vec![true; cw * ch];
    let mut sums = vec![vec![0f64; cw * ch]; nb];
    for j in 0..ch {
        for i in 0..cw {
            let c0 = (off_x + sx) as usize + i * f;
            let r0 = (off_y + sy) as usize + j * f;
            let mut count = 0usize;
            for r in r0..r0 + f {
                for c in c0..c0 + f {
                    let p = r * fw + c;
                    if mask[p] {
                        count += 1;
                        for (b, s) in sums.iter_mut().enumerate() {
                            s[j * cw + i] += fine.band(b).data[p] as f64;
                        }
                    }
                }
            }
            if 2 * count < f * f {
                out_mask[j * cw + i] = false;
                sums.iter_mut().for_each(|s| s[j * cw + i] = 0.0);
            } else {
                sums.iter_mut().for_each(|s| s[j * cw + i] /= count as f64);
            }
        }
    }
    let mut rng: ChaCha8Rng = scene_rng(cfg.seed, index, Purpose::Noise);
    let bands = sums
        .into_iter()
        .enumerate()
        .map(|(b, s)| {
            let data = s
                .iter()
                .zip(&out_mask)
                .map(|(&v, &ok)| {
                    if !ok {
                        return 0.0;
                    }
                    let mut y = gains[b] * v + offsets[b];
                    if cfg.noise_sigma > 0.0 {
                        let z: f64 = rng.sample(StandardNormal);
                        y += cfg.noise_sigma * z;
                    }
                    y.clamp(0.0, 1.0) as f32
                })
                .collect();
            let src = fine.band(b);
            Band { name: src.name.clone(), wavelength_nm: src.wavelength_nm, data }
        })
        .collect();
    Raster::new(grid, bands, Some(out_mask))
}

pub fn degrade(fine: &Raster, cfg: &SceneConfig) -> Result<Raster> {
    degrade_at(fine, cfg, 0)
}

fn per_band(v: &Option<Vec<f64>>, n: usize, default: f64, what: &str) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![default; n]),
        Some(v) if v.len() == n => Ok(v.clone()),
        Some(v) => Err(Error::Config(format!("{} {what} for {n} bands", v.len()))),
    }
}

/// Noise standard deviation giving `snr_db` against the pooled standard
/// deviation of the valid pixels of `r`.
pub fn sigma_for_snr(r: &Raster, snr_db: f64) -> f64 {
    let mask = r.mask();
    let vals: Vec<f64> =
        r.bands().iter().flat_map(|b| b.data.iter().zip(mask).filter(|(_, &ok)| ok).map(|(&v, _)| v as f64)).collect();
    if vals.is_empty() {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    sd / 10f64.powf(snr_db / 20.0)
}
