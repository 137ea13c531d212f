use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::align::PixelShift;
use crate::error::{Error, Result};
use crate::raster::{Band, GeoGrid, Raster};
use crate::spectral::HyperBandSpec;

/// ChaCha stream reserved for the endmember library shared by all scenes.
const LIBRARY_STREAM: u64 = u64::MAX;

/// Stream purposes within one scene.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Purpose {
    Abundance = 0,
    Noise = 1,
    Quadrats = 2,
}

/// Generator for scene `index` and `purpose`, independent of every other
/// (scene, purpose) pair.
pub(crate) fn scene_rng(seed: u64, index: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 * 4 + purpose as u64);
    rng
}

fn d_seed() -> u64 {
    7
}
fn d_size() -> usize {
    640
}
fn d_endmembers() -> usize {
    5
}
fn d_length() -> f64 {
    6.0
}
fn d_sharp() -> f64 {
    2.5
}
fn d_scale() -> usize {
    8
}
fn d_pixel() -> f64 {
    0.125
}
fn d_camera() -> HyperBandSpec {
    HyperBandSpec::default269()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Fine pixels.
    #[serde(default = "d_size")]
    pub width: usize,
    #[serde(default = "d_size")]
    pub height: usize,
    #[serde(default = "d_camera")]
    pub camera: HyperBandSpec,
    #[serde(default = "d_endmembers")]
    pub endmembers: usize,
    /// Gaussian smoothing length of the abundance fields, in fine pixels.
    #[serde(default = "d_length")]
    pub length_scale: f64,
    /// Softmax gain applied to the standardized abundance fields; larger
    /// values give more distinct patches.
    #[serde(default = "d_sharp")]
    pub sharpness: f64,
    /// Noise standard deviation of the degraded product.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Translation injected by `degrade`, in fine pixels.
    #[serde(default)]
    pub shift: [i64; 2],
    /// Fine pixels per coarse pixel.
    #[serde(default = "d_scale")]
    pub scale: usize,
    #[serde(default = "d_pixel")]
    pub pixel_m: f64,
    /// Per-band gain and offset applied by `degrade`.
    #[serde(default)]
    pub gains: Option<Vec<f64>>,
    #[serde(default)]
    pub offsets: Option<Vec<f64>>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: d_seed(),
            width: d_size(),
            height: d_size(),
            camera: d_camera(),
            endmembers: d_endmembers(),
            length_scale: d_length(),
            sharpness: d_sharp(),
            noise_sigma: 0.0,
            shift: [0, 0],
            scale: d_scale(),
            pixel_m: d_pixel(),
            gains: None,
            offsets: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.scale == 0 {
            return Err(Error::Config("scene size and scale must be positive".into()));
        }
        if !self.width.is_multiple_of(self.scale) || !self.height.is_multiple_of(self.scale) {
            return Err(Error::Config(format!(
                "scene {}x{} is not divisible by scale {}",
                self.width, self.height, self.scale
            )));
        }
        if self.endmembers == 0 {
            return Err(Error::Config("at least one endmember is required".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.length_scale >= 0.0) || !self.sharpness.is_finite() {
            return Err(Error::Config("noise, length scale and sharpness must be finite and nonnegative".into()));
        }
        if !(self.pixel_m > 0.0) {
            return Err(Error::Config("pixel size must be positive".into()));
        }
        Ok(())
    }

    pub fn injected_shift(&self) -> PixelShift {
        PixelShift::new(self.shift[0], self.shift[1])
    }

    /// Fine grid with its upper-left corner at `(0, height·pixel_m)`.
    pub fn fine_grid(&self) -> GeoGrid {
        GeoGrid {
            origin_x: 0.0,
            origin_y: self.height as f64 * self.pixel_m,
            pixel_w: self.pixel_m,
            pixel_h: self.pixel_m,
            width: self.width,
            height: self.height,
        }
    }
}

/// Reflectance spectra sampled at the camera centers, one per endmember.
/// Each spectrum is a baseline plus 2–4 Gaussian bumps, clipped to [0, 1].
pub fn endmember_library(cfg: &SceneConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(LIBRARY_STREAM);
    let (lo, hi) = (cfg.camera.centers[0], *cfg.camera.centers.last().unwrap());
    (0..cfg.endmembers)
        .map(|_| {
            let base: f64 = rng.gen_range(0.02..0.15);
            let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(2..=4))
                .map(|_| (rng.gen_range(lo..hi), rng.gen_range(20.0..150.0), rng.gen_range(0.05..0.6)))
                .collect();
            cfg.camera
                .centers
                .iter()
                .map(|&l| {
                    let v = base
                        + bumps.iter().map(|&(c, w, a)| a * (-(l - c) * (l - c) / (2.0 * w * w)).exp()).sum::<f64>();
                    v.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped edges.
fn smooth(field: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[y * w + (x as i64 + j as i64 - r).clamp(0, w as i64 - 1) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[(y as i64 + j as i64 - r).clamp(0, h as i64 - 1) as usize * w + x])
                .sum();
        }
    }
    out
}

/// Abundance maps of scene `index`: a softmax over standardized, smoothed
/// Gaussian noise fields, so every pixel lies on the simplex.
pub fn abundance_maps(cfg: &SceneConfig, index: usize) -> Vec<Vec<f64>> {
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    if cfg.endmembers == 1 {
        return vec![vec![1.0; n]];
    }
    let mut rng = scene_rng(cfg.seed, index, Purpose::Abundance);
    let fields: Vec<Vec<f64>> = (0..cfg.endmembers)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut f = smooth(&raw, w, h, cfg.length_scale);
            let mean = f.iter().sum::<f64>() / n as f64;
            let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt().max(1e-12);
            f.iter_mut().for_each(|v| *v = cfg.sharpness * (*v - mean) / sd);
            f
        })
        .collect();
    let mut out = vec![vec![0.0; n]; cfg.endmembers];
    for i in 0..n {
        let m = fields.iter().map(|f| f[i]).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = fields.iter().map(|f| (f[i] - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (o, v) in out.iter_mut().zip(&e) {
            o[i] = v / s;
        }
    }
    out
}

/// Fills `rows` of the hyperspectral cube from abundances and endmembers.
pub(crate) fn cube_rows(
    cfg: &SceneConfig,
    library: &[Vec<f64>],
    abundances: &[Vec<f64>],
    rows: std::ops::Range<usize>,
) -> Result<Raster> {
    let w = cfg.width;
    let n = rows.len() * w;
    let start = rows.start * w;
    let bands = cfg
        .camera
        .centers
        .iter()
        .enumerate()
        .map(|(k, &nm)| {
            let data = (start..start + n)
                .map(|i| {
                    let v: f64 = library.iter().zip(abundances).map(|(s, a)| a[i] * s[k]).sum();
                    v.clamp(0.0, 1.0) as f32
                })
                .collect();
            Band::new(format!("h{nm:.1}"), data).with_wavelength(nm)
        })
        .collect();
    let full = cfg.fine_grid();
    let grid = GeoGrid { origin_y: full.origin_y - rows.start as f64 * full.pixel_h, height: rows.len(), ..full };
    Raster::new(grid, bands, None)
}

/// Hyperspectral cube of scene `index`.
pub fn gen_hyper_scene_at(cfg: &SceneConfig, index: usize) -> Result<Raster> {
    cfg.validate()?;
    let lib = endmember_library(cfg);
    let ab = abundance_maps(cfg, index);
    cube_rows(cfg, &lib, &ab, 0..cfg.height)
}

/// Hyperspectral cube of the first scene of `cfg.seed`.
pub fn gen_hyper_scene(cfg: &SceneConfig) -> Result<Raster> {
    gen_hyper_scene_at(cfg, 0)
}
