use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::degrade::{degrade_at, sigma_for_snr};
use super::scene::{abundance_maps, cube_rows, endmember_library, scene_rng, Purpose, SceneConfig};
use crate::error::{Error, Result};
use crate::forest::{extract_quadrat_features, Quadrat, SampleSet, DEFAULT_QUADRAT_SIDE};
use crate::raster::{upsample_bicubic, write_bsf, Band, Raster};
use crate::spectral::{fit_band_weights, simulate_bands, BandWeights, SpectralResponseTable};

/// Simulated bands copied into the fine RGB product, in R, G, B order.
pub const RGB_BANDS: [&str; 3] = ["B4", "B3", "B2"];
pub const RGB_NAMES: [&str; 3] = ["red", "green", "blue"];

const STRIP_ROWS: usize = 32;

fn d_scenes() -> usize {
    8
}
fn d_snr() -> Option<f64> {
    Some(30.0)
}

/// Quadrat samples whose target is a linear function of one simulated band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratTargetConfig {
    pub per_scene: usize,
    pub band: String,
    pub gain: f64,
    pub offset: f64,
    pub noise_sigma: f64,
    pub side_m: f64,
}

impl Default for QuadratTargetConfig {
    fn default() -> Self {
        QuadratTargetConfig {
            per_scene: 40,
            band: "B8".into(),
            gain: 10.0,
            offset: 0.0,
            noise_sigma: 0.05,
            side_m: DEFAULT_QUADRAT_SIDE,
        }
    }
}

/// Which scenes also get their full hyperspectral cube written (large).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HyperOutput {
    #[default]
    None,
    First,
    All,
}

impl HyperOutput {
    pub fn includes(self, index: usize) -> bool {
        match self {
            HyperOutput::None => false,
            HyperOutput::First => index == 0,
            HyperOutput::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default = "d_scenes")]
    pub n_scenes: usize,
    /// When set, each scene's noise σ is derived from this SNR against the
    /// noiseless coarse product, overriding `scene.noise_sigma`.
    #[serde(default = "d_snr")]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub emit_hyper: HyperOutput,
    #[serde(default)]
    pub quadrats: Option<QuadratTargetConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            scene: SceneConfig::default(),
            n_scenes: d_scenes(),
            snr_db: d_snr(),
            emit_hyper: HyperOutput::None,
            quadrats: Some(QuadratTargetConfig::default()),
        }
    }
}

/// Everything generated for one scene.
#[derive(Debug, Clone)]
pub struct SceneProducts {
    pub index: usize,
    pub hyper: Option<Raster>,
    pub truth8: Raster,
    pub rgb: Raster,
    pub coarse: Raster,
    pub coarse_upsampled: Raster,
    pub noise_sigma: f64,
}

/// `train` / `val` / `test` by index: the last ⌈n/4⌉ scenes are test, the
/// one before them validation, the rest training.
pub fn split_for(index: usize, n: usize) -> &'static str {
    let n_test = n.div_ceil(4);
    if index >= n - n_test {
        "test"
    } else if index + 1 == n - n_test {
        "val"
    } else {
        "train"
    }
}

/// Fitted weights for the approximate Sentinel-2 VNIR bands on the scene
/// camera.
pub fn default_weights(cfg: &SceneConfig) -> Result<BandWeights> {
    fit_band_weights(&SpectralResponseTable::sentinel2_vnir_approx(), &cfg.camera)
}

/// Simulated bands of scene `index`, computed strip by strip so the full
/// cube is never held in memory. Equal to `simulate_bands` on the whole cube.
pub fn simulate_scene(cfg: &SceneConfig, index: usize, weights: &BandWeights) -> Result<Raster> {
    cfg.validate()?;
    let lib = endmember_library(cfg);
    let ab = abundance_maps(cfg, index);
    let mut planes: Vec<Vec<f32>> = vec![Vec::with_capacity(cfg.width * cfg.height); weights.bands.len()];
    let mut meta: Vec<(String, Option<f64>)> = Vec::new();
    let mut r0 = 0;
    while r0 < cfg.height {
        let r1 = (r0 + STRIP_ROWS).min(cfg.height);
        let strip = simulate_bands(&cube_rows(cfg, &lib, &ab, r0..r1)?, weights)?;
        for (p, b) in planes.iter_mut().zip(strip.bands()) {
            p.extend_from_slice(&b.data);
        }
        if meta.is_empty() {
            meta = strip.bands().iter().map(|b| (b.name.clone(), b.wavelength_nm)).collect();
        }
        r0 = r1;
    }
    let bands = planes.into_iter().zip(meta).map(|(data, (name, wl))| Band { name, wavelength_nm: wl, data }).collect();
    Raster::new(cfg.fine_grid(), bands, None)
}

/// Fine RGB product: the simulated red, green and blue bands.
pub fn rgb_from_truth(truth8: &Raster) -> Result<Raster> {
    let names = truth8.band_names();
    let idx: Vec<usize> = RGB_BANDS
        .iter()
        .map(|b| names.iter().position(|n| n == b).ok_or_else(|| Error::Schema(format!("no band {b} in truth"))))
        .collect::<Result<_>>()?;
    let sel = truth8.select_bands(&idx)?;
    let bands = sel.bands().iter().zip(RGB_NAMES).map(|(b, n)| Band { name: n.to_string(), ..b.clone() }).collect();
    Raster::new(*sel.grid(), bands, Some(sel.mask().to_vec()))
}

/// Generates every product of scene `index`.
pub fn generate_scene(
    cfg: &DatasetConfig,
    index: usize,
    weights: &BandWeights,
    keep_hyper: bool,
) -> Result<SceneProducts> {
    let scene = &cfg.scene;
    let (hyper, truth8) = if keep_hyper {
        let cube = super::scene::gen_hyper_scene_at(scene, index)?;
        let t = simulate_bands(&cube, weights)?;
        (Some(cube), t)
    } else {
        (None, simulate_scene(scene, index, weights)?)
    };
    let rgb = rgb_from_truth(&truth8)?;
    let noise_sigma = match cfg.snr_db {
        Some(db) => {
            let clean = degrade_at(&truth8, &SceneConfig { noise_sigma: 0.0, ..scene.clone() }, index)?;
            sigma_for_snr(&clean, db)
        }
        None => scene.noise_sigma,
    };
    let coarse = degrade_at(&truth8, &SceneConfig { noise_sigma, ..scene.clone() }, index)?;
    let coarse_upsampled = upsample_bicubic(&coarse, scene.scale)?;
    Ok(SceneProducts { index, hyper, truth8, rgb, coarse, coarse_upsampled, noise_sigma })
}

/// Quadrats at seeded random positions inside the scene with targets
/// `gain · mean(band) + offset + noise`.
pub fn quadrat_samples(
    cfg: &DatasetConfig,
    q: &QuadratTargetConfig,
    index: usize,
    truth8: &Raster,
) -> Result<SampleSet> {
    let band = truth8
        .band_names()
        .iter()
        .position(|n| *n == q.band)
        .ok_or_else(|| Error::Schema(format!("no band {} for quadrat targets", q.band)))?;
    let g = truth8.grid();
    let (w_m, h_m) = (g.width as f64 * g.pixel_w, g.height as f64 * g.pixel_h);
    let half = q.side_m / 2.0;
    if 2.0 * half > w_m.min(h_m) {
        return Err(Error::Config("quadrat side exceeds the scene".into()));
    }
    let mut rng = scene_rng(cfg.scene.seed, index, Purpose::Quadrats);
    let quadrats: Vec<Quadrat> = (0..q.per_scene)
        .map(|k| Quadrat {
            id: format!("s{index:02}q{k:03}"),
            x_m: g.origin_x + rng.gen_range(half..w_m - half),
            y_m: g.origin_y - rng.gen_range(half..h_m - half),
            side_m: q.side_m,
            target: 0.0,
        })
        .collect();
    let mut set = extract_quadrat_features(truth8, &quadrats)?;
    for s in &mut set.samples {
        let z: f64 = rng.sample(StandardNormal);
        s.target = q.gain * s.features[band] + q.offset + q.noise_sigma * z;
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub hyper: Option<String>,
    pub truth8: String,
    pub rgb: String,
    pub coarse: String,
    pub coarse_upsampled: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: String,
    pub site: String,
    pub date: String,
    pub noise_sigma: f64,
    pub files: SceneFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    /// Generator used for every random draw.
    pub prng: String,
    pub config: DatasetConfig,
    /// Band weights used to simulate the eight-band truth.
    pub weights: String,
    pub samples: Option<String>,
    pub scenes: Vec<SceneEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Resolves a manifest-relative path.
    pub fn resolve(dir: &Path, rel: &str) -> PathBuf {
        dir.join(rel)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes every scene product, the band weights, the SRF table, optional
/// quadrat samples and `manifest.json` into `out_dir`.
pub fn make_fusion_dataset(cfg: &DatasetConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out = out_dir.as_ref();
    if cfg.n_scenes < 3 {
        return Err(Error::Config(format!("{} scenes requested, need at least 3", cfg.n_scenes)));
    }
    cfg.scene.validate()?;
    std::fs::create_dir_all(out)?;
    let srf = SpectralResponseTable::sentinel2_vnir_approx();
    srf.to_csv(out.join("srf.csv"))?;
    let weights = default_weights(&cfg.scene)?;
    weights.save(out.join("weights.json"))?;

    let results: Vec<(SceneEntry, Option<SampleSet>)> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| {
            let p = generate_scene(cfg, i, &weights, cfg.emit_hyper.includes(i))?;
            let id = format!("scene{i:02}");
            std::fs::create_dir_all(out.join(&id))?;
            let rel = |name: &str| format!("{id}/{name}.bsf");
            let hyper = match &p.hyper {
                Some(h) => {
                    write_bsf(h, out.join(rel("hyper")))?;
                    Some(rel("hyper"))
                }
                None => None,
            };
            write_bsf(&p.truth8, out.join(rel("truth8")))?;
            write_bsf(&p.rgb, out.join(rel("rgb")))?;
            write_bsf(&p.coarse, out.join(rel("coarse")))?;
            write_bsf(&p.coarse_upsampled, out.join(rel("coarse_upsampled")))?;
            let samples = cfg.quadrats.as_ref().map(|q| quadrat_samples(cfg, q, i, &p.truth8)).transpose()?;
            Ok((
                SceneEntry {
                    id: id.clone(),
                    split: split_for(i, cfg.n_scenes).into(),
                    site: "synthetic".into(),
                    date: id.clone(),
                    noise_sigma: p.noise_sigma,
                    files: SceneFiles {
                        hyper,
                        truth8: rel("truth8"),
                        rgb: rel("rgb"),
                        coarse: rel("coarse"),
                        coarse_upsampled: rel("coarse_upsampled"),
                    },
                },
                samples,
            ))
        })
        .collect::<Result<_>>()?;

    let mut scenes = Vec::with_capacity(results.len());
    let mut all: Option<SampleSet> = None;
    for (entry, samples) in results {
        scenes.push(entry);
        if let Some(s) = samples {
            match &mut all {
                None => all = Some(s),
                Some(a) => a.samples.extend(s.samples),
            }
        }
    }
    let samples = match all {
        Some(s) => {
            s.to_csv(out.join("samples.csv"))?;
            Some("samples.csv".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        seed: cfg.scene.seed,
        prng: "ChaCha8, seeded with the dataset seed; stream 4·scene + purpose".into(),
        config: cfg.clone(),
        weights: "weights.json".into(),
        samples,
        scenes,
    };
    std::fs::write(out.join(MANIFEST_NAME), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
