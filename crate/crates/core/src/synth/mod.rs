//! Synthetic scenes with known ground truth: hyperspectral cubes mixed from
//! smooth endmember spectra, their simulated satellite bands, degraded
//! coarse products and quadrat samples.

mod dataset;
mod degrade;
mod scene;

pub use dataset::{
    default_weights, generate_scene, make_fusion_dataset, quadrat_samples, rgb_from_truth, simulate_scene, split_for,
    DatasetConfig, HyperOutput, Manifest, QuadratTargetConfig, SceneEntry, SceneFiles, SceneProducts, MANIFEST_NAME,
    RGB_BANDS, RGB_NAMES,
};
pub use degrade::{degrade, degrade_at, sigma_for_snr};
pub use scene::{abundance_maps, endmember_library, gen_hyper_scene, gen_hyper_scene_at, SceneConfig};
