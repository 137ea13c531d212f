//! JSON run-configs, one per stage, plus the `pipeline` document that chains
//! them. Unknown keys are rejected and relative paths are resolved against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skyfuse::align::Search;
use skyfuse::forest::ForestConfig;
use skyfuse::nn::{ArchConfig, TrainConfig};
use skyfuse::spectral::HyperBandSpec;
use skyfuse::synth::DatasetConfig;

use crate::error::{CliError, CliResult};

/// Config schema version understood by this build.
pub const CONFIG_VERSION: u32 = 1;

fn join(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn join_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        join(base, p);
    }
}

pub trait Resolve {
    fn resolve(&mut self, base: &Path);
}

/// Camera given by name (`default269`) or by explicit band centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraChoice {
    Named(String),
    Spec(HyperBandSpec),
}

impl Default for CameraChoice {
    fn default() -> Self {
        CameraChoice::Named("default269".into())
    }
}

impl CameraChoice {
    pub fn spec(&self) -> CliResult<HyperBandSpec> {
        match self {
            CameraChoice::Named(n) if n == "default269" => Ok(HyperBandSpec::default269()),
            CameraChoice::Named(n) => Err(CliError::Usage(format!("unknown camera '{n}' (expected default269)"))),
            CameraChoice::Spec(s) => Ok(HyperBandSpec::new(s.centers.clone(), s.fwhm)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSrfStage {
    #[serde(default)]
    pub version: Option<u32>,
    /// SRF table; the built-in approximate Sentinel-2 table when absent.
    #[serde(default)]
    pub srf: Option<PathBuf>,
    #[serde(default)]
    pub camera: CameraChoice,
    pub out: PathBuf,
}

impl Resolve for FitSrfStage {
    fn resolve(&mut self, base: &Path) {
        join_opt(base, &mut self.srf);
        join(base, &mut self.out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateStage {
    #[serde(default)]
    pub version: Option<u32>,
    pub cube: PathBuf,
    pub weights: PathBuf,
    pub out: PathBuf,
    /// Raster to compare the simulated bands against.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

impl Resolve for SimulateStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.cube);
        join(base, &mut self.weights);
        join(base, &mut self.out);
        join_opt(base, &mut self.reference);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignStage {
    #[serde(default)]
    pub version: Option<u32>,
    pub fine: PathBuf,
    /// Raster whose grid defines the coarse lattice.
    pub coarse: PathBuf,
    /// Output pixel size in meters; the fine pixel width when absent.
    #[serde(default)]
    pub target_pixel: Option<f64>,
    /// Whole fine-pixel translation `[dx, dy]` (right, down) applied before
    /// snapping.
    #[serde(default)]
    pub apply_shift: Option<[i64; 2]>,
    pub out: PathBuf,
}

impl Resolve for AlignStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.fine);
        join(base, &mut self.coarse);
        join(base, &mut self.out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterStage {
    #[serde(default)]
    pub version: Option<u32>,
    pub fine: PathBuf,
    pub coarse: PathBuf,
    #[serde(default)]
    pub search: Search,
    /// Search radius in fine pixels; one coarse pixel when absent.
    #[serde(default)]
    pub radius: Option<i64>,
    pub out: PathBuf,
}

impl Resolve for RegisterStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.fine);
        join(base, &mut self.coarse);
        join(base, &mut self.out);
    }
}

/// How network inputs are assembled from a synthetic dataset scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Upsampled coarse bands followed by the fine RGB bands.
    Spectral,
    /// Fine RGB only.
    Rgb,
    /// Upsampled coarse bands only.
    Upsampled,
}

impl InputKind {
    pub fn for_preset(preset: &str) -> Option<Self> {
        match preset {
            "spectral" => Some(InputKind::Spectral),
            "spectral-rgb" => Some(InputKind::Rgb),
            "spatial" | "temporal" => Some(InputKind::Upsampled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub id: String,
    #[serde(default)]
    pub site: String,
    #[serde(default)]
    pub date: String,
    #[serde(default)]
    pub split: Option<String>,
    /// Rasters stacked band-wise into the network input.
    pub inputs: Vec<PathBuf>,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainStage {
    #[serde(default)]
    pub version: Option<u32>,
    #[serde(default)]
    pub preset: Option<String>,
    /// Full layout; overrides `preset`.
    #[serde(default)]
    pub arch: Option<ArchConfig>,
    /// Synthetic dataset manifest supplying the image pairs.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub input: Option<InputKind>,
    /// Explicit image pairs, used instead of a manifest.
    #[serde(default)]
    pub pairs: Option<Vec<PairSpec>>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub precision: Precision,
    /// Checkpoint to continue from.
    #[serde(default)]
    pub init: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(default)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Resolve for TrainStage {
    fn resolve(&mut self, base: &Path) {
        join_opt(base, &mut self.manifest);
        if let Some(pairs) = &mut self.pairs {
            for p in pairs {
                p.inputs.iter_mut().for_each(|i| join(base, i));
                join(base, &mut p.target);
            }
        }
        join_opt(base, &mut self.init);
        join(base, &mut self.out);
        join_opt(base, &mut self.loss_log);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferStage {
    #[serde(default)]
    pub version: Option<u32>,
    pub model: PathBuf,
    /// Rasters stacked into one input image.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Synthetic dataset manifest; every scene of `split` is inferred into
    /// `out_dir/<scene>.bsf`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub input: Option<InputKind>,
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub tile: Option<usize>,
    #[serde(default)]
    pub overlap: Option<usize>,
}

impl Resolve for InferStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.model);
        self.inputs.iter_mut().for_each(|i| join(base, i));
        join_opt(base, &mut self.out);
        join_opt(base, &mut self.manifest);
        join_opt(base, &mut self.out_dir);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateStage {
    #[serde(default)]
    pub version: Option<u32>,
    #[serde(default)]
    pub pred: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    /// Synthetic dataset manifest; predictions are read from
    /// `pred_dir/<scene>.bsf` for every scene of `split`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub pred_dir: Option<PathBuf>,
    #[serde(default)]
    pub split: Option<String>,
    #[serde(default)]
    pub site: Option<String>,
    #[serde(default)]
    pub date: Option<String>,
    #[serde(default)]
    pub per_band: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

impl Resolve for EvaluateStage {
    fn resolve(&mut self, base: &Path) {
        join_opt(base, &mut self.pred);
        join_opt(base, &mut self.truth);
        join_opt(base, &mut self.manifest);
        join_opt(base, &mut self.pred_dir);
        join_opt(base, &mut self.out);
        join_opt(base, &mut self.csv);
    }
}

fn d_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfFitStage {
    #[serde(default)]
    pub version: Option<u32>,
    pub samples: PathBuf,
    /// Feature columns to use; all when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
}

impl Resolve for RfFitStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.samples);
        join(base, &mut self.out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfCvStage {
    #[serde(default)]
    pub version: Option<u32>,
    pub samples: PathBuf,
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default = "d_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
}

impl Resolve for RfCvStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.samples);
        join(base, &mut self.out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSyntheticStage {
    #[serde(default)]
    pub version: Option<u32>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub out: PathBuf,
}

impl Resolve for GenSyntheticStage {
    fn resolve(&mut self, base: &Path) {
        join(base, &mut self.out);
    }
}

/// One step of a pipeline, tagged by its subcommand name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "kebab-case")]
pub enum Stage {
    FitSrf(FitSrfStage),
    Simulate(SimulateStage),
    Align(AlignStage),
    Register(RegisterStage),
    Train(TrainStage),
    Infer(InferStage),
    Evaluate(EvaluateStage),
    RfFit(RfFitStage),
    RfCv(RfCvStage),
    GenSynthetic(GenSyntheticStage),
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::FitSrf(_) => "fit-srf",
            Stage::Simulate(_) => "simulate",
            Stage::Align(_) => "align",
            Stage::Register(_) => "register",
            Stage::Train(_) => "train",
            Stage::Infer(_) => "infer",
            Stage::Evaluate(_) => "evaluate",
            Stage::RfFit(_) => "rf-fit",
            Stage::RfCv(_) => "rf-cv",
            Stage::GenSynthetic(_) => "gen-synthetic",
        }
    }

    fn version(&self) -> Option<u32> {
        match self {
            Stage::FitSrf(s) => s.version,
            Stage::Simulate(s) => s.version,
            Stage::Align(s) => s.version,
            Stage::Register(s) => s.version,
            Stage::Train(s) => s.version,
            Stage::Infer(s) => s.version,
            Stage::Evaluate(s) => s.version,
            Stage::RfFit(s) => s.version,
            Stage::RfCv(s) => s.version,
            Stage::GenSynthetic(s) => s.version,
        }
    }
}

impl Resolve for Stage {
    fn resolve(&mut self, base: &Path) {
        match self {
            Stage::FitSrf(s) => s.resolve(base),
            Stage::Simulate(s) => s.resolve(base),
            Stage::Align(s) => s.resolve(base),
            Stage::Register(s) => s.resolve(base),
            Stage::Train(s) => s.resolve(base),
            Stage::Infer(s) => s.resolve(base),
            Stage::Evaluate(s) => s.resolve(base),
            Stage::RfFit(s) => s.resolve(base),
            Stage::RfCv(s) => s.resolve(base),
            Stage::GenSynthetic(s) => s.resolve(base),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub stages: Vec<Stage>,
}

fn check_version(v: Option<u32>, path: &Path) -> CliResult<()> {
    match v {
        Some(CONFIG_VERSION) => Ok(()),
        Some(other) => Err(CliError::Config {
            path: path.to_path_buf(),
            msg: format!("unsupported config version {other} (expected {CONFIG_VERSION})"),
        }),
        None => Err(CliError::Config { path: path.to_path_buf(), msg: "missing `version` field".into() }),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config { path: path.to_path_buf(), msg: e.to_string() })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads a single-stage config of the given kind.
pub fn load_stage<T>(path: &Path, version: impl Fn(&T) -> Option<u32>) -> CliResult<T>
where
    T: serde::de::DeserializeOwned + Resolve,
{
    let mut cfg: T = read_json(path)?;
    check_version(version(&cfg), path)?;
    cfg.resolve(&base_dir(path));
    Ok(cfg)
}

pub fn load_pipeline(path: &Path) -> CliResult<PipelineConfig> {
    let mut cfg: PipelineConfig = read_json(path)?;
    check_version(Some(cfg.version), path)?;
    for s in &cfg.stages {
        if let Some(v) = s.version() {
            check_version(Some(v), path)?;
        }
    }
    let base = base_dir(path);
    cfg.stages.iter_mut().for_each(|s| s.resolve(&base));
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_reject_unknown_keys() {
        let ok = r#"{"stage": "fit-srf", "out": "w.json"}"#;
        assert!(serde_json::from_str::<Stage>(ok).is_ok());
        let bad = r#"{"stage": "fit-srf", "out": "w.json", "bogus": 1}"#;
        assert!(serde_json::from_str::<Stage>(bad).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut s: Stage =
            serde_json::from_str(r#"{"stage": "align", "fine": "a.bsf", "coarse": "/abs/c.bsf", "out": "o.bsf"}"#)
                .unwrap();
        s.resolve(Path::new("/cfg/dir"));
        match s {
            Stage::Align(a) => {
                assert_eq!(a.fine, PathBuf::from("/cfg/dir/a.bsf"));
                assert_eq!(a.coarse, PathBuf::from("/abs/c.bsf"));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn camera_choice_parses_both_forms() {
        let named: CameraChoice = serde_json::from_str(r#""default269""#).unwrap();
        assert_eq!(named.spec().unwrap().len(), 269);
        assert!(CameraChoice::Named("other".into()).spec().is_err());
    }
}
