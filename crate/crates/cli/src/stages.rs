//! Stage runners. Each reads its inputs, calls the library operation, writes
//! its outputs and returns a JSON summary.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use skyfuse::align::{apply_shift, register_with, snap_to_grid, RegisterOptions};
use skyfuse::forest::{cross_validate_samples, fit_samples, SampleSet};
use skyfuse::metrics::{evaluate_many, evaluate_with, write_metrics_csv, EvalItem, ImageMetrics};
use skyfuse::nn::{
    infer_tiled_with, load_checkpoint, save_checkpoint, save_loss_log, train, train_from, ArchConfig, SrcnnModel,
    TileSpec, TrainOutcome, TrainPair,
};
use skyfuse::raster::{read_bsf, stack_bands, write_bsf};
use skyfuse::spectral::{fit_band_weights, simulate_bands, BandWeights, SpectralResponseTable};
use skyfuse::synth::{make_fusion_dataset, Manifest, SceneEntry};
use skyfuse::{Raster, Scalar};

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::log;

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn write_raster(path: &Path, r: &Raster) -> CliResult<()> {
    ensure_parent(path)?;
    write_bsf(r, path)?;
    Ok(())
}

fn stack_all(paths: &[PathBuf]) -> CliResult<Raster> {
    let (first, rest) = paths.split_first().ok_or_else(|| CliError::Usage("no input rasters given".into()))?;
    let mut acc = read_bsf(first)?;
    for p in rest {
        acc = stack_bands(&acc, &read_bsf(p)?)?;
    }
    Ok(acc)
}

struct Dataset {
    dir: PathBuf,
    manifest: Manifest,
}

impl Dataset {
    fn open(path: &Path) -> CliResult<Self> {
        let manifest = Manifest::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset { dir, manifest })
    }

    fn file(&self, rel: &str) -> PathBuf {
        Manifest::resolve(&self.dir, rel)
    }

    fn scenes<'a>(&'a self, split: Option<&'a str>) -> impl Iterator<Item = &'a SceneEntry> + 'a {
        self.manifest.scenes.iter().filter(move |s| split.is_none_or(|sp| s.split == sp))
    }

    fn input(&self, s: &SceneEntry, kind: InputKind) -> CliResult<Raster> {
        let f = &s.files;
        Ok(match kind {
            InputKind::Spectral => {
                stack_bands(&read_bsf(self.file(&f.coarse_upsampled))?, &read_bsf(self.file(&f.rgb))?)?
            }
            InputKind::Rgb => read_bsf(self.file(&f.rgb))?,
            InputKind::Upsampled => read_bsf(self.file(&f.coarse_upsampled))?,
        })
    }

    fn truth(&self, s: &SceneEntry) -> CliResult<Raster> {
        Ok(read_bsf(self.file(&s.files.truth8))?)
    }
}

fn input_kind(explicit: Option<InputKind>, preset: &str) -> CliResult<InputKind> {
    explicit
        .or_else(|| InputKind::for_preset(preset))
        .ok_or_else(|| CliError::Usage(format!("no default input layout for preset '{preset}'; set `input`")))
}

pub fn fit_srf(cfg: &FitSrfStage) -> CliResult<Value> {
    let srf = match &cfg.srf {
        Some(p) => SpectralResponseTable::from_csv(p)?,
        None => SpectralResponseTable::sentinel2_vnir_approx(),
    };
    let camera = cfg.camera.spec()?;
    let w = fit_band_weights(&srf, &camera)?;
    ensure_parent(&cfg.out)?;
    w.save(&cfg.out)?;
    let bands: Vec<Value> = w
        .bands
        .iter()
        .map(|b| {
            json!({
                "band": b.name,
                "residual": b.residual,
                "normalization": b.normalization,
                "active_bands": b.active_bands(),
                "center_nm": b.center_nm(&camera),
            })
        })
        .collect();
    Ok(json!({
        "out": cfg.out,
        "camera_bands": camera.len(),
        "activated_camera_bands": w.activated_camera_bands(),
        "bands": bands,
    }))
}

pub fn simulate(cfg: &SimulateStage) -> CliResult<Value> {
    let cube = read_bsf(&cfg.cube)?;
    let weights = BandWeights::load(&cfg.weights)?;
    let sim = simulate_bands(&cube, &weights)?;
    write_raster(&cfg.out, &sim)?;
    let mut out = json!({
        "out": cfg.out,
        "bands": sim.band_names(),
        "width": sim.width(),
        "height": sim.height(),
    });
    if let Some(r) = &cfg.reference {
        let reference = read_bsf(r)?;
        out["reference"] = serde_json::to_value(evaluate_with(&sim, &reference, true)?)?;
    }
    Ok(out)
}

pub fn align(cfg: &AlignStage) -> CliResult<Value> {
    let mut fine = read_bsf(&cfg.fine)?;
    let coarse = read_bsf(&cfg.coarse)?;
    if let Some([dx, dy]) = cfg.apply_shift {
        fine = apply_shift(&fine, dx, dy)?;
    }
    let target = cfg.target_pixel.unwrap_or(fine.grid().pixel_w);
    let snapped = snap_to_grid(&fine, coarse.grid(), target)?;
    write_raster(&cfg.out, &snapped)?;
    let g = snapped.grid();
    Ok(json!({
        "out": cfg.out,
        "width": g.width,
        "height": g.height,
        "origin": [g.origin_x, g.origin_y],
        "pixel": [g.pixel_w, g.pixel_h],
        "valid_pixels": snapped.valid_count(),
    }))
}

pub fn register(cfg: &RegisterStage) -> CliResult<Value> {
    let fine = read_bsf(&cfg.fine)?;
    let coarse = read_bsf(&cfg.coarse)?;
    let est = register_with(&fine, &coarse, RegisterOptions { search: cfg.search, radius: cfg.radius })?;
    let report = est.report();
    write_json(&cfg.out, &report)?;
    let mut v = serde_json::to_value(&report)?;
    v["out"] = json!(cfg.out);
    v["n_pixels"] = json!(est.n_pixels);
    Ok(v)
}

fn train_typed<T: Scalar>(
    init: Option<&Path>,
    arch: ArchConfig,
    pairs: &[TrainPair],
    cfg: &skyfuse::nn::TrainConfig,
) -> CliResult<TrainOutcome<T>> {
    Ok(match init {
        Some(p) => {
            let model: SrcnnModel<T> = load_checkpoint(p)?;
            if model.arch != arch {
                return Err(CliError::Usage("initial checkpoint layout differs from the requested one".into()));
            }
            train_from(model, pairs, cfg)?
        }
        None => train(arch, pairs, cfg)?,
    })
}

fn finish_training<T: Scalar>(cfg: &TrainStage, out: TrainOutcome<T>) -> CliResult<Value> {
    ensure_parent(&cfg.out)?;
    save_checkpoint(&out.model, &cfg.out)?;
    if let Some(p) = &cfg.loss_log {
        ensure_parent(p)?;
        save_loss_log(&out.log, p)?;
    }
    let meta = &out.model.meta;
    Ok(json!({
        "out": cfg.out,
        "preset": out.model.arch.preset,
        "param_count": out.model.param_count(),
        "checkpoint_bytes": std::fs::metadata(&cfg.out)?.len(),
        "steps": meta.steps,
        "epochs": meta.epochs,
        "best_step": out.best_step,
        "best_val_loss": meta.best_val_loss,
        "final_train_loss": meta.final_train_loss,
        "final_val_loss": meta.final_val_loss,
        "train_patches": out.train_patches,
        "val_patches": out.val_patches,
    }))
}

pub fn train_stage(cfg: &TrainStage) -> CliResult<Value> {
    let arch = match (&cfg.arch, &cfg.preset) {
        (Some(a), _) => a.clone(),
        (None, Some(p)) => ArchConfig::preset(p)?,
        (None, None) => return Err(CliError::Usage("train needs `preset` or `arch`".into())),
    };
    let pairs: Vec<TrainPair> = match (&cfg.manifest, &cfg.pairs) {
        (Some(m), None) => {
            let ds = Dataset::open(m)?;
            let kind = input_kind(cfg.input, &arch.preset)?;
            ds.scenes(None)
                .map(|s| {
                    Ok(TrainPair {
                        id: s.id.clone(),
                        site: s.site.clone(),
                        date: s.date.clone(),
                        split: Some(s.split.clone()),
                        input: ds.input(s, kind)?,
                        target: ds.truth(s)?,
                    })
                })
                .collect::<CliResult<_>>()?
        }
        (None, Some(pairs)) => pairs
            .iter()
            .map(|p| {
                Ok(TrainPair {
                    id: p.id.clone(),
                    site: p.site.clone(),
                    date: p.date.clone(),
                    split: p.split.clone(),
                    input: stack_all(&p.inputs)?,
                    target: read_bsf(&p.target)?,
                })
            })
            .collect::<CliResult<_>>()?,
        _ => return Err(CliError::Usage("train needs exactly one of `manifest` or `pairs`".into())),
    };
    log::info("train", json!({"pairs": pairs.len(), "preset": arch.preset, "precision": cfg.precision}));
    match cfg.precision {
        Precision::F64 => {
            let out = train_typed::<f64>(cfg.init.as_deref(), arch, &pairs, &cfg.train)?;
            finish_training(cfg, out)
        }
        Precision::F32 => {
            let out = train_typed::<f32>(cfg.init.as_deref(), arch, &pairs, &cfg.train)?;
            finish_training(cfg, out)
        }
    }
}

fn tile_spec(cfg: &InferStage, model: &SrcnnModel<f32>) -> TileSpec {
    let d = TileSpec::for_model(model);
    TileSpec { tile: cfg.tile.unwrap_or(d.tile), overlap: cfg.overlap.unwrap_or(d.overlap) }
}

pub fn infer(cfg: &InferStage) -> CliResult<Value> {
    let model: SrcnnModel<f32> = load_checkpoint(&cfg.model)?;
    let spec = tile_spec(cfg, &model);
    match (&cfg.manifest, cfg.inputs.is_empty()) {
        (None, false) => {
            let out = cfg.out.as_ref().ok_or_else(|| CliError::Usage("infer needs `out`".into()))?;
            let pred = infer_tiled_with(&model, &stack_all(&cfg.inputs)?, spec)?;
            write_raster(out, &pred)?;
            Ok(json!({"out": out, "bands": pred.band_names(), "width": pred.width(), "height": pred.height()}))
        }
        (Some(m), true) => {
            let dir =
                cfg.out_dir.as_ref().ok_or_else(|| CliError::Usage("infer over a manifest needs `out_dir`".into()))?;
            let ds = Dataset::open(m)?;
            let kind = input_kind(cfg.input, &model.arch.preset)?;
            let split = cfg.split.as_deref().unwrap_or("test");
            let mut written = Vec::new();
            for s in ds.scenes(Some(split)) {
                let pred = infer_tiled_with(&model, &ds.input(s, kind)?, spec)?;
                let path = dir.join(format!("{}.bsf", s.id));
                write_raster(&path, &pred)?;
                log::info("infer", json!({"scene": s.id, "out": path}));
                written.push(path);
            }
            Ok(json!({"split": split, "outputs": written}))
        }
        _ => Err(CliError::Usage("infer needs either `inputs` or `manifest`".into())),
    }
}

fn eval_items<'a>(scenes: &[&SceneEntry], preds: &'a [Raster], truths: &'a [Raster]) -> Vec<EvalItem<'a>> {
    scenes
        .iter()
        .zip(preds)
        .zip(truths)
        .map(|((s, p), t)| EvalItem { site: s.site.clone(), date: s.date.clone(), pred: p, truth: t })
        .collect()
}

fn mean_psnr(rows: &[ImageMetrics]) -> f64 {
    rows.iter().map(|r| r.report.psnr).sum::<f64>() / rows.len().max(1) as f64
}

fn write_csv(path: &Path, rows: &[ImageMetrics]) -> CliResult<()> {
    ensure_parent(path)?;
    write_metrics_csv(rows, BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn evaluate(cfg: &EvaluateStage) -> CliResult<Value> {
    let (result, rows) = match (&cfg.pred, &cfg.truth, &cfg.manifest) {
        (Some(p), Some(t), None) => {
            let pred = read_bsf(p)?;
            let truth = read_bsf(t)?;
            let report = evaluate_with(&pred, &truth, cfg.per_band)?;
            let row = ImageMetrics {
                site: cfg.site.clone().unwrap_or_default(),
                date: cfg.date.clone().unwrap_or_default(),
                report: report.clone(),
            };
            (serde_json::to_value(&report)?, vec![row])
        }
        (None, None, Some(m)) => {
            let pred_dir = cfg
                .pred_dir
                .as_ref()
                .ok_or_else(|| CliError::Usage("evaluate over a manifest needs `pred_dir`".into()))?;
            let ds = Dataset::open(m)?;
            let split = cfg.split.as_deref().unwrap_or("test");
            let scenes: Vec<&SceneEntry> = ds.scenes(Some(split)).collect();
            if scenes.is_empty() {
                return Err(CliError::Usage(format!("manifest has no '{split}' scenes")));
            }
            let mut preds = Vec::new();
            let mut truths = Vec::new();
            let mut bases = Vec::new();
            for s in &scenes {
                preds.push(read_bsf(pred_dir.join(format!("{}.bsf", s.id)))?);
                truths.push(ds.truth(s)?);
                bases.push(read_bsf(ds.file(&s.files.coarse_upsampled))?);
            }
            let rows = evaluate_many(&eval_items(&scenes, &preds, &truths), cfg.per_band)?;
            let baseline = evaluate_many(&eval_items(&scenes, &bases, &truths), cfg.per_band)?;
            let (m, b) = (mean_psnr(&rows), mean_psnr(&baseline));
            let v = json!({
                "split": split,
                "images": rows,
                "baseline": baseline,
                "mean_psnr": m,
                "baseline_mean_psnr": b,
                "gain_db": m - b,
            });
            (v, rows)
        }
        _ => return Err(CliError::Usage("evaluate needs `pred` and `truth`, or `manifest` and `pred_dir`".into())),
    };
    if let Some(p) = &cfg.out {
        write_json(p, &result)?;
    }
    if let Some(p) = &cfg.csv {
        write_csv(p, &rows)?;
    }
    Ok(result)
}

fn load_samples(path: &Path, features: &Option<Vec<String>>) -> CliResult<SampleSet> {
    let set = SampleSet::from_csv(path)?;
    Ok(match features {
        Some(f) => set.select(&f.iter().map(String::as_str).collect::<Vec<_>>())?,
        None => set,
    })
}

pub fn rf_fit(cfg: &RfFitStage) -> CliResult<Value> {
    let set = load_samples(&cfg.samples, &cfg.features)?;
    let model = fit_samples(&set, &cfg.forest, cfg.seed)?;
    ensure_parent(&cfg.out)?;
    model.save(&cfg.out)?;
    Ok(json!({
        "out": cfg.out,
        "n_samples": set.samples.len(),
        "features": model.feature_names,
        "n_trees": model.trees.len(),
        "oob_r2": model.oob_r2,
    }))
}

pub fn rf_cv(cfg: &RfCvStage) -> CliResult<Value> {
    let set = load_samples(&cfg.samples, &cfg.features)?;
    let report = cross_validate_samples(&set, cfg.folds, &cfg.forest, cfg.seed)?;
    write_json(&cfg.out, &report)?;
    Ok(json!({
        "out": cfg.out,
        "features": set.feature_names,
        "n_samples": set.samples.len(),
        "k": report.k,
        "pooled": report.pooled,
        "folds": report.folds,
    }))
}

pub fn gen_synthetic(cfg: &GenSyntheticStage) -> CliResult<Value> {
    let manifest = make_fusion_dataset(&cfg.dataset, &cfg.out)?;
    Ok(json!({
        "out": cfg.out,
        "manifest": cfg.out.join(skyfuse::synth::MANIFEST_NAME),
        "scenes": manifest.scenes.len(),
        "samples": manifest.samples,
        "seed": manifest.seed,
    }))
}

pub fn run(stage: &Stage) -> CliResult<Value> {
    match stage {
        Stage::FitSrf(c) => fit_srf(c),
        Stage::Simulate(c) => simulate(c),
        Stage::Align(c) => align(c),
        Stage::Register(c) => register(c),
        Stage::Train(c) => train_stage(c),
        Stage::Infer(c) => infer(c),
        Stage::Evaluate(c) => evaluate(c),
        Stage::RfFit(c) => rf_fit(c),
        Stage::RfCv(c) => rf_cv(c),
        Stage::GenSynthetic(c) => gen_synthetic(c),
    }
}

/// Runs a stage between start/done log records.
pub fn run_logged(stage: &Stage) -> CliResult<Value> {
    let timer = log::StageTimer::start(stage.name());
    match run(stage) {
        Ok(v) => {
            timer.done(&v);
            Ok(v)
        }
        Err(e) => {
            timer.failed(&e.to_string());
            Err(e)
        }
    }
}

pub fn pipeline(cfg: &PipelineConfig) -> CliResult<Value> {
    let mut results = Vec::with_capacity(cfg.stages.len());
    for stage in &cfg.stages {
        let v = run_logged(stage)?;
        results.push(json!({"stage": stage.name(), "result": v}));
    }
    Ok(json!({"stages": results}))
}
