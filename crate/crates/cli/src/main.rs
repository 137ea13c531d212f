//! `skyfuse` command-line driver. Every subcommand takes an optional JSON
//! run-config (`--config`) whose fields can be overridden by flags; results
//! go to files and, as JSON, to standard output, while structured logs go to
//! standard error.

mod config;
mod error;
mod log;
mod stages;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use config::*;
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "skyfuse", version, about = "Fuse coarse satellite rasters with fine UAS imagery")]
struct Cli {
    /// Worker threads for parallel stages (default: all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit nonnegative hyperspectral band weights to sensor response functions.
    FitSrf(FitSrfArgs),
    /// Apply band weights to a hyperspectral cube.
    Simulate(SimulateArgs),
    /// Snap a fine raster onto the coarse pixel lattice.
    Align(AlignArgs),
    /// Estimate the translation between a fine and a coarse raster.
    Register(RegisterArgs),
    /// Train a super-resolution network.
    Train(TrainArgs),
    /// Run a trained network over rasters.
    Infer(InferArgs),
    /// Compute RMSE, MAE and PSNR of predictions against truth.
    Evaluate(EvaluateArgs),
    /// Fit a random forest on quadrat samples.
    RfFit(RfArgs),
    /// Cross-validate a random forest on quadrat samples.
    RfCv(RfArgs),
    /// Generate a synthetic fusion dataset.
    GenSynthetic(GenArgs),
    /// Run an ordered list of stages from one config.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct FitSrfArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// SRF table CSV (`band,wavelength_nm,response`).
    #[arg(long)]
    srf: Option<PathBuf>,
    /// Camera name; only `default269` is built in.
    #[arg(long)]
    camera: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cube: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fine: Option<PathBuf>,
    #[arg(long)]
    coarse: Option<PathBuf>,
    #[arg(long)]
    target_pixel: Option<f64>,
    /// Whole fine-pixel translation applied first, as `DX,DY` (right, down).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    apply_shift: Option<Vec<i64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fine: Option<PathBuf>,
    #[arg(long)]
    coarse: Option<PathBuf>,
    /// `coarse-to-fine` or `exhaustive`.
    #[arg(long)]
    search: Option<String>,
    #[arg(long)]
    radius: Option<i64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    loss_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Input raster; repeat to stack several band-wise.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    per_band: bool,
}

#[derive(Args, Debug)]
struct RfArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Comma-separated feature columns.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
}

/// Drops nulls and empty objects so unset flags never override anything.
fn prune(v: Value) -> Option<Value> {
    match v {
        Value::Null => None,
        Value::Object(m) => {
            let m: Map<String, Value> = m.into_iter().filter_map(|(k, v)| prune(v).map(|v| (k, v))).collect();
            (!m.is_empty()).then_some(Value::Object(m))
        }
        other => Some(other),
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Loads `config` (if any), then applies flag overrides.
fn build<T>(config: Option<&Path>, flags: Value, version: impl Fn(&T) -> Option<u32>) -> CliResult<T>
where
    T: DeserializeOwned + Serialize + Resolve,
{
    let flags = prune(flags).unwrap_or_else(|| json!({}));
    let (mut doc, origin) = match config {
        Some(p) => (serde_json::to_value(load_stage::<T>(p, version)?)?, p.display().to_string()),
        None => (json!({}), "command line".to_string()),
    };
    merge(&mut doc, flags);
    serde_json::from_value(doc).map_err(|e| CliError::Config { path: origin.into(), msg: e.to_string() })
}

fn stage_for(cmd: Command) -> CliResult<Option<Stage>> {
    Ok(Some(match cmd {
        Command::FitSrf(a) => Stage::FitSrf(build(
            a.config.as_deref(),
            json!({"srf": a.srf, "camera": a.camera, "out": a.out}),
            |c: &FitSrfStage| c.version,
        )?),
        Command::Simulate(a) => Stage::Simulate(build(
            a.config.as_deref(),
            json!({"cube": a.cube, "weights": a.weights, "out": a.out, "reference": a.reference}),
            |c: &SimulateStage| c.version,
        )?),
        Command::Align(a) => Stage::Align(build(
            a.config.as_deref(),
            json!({"fine": a.fine, "coarse": a.coarse, "target_pixel": a.target_pixel, "apply_shift": a.apply_shift, "out": a.out}),
            |c: &AlignStage| c.version,
        )?),
        Command::Register(a) => Stage::Register(build(
            a.config.as_deref(),
            json!({"fine": a.fine, "coarse": a.coarse, "search": a.search, "radius": a.radius, "out": a.out}),
            |c: &RegisterStage| c.version,
        )?),
        Command::Train(a) => Stage::Train(build(
            a.config.as_deref(),
            json!({"preset": a.preset, "manifest": a.manifest, "train": {"seed": a.seed}, "out": a.out, "loss_log": a.loss_log}),
            |c: &TrainStage| c.version,
        )?),
        Command::Infer(a) => {
            let inputs = (!a.inputs.is_empty()).then_some(a.inputs);
            Stage::Infer(build(
                a.config.as_deref(),
                json!({"model": a.model, "inputs": inputs, "out": a.out}),
                |c: &InferStage| c.version,
            )?)
        }
        Command::Evaluate(a) => Stage::Evaluate(build(
            a.config.as_deref(),
            json!({"pred": a.pred, "truth": a.truth, "out": a.out, "csv": a.csv, "per_band": a.per_band.then_some(true)}),
            |c: &EvaluateStage| c.version,
        )?),
        Command::RfFit(a) => Stage::RfFit(build(
            a.config.as_deref(),
            json!({"samples": a.samples, "features": a.features, "seed": a.seed, "out": a.out}),
            |c: &RfFitStage| c.version,
        )?),
        Command::RfCv(a) => Stage::RfCv(build(
            a.config.as_deref(),
            json!({"samples": a.samples, "features": a.features, "seed": a.seed, "out": a.out}),
            |c: &RfCvStage| c.version,
        )?),
        Command::GenSynthetic(a) => Stage::GenSynthetic(build(
            a.config.as_deref(),
            json!({"dataset": {"scene": {"seed": a.seed}, "n_scenes": a.scenes}, "out": a.out}),
            |c: &GenSyntheticStage| c.version,
        )?),
        Command::Pipeline(_) => return Ok(None),
    }))
}

fn execute(cli: Cli) -> CliResult<Value> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure worker threads: {e}")))?;
    }
    match cli.command {
        Command::Pipeline(a) => {
            let cfg = load_pipeline(&a.config)?;
            let timer = log::StageTimer::start("pipeline");
            match stages::pipeline(&cfg) {
                Ok(v) => {
                    timer.done(&json!({"stages": cfg.stages.len()}));
                    Ok(v)
                }
                Err(e) => {
                    timer.failed(&e.to_string());
                    Err(e)
                }
            }
        }
        other => {
            let stage = stage_for(other)?.expect("non-pipeline command");
            stages::run_logged(&stage)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).unwrap_or_default();
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
