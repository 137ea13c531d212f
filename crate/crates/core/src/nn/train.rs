use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::ArchConfig;
use super::model::{ParamGrads, SrcnnModel};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

/// One co-registered training image: network input and target at the same
/// fine grid.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub id: String,
    pub site: String,
    pub date: String,
    /// Role assigned by a dataset manifest (`train`, `val` or `test`).
    pub split: Option<String>,
    pub input: Raster,
    pub target: Raster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
}

/// Which images are held out from training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum SplitSpec {
    /// Train on everything.
    #[default]
    All,
    /// Hold out the single image with this id.
    LeaveOneOut { test_id: String },
    /// Hold out every image from these sites.
    BySite { test_sites: Vec<String> },
    /// Hold out every image from these dates.
    ByDate { test_dates: Vec<String> },
    /// Use the roles recorded on each pair.
    Manifest,
}

impl SplitSpec {
    pub fn assign(&self, pairs: &[TrainPair]) -> Result<Vec<Role>> {
        let roles: Vec<Role> = match self {
            SplitSpec::All => vec![Role::Train; pairs.len()],
            SplitSpec::LeaveOneOut { test_id } => {
                if !pairs.iter().any(|p| &p.id == test_id) {
                    return Err(Error::Partition(format!("no image with id '{test_id}'")));
                }
                pairs.iter().map(|p| if &p.id == test_id { Role::Test } else { Role::Train }).collect()
            }
            SplitSpec::BySite { test_sites } => {
                pairs.iter().map(|p| if test_sites.contains(&p.site) { Role::Test } else { Role::Train }).collect()
            }
            SplitSpec::ByDate { test_dates } => {
                pairs.iter().map(|p| if test_dates.contains(&p.date) { Role::Test } else { Role::Train }).collect()
            }
            SplitSpec::Manifest => pairs
                .iter()
                .map(|p| match p.split.as_deref() {
                    Some("train") => Ok(Role::Train),
                    Some("val") => Ok(Role::Val),
                    Some("test") => Ok(Role::Test),
                    other => Err(Error::Partition(format!(
                        "image '{}' has split {:?}, expected train/val/test",
                        p.id, other
                    ))),
                })
                .collect::<Result<_>>()?,
        };
        if !roles.contains(&Role::Train) {
            return Err(Error::Partition("split leaves no training images".into()));
        }
        Ok(roles)
    }
}

fn d_patch() -> usize {
    2
}
fn d_scale() -> usize {
    8
}
fn d_batch() -> usize {
    16
}
fn d_lr() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_epochs() -> usize {
    1
}
fn d_val_fraction() -> f64 {
    0.1
}
fn d_max_val() -> usize {
    128
}
fn d_normalize() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Patch side in coarse pixels.
    #[serde(default = "d_patch")]
    pub patch_coarse: usize,
    /// Fine pixels per coarse pixel.
    #[serde(default = "d_scale")]
    pub scale: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Share of training patches held out for validation when the split
    /// provides no validation images.
    #[serde(default = "d_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "d_max_val")]
    pub max_val_patches: usize,
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Validate every this many steps as well as at the end of each epoch.
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub split: SplitSpec,
    /// Optimize in standardized coordinates (per-channel input z-scores,
    /// centered targets over one pooled scale). The statistics are folded
    /// into the first and last layers afterwards, so the returned network
    /// works on raw reflectance.
    #[serde(default = "d_normalize")]
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_coarse: d_patch(),
            scale: d_scale(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            epsilon: d_eps(),
            epochs: d_epochs(),
            seed: 0,
            val_fraction: d_val_fraction(),
            max_val_patches: d_max_val(),
            steps_per_epoch: None,
            max_steps: None,
            eval_every: None,
            split: SplitSpec::All,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn patch_side(&self) -> usize {
        self.patch_coarse * self.scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.patch_coarse == 0 || self.scale == 0 {
            return bad("patch size and scale must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.max_val_patches == 0 {
            return bad("max_val_patches must be positive");
        }
        if self.steps_per_epoch == Some(0) || self.max_steps == Some(0) || self.eval_every == Some(0) {
            return bad("step limits must be positive");
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the lowest validation loss.
    pub model: SrcnnModel<T>,
    pub log: Vec<LossRecord>,
    pub best_step: usize,
    pub train_patches: usize,
    pub val_patches: usize,
}

/// Writes `step,epoch,train_loss,val_loss`.
pub fn write_loss_log(log: &[LossRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "epoch", "train_loss", "val_loss"])?;
    for r in log {
        w.write_record([
            r.step.to_string(),
            r.epoch.to_string(),
            format!("{:e}", r.train_loss),
            r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_loss_log(log: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    write_loss_log(log, std::fs::File::create(path)?)
}

/// An image converted for training: input and target tensors plus the
/// jointly valid pixels.
struct Prepared<T> {
    input: Tensor<T>,
    target: Tensor<T>,
    valid: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    image: usize,
    y0: usize,
    x0: usize,
}

struct Sample<T> {
    input: Tensor<T>,
    target: Tensor<T>,
    valid: Vec<bool>,
}

impl<T: Scalar> Prepared<T> {
    fn sample(&self, p: &Patch, side: usize) -> Sample<T> {
        let w = self.input.width;
        let mut valid = Vec::with_capacity(side * side);
        for y in 0..side {
            let row = (p.y0 + y) * w + p.x0;
            valid.extend_from_slice(&self.valid[row..row + side]);
        }
        Sample {
            input: self.input.crop(p.y0, p.x0, side, side),
            target: self.target.crop(p.y0, p.x0, side, side),
            valid,
        }
    }
}

fn prepare<T: Scalar>(pair: &TrainPair, arch: &ArchConfig) -> Result<Prepared<T>> {
    let (i, t) = (&pair.input, &pair.target);
    if i.width() != t.width() || i.height() != t.height() {
        return Err(Error::Alignment(format!(
            "image '{}': input {}x{} and target {}x{} differ",
            pair.id,
            i.width(),
            i.height(),
            t.width(),
            t.height()
        )));
    }
    if i.n_bands() != arch.in_channels || t.n_bands() != arch.out_channels {
        return Err(Error::Shape(format!(
            "image '{}': {} input / {} target bands, model is {}→{}",
            pair.id,
            i.n_bands(),
            t.n_bands(),
            arch.in_channels,
            arch.out_channels
        )));
    }
    let valid = i.mask().iter().zip(t.mask()).map(|(&a, &b)| a && b).collect();
    Ok(Prepared { input: Tensor::from_raster(i), target: Tensor::from_raster(t), valid })
}

/// Affine maps between raw reflectance and the standardized coordinates the
/// optimizer works in.
#[derive(Debug, Clone)]
struct Standardizer {
    in_mean: Vec<f64>,
    in_scale: Vec<f64>,
    out_mean: Vec<f64>,
    out_scale: f64,
}

fn usable_scale(sd: f64) -> f64 {
    if sd.is_finite() && sd > 1e-6 {
        sd
    } else {
        1.0
    }
}

impl Standardizer {
    fn identity(c_in: usize, c_out: usize) -> Self {
        Standardizer { in_mean: vec![0.0; c_in], in_scale: vec![1.0; c_in], out_mean: vec![0.0; c_out], out_scale: 1.0 }
    }

    /// Statistics over the jointly valid pixels of every prepared image.
    fn fit<T: Scalar>(data: &[Prepared<T>]) -> Self {
        let moments = |pick: &dyn Fn(&Prepared<T>) -> &Tensor<T>, c: usize| -> (f64, f64, f64) {
            let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
            for d in data {
                for (&v, &ok) in pick(d).plane(c).iter().zip(&d.valid) {
                    if ok {
                        let v = v.as_f64();
                        n += 1.0;
                        s += v;
                        s2 += v * v;
                    }
                }
            }
            (n, s, s2)
        };
        let c_in = data[0].input.channels;
        let c_out = data[0].target.channels;
        let mut st = Standardizer::identity(c_in, c_out);
        for c in 0..c_in {
            let (n, s, s2) = moments(&|d| &d.input, c);
            if n > 0.0 {
                let m = s / n;
                st.in_mean[c] = m;
                st.in_scale[c] = usable_scale((s2 / n - m * m).max(0.0).sqrt());
            }
        }
        let (mut n_all, mut var_all) = (0.0, 0.0);
        for c in 0..c_out {
            let (n, s, s2) = moments(&|d| &d.target, c);
            if n > 0.0 {
                let m = s / n;
                st.out_mean[c] = m;
                n_all += n;
                var_all += (s2 - n * m * m).max(0.0);
            }
        }
        if n_all > 0.0 {
            st.out_scale = usable_scale((var_all / n_all).sqrt());
        }
        st
    }

    fn apply<T: Scalar>(&self, d: &mut Prepared<T>) {
        for c in 0..d.input.channels {
            let (m, s) = (self.in_mean[c], self.in_scale[c]);
            for v in d.input.plane_mut(c) {
                *v = T::lit((v.as_f64() - m) / s);
            }
        }
        for c in 0..d.target.channels {
            let m = self.out_mean[c];
            for v in d.target.plane_mut(c) {
                *v = T::lit((v.as_f64() - m) / self.out_scale);
            }
        }
    }

    /// Rewrites a network trained in standardized coordinates to act on raw
    /// values.
    fn fold<T: Scalar>(&self, model: &mut SrcnnModel<T>) {
        let first = &mut model.layers[0];
        let kk = first.kernel * first.kernel;
        let cols = first.c_in * kk;
        for o in 0..first.c_out {
            let mut shift = 0.0;
            for j in 0..cols {
                let i = j / kk;
                let w = first.weight[o * cols + j].as_f64() / self.in_scale[i];
                first.weight[o * cols + j] = T::lit(w);
                shift += w * self.in_mean[i];
            }
            first.bias[o] = T::lit(first.bias[o].as_f64() - shift);
        }
        let last = model.layers.last_mut().expect("network has layers");
        let cols = last.c_in * last.kernel * last.kernel;
        for o in 0..last.c_out {
            for w in &mut last.weight[o * cols..(o + 1) * cols] {
                *w = T::lit(w.as_f64() * self.out_scale);
            }
            last.bias[o] = T::lit(last.bias[o].as_f64() * self.out_scale + self.out_mean[o]);
        }
    }

    /// Inverse of [`Standardizer::fold`].
    fn unfold<T: Scalar>(&self, model: &mut SrcnnModel<T>) {
        let last = model.layers.last_mut().expect("network has layers");
        let cols = last.c_in * last.kernel * last.kernel;
        for o in 0..last.c_out {
            for w in &mut last.weight[o * cols..(o + 1) * cols] {
                *w = T::lit(w.as_f64() / self.out_scale);
            }
            last.bias[o] = T::lit((last.bias[o].as_f64() - self.out_mean[o]) / self.out_scale);
        }
        let first = &mut model.layers[0];
        let kk = first.kernel * first.kernel;
        let cols = first.c_in * kk;
        for o in 0..first.c_out {
            let mut shift = 0.0;
            for j in 0..cols {
                let i = j / kk;
                let w = first.weight[o * cols + j].as_f64();
                shift += w * self.in_mean[i];
                first.weight[o * cols + j] = T::lit(w * self.in_scale[i]);
            }
            first.bias[o] = T::lit(first.bias[o].as_f64() + shift);
        }
    }
}

/// Non-overlapping patches on the coarse-pixel lattice; patches without a
/// single jointly valid pixel are skipped.
fn enumerate_patches<T>(img: usize, data: &Prepared<T>, side: usize) -> Vec<Patch> {
    let (h, w) = (data.input.height, data.input.width);
    let mut out = Vec::new();
    for py in 0..h / side {
        for px in 0..w / side {
            let (y0, x0) = (py * side, px * side);
            let any = (y0..y0 + side).any(|y| data.valid[y * w + x0..y * w + x0 + side].iter().any(|&v| v));
            if any {
                out.push(Patch { image: img, y0, x0 });
            }
        }
    }
    out
}

/// Masked squared error sum and valid count of one prediction.
fn sq_err<T: Scalar>(pred: &Tensor<T>, s: &Sample<T>) -> (f64, usize) {
    let n = pred.plane_len();
    let mut sum = 0.0;
    for c in 0..pred.channels {
        let (p, t) = (pred.plane(c), s.target.plane(c));
        for j in 0..n {
            if s.valid[j] {
                let d = (p[j] - t[j]).as_f64();
                sum += d * d;
            }
        }
    }
    (sum, s.valid.iter().filter(|&&v| v).count() * pred.channels)
}

/// Masked mean squared error of the model over a patch set.
fn eval_loss<T: Scalar>(model: &SrcnnModel<T>, data: &[Prepared<T>], patches: &[Patch], side: usize) -> Result<f64> {
    let parts: Vec<(f64, usize)> = patches
        .par_iter()
        .map(|p| {
            let s = data[p.image].sample(p, side);
            let y = model.forward(&s.input)?;
            Ok(sq_err(&y, &s))
        })
        .collect::<Result<_>>()?;
    let (sum, count) = parts.iter().fold((0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(sum / count.max(1) as f64)
}

/// Loss and gradients of the masked MSE over a batch. Per-sample gradients
/// may be computed in parallel; they are summed in batch order.
fn batch_gradients<T: Scalar>(
    model: &SrcnnModel<T>,
    data: &[Prepared<T>],
    batch: &[Patch],
    side: usize,
) -> Result<(f64, ParamGrads<T>)> {
    let samples: Vec<Sample<T>> = batch.iter().map(|p| data[p.image].sample(p, side)).collect();
    let count: usize =
        samples.iter().map(|s| s.valid.iter().filter(|&&v| v).count()).sum::<usize>() * model.arch.out_channels;
    if count == 0 {
        return Err(Error::Data("batch has no valid pixels".into()));
    }
    let scale = T::lit(2.0 / count as f64);
    let parts: Vec<(f64, ParamGrads<T>)> = samples
        .par_iter()
        .map(|s| {
            let (y, cache) = model.forward_train(&s.input)?;
            let (sum, _) = sq_err(&y, s);
            let mut g = Tensor::zeros(y.channels, y.height, y.width);
            let n = y.plane_len();
            for c in 0..y.channels {
                let (p, t) = (y.plane(c), s.target.plane(c));
                let gc = g.plane_mut(c);
                for j in 0..n {
                    if s.valid[j] {
                        gc[j] = scale * (p[j] - t[j]);
                    }
                }
            }
            let (grads, _) = model.backward(&cache, &g, false)?;
            Ok((sum, grads))
        })
        .collect::<Result<_>>()?;
    let mut total = ParamGrads::zeros_like(model);
    let mut loss = 0.0;
    for (s, g) in &parts {
        loss += s;
        total.add_assign(g);
    }
    Ok((loss / count as f64, total))
}

/// Adam moment buffers over the flattened parameter vector.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i].as_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            let p = params[i].as_f64() - self.lr * mh / (vh.sqrt() + self.eps);
            params[i] = T::lit(p);
        }
    }
}

/// Trains a freshly initialized network (seeded by `cfg.seed`).
pub fn train<T: Scalar>(arch: ArchConfig, pairs: &[TrainPair], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    let model = SrcnnModel::build(arch, cfg.seed)?;
    run(model, pairs, cfg, true)
}

/// Trains starting from the given parameters.
pub fn train_from<T: Scalar>(model: SrcnnModel<T>, pairs: &[TrainPair], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    run(model, pairs, cfg, false)
}

/// `fresh` marks an initialization that already lives in standardized
/// coordinates; otherwise the parameters are mapped into them first.
fn run<T: Scalar>(
    mut model: SrcnnModel<T>,
    pairs: &[TrainPair],
    cfg: &TrainConfig,
    fresh: bool,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("empty training dataset".into()));
    }
    let side = cfg.patch_side();
    if side < model.arch.max_kernel() {
        return Err(Error::Config(format!(
            "patch side {side} is smaller than the largest kernel {}",
            model.arch.max_kernel()
        )));
    }
    let roles = cfg.split.assign(pairs)?;
    let mut data = Vec::new();
    let mut train_patches = Vec::new();
    let mut val_patches = Vec::new();
    for (pair, &role) in pairs.iter().zip(&roles) {
        if role == Role::Test {
            continue;
        }
        if pair.input.width() < side || pair.input.height() < side {
            return Err(Error::Config(format!(
                "patch side {side} exceeds image '{}' ({}x{})",
                pair.id,
                pair.input.width(),
                pair.input.height()
            )));
        }
        let prepared = prepare::<T>(pair, &model.arch)?;
        let patches = enumerate_patches(data.len(), &prepared, side);
        data.push(prepared);
        match role {
            Role::Train => train_patches.extend(patches),
            Role::Val => val_patches.extend(patches),
            Role::Test => unreachable!(),
        }
    }

    let standardizer = if cfg.normalize {
        Standardizer::fit(&data)
    } else {
        Standardizer::identity(model.arch.in_channels, model.arch.out_channels)
    };
    if cfg.normalize {
        data.iter_mut().for_each(|d| standardizer.apply(d));
        if !fresh {
            standardizer.unfold(&mut model);
        }
    }
    let loss_scale = standardizer.out_scale * standardizer.out_scale;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    if val_patches.is_empty() {
        train_patches.shuffle(&mut rng);
        let n_val = ((train_patches.len() as f64 * cfg.val_fraction).ceil() as usize)
            .min(cfg.max_val_patches)
            .min(train_patches.len().saturating_sub(1));
        val_patches = train_patches.drain(..n_val).collect();
    } else if val_patches.len() > cfg.max_val_patches {
        val_patches.shuffle(&mut rng);
        val_patches.truncate(cfg.max_val_patches);
    }
    if train_patches.is_empty() {
        return Err(Error::Data("no training patch has a valid pixel".into()));
    }

    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Vec<T>)> = None;
    let mut step = 0usize;
    let mut last_train = f64::NAN;
    let per_epoch = {
        let full = train_patches.len().div_ceil(cfg.batch_size);
        cfg.steps_per_epoch.map_or(full, |s| s.min(full))
    };

    let validate =
        |model: &SrcnnModel<T>, step: usize, best: &mut Option<(f64, usize, Vec<T>)>| -> Result<Option<f64>> {
            if val_patches.is_empty() {
                return Ok(None);
            }
            let v = eval_loss(model, &data, &val_patches, side)? * loss_scale;
            if best.as_ref().is_none_or(|b| v < b.0) {
                *best = Some((v, step, model.flat_params()));
            }
            Ok(Some(v))
        };

    'outer: for epoch in 0..cfg.epochs {
        train_patches.shuffle(&mut rng);
        for b in 0..per_epoch {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'outer;
            }
            let batch = &train_patches[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(train_patches.len())];
            let (loss, grads) = batch_gradients(&model, &data, batch, side)?;
            let loss = loss * loss_scale;
            if !loss.is_finite() {
                return Err(Error::Data(format!("training loss diverged at step {step}")));
            }
            adam.step(&mut params, &grads.flatten());
            model.set_flat_params(&params)?;
            step += 1;
            last_train = loss;
            let end_of_epoch = b + 1 == per_epoch;
            let periodic = cfg.eval_every.is_some_and(|e| step.is_multiple_of(e));
            let val_loss = if end_of_epoch || periodic { validate(&model, step, &mut best)? } else { None };
            log.push(LossRecord { step, epoch, train_loss: loss, val_loss });
        }
    }
    if log.last().is_some_and(|r| r.val_loss.is_none()) {
        let v = validate(&model, step, &mut best)?;
        log.last_mut().unwrap().val_loss = v;
    }

    let final_val = log.last().and_then(|r| r.val_loss);
    let best_step = match best {
        Some((v, s, p)) => {
            model.set_flat_params(&p)?;
            model.meta.best_val_loss = Some(v);
            s
        }
        None => step,
    };
    standardizer.fold(&mut model);
    let epochs_run = log.last().map_or(0, |r| r.epoch + 1);
    model.meta = super::model::TrainMeta {
        seed: cfg.seed,
        epochs: epochs_run,
        steps: step,
        optimizer: "adam".into(),
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
        loss: "masked-mse".into(),
        final_train_loss: Some(last_train),
        final_val_loss: final_val,
        best_val_loss: model.meta.best_val_loss,
        target_bands: pairs[0].target.band_names().iter().map(|s| s.to_string()).collect(),
    };
    Ok(TrainOutcome { model, log, best_step, train_patches: train_patches.len(), val_patches: val_patches.len() })
}

/// Gradient of the masked MSE `Σ_valid (pred − target)² / (count·C)` with
/// respect to the prediction.
pub fn masked_mse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, valid: &[bool]) -> (f64, Tensor<T>) {
    let n = pred.plane_len();
    let count = valid.iter().filter(|&&v| v).count() * pred.channels;
    let scale = 2.0 / count.max(1) as f64;
    let mut g = Tensor::zeros(pred.channels, pred.height, pred.width);
    let mut sum = 0.0;
    for c in 0..pred.channels {
        for j in 0..n {
            if valid[j] {
                let d = (pred.plane(c)[j] - target.plane(c)[j]).as_f64();
                sum += d * d;
                g.plane_mut(c)[j] = T::lit(scale * d);
            }
        }
    }
    (sum / count.max(1) as f64, g)
}
