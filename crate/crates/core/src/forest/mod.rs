//! Random-forest regression on quadrat features: extraction of per-band
//! means, bagged CART trees and k-fold cross-validation.

mod quadrat;
mod tree;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quadrat::{extract_quadrat_features, Quadrat, QuadratSample, SampleSet, DEFAULT_QUADRAT_SIDE};
pub use tree::{Node, RegressionTree};

/// Candidate features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaxFeatures {
    /// ⌈p / 3⌉, the usual regression default.
    #[default]
    ThirdCeil,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        match self {
            MaxFeatures::ThirdCeil => p.div_ceil(3),
            MaxFeatures::All => p,
            MaxFeatures::Fixed(k) => k.clamp(1, p.max(1)),
        }
        .max(1)
    }
}

fn d_trees() -> usize {
    500
}
fn d_leaf() -> usize {
    1
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default = "d_trees")]
    pub n_trees: usize,
    #[serde(default)]
    pub max_features: MaxFeatures,
    #[serde(default = "d_leaf")]
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "d_true")]
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: d_trees(),
            max_features: MaxFeatures::ThirdCeil,
            min_samples_leaf: d_leaf(),
            max_depth: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub seed: u64,
    /// Out-of-bag R² (bootstrap only; `None` when no sample was ever out of
    /// bag).
    pub oob_r2: Option<f64>,
    pub target_min: f64,
    pub target_max: f64,
}

impl ForestModel {
    /// Mean of the tree predictions.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.n_features {
            return Err(Error::Schema(format!("{} features given, model expects {}", features.len(), self.n_features)));
        }
        // Mean taken about the first tree's output, so identical tree
        // outputs reproduce that value exactly.
        let first = self.trees[0].predict(features);
        let dev: f64 = self.trees[1..].iter().map(|t| t.predict(features) - first).sum();
        Ok(first + dev / self.trees.len() as f64)
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Bagged CART regression. Tree `t` draws from its own ChaCha stream
/// `(seed, t)`, so results do not depend on the number of worker threads.
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if x.len() != y.len() {
        return Err(Error::Schema(format!("{} feature rows for {} targets", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Data("a forest needs at least two samples".into()));
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::Data("samples have no features".into()));
    }
    if let Some(r) = x.iter().position(|r| r.len() != p) {
        return Err(Error::Schema(format!("row {r} has {} features, expected {p}", x[r].len())));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite feature or target".into()));
    }
    if cfg.n_trees == 0 || cfg.min_samples_leaf == 0 {
        return Err(Error::Config("n_trees and min_samples_leaf must be positive".into()));
    }
    let params = tree::TreeParams {
        mtry: cfg.max_features.resolve(p),
        min_leaf: cfg.min_samples_leaf,
        max_depth: cfg.max_depth,
    };
    let n = x.len();
    let grown: Vec<(RegressionTree, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let (rows, in_bag) = if cfg.bootstrap {
                let mut in_bag = vec![false; n];
                let rows: Vec<usize> = (0..n)
                    .map(|_| {
                        let i = rng.gen_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect();
                (rows, in_bag)
            } else {
                ((0..n).collect(), vec![true; n])
            };
            (tree::grow(x, y, rows, &params, &mut rng), in_bag)
        })
        .collect();

    let oob_r2 = if cfg.bootstrap {
        let mut sum = vec![0.0; n];
        let mut cnt = vec![0usize; n];
        for (t, in_bag) in &grown {
            for i in 0..n {
                if !in_bag[i] {
                    sum[i] += t.predict(&x[i]);
                    cnt[i] += 1;
                }
            }
        }
        let (pred, truth): (Vec<f64>, Vec<f64>) =
            (0..n).filter(|&i| cnt[i] > 0).map(|i| (sum[i] / cnt[i] as f64, y[i])).unzip();
        (pred.len() >= 2).then(|| r_squared(&truth, &pred))
    } else {
        None
    };
    Ok(ForestModel {
        trees: grown.into_iter().map(|g| g.0).collect(),
        n_features: p,
        feature_names: (0..p).map(|i| format!("f{i}")).collect(),
        config: cfg.clone(),
        seed,
        oob_r2,
        target_min: y.iter().copied().fold(f64::INFINITY, f64::min),
        target_max: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Fits on a sample set, keeping its feature names.
pub fn fit_samples(set: &SampleSet, cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    set.validate()?;
    let mut m = fit_forest(&set.features(), &set.targets(), cfg, seed)?;
    m.feature_names = set.feature_names.clone();
    Ok(m)
}

/// `1 − SS_res / SS_tot` about the mean of `truth`. A constant `truth` gives
/// 1 for a perfect prediction and 0 otherwise.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

pub fn rmse(truth: &[f64], pred: &[f64]) -> f64 {
    (truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / truth.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub r2: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledMetrics {
    pub r2: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldMetrics>,
    pub pooled: PooledMetrics,
    /// Fold index of every sample, in input order.
    pub assignment: Vec<usize>,
    /// Held-out prediction of every sample, in input order.
    pub predictions: Vec<f64>,
}

/// Fold index per sample: a seeded shuffle cut into `k` contiguous parts
/// whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Partition(format!("k = {k}, need at least 2 folds")));
    }
    if k > n {
        return Err(Error::Partition(format!("{k} folds for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let mut fold = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut at = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &i in &order[at..at + size] {
            fold[i] = f;
        }
        at += size;
    }
    Ok(fold)
}

/// k-fold cross-validation. The seed drives the fold shuffle and, offset by
/// the fold index, each fold's forest.
pub fn cross_validate(x: &[Vec<f64>], y: &[f64], k: usize, cfg: &ForestConfig, seed: u64) -> Result<CvReport> {
    if x.len() != y.len() {
        return Err(Error::Schema(format!("{} feature rows for {} targets", x.len(), y.len())));
    }
    let assignment = fold_assignment(x.len(), k, seed)?;
    let mut predictions = vec![0.0; x.len()];
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| assignment[i] != f);
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = fit_forest(&tx, &ty, cfg, seed.wrapping_add(f as u64 + 1))?;
        let mut truth = Vec::with_capacity(test.len());
        let mut pred = Vec::with_capacity(test.len());
        for &i in &test {
            let p = model.predict(&x[i])?;
            predictions[i] = p;
            truth.push(y[i]);
            pred.push(p);
        }
        folds.push(FoldMetrics {
            fold: f,
            n_train: train.len(),
            n_test: test.len(),
            r2: r_squared(&truth, &pred),
            rmse: rmse(&truth, &pred),
        });
    }
    let pooled = PooledMetrics { r2: r_squared(y, &predictions), rmse: rmse(y, &predictions) };
    Ok(CvReport { k, seed, folds, pooled, assignment, predictions })
}

pub fn cross_validate_samples(set: &SampleSet, k: usize, cfg: &ForestConfig, seed: u64) -> Result<CvReport> {
    set.validate()?;
    cross_validate(&set.features(), &set.targets(), k, cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtry_rule() {
        assert_eq!(MaxFeatures::ThirdCeil.resolve(8), 3);
        assert_eq!(MaxFeatures::ThirdCeil.resolve(3), 1);
        assert_eq!(MaxFeatures::ThirdCeil.resolve(1), 1);
        assert_eq!(MaxFeatures::Fixed(10).resolve(4), 4);
    }

    #[test]
    fn folds_are_balanced_and_complete() {
        let a = fold_assignment(23, 5, 3).unwrap();
        let mut sizes = [0; 5];
        a.iter().for_each(|&f| sizes[f] += 1);
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
        assert_eq!(a, fold_assignment(23, 5, 3).unwrap());
        assert!(matches!(fold_assignment(3, 5, 0), Err(Error::Partition(_))));
    }

    #[test]
    fn r2_edge_cases() {
        assert_eq!(r_squared(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert_eq!(r_squared(&[1.0, 3.0], &[2.0, 2.0]), 0.0);
    }

    #[test]
    fn schema_errors() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let m = fit_forest(&x, &[1.0, 2.0], &ForestConfig { n_trees: 3, ..Default::default() }, 0).unwrap();
        assert!(matches!(m.predict(&[1.0]), Err(Error::Schema(_))));
        assert!(fit_forest(&x[..1], &[1.0], &ForestConfig::default(), 0).is_err());
    }
}
