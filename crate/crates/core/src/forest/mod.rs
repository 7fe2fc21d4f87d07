//! Online random-forest regression of execution time.
//!
//! The forest is trained once on an initial batch, then refreshed
//! incrementally: every `retrain_threshold` new observations the oldest
//! `ceil(refresh_fraction * K)` trees are refit on a sliding window of the
//! most recent samples. Squared error is the split criterion; depth and leaf
//! size limits play the role of the regulariser.

mod online;
mod shared;
mod tree;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Millis;

pub use online::{OnlinePredictor, OnlinePredictorConfig};
pub use shared::SharedForest;
pub use tree::{fit_tree, RegressionTree, TreeNode, TreeParams};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("empty training set")]
    Empty,
    #[error("too few samples: have {have}, need at least {need}")]
    TooFewSamples { have: usize, need: usize },
    #[error("forest is not trained")]
    Untrained,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf_size: usize,
    pub bootstrap_fraction: f64,
    pub bootstrap_replace: bool,
    /// Candidate features per split; `None` means `ceil(sqrt(dim))`.
    pub features_per_split: Option<usize>,
    pub retrain_threshold: usize,
    pub window_size: usize,
    pub refresh_fraction: f64,
    pub seed: u64,
    pub min_prediction_ms: Millis,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 50,
            max_depth: 12,
            min_leaf_size: 5,
            bootstrap_fraction: 1.0,
            bootstrap_replace: true,
            features_per_split: None,
            retrain_threshold: 50,
            window_size: 2000,
            refresh_fraction: 0.3,
            seed: 0x5eed,
            min_prediction_ms: 1.0,
        }
    }
}

impl ForestConfig {
    pub fn tree_params(&self, dim: usize) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf_size: self.min_leaf_size,
            features_per_split: self
                .features_per_split
                .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
                .max(1),
            bootstrap_fraction: self.bootstrap_fraction,
            bootstrap_replace: self.bootstrap_replace,
        }
    }

    pub fn refresh_count(&self) -> usize {
        ((self.refresh_fraction * self.trees as f64).ceil() as usize).clamp(1, self.trees.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub trees_refitted: usize,
    pub window_size: usize,
    pub trigger_time: Millis,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub config: ForestConfig,
    pub dim: usize,
    pub trees: Vec<RegressionTree>,
    /// Generation in which each tree was last fit.
    pub tree_birth: Vec<u64>,
    pub generation: u64,
    pub buffer: Vec<Sample>,
    pub window: VecDeque<Sample>,
    pub trained: bool,
}

fn tree_rng(seed: u64, generation: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((generation << 32) | tree as u64);
    rng
}

fn fit_on(
    samples: &[&Sample],
    config: &ForestConfig,
    dim: usize,
    generation: u64,
    tree: usize,
) -> Result<RegressionTree, ForestError> {
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.y).collect();
    let mut rng = tree_rng(config.seed, generation, tree);
    fit_tree(&xs, &ys, &config.tree_params(dim), &mut rng)
}

impl Forest {
    /// Fits `K` trees on `samples`, each with its own RNG stream derived from
    /// the seed. The window keeps the last `window_size` samples.
    pub fn train_initial(
        config: ForestConfig,
        samples: Vec<Sample>,
    ) -> Result<Forest, ForestError> {
        if samples.is_empty() {
            return Err(ForestError::Empty);
        }
        let dim = samples[0].x.len();
        if let Some(s) = samples.iter().find(|s| s.x.len() != dim) {
            return Err(ForestError::DimensionMismatch {
                expected: dim,
                got: s.x.len(),
            });
        }
        if samples.len() < config.min_leaf_size.max(1) {
            return Err(ForestError::TooFewSamples {
                have: samples.len(),
                need: config.min_leaf_size.max(1),
            });
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        let trees = (0..config.trees)
            .map(|k| fit_on(&refs, &config, dim, 0, k))
            .collect::<Result<Vec<_>, _>>()?;
        let skip = samples.len().saturating_sub(config.window_size);
        let window: VecDeque<Sample> = samples.into_iter().skip(skip).collect();
        Ok(Forest {
            version: SNAPSHOT_VERSION,
            tree_birth: vec![0; trees.len()],
            trees,
            config,
            dim,
            generation: 0,
            buffer: Vec::new(),
            window,
            trained: true,
        })
    }

    pub fn tree_predictions(&self, x: &[f64]) -> Result<Vec<f64>, ForestError> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    /// Mean of the per-tree predictions, without the positivity floor.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, ForestError> {
        self.check(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Millis, ForestError> {
        Ok(self.predict_raw(x)?.max(self.config.min_prediction_ms))
    }

    fn check(&self, x: &[f64]) -> Result<(), ForestError> {
        if !self.trained || self.trees.is_empty() {
            return Err(ForestError::Untrained);
        }
        if x.len() != self.dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Adds one observation. When the buffer reaches `retrain_threshold`, the
    /// oldest trees are refit on the window and a report is returned.
    pub fn observe(
        &mut self,
        sample: Sample,
        now: Millis,
    ) -> Result<Option<UpdateReport>, ForestError> {
        if !self.trained {
            return Err(ForestError::Untrained);
        }
        if sample.x.len() != self.dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.dim,
                got: sample.x.len(),
            });
        }
        self.window.push_back(sample.clone());
        while self.window.len() > self.config.window_size.max(1) {
            self.window.pop_front();
        }
        self.buffer.push(sample);
        if self.buffer.len() < self.config.retrain_threshold.max(1) {
            return Ok(None);
        }

        self.generation += 1;
        let mut order: Vec<usize> = (0..self.trees.len()).collect();
        order.sort_by_key(|&k| (self.tree_birth[k], k));
        let n = self.config.refresh_count().min(self.trees.len());
        let refs: Vec<&Sample> = self.window.iter().collect();
        for &k in &order[..n] {
            self.trees[k] = fit_on(&refs, &self.config, self.dim, self.generation, k)?;
            self.tree_birth[k] = self.generation;
        }
        self.buffer.clear();
        Ok(Some(UpdateReport {
            trees_refitted: n,
            window_size: self.window.len(),
            trigger_time: now,
            generation: self.generation,
        }))
    }

    pub fn to_json(&self) -> Result<String, ForestError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Forest, ForestError> {
        let f: Forest = serde_json::from_str(s)?;
        if f.version != SNAPSHOT_VERSION {
            return Err(ForestError::Version(f.version));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic(n: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..100.0)).collect();
                let noise = rng.random_range(-1.0..1.0);
                Sample {
                    y: f(&x) + noise,
                    x,
                }
            })
            .collect()
    }

    fn small() -> ForestConfig {
        ForestConfig {
            trees: 20,
            max_depth: 10,
            min_leaf_size: 2,
            ..Default::default()
        }
    }

    #[test]
    fn trains_k_trees_deterministically() {
        let data = synthetic(200, 1, |x| 2.0 * x[0] + 10.0);
        let a = Forest::train_initial(small(), data.clone()).unwrap();
        let b = Forest::train_initial(small(), data).unwrap();
        assert_eq!(a.trees.len(), 20);
        for probe in synthetic(50, 9, |_| 0.0) {
            assert_eq!(a.predict(&probe.x).unwrap(), b.predict(&probe.x).unwrap());
        }
    }

    #[test]
    fn fits_linear_target_in_sample() {
        let data = synthetic(200, 2, |x| 2.0 * x[0] + 10.0);
        let f = Forest::train_initial(small(), data.clone()).unwrap();
        let mre: f64 = data
            .iter()
            .map(|s| (f.predict(&s.x).unwrap() - s.y).abs() / s.y.abs())
            .sum::<f64>()
            / data.len() as f64;
        assert!(mre < 0.15, "mean relative error {mre}");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            Forest::train_initial(small(), vec![]),
            Err(ForestError::Empty)
        ));
        let f = Forest::train_initial(small(), synthetic(30, 3, |x| x[1])).unwrap();
        assert!(matches!(
            f.predict(&[1.0]),
            Err(ForestError::DimensionMismatch { .. })
        ));
        let mut untrained = f.clone();
        untrained.trained = false;
        assert!(matches!(
            untrained.predict(&[0.0; 4]),
            Err(ForestError::Untrained)
        ));
    }

    #[test]
    fn single_tree_is_identity() {
        let cfg = ForestConfig {
            trees: 1,
            ..small()
        };
        let f = Forest::train_initial(cfg, synthetic(40, 4, |x| x[2])).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(f.predict_raw(&x).unwrap(), f.trees[0].predict(&x));
    }

    #[test]
    fn update_fires_exactly_at_threshold() {
        let mut f = Forest::train_initial(small(), synthetic(100, 5, |x| x[0])).unwrap();
        let fresh = synthetic(50, 6, |x| x[0]);
        for (i, s) in fresh.iter().cloned().enumerate().take(49) {
            assert!(f.observe(s, i as f64).unwrap().is_none());
        }
        assert_eq!(f.buffer.len(), 49);
        let r = f
            .observe(fresh[49].clone(), 49.0)
            .unwrap()
            .expect("update at threshold");
        assert_eq!(r.trees_refitted, (0.3f64 * 20.0).ceil() as usize);
        assert_eq!(r.window_size, 150);
        assert!(f.buffer.is_empty());
        // the refreshed trees are the oldest ones
        assert_eq!(f.tree_birth.iter().filter(|&&g| g == 1).count(), 6);
        let mut next = synthetic(50, 7, |x| x[0]);
        for s in next.drain(..49) {
            f.observe(s, 0.0).unwrap();
        }
        f.observe(next.pop().unwrap(), 0.0).unwrap().unwrap();
        assert_eq!(f.tree_birth.iter().filter(|&&g| g == 0).count(), 8);
    }

    #[test]
    fn snapshot_round_trip() {
        let f = Forest::train_initial(small(), synthetic(60, 8, |x| x[3] * 3.0)).unwrap();
        let back = Forest::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        let mut bad = f.clone();
        bad.version = 99;
        assert!(matches!(
            Forest::from_json(&bad.to_json().unwrap()),
            Err(ForestError::Version(99))
        ));
    }
}
