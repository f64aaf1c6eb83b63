//! Gradient-boosted regression trees with squared loss.
//!
//! Features are quantile-binned once per training run. Each tree is grown
//! leaf-wise (best gain first) on a bagged subset of rows using gradient
//! histograms; a split sends missing values to whichever side gains more.
//! Leaf outputs are then refit as the mean residual of *all* training rows
//! reaching the leaf, so with a learning rate in `[0, 1]` the training error
//! never increases from one tree to the next.

mod binning;
mod model;
mod tree;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binning::{BinnedMatrix, FeatureCuts, MISSING_BIN};
pub use model::{Model, Node, Tree, MODEL_FORMAT, MODEL_VERSION};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GbdtError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("target {index} is not finite")]
    NonFiniteTarget { index: usize },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub bagging_fraction: f64,
    pub bagging_frequency: usize,
    pub n_bins: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_trees: 32,
            max_leaves: 32,
            learning_rate: 0.1,
            bagging_fraction: 0.8,
            bagging_frequency: 5,
            n_bins: 64,
            min_samples_leaf: 20,
            seed: 0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: String| Err(GbdtError::InvalidConfig(m));
        // A zero learning rate is accepted as a degenerate "base score only" model.
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return bad(format!("learning_rate must lie in [0, 1], got {}", self.learning_rate));
        }
        if !(self.bagging_fraction > 0.0 && self.bagging_fraction <= 1.0) {
            return bad(format!("bagging_fraction must lie in (0, 1], got {}", self.bagging_fraction));
        }
        if self.max_leaves < 2 {
            return bad(format!("max_leaves must be ≥ 2, got {}", self.max_leaves));
        }
        if !(2..=255).contains(&self.n_bins) {
            return bad(format!("n_bins must lie in [2, 255], got {}", self.n_bins));
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be ≥ 1".into());
        }
        Ok(())
    }
}

/// Row-major training matrix with one target per row.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    n_features: usize,
    values: Vec<f32>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(n_features: usize) -> Self {
        Self { n_features, values: Vec::new(), targets: Vec::new() }
    }

    pub fn with_capacity(n_features: usize, rows: usize) -> Self {
        Self { n_features, values: Vec::with_capacity(rows * n_features), targets: Vec::with_capacity(rows) }
    }

    pub fn push(&mut self, row: &[f32], target: f64) -> Result<(), GbdtError> {
        if row.len() != self.n_features {
            return Err(GbdtError::WidthMismatch { expected: self.n_features, got: row.len() });
        }
        self.values.extend_from_slice(row);
        self.targets.push(target);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.n_features.max(1))
    }
}

pub fn train(data: &Dataset, config: &GbdtConfig) -> Result<Model, GbdtError> {
    fit(data, config).map(|(model, _)| model)
}

/// Training-set MSE after the base score (entry 0) and after each tree.
pub fn train_loss_curve(data: &Dataset, config: &GbdtConfig) -> Result<Vec<f64>, GbdtError> {
    fit(data, config).map(|(_, curve)| curve)
}

fn fit(data: &Dataset, config: &GbdtConfig) -> Result<(Model, Vec<f64>), GbdtError> {
    config.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(GbdtError::TooFewSamples(n));
    }
    if let Some(index) = data.targets.iter().position(|t| !t.is_finite()) {
        return Err(GbdtError::NonFiniteTarget { index });
    }

    let targets = &data.targets;
    let base_score = targets.iter().sum::<f64>() / n as f64;
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let binned = BinnedMatrix::build(&data.values, n, data.n_features, config.n_bins);
    let mut fitted = vec![base_score; n];
    let mut residuals: Vec<f64> = targets.iter().map(|t| t - base_score).collect();
    let mse = |res: &[f64]| res.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let mut curve = Vec::with_capacity(config.n_trees + 1);
    curve.push(mse(&residuals));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bag_size = ((config.bagging_fraction * n as f64).round() as usize).clamp(1, n);
    let bagging = bag_size < n && config.bagging_frequency > 0;
    let mut bag: Vec<u32> = (0..n as u32).collect();

    let mut trees = Vec::with_capacity(config.n_trees);
    for t in 0..config.n_trees {
        if bagging && t % config.bagging_frequency == 0 {
            bag = index::sample(&mut rng, n, bag_size).into_iter().map(|i| i as u32).collect();
            bag.sort_unstable();
        }
        let (tree, outputs) = tree::grow(&binned, &residuals, &bag, config);
        for i in 0..n {
            fitted[i] += config.learning_rate * outputs[i];
            residuals[i] = targets[i] - fitted[i];
        }
        curve.push(mse(&residuals));
        trees.push(tree);
    }

    let model = Model {
        n_features: data.n_features,
        base_score,
        learning_rate: config.learning_rate,
        trees,
        target_range: Some((lo, hi)),
    };
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: &[(Vec<f32>, f64)]) -> Dataset {
        let mut d = Dataset::new(rows[0].0.len());
        for (x, y) in rows {
            d.push(x, *y).unwrap();
        }
        d
    }

    #[test]
    fn constant_target_predicts_constant() {
        let rows: Vec<_> = (0..50).map(|i| (vec![i as f32, (i % 7) as f32], 7.0)).collect();
        let d = dataset(&rows);
        let m = train(&d, &GbdtConfig::default()).unwrap();
        for x in [[0.0f32, 0.0], [100.0, -3.0], [f32::NAN, 2.0]] {
            assert_eq!(m.predict(&x).unwrap(), 7.0);
        }
        let curve = train_loss_curve(&d, &GbdtConfig::default()).unwrap();
        assert!(curve.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = dataset(&[(vec![1.0], 1.0)]);
        assert_eq!(train(&d, &GbdtConfig::default()), Err(GbdtError::TooFewSamples(1)));
        let d = dataset(&[(vec![1.0], 1.0), (vec![2.0], f64::NAN)]);
        assert_eq!(train(&d, &GbdtConfig::default()), Err(GbdtError::NonFiniteTarget { index: 1 }));
        let mut d = Dataset::new(2);
        assert!(d.push(&[1.0], 0.0).is_err());
        let cfg = GbdtConfig { max_leaves: 1, ..GbdtConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = GbdtConfig { learning_rate: 1.5, ..GbdtConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_base_loss() {
        let rows: Vec<_> = (0..100).map(|i| (vec![i as f32], (i % 10) as f64)).collect();
        let cfg = GbdtConfig { learning_rate: 0.0, ..GbdtConfig::default() };
        let curve = train_loss_curve(&dataset(&rows), &cfg).unwrap();
        assert!(curve.iter().all(|&v| v == curve[0]));
    }

    #[test]
    fn learns_missing_direction() {
        // Missing feature means target 5, present means 0.
        let rows: Vec<_> =
            (0..200).map(|i| if i % 2 == 0 { (vec![f32::NAN], 5.0) } else { (vec![i as f32], 0.0) }).collect();
        let cfg = GbdtConfig { learning_rate: 1.0, n_trees: 1, bagging_fraction: 1.0, ..Default::default() };
        let m = train(&dataset(&rows), &cfg).unwrap();
        assert!((m.predict(&[f32::NAN]).unwrap() - 5.0).abs() < 1e-9);
        assert!(m.predict(&[3.0]).unwrap().abs() < 1e-9);
    }
}
