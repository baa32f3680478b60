use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::features::FeatureCache;
use super::model::Model;
use super::optim::Adam;
use crate::error::{LriError, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seed of the minibatch order.
    pub seed: u64,
    /// Metrics are recorded every `eval_every` iterations and at the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10_000,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.99,
            beta2: 0.9999,
            eps: 1e-8,
            seed: 0,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(LriError::Config("iterations, batch size and eval cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Per-volume feature caches with labels.
#[derive(Debug, Clone, Default)]
pub struct CachedDataset {
    pub features: Vec<FeatureCache>,
    pub labels: Vec<usize>,
}

impl CachedDataset {
    pub fn new(features: Vec<FeatureCache>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(LriError::Shape(format!("{} samples but {} labels", features.len(), labels.len())));
        }
        Ok(CachedDataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> CachedDataset {
        CachedDataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    /// Mean minibatch loss since the previous row.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn predict(model: &Model, cache: &FeatureCache) -> Result<usize> {
    let pooled = cache.features(model.config(), model.layer_params())?;
    let logits = model.head(&pooled).logits;
    Ok(argmax(&logits))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax accuracy; `NaN` for an empty dataset.
pub fn evaluate(model: &Model, data: &CachedDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut correct = 0;
    for (c, &y) in data.features.iter().zip(&data.labels) {
        if predict(model, c)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Minibatch Adam on cached features.
pub fn train(model: &mut Model, train: &CachedDataset, test: &CachedDataset, cfg: &TrainConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(LriError::Config("training set is empty".into()));
    }
    if let Some(&y) = train.labels.iter().chain(&test.labels).find(|&&y| y >= model.config().classes) {
        return Err(LriError::Config(format!("label {y} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.params().len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)?;
    let layer_range = model.layout().layer;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut rows = Vec::new();
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let pooled = batch
            .iter()
            .map(|&i| train.features[i].features(model.config(), model.layer_params()))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
        let mut grad = vec![0.0; model.params().len()];
        let (loss, dpooled) = model.head_loss_backward(&pooled, &labels, &mut grad);
        if !loss.is_finite() {
            return Err(LriError::Numerical(format!("non-finite loss {loss} at iteration {it}")));
        }
        for (&i, dp) in batch.iter().zip(&dpooled) {
            train.features[i].backward(model.config(), model.layer_params(), dp, &mut grad[layer_range.clone()])?;
        }
        opt.step(model.params_mut(), &grad)
            .map_err(|e| match e {
                LriError::Numerical(m) => LriError::Numerical(format!("{m}; loss {loss}")),
                other => other,
            })?;
        loss_sum += loss;
        loss_count += 1;
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            rows.push(MetricsRow {
                iteration: it,
                loss: loss_sum / loss_count as f64,
                train_accuracy: evaluate(model, train)?,
                test_accuracy: evaluate(model, test)?,
            });
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    Ok(rows)
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,loss,train_accuracy,test_accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.loss, r.train_accuracy, r.test_accuracy);
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows)).map_err(|e| LriError::io(path, e))
}

/// Mean and 95% Student-t half-width.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(LriError::Domain(format!("confidence interval needs at least 2 values, got {}", values.len())));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], 0.0));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let t = StudentsT::new(0.0, 1.0, k - 1.0)
        .map_err(|e| LriError::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((mean, t * (var / k).sqrt()))
}
