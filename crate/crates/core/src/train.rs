//! Fine-tuning with AdamW under a linear warmup/decay schedule, validated
//! after every epoch.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSample;
use crate::error::{Error, Result};
use crate::metrics::{classification_report, confusion_matrix};
use crate::model::{ops, ModelHandle};
use crate::split::DatasetSplit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    pub determinism: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 2e-5,
            batch_size: 32,
            weight_decay: 0.01,
            warmup_fraction: 0.0,
            max_grad_norm: Some(1.0),
            seed: 42,
            determinism: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig("warmup_fraction must lie in [0, 1]".into()));
        }
        if matches!(self.max_grad_norm, Some(n) if n <= 0.0) {
            return Err(Error::InvalidConfig("max_grad_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mean_train_loss: f64,
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero
/// at `total` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, total: usize, warmup_fraction: f64) -> Self {
        let warmup = ((total as f64) * warmup_fraction).round() as usize;
        LinearSchedule { peak, warmup: warmup.min(total), total }
    }

    /// Learning rate for the update taken after `step` completed updates.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup);
        if span == 0 {
            return 0.0;
        }
        let left = self.total.saturating_sub(step) as f64;
        self.peak * left / span as f64
    }
}

/// Decoupled-weight-decay Adam. Biases and LayerNorm parameters are not
/// decayed.
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
    decay: Vec<bool>,
}

impl AdamW {
    pub fn new(names: &[String], shapes: Vec<ArrayD<f32>>, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            v: shapes.clone(),
            m: shapes,
            decay: names
                .iter()
                .map(|n| !(n.ends_with(".bias") || n.contains("LayerNorm")))
                .collect(),
        }
    }

    pub fn update(&mut self, params: &mut [ArrayD<f32>], grads: &[ArrayD<f32>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let shrink = if self.decay[i] { 1.0 - (lr * self.weight_decay) as f32 } else { 1.0 };
            ndarray::Zip::from(&mut params[i])
                .and(&grads[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p *= shrink;
                    *p -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
                });
        }
    }
}

fn global_norm(grads: &[ArrayD<f32>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Predict every sample and score against its gold label. Weights are untouched.
pub fn evaluate_epoch(handle: &ModelHandle, dataset: &[LabeledSample], batch_size: usize) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let records = handle.predict_samples(dataset, batch_size)?;
    let report = classification_report(&confusion_matrix(&records)?)?;
    Ok(EpochMetrics {
        epoch: 0,
        accuracy: report.accuracy,
        macro_precision: report.macro_avg.precision,
        macro_recall: report.macro_avg.recall,
        macro_f1: report.macro_avg.f1,
        mean_train_loss: 0.0,
    })
}

/// Where a run persists its metrics and checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub const CONFIG: &'static str = "config.json";
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const BEST: &'static str = "checkpoint-best";
    pub const LAST: &'static str = "checkpoint-last";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn best(&self) -> PathBuf {
        self.root.join(Self::BEST)
    }

    pub fn last(&self) -> PathBuf {
        self.root.join(Self::LAST)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join(Self::METRICS)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(Self::CONFIG)
    }

    fn append_metrics(&self, m: &EpochMetrics) -> Result<()> {
        let path = self.metrics();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(&path, e))
    }

    pub fn read_metrics(&self) -> Result<Vec<EpochMetrics>> {
        crate::io::read_jsonl(&self.metrics())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights after the final epoch.
    pub handle: ModelHandle,
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch with the highest validation macro-F1 (earliest on ties).
    pub best_epoch: Option<usize>,
}

/// Fine-tune `handle` on `split.train`, validating on `split.val` after every
/// epoch. With a run directory, metrics are appended per epoch and the best
/// (by macro-F1) and last checkpoints are written.
pub fn train(
    mut handle: ModelHandle,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    run_dir: Option<&RunDir>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { handle, epochs: Vec::new(), best_epoch: None });
    }
    if split.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if split.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(dir) = run_dir {
        std::fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
        let metrics = dir.metrics();
        if metrics.exists() {
            std::fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e))?;
        }
    }
    if !cfg.determinism {
        log::debug!("determinism off; training is still single-threaded and seeded");
    }

    let steps_per_epoch = split.train.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.learning_rate, steps_per_epoch * cfg.epochs, cfg.warmup_fraction);
    let params = handle.encoder().params();
    let mut optimizer = AdamW::new(params.names(), params.zeros_like(), cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&LabeledSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let batch = handle.encode_samples(&samples)?;
            let rows = handle.batch_rows(&batch)?;
            let encoder = handle.encoder();
            let mut grads = encoder.params().zeros_like();
            let mut batch_loss = 0.0;
            let scale = 1.0 / samples.len() as f32;
            for (ids, sample) in rows.iter().zip(&samples) {
                let (logits, cache) = encoder.forward(ids)?;
                let probs = ops::softmax(&logits);
                let target = sample.label.ordinal();
                batch_loss += -probs[target].ln();
                let mut dlogits: Vec<f32> = probs.iter().map(|&p| p as f32 * scale).collect();
                dlogits[target] -= scale;
                encoder.backward(&cache, &dlogits, &mut grads);
            }
            batch_loss /= samples.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: batch_idx });
            }
            if let Some(max_norm) = cfg.max_grad_norm {
                let norm = global_norm(&grads);
                if norm > max_norm {
                    let factor = (max_norm / (norm + 1e-6)) as f32;
                    grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * factor));
                }
            }
            let lr = schedule.lr(step);
            optimizer.update(handle.encoder_mut().params_mut().values_mut(), &grads, lr);
            step += 1;
            loss_sum += batch_loss;
        }

        let mut metrics = evaluate_epoch(&handle, &split.val, cfg.batch_size)?;
        metrics.epoch = epoch;
        metrics.mean_train_loss = loss_sum / steps_per_epoch as f64;
        log::info!(
            "epoch {epoch}: loss {:.4} val acc {:.4} macro-F1 {:.4}",
            metrics.mean_train_loss,
            metrics.accuracy,
            metrics.macro_f1
        );
        let improved = best.is_none_or(|(_, f1)| metrics.macro_f1 > f1);
        if improved {
            best = Some((epoch, metrics.macro_f1));
        }
        if let Some(dir) = run_dir {
            dir.append_metrics(&metrics)?;
            if improved {
                handle.save(&dir.best())?;
            }
        }
        history.push(metrics);
    }
    if let Some(dir) = run_dir {
        handle.save(&dir.last())?;
    }
    Ok(TrainOutcome { handle, epochs: history, best_epoch: best.map(|(e, _)| e) })
}

/// Persist a run's resolved configuration.
pub fn write_run_config<T: Serialize>(dir: &RunDir, config: &T) -> Result<()> {
    std::fs::create_dir_all(&dir.root).map_err(|e| Error::io(&dir.root, e))?;
    crate::io::write_json(&dir.config(), config)
}

pub fn run_exists(path: &Path) -> bool {
    path.join(RunDir::CONFIG).is_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_linear() {
        let s = LinearSchedule::new(2e-5, 100, 0.0);
        assert_eq!(s.lr(0), 2e-5);
        assert!((s.lr(25) - 2e-5 * 0.75).abs() < 1e-18);
        assert!((s.lr(60) - 2e-5 * 0.4).abs() < 1e-18);
        assert_eq!(s.lr(100), 0.0);
    }

    #[test]
    fn schedule_with_warmup() {
        let s = LinearSchedule::new(1.0, 100, 0.1);
        assert_eq!(s.warmup, 10);
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(5) - 0.5).abs() < 1e-12);
        assert_eq!(s.lr(10), 1.0);
        assert!((s.lr(55) - 0.5).abs() < 1e-12);
        assert_eq!(s.lr(100), 0.0);
        assert_eq!(LinearSchedule::new(1.0, 10, 1.0).lr(10), 0.0);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g), plus decay.
        let names = vec!["w".to_string(), "b.bias".to_string()];
        let mut params = vec![ArrayD::from_elem(ndarray::IxDyn(&[2]), 1.0f32), ArrayD::from_elem(ndarray::IxDyn(&[1]), 1.0f32)];
        let grads = vec![
            ArrayD::from_shape_vec(ndarray::IxDyn(&[2]), vec![0.5f32, -3.0]).unwrap(),
            ArrayD::from_elem(ndarray::IxDyn(&[1]), 2.0f32),
        ];
        let mut opt = AdamW::new(&names, params.iter().map(|p| p.mapv(|_| 0.0)).collect(), 0.1);
        opt.update(&mut params, &grads, 0.01);
        let w = params[0].as_slice().unwrap();
        assert!((w[0] - (1.0 * (1.0 - 0.001) - 0.01)).abs() < 1e-6);
        assert!((w[1] - (1.0 * (1.0 - 0.001) + 0.01)).abs() < 1e-6);
        // no decay on biases
        assert!((params[1].as_slice().unwrap()[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { warmup_fraction: 1.5, ..Default::default() }.validate().is_err());
    }
}
