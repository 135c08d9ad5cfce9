//! Mini-batch training with cross-entropy and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmMixformer, ModelConfig};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{Module, NamedParam};
use crate::preprocess::PreprocessConfig;
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 64,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("Adam needs β₁, β₂ ∈ [0, 1) and ε > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub struct Adam {
    params: Vec<NamedParam>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: Vec<NamedParam>, cfg: &TrainConfig) -> Self {
        let m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            m,
            v,
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((_, p), m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            p.update_with_grad(|w, g| {
                let Some(g) = g else { return };
                for i in 0..w.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    w[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            });
            p.zero_grad();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy of the training-mode forward passes of this epoch.
    pub accuracy: f64,
}

pub struct TrainedModel {
    pub model: EmMixformer,
    pub subjects: Vec<String>,
    pub preprocess: PreprocessConfig,
    pub train_config: TrainConfig,
    pub log: Vec<EpochLog>,
}

impl TrainedModel {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|l| l.loss)
    }

    /// Evaluation-mode embeddings `[d]` of the given samples.
    pub fn embeddings(&self, ds: &Dataset, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
        let d = self.model.config.dim();
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(self.train_config.batch_size.max(1)) {
            let (fast, slow) = ds.batch(chunk)?;
            let emb = no_grad(|| self.model.forward(&fast, &slow, false))?.embedding;
            out.extend(emb.to_vec().chunks_exact(d).map(|r| r.to_vec()));
        }
        Ok(out)
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn correct(logits: &Tensor, labels: &[usize]) -> usize {
    let n = logits.dim(1);
    logits
        .to_vec()
        .chunks_exact(n)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Evaluation-mode classification accuracy over `split`.
pub fn evaluate_accuracy(tm: &TrainedModel, ds: &Dataset, split: Split) -> Result<f64> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(Error::Data(format!("no {split:?} samples")));
    }
    let labels = labels_for(tm, ds, &idx)?;
    let mut hits = 0;
    for (chunk, lab) in idx.chunks(tm.train_config.batch_size).zip(labels.chunks(tm.train_config.batch_size)) {
        let (fast, slow) = ds.batch(chunk)?;
        let out = no_grad(|| tm.model.forward(&fast, &slow, false))?;
        hits += correct(&out.logits, lab);
    }
    Ok(hits as f64 / idx.len() as f64)
}

fn labels_for(tm: &TrainedModel, ds: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| {
            let s = &ds.samples[i].subject_id;
            tm.subjects
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| Error::Protocol(format!("subject {s} unknown to the model")))
        })
        .collect()
}

/// Builds a model for the dataset's subjects and trains it.
pub fn train(ds: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    train_with(ds, model_config, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(ds: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainedModel> {
    cfg.validate()?;
    if ds.subjects.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 subjects for cross-entropy training, found {}",
            ds.subjects.len()
        )));
    }
    let train_idx = ds.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    let mc = ModelConfig {
        n_subjects: ds.subjects.len(),
        ..model_config.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = EmMixformer::new(&mut rng, &mc)?;
    let mut tm = TrainedModel {
        model,
        subjects: ds.subjects.clone(),
        preprocess: ds.preprocess,
        train_config: *cfg,
        log: Vec::with_capacity(cfg.epochs),
    };
    let mut opt = Adam::new(tm.model.parameters(), cfg);
    let mut order = train_idx;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let labels = labels_for(&tm, ds, chunk)?;
            let (fast, slow) = ds.batch(chunk)?;
            let out = tm.model.forward(&fast, &slow, true)?;
            let loss = out.logits.cross_entropy(&labels)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            loss.backward()?;
            opt.step();
            loss_sum += value * chunk.len() as f64;
            hits += correct(&out.logits, &labels);
        }
        let entry = EpochLog {
            epoch,
            loss: loss_sum / order.len() as f64,
            accuracy: hits as f64 / order.len() as f64,
        };
        log::info!("epoch {epoch}: loss {:.6} accuracy {:.4}", entry.loss, entry.accuracy);
        on_epoch(&entry);
        tm.log.push(entry);
    }
    Ok(tm)
}
