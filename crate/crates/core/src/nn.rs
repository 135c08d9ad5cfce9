//! Parameterised building blocks shared by the network modules.

use parking_lot::Mutex;
use rand::Rng;

use crate::error::Result;
use crate::tensor::{RunningStats, Tensor};

/// A named trainable tensor.
pub type NamedParam = (String, Tensor);

pub trait Module {
    /// Appends every trainable tensor under `prefix` in a fixed order.
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>);

    fn parameters(&self) -> Vec<NamedParam> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Trainable tensor with entries drawn from `U(-bound, bound)`.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::variable(shape, data).expect("shape and data agree")
}

pub fn constant_param(shape: &[usize], value: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::variable(shape, vec![value; n]).expect("shape and data agree")
}

/// `y = x·W + b` on the last axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Weights and bias drawn from `U(-1/√in, 1/√in)`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, with_bias: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = uniform(rng, &[fan_in, fan_out], bound);
        let bias = with_bias.then(|| uniform(rng, &[fan_out], bound));
        Linear { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

impl Module for Linear {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b.clone()));
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: constant_param(&[dim], 1.0),
            bias: constant_param(&[dim], 0.0),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias)
    }
}

impl Module for LayerNorm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Debug)]
pub struct BatchNorm1d {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: Mutex<RunningStats>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: constant_param(&[channels], 1.0),
            beta: constant_param(&[channels], 0.0),
            running: Mutex::new(RunningStats::new(channels)),
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        x.batch_norm(&self.gamma, &self.beta, &self.running, training)
    }

    pub fn stats(&self) -> RunningStats {
        self.running.lock().clone()
    }

    pub fn set_stats(&self, stats: RunningStats) {
        *self.running.lock() = stats;
    }
}

impl Module for BatchNorm1d {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        out.push((join(prefix, "gamma"), self.gamma.clone()));
        out.push((join(prefix, "beta"), self.beta.clone()));
    }
}
