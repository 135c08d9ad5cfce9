//! Two-branch 1-D CNN over the fast and slow velocity channels.
//!
//! Each branch is four stages of `conv1d → batch norm → ReLU → avg-pool(2)`.
//! The branch outputs are concatenated along the channel axis and returned
//! time-major, so a window of width `W` becomes `W/16` tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, uniform, BatchNorm1d, Module, NamedParam};
use crate::tensor::{RunningStats, Tensor};

pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub kernels: Vec<usize>,
    pub channels: Vec<usize>,
    pub in_channels: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            kernels: vec![3, 5, 7, 9],
            channels: vec![32, 64, 96, 128],
            in_channels: 2,
        }
    }
}

impl CnnConfig {
    /// Width of the concatenated token features (both branches).
    pub fn output_dim(&self) -> usize {
        2 * self.channels.last().copied().unwrap_or(0)
    }

    /// Window widths must survive four halvings.
    pub fn downsample(&self) -> usize {
        1 << STAGES
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != STAGES || self.channels.len() != STAGES {
            return Err(Error::Config(format!(
                "cnn needs {STAGES} stages, got kernels {:?} channels {:?}",
                self.kernels, self.channels
            )));
        }
        if self.kernels.windows(2).any(|w| w[0] >= w[1]) || self.kernels[0] == 0 {
            return Err(Error::Config(format!(
                "cnn kernel sizes must be positive and strictly increasing: {:?}",
                self.kernels
            )));
        }
        if self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config("cnn channel counts must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        let f = self.downsample();
        if width == 0 || width % f != 0 {
            return Err(Error::InputLength(format!(
                "window width {width} is not a positive multiple of {f}; set window_length to a multiple of {f}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct Branch {
    pub convs: Vec<Tensor>,
    pub norms: Vec<BatchNorm1d>,
}

impl Branch {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &CnnConfig) -> Self {
        let mut cin = cfg.in_channels;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (&k, &cout) in cfg.kernels.iter().zip(&cfg.channels) {
            let bound = 1.0 / ((cin * k) as f64).sqrt();
            convs.push(uniform(rng, &[cout, cin, k], bound));
            norms.push(BatchNorm1d::new(cout));
            cin = cout;
        }
        Branch { convs, norms }
    }

    /// `[B, 2, W]` → `[B, C, W/16]`.
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for (w, bn) in self.convs.iter().zip(&self.norms) {
            h = bn.forward(&h.conv1d(w, None)?, training)?.relu().avg_pool1d()?;
        }
        Ok(h)
    }

    pub fn running_stats(&self) -> Vec<RunningStats> {
        self.norms.iter().map(|n| n.stats()).collect()
    }
}

impl Module for Branch {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        for (i, (w, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            out.push((join(prefix, &format!("conv{i}")), w.clone()));
            bn.collect_params(&join(prefix, &format!("bn{i}")), out);
        }
    }
}

#[derive(Debug)]
pub struct SiameseCnn {
    pub cfg: CnnConfig,
    pub fast: Branch,
    pub slow: Branch,
}

impl SiameseCnn {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &CnnConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SiameseCnn {
            cfg: cfg.clone(),
            fast: Branch::new(rng, cfg),
            slow: Branch::new(rng, cfg),
        })
    }

    /// Fast and slow inputs `[B, 2, W]` → tokens `[B, W/16, C_fast + C_slow]`.
    pub fn forward(&self, fast: &Tensor, slow: &Tensor, training: bool) -> Result<Tensor> {
        if fast.shape() != slow.shape() || fast.ndim() != 3 {
            return Err(Error::shape("siamese_forward", fast.shape(), slow.shape()));
        }
        self.cfg.check_width(fast.dim(2))?;
        let a = self.fast.forward(fast, training)?;
        let b = self.slow.forward(slow, training)?;
        if a.dim(2) != b.dim(2) {
            return Err(Error::Contract(format!(
                "branch widths differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Tensor::concat(&[a, b], 1)?.permute(&[0, 2, 1])
    }

    /// Running statistics of every batch-norm layer, fast branch first.
    pub fn running_stats(&self) -> Vec<RunningStats> {
        let mut s = self.fast.running_stats();
        s.extend(self.slow.running_stats());
        s
    }

    pub fn set_running_stats(&self, stats: &[RunningStats]) -> Result<()> {
        let norms: Vec<&BatchNorm1d> = self.fast.norms.iter().chain(&self.slow.norms).collect();
        if stats.len() != norms.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} batch-norm states, found {}",
                norms.len(),
                stats.len()
            )));
        }
        for (n, s) in norms.into_iter().zip(stats) {
            if s.mean.len() != n.gamma.numel() || s.var.len() != n.gamma.numel() {
                return Err(Error::Checkpoint("batch-norm state width mismatch".into()));
            }
            n.set_stats(s.clone());
        }
        Ok(())
    }
}

impl Module for SiameseCnn {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        self.fast.collect_params(&join(prefix, "fast"), out);
        self.slow.collect_params(&join(prefix, "slow"), out);
    }
}
