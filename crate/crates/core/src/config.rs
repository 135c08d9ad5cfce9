//! Flat TOML run configuration.
//!
//! Every key is optional; unknown keys are rejected.
//!
//! ```toml
//! variant = "emmixformer"     # siamese-cnn | transformer | lstm-transformer
//!                             # | attlstm-transformer | emmixformer
//! # branch flags override the variant preset
//! transformer = true
//! recurrent = "attention"     # attention | peephole | none
//! fourier = true
//! mix_layers = 2              # 0 = CNN only
//! heads = 4
//! mlp_hidden = 1024
//! lstm_tokens = 16
//! cnn_kernels = [3, 5, 7, 9]
//! cnn_channels = [32, 64, 96, 128]
//!
//! v_min = 40.0
//! c = 0.02
//! window_length = 1000
//! window_stride = 500
//!
//! lr = 0.0002
//! batch_size = 64
//! epochs = 200
//! beta1 = 0.9
//! beta2 = 0.999
//! eps = 1e-8
//! seed = 0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::CnnConfig;
use crate::error::{Error, Result};
use crate::model::{MixBlockConfig, ModelConfig, RecurrentKind, TrainConfig, Variant};
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Option<Variant>,
    pub transformer: Option<bool>,
    pub recurrent: Option<String>,
    pub fourier: Option<bool>,
    pub mix_layers: Option<usize>,
    pub heads: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub lstm_tokens: Option<usize>,
    pub cnn_kernels: Option<Vec<usize>>,
    pub cnn_channels: Option<Vec<usize>>,

    pub v_min: Option<f64>,
    pub c: Option<f64>,
    pub window_length: Option<usize>,
    pub window_stride: Option<usize>,

    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig> {
        let d = PreprocessConfig::default();
        let p = PreprocessConfig {
            v_min: self.v_min.unwrap_or(d.v_min),
            c: self.c.unwrap_or(d.c),
            window_length: self.window_length.unwrap_or(d.window_length),
            window_stride: self.window_stride.unwrap_or(d.window_stride),
        };
        if !(p.v_min >= 0.0) || !(p.c > 0.0) || p.window_length == 0 || p.window_stride == 0 {
            return Err(Error::Config(format!("invalid preprocessing settings {p:?}")));
        }
        Ok(p)
    }

    /// Model configuration for `n_subjects` classes.
    pub fn model(&self, n_subjects: usize) -> Result<ModelConfig> {
        let d = CnnConfig::default();
        let cnn = CnnConfig {
            kernels: self.cnn_kernels.clone().unwrap_or(d.kernels),
            channels: self.cnn_channels.clone().unwrap_or(d.channels),
            in_channels: 2,
        };
        let dim = cnn.output_dim();
        let variant = self.variant.unwrap_or(Variant::EmMixformer);
        let preset = variant.mix(dim);
        let base = preset.clone().unwrap_or_else(|| MixBlockConfig::full(dim));
        let recurrent = match self.recurrent.as_deref() {
            None => base.recurrent,
            Some("attention") => Some(RecurrentKind::Attention),
            Some("peephole") => Some(RecurrentKind::Peephole),
            Some("none") => None,
            Some(other) => {
                return Err(Error::Config(format!(
                    "recurrent = `{other}`; expected attention, peephole or none"
                )))
            }
        };
        let layers = self.mix_layers.unwrap_or(if preset.is_some() { base.layers } else { 0 });
        let mix = MixBlockConfig {
            transformer: self.transformer.unwrap_or(base.transformer),
            recurrent,
            fourier: self.fourier.unwrap_or(base.fourier),
            dim,
            layers,
            heads: self.heads.unwrap_or(base.heads),
            mlp_hidden: self.mlp_hidden.unwrap_or(4 * dim),
            lstm_tokens: self.lstm_tokens.unwrap_or(base.lstm_tokens),
        };
        let mc = ModelConfig {
            cnn,
            mix: (layers > 0).then_some(mix),
            n_subjects,
        };
        mc.validate()?;
        Ok(mc)
    }

    /// Training settings; `seed` is the already-resolved seed.
    pub fn train(&self, seed: u64) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let t = TrainConfig {
            lr: self.lr.unwrap_or(d.lr),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            beta1: self.beta1.unwrap_or(d.beta1),
            beta2: self.beta2.unwrap_or(d.beta2),
            eps: self.eps.unwrap_or(d.eps),
            seed,
        };
        t.validate()?;
        Ok(t)
    }
}
