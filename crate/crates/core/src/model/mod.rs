//! The assembled network: Siamese CNN → positional encoding → mix blocks →
//! temporal mean → embedding → linear classifier.

mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{positional_encoding, Transformer, TransformerConfig};
use crate::attlstm::{AttLstm, PeepholeLstm, Recurrent};
use crate::cnn::{CnnConfig, SiameseCnn};
use crate::error::{Error, Result};
use crate::fourier::FourierFormer;
use crate::nn::{join, Linear, Module, NamedParam};
use crate::tensor::{RunningStats, Tensor};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{evaluate_accuracy, train, train_with, Adam, EpochLog, TrainConfig, TrainedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecurrentKind {
    Attention,
    Peephole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixBlockConfig {
    pub transformer: bool,
    pub recurrent: Option<RecurrentKind>,
    pub fourier: bool,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub lstm_tokens: usize,
}

impl MixBlockConfig {
    /// All three branches, two layers, four heads, 16 LSTM tokens.
    pub fn full(dim: usize) -> Self {
        MixBlockConfig {
            transformer: true,
            recurrent: Some(RecurrentKind::Attention),
            fourier: true,
            dim,
            layers: 2,
            heads: 4,
            mlp_hidden: 4 * dim,
            lstm_tokens: 16,
        }
    }

    pub fn branches(&self) -> usize {
        self.transformer as usize + self.recurrent.is_some() as usize + self.fourier as usize
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            model_dim: self.dim,
            heads: self.heads,
            mlp_hidden: self.mlp_hidden,
            layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches() == 0 {
            return Err(Error::Config("mix block needs at least one enabled branch".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("mix block layers must be ≥ 1".into()));
        }
        if self.recurrent.is_some() && (self.lstm_tokens == 0 || self.dim % self.lstm_tokens != 0) {
            return Err(Error::Config(format!(
                "lstm_tokens {} must divide dim {}",
                self.lstm_tokens, self.dim
            )));
        }
        self.transformer_config().validate()
    }
}

/// The five ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SiameseCnn,
    Transformer,
    LstmTransformer,
    #[serde(rename = "attlstm-transformer")]
    AttLstmTransformer,
    #[serde(rename = "emmixformer")]
    EmMixformer,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SiameseCnn,
        Variant::Transformer,
        Variant::LstmTransformer,
        Variant::AttLstmTransformer,
        Variant::EmMixformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SiameseCnn => "siamese-cnn",
            Variant::Transformer => "transformer",
            Variant::LstmTransformer => "lstm-transformer",
            Variant::AttLstmTransformer => "attlstm-transformer",
            Variant::EmMixformer => "emmixformer",
        }
    }

    /// Mix-block configuration of this variant over `dim` features, `None`
    /// for the CNN alone.
    pub fn mix(self, dim: usize) -> Option<MixBlockConfig> {
        let full = MixBlockConfig::full(dim);
        match self {
            Variant::SiameseCnn => None,
            Variant::Transformer => Some(MixBlockConfig {
                recurrent: None,
                fourier: false,
                ..full
            }),
            Variant::LstmTransformer => Some(MixBlockConfig {
                recurrent: Some(RecurrentKind::Peephole),
                fourier: false,
                ..full
            }),
            Variant::AttLstmTransformer => Some(MixBlockConfig { fourier: false, ..full }),
            Variant::EmMixformer => Some(full),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cnn: CnnConfig,
    /// `None`: the CNN alone.
    pub mix: Option<MixBlockConfig>,
    pub n_subjects: usize,
}

impl ModelConfig {
    pub fn variant(variant: Variant, n_subjects: usize) -> Self {
        let cnn = CnnConfig::default();
        ModelConfig {
            mix: variant.mix(cnn.output_dim()),
            cnn,
            n_subjects,
        }
    }

    pub fn dim(&self) -> usize {
        self.cnn.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.cnn.validate()?;
        if self.n_subjects < 1 {
            return Err(Error::Config("n_subjects must be ≥ 1".into()));
        }
        if self.dim() % 2 != 0 {
            return Err(Error::Config(format!("embedding width {} must be even", self.dim())));
        }
        if let Some(mix) = &self.mix {
            mix.validate()?;
            if mix.dim != self.dim() {
                return Err(Error::Config(format!(
                    "mix block width {} differs from CNN output width {}",
                    mix.dim,
                    self.dim()
                )));
            }
        }
        Ok(())
    }
}

/// One mix block: enabled branches side by side, concatenated on the
/// feature axis (recurrent, transformer, Fourier) and projected back to `d`.
#[derive(Debug, Clone)]
pub struct MixBlock {
    pub recurrent: Option<Recurrent>,
    pub transformer: Option<Transformer>,
    pub fourier: Option<FourierFormer>,
    pub proj: Linear,
}

impl MixBlock {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &MixBlockConfig) -> Result<Self> {
        cfg.validate()?;
        let tcfg = cfg.transformer_config();
        let recurrent = match cfg.recurrent {
            Some(RecurrentKind::Attention) => Some(Recurrent::Attention(AttLstm::new(rng, cfg.dim, cfg.lstm_tokens)?)),
            Some(RecurrentKind::Peephole) => Some(Recurrent::Peephole(PeepholeLstm::new(rng, cfg.dim))),
            None => None,
        };
        let transformer = cfg.transformer.then(|| Transformer::new(rng, &tcfg, false)).transpose()?;
        let fourier = cfg.fourier.then(|| FourierFormer::new(rng, &tcfg)).transpose()?;
        let proj = Linear::new(rng, cfg.branches() * cfg.dim, cfg.dim, true);
        Ok(MixBlock {
            recurrent,
            transformer,
            fourier,
            proj,
        })
    }

    /// Concatenated branch outputs before the projection, `[B, T, k·d]`.
    pub fn branch_outputs(&self, x: &Tensor) -> Result<Tensor> {
        let mut parts = Vec::with_capacity(3);
        if let Some(r) = &self.recurrent {
            parts.push(r.sequence(x)?);
        }
        if let Some(t) = &self.transformer {
            parts.push(t.forward(x)?);
        }
        if let Some(f) = &self.fourier {
            parts.push(f.forward(x)?);
        }
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap());
        }
        Tensor::concat(&parts, x.ndim() - 1)
    }

    /// `[B, T, d]` → `[B, T, d]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.proj.forward(&self.branch_outputs(x)?)
    }
}

impl Module for MixBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        if let Some(r) = &self.recurrent {
            r.collect_params(&join(prefix, "recurrent"), out);
        }
        if let Some(t) = &self.transformer {
            t.collect_params(&join(prefix, "transformer"), out);
        }
        if let Some(f) = &self.fourier {
            f.collect_params(&join(prefix, "fourier"), out);
        }
        self.proj.collect_params(&join(prefix, "proj"), out);
    }
}

/// Network output for a batch.
#[derive(Debug, Clone)]
pub struct Output {
    /// `[B, n_subjects]`
    pub logits: Tensor,
    /// `[B, d]`
    pub embedding: Tensor,
}

#[derive(Debug)]
pub struct EmMixformer {
    pub config: ModelConfig,
    pub cnn: SiameseCnn,
    pub blocks: Vec<MixBlock>,
    pub head: Linear,
}

impl EmMixformer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let cnn = SiameseCnn::new(rng, &config.cnn)?;
        let blocks = match &config.mix {
            Some(mix) => (0..mix.layers).map(|_| MixBlock::new(rng, mix)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let head = Linear::new(rng, config.dim(), config.n_subjects, true);
        Ok(EmMixformer {
            config: config.clone(),
            cnn,
            blocks,
            head,
        })
    }

    /// Token sequence entering the first mix block, `[B, T', d]`.
    pub fn tokens(&self, fast: &Tensor, slow: &Tensor, training: bool) -> Result<Tensor> {
        let x = self.cnn.forward(fast, slow, training)?;
        x.add(&positional_encoding(x.dim(1), x.dim(2))?)
    }

    /// Embedding from a token sequence: mix blocks, then the mean over time.
    pub fn pool(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut h = tokens.clone();
        for b in &self.blocks {
            h = b.forward(&h)?;
        }
        h.mean_axis(1)
    }

    /// `fast`, `slow`: `[B, 2, W]`.
    pub fn forward(&self, fast: &Tensor, slow: &Tensor, training: bool) -> Result<Output> {
        let embedding = self.pool(&self.tokens(fast, slow, training)?)?;
        let logits = self.head.forward(&embedding)?;
        Ok(Output { logits, embedding })
    }

    pub fn running_stats(&self) -> Vec<RunningStats> {
        self.cnn.running_stats()
    }

    pub fn set_running_stats(&self, stats: &[RunningStats]) -> Result<()> {
        self.cnn.set_running_stats(stats)
    }
}

impl Module for EmMixformer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        self.cnn.collect_params(&join(prefix, "cnn"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("mix{i}")), out);
        }
        self.head.collect_params(&join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(variant: Variant) -> ModelConfig {
        let cnn = CnnConfig {
            kernels: vec![3, 5, 7, 9],
            channels: vec![4, 4, 6, 8],
            in_channels: 2,
        };
        let mix = variant.mix(16).map(|m| MixBlockConfig {
            lstm_tokens: 4,
            ..m
        });
        ModelConfig { cnn, mix, n_subjects: 3 }
    }

    #[test]
    fn every_variant_builds_and_embeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let fast = crate::nn::uniform(&mut rng, &[2, 2, 64], 1.0).detach();
        let slow = crate::nn::uniform(&mut rng, &[2, 2, 64], 1.0).detach();
        for v in Variant::ALL {
            let model = EmMixformer::new(&mut rng, &toy(v)).unwrap();
            let out = model.forward(&fast, &slow, true).unwrap();
            assert_eq!(out.logits.shape(), &[2, 3]);
            assert_eq!(out.embedding.shape(), &[2, 16]);
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn three_branches_concatenate_to_triple_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let block = MixBlock::new(&mut rng, &MixBlockConfig::full(256)).unwrap();
        let x = crate::nn::uniform(&mut rng, &[1, 4, 256], 1.0).detach();
        assert_eq!(block.branch_outputs(&x).unwrap().shape(), &[1, 4, 768]);
        assert_eq!(block.forward(&x).unwrap().shape(), &[1, 4, 256]);
    }

    #[test]
    fn no_branch_is_config_error() {
        let cfg = MixBlockConfig {
            transformer: false,
            recurrent: None,
            fourier: false,
            ..MixBlockConfig::full(16)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_depends_only_on_config() {
        let a = EmMixformer::new(&mut ChaCha8Rng::seed_from_u64(1), &toy(Variant::EmMixformer)).unwrap();
        let b = EmMixformer::new(&mut ChaCha8Rng::seed_from_u64(2), &toy(Variant::EmMixformer)).unwrap();
        assert_eq!(a.parameter_count(), b.parameter_count());
        let names_a: Vec<_> = a.parameters().into_iter().map(|(n, _)| n).collect();
        let names_b: Vec<_> = b.parameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names_a, names_b);
    }

    #[test]
    fn unknown_variant_name() {
        assert!("resnet".parse::<Variant>().is_err());
    }
}
