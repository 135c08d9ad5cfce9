//! Scaled dot-product attention, multi-head attention, sinusoidal position
//! tables and the transformer encoder block.
//!
//! The encoder block uses the layout
//!
//! ```text
//! Z   = X + MultiHead(LN₁(X))
//! out = LN₃(MLP(LN₂(Z)) + Z)        MLP = linear → ReLU → linear
//! ```
//!
//! i.e. a pre-norm attention residual followed by a post-norm MLP residual
//! with an extra norm on the MLP input. No masking and no dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{join, LayerNorm, Linear, Module, NamedParam};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub layers: usize,
}

impl TransformerConfig {
    /// Four heads, MLP width `4·d`, one encoder block.
    pub fn new(model_dim: usize) -> Self {
        TransformerConfig {
            model_dim,
            heads: 4,
            mlp_hidden: 4 * model_dim,
            layers: 1,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.mlp_hidden == 0 || self.layers == 0 {
            return Err(Error::Config(format!("transformer fields must be ≥ 1: {self:?}")));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// `softmax(Q·Kᵀ / √d_k) · V` over the last two axes; leading axes batch.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let dk = *q.shape().last().ok_or_else(|| Error::shape("attention", q.shape(), k.shape()))?;
    if k.shape().last() != Some(&dk) {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    let scores = q.matmul_nt(k)?.scale(1.0 / (dk as f64).sqrt());
    scores.softmax().matmul(v)
}

/// Sinusoidal table: `PE(t, 2i) = sin(t / 10000^{2i/d})`,
/// `PE(t, 2i+1) = cos(t / 10000^{2i/d})`.
pub fn positional_encoding(len: usize, dim: usize) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even width, got {dim}")));
    }
    let mut data = vec![0.0; len * dim];
    for t in 0..len {
        for i in 0..dim / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            data[t * dim + 2 * i] = angle.sin();
            data[t * dim + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::from_vec(&[len, dim], data)
}

/// Lifts `[T, d]` to `[1, T, d]`; returns the original rank for undoing it.
fn as_batched(x: &Tensor) -> Result<(Tensor, bool)> {
    match x.ndim() {
        2 => Ok((x.reshape(&[1, x.dim(0), x.dim(1)])?, true)),
        3 => Ok((x.clone(), false)),
        _ => Err(Error::shape("sequence input", x.shape(), &[])),
    }
}

fn unbatch(y: Tensor, was_2d: bool) -> Result<Tensor> {
    if was_2d {
        y.reshape(&[y.dim(1), y.dim(2)])
    } else {
        Ok(y)
    }
}

/// `Concat(head₁ … head_L)·W` with per-head projections packed column-wise
/// into `d×d` matrices.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Self {
        MultiHeadAttention {
            heads,
            w_q: Linear::new(rng, dim, dim, false),
            w_k: Linear::new(rng, dim, dim, false),
            w_v: Linear::new(rng, dim, dim, false),
            w_o: Linear::new(rng, dim, dim, false),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (x, was_2d) = as_batched(x)?;
        let [b, t, d] = *x.shape() else { unreachable!() };
        if d != self.w_q.in_dim() {
            return Err(Error::shape("multi_head", x.shape(), self.w_q.weight.shape()));
        }
        let l = self.heads;
        let dk = d / l;
        let split = |p: &Linear| -> Result<Tensor> {
            p.forward(&x)?
                .reshape(&[b, t, l, dk])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * l, t, dk])
        };
        let heads = attention(&split(&self.w_q)?, &split(&self.w_k)?, &split(&self.w_v)?)?;
        let merged = heads
            .reshape(&[b, l, t, dk])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, d])?;
        unbatch(self.w_o.forward(&merged)?, was_2d)
    }
}

impl Module for MultiHeadAttention {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        self.w_q.collect_params(&join(prefix, "w_q"), out);
        self.w_k.collect_params(&join(prefix, "w_k"), out);
        self.w_v.collect_params(&join(prefix, "w_v"), out);
        self.w_o.collect_params(&join(prefix, "w_o"), out);
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_mlp: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub norm_out: LayerNorm,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &TransformerConfig) -> Self {
        let d = cfg.model_dim;
        EncoderBlock {
            norm_attn: LayerNorm::new(d),
            attn: MultiHeadAttention::new(rng, d, cfg.heads),
            norm_mlp: LayerNorm::new(d),
            fc1: Linear::new(rng, d, cfg.mlp_hidden, true),
            fc2: Linear::new(rng, cfg.mlp_hidden, d, true),
            norm_out: LayerNorm::new(d),
        }
    }

    /// `[T, d]` or `[B, T, d]` in, same shape out.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = x.add(&self.attn.forward(&self.norm_attn.forward(x)?)?)?;
        let h = self.fc1.forward(&self.norm_mlp.forward(&z)?)?.relu();
        let mlp = self.fc2.forward(&h)?;
        self.norm_out.forward(&mlp.add(&z)?)
    }
}

impl Module for EncoderBlock {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        self.norm_attn.collect_params(&join(prefix, "norm_attn"), out);
        self.attn.collect_params(&join(prefix, "attn"), out);
        self.norm_mlp.collect_params(&join(prefix, "norm_mlp"), out);
        self.fc1.collect_params(&join(prefix, "fc1"), out);
        self.fc2.collect_params(&join(prefix, "fc2"), out);
        self.norm_out.collect_params(&join(prefix, "norm_out"), out);
    }
}

/// A stack of encoder blocks, optionally adding the sinusoidal table to its
/// input first.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<EncoderBlock>,
    pub positional: bool,
}

impl Transformer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &TransformerConfig, positional: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Transformer {
            blocks: (0..cfg.layers).map(|_| EncoderBlock::new(rng, cfg)).collect(),
            positional,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = if self.positional {
            let n = x.ndim();
            x.add(&positional_encoding(x.dim(n - 2), x.dim(n - 1))?)?
        } else {
            x.clone()
        };
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }
}

impl Module for Transformer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_params(&join(prefix, &format!("block{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_key_returns_its_value() {
        let q = Tensor::from_vec(&[3, 2], vec![1., -2., 0.5, 3., 7., 0.]).unwrap();
        let k = Tensor::from_vec(&[1, 2], vec![0.3, 0.9]).unwrap();
        let v = Tensor::from_vec(&[1, 3], vec![4., 5., 6.]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        assert_eq!(out.to_vec(), vec![4., 5., 6., 4., 5., 6., 4., 5., 6.]);
    }

    #[test]
    fn identical_keys_average_values() {
        let q = Tensor::from_vec(&[2, 2], vec![1., 2., -3., 0.5]).unwrap();
        let k = Tensor::from_vec(&[2, 2], vec![0.4, 0.1, 0.4, 0.1]).unwrap();
        let v = Tensor::from_vec(&[2, 1], vec![1., 3.]).unwrap();
        for o in attention(&q, &k, &v).unwrap().to_vec() {
            assert!((o - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn key_width_mismatch() {
        let q = Tensor::zeros(&[2, 3]);
        let k = Tensor::zeros(&[2, 4]);
        let v = Tensor::zeros(&[2, 1]);
        assert!(matches!(attention(&q, &k, &v), Err(Error::Shape { .. })));
    }

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(5, 8).unwrap();
        for j in 0..8 {
            assert_eq!(pe.at(&[0, j]), if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe.at(&[1, 0]) - 0.8414709848078965).abs() < 1e-15);
        assert!(pe.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(matches!(positional_encoding(3, 5), Err(Error::Config(_))));
    }

    #[test]
    fn zero_weights_reduce_block_to_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = TransformerConfig::new(16);
        let block = EncoderBlock::new(&mut rng, &cfg);
        for (_, p) in block.parameters() {
            if p.numel() != 16 || p.shape().len() != 1 {
                p.set_data(vec![0.0; p.numel()]).unwrap();
            }
        }
        for lin in [&block.fc1, &block.fc2] {
            if let Some(b) = &lin.bias {
                b.set_data(vec![0.0; b.numel()]).unwrap();
            }
        }
        let x = crate::nn::uniform(&mut rng, &[5, 16], 2.0).detach();
        let y = block.forward(&x).unwrap();
        let ln = x.layer_norm(&Tensor::full(&[16], 1.0), &Tensor::zeros(&[16])).unwrap();
        for (a, b) in y.to_vec().iter().zip(ln.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = EncoderBlock::new(&mut rng, &TransformerConfig::new(16));
        for t in [1, 2, 7] {
            let x = crate::nn::uniform(&mut rng, &[t, 16], 1.0).detach();
            assert_eq!(block.forward(&x).unwrap().shape(), &[t, 16]);
        }
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let mut cfg = TransformerConfig::new(18);
        cfg.heads = 4;
        assert!(cfg.validate().is_err());
    }
}
