//! Finite-difference verification of the analytic gradients.
//!
//! Each case builds a small module, a fixed random input and a scalar loss
//! (a fixed random weighting of the output, or cross-entropy for the whole
//! model). For every trainable tensor a seeded sample of entries is
//! perturbed by `±h` and the central difference compared with the gradient
//! from [`Tensor::backward`].
//!
//! The relative error of one entry is `|a − n| / max(|a|, |n|, floor)`:
//! entries whose gradients are both below `floor` are compared in absolute
//! terms, where the central difference is dominated by rounding.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{EncoderBlock, TransformerConfig};
use crate::attlstm::{AttLstm, PeepholeLstm};
use crate::cnn::{CnnConfig, SiameseCnn};
use crate::error::{Error, Result};
use crate::fourier::FourierFormer;
use crate::model::{EmMixformer, MixBlockConfig, ModelConfig, Variant};
use crate::nn::{uniform, Module, NamedParam};
use crate::tensor::{dft_axis, idft_axis, no_grad, RunningStats, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const FLOOR: f64 = 1e-6;
/// Entries probed per tensor; smaller tensors are probed completely.
pub const MAX_PROBES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Numerics,
    SiameseCnn,
    AttentionCore,
    Attlstm,
    Fourierformer,
    Model,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::Numerics,
        Target::SiameseCnn,
        Target::AttentionCore,
        Target::Attlstm,
        Target::Fourierformer,
        Target::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Numerics => "numerics",
            Target::SiameseCnn => "siamese_cnn",
            Target::AttentionCore => "attention_core",
            Target::Attlstm => "attlstm",
            Target::Fourierformer => "fourierformer",
            Target::Model => "model",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<_> = Target::ALL.iter().map(|t| t.name()).collect();
            Error::Argument(format!("unknown module `{s}`; expected one of {}", names.join(", ")))
        })
    }
}

/// A set of trainable tensors and a scalar loss over them.
pub struct Case {
    pub params: Vec<NamedParam>,
    pub loss: Box<dyn Fn() -> Result<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub target: Target,
    pub groups: Vec<GroupResult>,
}

impl Report {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < TOLERANCE
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// `Σ w ⊙ x` with fixed weights drawn from `rng`.
fn weighted_sum<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> impl Fn(&Tensor) -> Result<Tensor> {
    let w = uniform(rng, shape, 1.0).detach();
    move |x: &Tensor| Ok(x.mul(&w)?.sum_all())
}

/// Compares analytic and central-difference gradients of `case`.
/// `distort` scales the analytic gradient (1 for a real check).
pub fn run_case(case: &Case, seed: u64, distort: f64) -> Result<Vec<GroupResult>> {
    for (_, p) in &case.params {
        p.zero_grad();
    }
    (case.loss)()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let mut out = Vec::with_capacity(case.params.len());
    for (name, p) in &case.params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let n = p.numel();
        let idx: Vec<usize> = if n <= MAX_PROBES {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, MAX_PROBES).into_vec();
            v.sort_unstable();
            v
        };
        let base = p.to_vec();
        let mut worst: f64 = 0.0;
        for &i in &idx {
            let eval = |delta: f64| -> Result<f64> {
                let mut v = base.clone();
                v[i] += delta;
                p.set_data(v)?;
                Ok(no_grad(|| (case.loss)())?.item())
            };
            let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            p.set_data(base.clone())?;
            worst = worst.max(rel_error(analytic[i] * distort, numeric));
        }
        out.push(GroupResult {
            name: name.clone(),
            probes: idx.len(),
            max_rel_error: worst,
        });
        p.zero_grad();
    }
    Ok(out)
}

/// Each primitive applied to its own input tensor.
fn numerics_case(rng: &mut ChaCha8Rng) -> Result<Case> {
    let var = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::variable(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
    };
    // Magnitudes bounded away from 0 keep relu, sqrt, div and atan2 smooth.
    let away = |rng: &mut ChaCha8Rng, shape: &[usize]| -> Tensor {
        let n: usize = shape.iter().product();
        let v = (0..n)
            .map(|_| {
                let m = rng.random_range(0.2..1.5);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Tensor::variable(shape, v).expect("shape")
    };
    let a = var(rng, &[3, 4], -1.0, 1.0);
    let b = var(rng, &[4, 5], -1.0, 1.0);
    let c = var(rng, &[2, 3], -3.0, 3.0);
    let d = away(rng, &[2, 3]);
    let e = var(rng, &[2, 5], 0.2, 2.0);
    let fy = away(rng, &[2, 4]);
    let fx = away(rng, &[2, 4]);
    let sm = var(rng, &[3, 6], -3.0, 3.0);
    let ln = var(rng, &[3, 5], -2.0, 2.0);
    let ln_g = var(rng, &[5], 0.5, 1.5);
    let ln_b = var(rng, &[5], -0.5, 0.5);
    let cx = var(rng, &[2, 3, 7], -1.0, 1.0);
    let cw = var(rng, &[4, 3, 3], -1.0, 1.0);
    let cb = var(rng, &[4], -1.0, 1.0);
    let bx = var(rng, &[3, 2, 4], -2.0, 2.0);
    let bg = var(rng, &[2], 0.5, 1.5);
    let bb = var(rng, &[2], -0.5, 0.5);
    let ce = var(rng, &[4, 3], -2.0, 2.0);
    let sig = var(rng, &[6], -8.0, 8.0);
    let dft_in = var(rng, &[8, 2], -1.0, 1.0);
    let red = var(rng, &[2, 3, 4], -1.0, 1.0);

    let w: Vec<Box<dyn Fn(&Tensor) -> Result<Tensor>>> = (0..16)
        .map(|i| {
            let shapes: [&[usize]; 16] = [
                &[3, 5],
                &[2, 3],
                &[2, 3],
                &[2, 5],
                &[2, 4],
                &[3, 6],
                &[3, 5],
                &[2, 4, 3],
                &[2, 3, 4],
                &[3, 2, 4],
                &[6],
                &[8, 2],
                &[2, 4],
                &[2, 4],
                &[6],
                &[6],
            ];
            Box::new(weighted_sum(rng, shapes[i])) as Box<dyn Fn(&Tensor) -> Result<Tensor>>
        })
        .collect();
    let running = parking_lot::Mutex::new(RunningStats::new(2));
    let params: Vec<NamedParam> = [
        ("matmul.a", &a),
        ("matmul.b", &b),
        ("add_mul_div.c", &c),
        ("add_mul_div.d", &d),
        ("sqrt_sin_cos", &e),
        ("atan2.y", &fy),
        ("atan2.x", &fx),
        ("softmax", &sm),
        ("layer_norm.x", &ln),
        ("layer_norm.gain", &ln_g),
        ("layer_norm.bias", &ln_b),
        ("conv1d.x", &cx),
        ("conv1d.weight", &cw),
        ("conv1d.bias", &cb),
        ("batch_norm.x", &bx),
        ("batch_norm.gamma", &bg),
        ("batch_norm.beta", &bb),
        ("cross_entropy", &ce),
        ("sigmoid_tanh_relu", &sig),
        ("dft", &dft_in),
        ("reductions", &red),
    ]
    .into_iter()
    .map(|(n, t)| (n.to_string(), t.clone()))
    .collect();

    let loss = move || -> Result<Tensor> {
        let mut terms = vec![
            w[0](&a.matmul(&b)?)?,
            w[1](&c.add(&d)?.mul(&c)?)?,
            w[2](&c.sub(&d)?.div(&d)?)?,
            w[3](&e.sqrt().add(&e.sin())?.mul(&e.cos())?)?,
            w[4](&fy.atan2(&fx)?)?,
            w[5](&sm.softmax())?,
            w[6](&ln.layer_norm(&ln_g, &ln_b)?)?,
            w[7](&cx.conv1d(&cw, Some(&cb))?.relu().avg_pool1d()?)?,
            w[8](&cx.conv1d(&cw, None)?.narrow(2, 1, 3)?.transpose(1, 2)?.permute(&[0, 2, 1])?.transpose(1, 2)?)?,
            w[9](&bx.batch_norm(&bg, &bb, &running, true)?)?,
            ce.cross_entropy(&[0, 2, 1, 1])?,
        ];
        let s = sig.sigmoid().add(&sig.tanh())?.add(&sig.relu())?.add(&sig.exp().scale(0.01))?.add(&sig.square().scale(0.1))?;
        terms.push(w[10](&s)?);
        let f = dft_axis(&dft_in, 0)?;
        terms.push(w[11](&idft_axis(&f, 0)?.add(&f.abs()?)?)?);
        terms.push(w[12](&Tensor::concat(&[fy.clone(), fx.clone()], 0)?.narrow(0, 1, 2)?)?);
        terms.push(w[13](&red.sum_axis(1)?)?);
        terms.push(w[15](&red.mean_axis(2)?.reshape(&[6])?)?);
        terms.push(red.mean_all().add(&red.select(2, 1)?.sum_all())?);
        terms.push(w[14](&Tensor::stack(&[sig.narrow(0, 0, 3)?, sig.narrow(0, 3, 3)?], 0)?.reshape(&[6])?.neg())?);
        let mut total = terms[0].clone();
        for t in &terms[1..] {
            total = total.add(t)?;
        }
        Ok(total)
    };
    Ok(Case {
        params,
        loss: Box::new(loss),
    })
}

fn detached_uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    uniform(rng, shape, bound).detach()
}

/// Builds the check for one module at toy sizes.
pub fn build_case(target: Target, seed: u64) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    match target {
        Target::Numerics => numerics_case(rng),
        Target::SiameseCnn => {
            let cfg = CnnConfig {
                kernels: vec![3, 5, 7, 9],
                channels: vec![3, 4, 4, 5],
                in_channels: 2,
            };
            let cnn = SiameseCnn::new(rng, &cfg)?;
            let fast = detached_uniform(rng, &[2, 2, 32], 2.0);
            let slow = detached_uniform(rng, &[2, 2, 32], 1.0);
            let w = weighted_sum(rng, &[2, 2, 10]);
            let params = cnn.parameters();
            Ok(Case {
                params,
                loss: Box::new(move || w(&cnn.forward(&fast, &slow, true)?)),
            })
        }
        Target::AttentionCore => {
            let cfg = TransformerConfig {
                model_dim: 16,
                heads: 4,
                mlp_hidden: 32,
                layers: 1,
            };
            let block = EncoderBlock::new(rng, &cfg);
            let x = Tensor::variable(&[2, 5, 16], uniform(rng, &[160], 1.0).to_vec())?;
            let w = weighted_sum(rng, &[2, 5, 16]);
            let mut params = block.parameters();
            params.push(("input".into(), x.clone()));
            Ok(Case {
                params,
                loss: Box::new(move || w(&block.forward(&x)?)),
            })
        }
        Target::Attlstm => {
            let att = AttLstm::new(rng, 32, 4)?;
            let peep = PeepholeLstm::new(rng, 32);
            let x = Tensor::variable(&[2, 3, 32], uniform(rng, &[192], 1.0).to_vec())?;
            let wa = weighted_sum(rng, &[2, 3, 32]);
            let wp = weighted_sum(rng, &[2, 3, 32]);
            let mut params: Vec<NamedParam> = Vec::new();
            att.collect_params("attention", &mut params);
            peep.collect_params("peephole", &mut params);
            params.push(("input".into(), x.clone()));
            Ok(Case {
                params,
                loss: Box::new(move || wa(&att.sequence(&x)?)?.add(&wp(&peep.sequence(&x)?)?)),
            })
        }
        Target::Fourierformer => {
            let ff = FourierFormer::new(
                rng,
                &TransformerConfig {
                    model_dim: 16,
                    heads: 4,
                    mlp_hidden: 32,
                    layers: 1,
                },
            )?;
            let x = Tensor::variable(&[2, 8, 16], uniform(rng, &[256], 1.0).to_vec())?;
            let w = weighted_sum(rng, &[2, 8, 16]);
            let mut params = ff.parameters();
            params.push(("input".into(), x.clone()));
            Ok(Case {
                params,
                loss: Box::new(move || w(&ff.forward(&x)?)),
            })
        }
        Target::Model => {
            let cnn = CnnConfig {
                kernels: vec![3, 5, 7, 9],
                channels: vec![4, 4, 6, 8],
                in_channels: 2,
            };
            let mix = MixBlockConfig {
                lstm_tokens: 4,
                mlp_hidden: 32,
                ..MixBlockConfig::full(16)
            };
            debug_assert_eq!(Variant::EmMixformer.mix(16).map(|m| m.branches()), Some(3));
            let cfg = ModelConfig {
                cnn,
                mix: Some(mix),
                n_subjects: 3,
            };
            let model = EmMixformer::new(rng, &cfg)?;
            let fast = detached_uniform(rng, &[3, 2, 64], 2.0);
            let slow = detached_uniform(rng, &[3, 2, 64], 1.0);
            let params = model.parameters();
            Ok(Case {
                params,
                loss: Box::new(move || model.forward(&fast, &slow, true)?.logits.cross_entropy(&[0, 1, 2])),
            })
        }
    }
}

pub fn check(target: Target, seed: u64) -> Result<Report> {
    check_distorted(target, seed, 1.0)
}

/// As [`check`] with the analytic gradient scaled by `distort`; any value
/// other than 1 must make the check fail.
pub fn check_distorted(target: Target, seed: u64, distort: f64) -> Result<Report> {
    let case = build_case(target, seed)?;
    Ok(Report {
        target,
        groups: run_case(&case, seed, distort)?,
    })
}
