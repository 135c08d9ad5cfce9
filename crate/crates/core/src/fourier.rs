//! Fourier transformer: per-channel DFT over time, separate transformers on
//! amplitude and phase, polar recombination and inverse DFT (real part).

use std::f64::consts::PI;

use rand::Rng;

use crate::attention::{Transformer, TransformerConfig};
use crate::error::{Error, Result};
use crate::nn::{join, Module, NamedParam};
use crate::tensor::{dft_axis, idft_axis, ComplexTensor, Tensor};

/// Amplitude `A ≥ 0` and phase `φ ∈ (-π, π]`, both `[..., T, d]`.
#[derive(Debug, Clone)]
pub struct SpectralPair {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

impl SpectralPair {
    /// Whether the amplitude is nonnegative and the phase in (-π, π].
    pub fn is_principal(&self) -> bool {
        self.amplitude.to_vec().iter().all(|&a| a >= 0.0)
            && self.phase.to_vec().iter().all(|&p| p > -PI && p <= PI)
    }
}

fn time_axis(x: &Tensor) -> Result<usize> {
    match x.ndim() {
        2 | 3 => Ok(x.ndim() - 2),
        _ => Err(Error::shape("fourierformer", x.shape(), &[])),
    }
}

/// Unitary DFT along time (`[T, d]` or `[B, T, d]`), in polar form.
pub fn to_spectrum(x: &Tensor) -> Result<SpectralPair> {
    let f = dft_axis(x, time_axis(x)?)?;
    Ok(SpectralPair {
        amplitude: f.abs()?,
        phase: f.arg()?,
    })
}

/// `Re(IDFT(A·cos φ + i·A·sin φ))` along the frequency axis.
pub fn from_spectrum(sp: &SpectralPair) -> Result<Tensor> {
    if sp.amplitude.shape() != sp.phase.shape() {
        return Err(Error::shape("from_spectrum", sp.amplitude.shape(), sp.phase.shape()));
    }
    let z = ComplexTensor::from_polar(&sp.amplitude, &sp.phase)?;
    idft_axis(&z, time_axis(&sp.amplitude)?)
}

#[derive(Debug, Clone)]
pub struct FourierFormer {
    /// `None` in the identity-bypass configuration.
    pub amplitude: Option<Transformer>,
    pub phase: Option<Transformer>,
}

impl FourierFormer {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cfg: &TransformerConfig) -> Result<Self> {
        Ok(FourierFormer {
            amplitude: Some(Transformer::new(rng, cfg, true)?),
            phase: Some(Transformer::new(rng, cfg, true)?),
        })
    }

    /// Both transformers replaced by the identity.
    pub fn bypass() -> Self {
        FourierFormer {
            amplitude: None,
            phase: None,
        }
    }

    pub fn spectral_attention(&self, sp: &SpectralPair) -> Result<SpectralPair> {
        let apply = |t: &Option<Transformer>, x: &Tensor| match t {
            Some(t) => t.forward(x),
            None => Ok(x.clone()),
        };
        Ok(SpectralPair {
            amplitude: apply(&self.amplitude, &sp.amplitude)?,
            phase: apply(&self.phase, &sp.phase)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        from_spectrum(&self.spectral_attention(&to_spectrum(x)?)?)
    }
}

impl Module for FourierFormer {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        if let Some(t) = &self.amplitude {
            t.collect_params(&join(prefix, "amplitude"), out);
        }
        if let Some(t) = &self.phase {
            t.collect_params(&join(prefix, "phase"), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_column_is_dc_only() {
        let x = Tensor::from_vec(&[4, 2], vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0, 3.0, -1.0]).unwrap();
        let sp = to_spectrum(&x).unwrap();
        assert!((sp.amplitude.at(&[0, 0]) - 6.0).abs() < 1e-14);
        assert!((sp.amplitude.at(&[0, 1]) - 2.0).abs() < 1e-14);
        assert_eq!(sp.phase.at(&[0, 0]), 0.0);
        assert_eq!(sp.phase.at(&[0, 1]), PI);
        for k in 1..4 {
            assert!(sp.amplitude.at(&[k, 0]) < 1e-14);
        }
    }

    #[test]
    fn one_sine_cycle() {
        let x = Tensor::from_vec(&[4, 1], vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        let sp = to_spectrum(&x).unwrap();
        let a = sp.amplitude.to_vec();
        assert!(a[0].abs() < 1e-15 && a[2].abs() < 1e-15);
        assert!((a[1] - 1.0).abs() < 1e-15 && (a[3] - 1.0).abs() < 1e-15);
        // F(3) = +i/... has Re = 0, Im > 0.
        assert!((sp.phase.to_vec()[3] - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn bypass_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = crate::nn::uniform(&mut rng, &[2, 8, 5], 3.0).detach();
        let y = FourierFormer::bypass().forward(&x).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_amplitude_gives_zero() {
        let sp = SpectralPair {
            amplitude: Tensor::zeros(&[4, 3]),
            phase: Tensor::full(&[4, 3], 1.3),
        };
        assert!(from_spectrum(&sp).unwrap().to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn amplitude_weights_do_not_touch_phase_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let ff = FourierFormer::new(&mut rng, &TransformerConfig::new(8)).unwrap();
        let x = crate::nn::uniform(&mut rng, &[4, 8], 1.0).detach();
        let sp = to_spectrum(&x).unwrap();
        let before = ff.spectral_attention(&sp).unwrap().phase.to_vec();
        for (_, p) in ff.amplitude.as_ref().unwrap().parameters() {
            let v: Vec<f64> = p.to_vec().iter().map(|w| w + 0.05).collect();
            p.set_data(v).unwrap();
        }
        let out = ff.spectral_attention(&sp).unwrap();
        assert_eq!(out.phase.to_vec(), before);
        assert_eq!(out.amplitude.shape(), &[4, 8]);
    }
}
