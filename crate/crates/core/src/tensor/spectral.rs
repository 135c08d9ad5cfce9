//! Unitary discrete Fourier transform as a dense linear operator.
//!
//! Both directions carry a `1/√T` factor, so the transform is unitary and
//! gradients flow through it as through any matrix product.

use std::f64::consts::PI;

use super::Tensor;
use crate::error::{Error, Result};

/// Real and imaginary parts of a complex-valued tensor.
#[derive(Debug, Clone)]
pub struct ComplexTensor {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexTensor {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("complex", re.shape(), im.shape()));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// `|z|`, with zero gradient at the origin.
    pub fn abs(&self) -> Result<Tensor> {
        Ok(self.re.square().add(&self.im.square())?.sqrt())
    }

    /// Principal argument in (-π, π].
    pub fn arg(&self) -> Result<Tensor> {
        self.im.atan2(&self.re)
    }

    pub fn from_polar(magnitude: &Tensor, phase: &Tensor) -> Result<Self> {
        ComplexTensor::new(magnitude.mul(&phase.cos())?, magnitude.mul(&phase.sin())?)
    }
}

/// Scaled cosine and sine tables `C[k,t] = cos(2πkt/T)/√T`,
/// `S[k,t] = sin(2πkt/T)/√T`. Angles are reduced modulo `T` in integer
/// arithmetic so that the sine vanishes exactly on multiples of π.
pub fn dft_matrices(t: usize) -> (Vec<f64>, Vec<f64>) {
    let norm = 1.0 / (t as f64).sqrt();
    let mut c = vec![0.0; t * t];
    let mut s = vec![0.0; t * t];
    for k in 0..t {
        for j in 0..t {
            let r = (k * j) % t;
            let (sin, cos) = if 2 * r % t == 0 {
                (0.0, if r == 0 { 1.0 } else { -1.0 })
            } else {
                (2.0 * PI * r as f64 / t as f64).sin_cos()
            };
            c[k * t + j] = cos * norm;
            s[k * t + j] = sin * norm;
        }
    }
    (c, s)
}

fn tables(t: usize) -> Result<(Tensor, Tensor)> {
    let (c, s) = dft_matrices(t);
    Ok((Tensor::from_vec(&[t, t], c)?, Tensor::from_vec(&[t, t], s)?))
}

/// Moves `axis` to the second-to-last position (appending a unit axis for
/// 1-D input) and returns the transposition needed to undo it.
fn to_rows(x: &Tensor, axis: usize) -> Result<(Tensor, Box<dyn Fn(Tensor) -> Result<Tensor>>)> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::shape("dft", &shape, &[axis]));
    }
    if shape.len() == 1 {
        let n = shape[0];
        return Ok((x.reshape(&[n, 1])?, Box::new(move |y: Tensor| y.reshape(&[n]))));
    }
    let target = shape.len() - 2;
    if axis == target {
        return Ok((x.clone(), Box::new(Ok)));
    }
    Ok((
        x.transpose(axis, target)?,
        Box::new(move |y: Tensor| y.transpose(axis, target)),
    ))
}

fn rows_len(x: &Tensor, axis: usize) -> Result<usize> {
    match x.shape().get(axis) {
        Some(&t) if t >= 1 => Ok(t),
        _ => Err(Error::shape("dft", x.shape(), &[axis])),
    }
}

/// Forward transform of a real signal along `axis`:
/// `F(k) = 1/√T Σ_t x(t) e^{-2πi kt/T}`.
pub fn dft_axis(x: &Tensor, axis: usize) -> Result<ComplexTensor> {
    let t = rows_len(x, axis)?;
    let (c, s) = tables(t)?;
    let (rows, back) = to_rows(x, axis)?;
    let re = c.matmul(&rows)?;
    let im = s.matmul(&rows)?.neg();
    ComplexTensor::new(back(re)?, back(im)?)
}

/// Forward transform of a complex signal along `axis`.
pub fn dft_complex_axis(z: &ComplexTensor, axis: usize) -> Result<ComplexTensor> {
    let t = rows_len(&z.re, axis)?;
    let (c, s) = tables(t)?;
    let (re, back) = to_rows(&z.re, axis)?;
    let (im, _) = to_rows(&z.im, axis)?;
    // (C - iS)(a + ib) = (Ca + Sb) + i(Cb - Sa)
    let out_re = c.matmul(&re)?.add(&s.matmul(&im)?)?;
    let out_im = c.matmul(&im)?.sub(&s.matmul(&re)?)?;
    ComplexTensor::new(back(out_re)?, back(out_im)?)
}

/// Inverse transform along `axis`, both parts.
pub fn idft_complex_axis(f: &ComplexTensor, axis: usize) -> Result<ComplexTensor> {
    let t = rows_len(&f.re, axis)?;
    let (c, s) = tables(t)?;
    let (re, back) = to_rows(&f.re, axis)?;
    let (im, _) = to_rows(&f.im, axis)?;
    // (C + iS)(a + ib) = (Ca - Sb) + i(Sa + Cb)
    let out_re = c.matmul(&re)?.sub(&s.matmul(&im)?)?;
    let out_im = s.matmul(&re)?.add(&c.matmul(&im)?)?;
    ComplexTensor::new(back(out_re)?, back(out_im)?)
}

/// Real part of the inverse transform along `axis`.
pub fn idft_axis(f: &ComplexTensor, axis: usize) -> Result<Tensor> {
    let t = rows_len(&f.re, axis)?;
    let (c, s) = tables(t)?;
    let (re, back) = to_rows(&f.re, axis)?;
    let (im, _) = to_rows(&f.im, axis)?;
    back(c.matmul(&re)?.sub(&s.matmul(&im)?)?)
}

impl Tensor {
    /// Unitary DFT of a 1-D signal.
    pub fn dft(&self) -> Result<ComplexTensor> {
        if self.ndim() != 1 {
            return Err(Error::shape("dft", self.shape(), &[]));
        }
        dft_axis(self, 0)
    }
}

impl ComplexTensor {
    /// Real part of the unitary inverse DFT of a 1-D spectrum.
    pub fn idft(&self) -> Result<Tensor> {
        if self.re.ndim() != 1 {
            return Err(Error::shape("idft", self.shape(), &[]));
        }
        idft_axis(self, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_signal() {
        let x = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let f = x.dft().unwrap();
        let re = f.re.to_vec();
        let im = f.im.to_vec();
        assert!((re[0] - 2.0).abs() < 1e-15);
        for k in 1..4 {
            assert!(re[k].abs() < 1e-15 && im[k].abs() < 1e-15);
        }
    }

    #[test]
    fn impulse() {
        let x = Tensor::from_vec(&[4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let f = x.dft().unwrap();
        for (re, im) in f.re.to_vec().iter().zip(f.im.to_vec()) {
            assert!((re - 0.5).abs() < 1e-15 && im.abs() < 1e-15);
        }
    }

    #[test]
    fn roundtrip_along_middle_axis() {
        let data: Vec<f64> = (0..2 * 5 * 3).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let x = Tensor::from_vec(&[2, 5, 3], data.clone()).unwrap();
        let back = idft_axis(&dft_axis(&x, 1).unwrap(), 1).unwrap();
        for (a, b) in back.to_vec().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
        let back0 = idft_axis(&dft_axis(&x, 0).unwrap(), 0).unwrap();
        for (a, b) in back0.to_vec().iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_zero_sine_on_nyquist() {
        let (_, s) = dft_matrices(8);
        for j in 0..8 {
            assert_eq!(s[4 * 8 + j], 0.0);
            assert_eq!(s[j], 0.0);
        }
    }
}
