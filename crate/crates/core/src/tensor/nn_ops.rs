//! Fused neural-network primitives with hand-written backward passes.

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::linalg::gemm;
use super::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Per-channel running mean/variance for batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

impl Tensor {
    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax(&self) -> Tensor {
        let n = *self.shape().last().unwrap_or(&1);
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |_, y, g| {
            let mut gx = vec![0.0; y.len()];
            for ((gr, yr), dst) in g.chunks_exact(n).zip(y.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((d, &gi), &yi) in dst.iter_mut().zip(gr).zip(yr) {
                    *d = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Layer normalization over the last axis (population variance,
    /// epsilon inside the square root), followed by a per-feature affine map.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let d = *self.shape().last().ok_or_else(|| Error::shape("layer_norm", self.shape(), &[]))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::shape("layer_norm", self.shape(), gain.shape()));
        }
        let x = self.data();
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        {
            let (gw, bw) = (gain.data(), bias.data());
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gw[j] + bw[j];
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |p, _, g| {
                let gw = p[1].data();
                let mut gx = vec![0.0; g.len()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        dxhat[j] = gr[j] * gw[j];
                        mean_dh += dxhat[j];
                        mean_dh_h += dxhat[j] * hr[j];
                        ggain[j] += gr[j] * hr[j];
                        gbias[j] += gr[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        gx[r * d + j] = inv_std[r] * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
                    }
                }
                vec![
                    p[0].requires_grad().then_some(gx),
                    p[1].requires_grad().then_some(ggain),
                    p[2].requires_grad().then_some(gbias),
                ]
            },
        ))
    }

    /// Mean cross-entropy of `[batch, classes]` logits against class indices.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        let [b, n] = *self.shape() else {
            return Err(Error::shape("cross_entropy", self.shape(), &[targets.len()]));
        };
        if targets.len() != b || targets.iter().any(|&t| t >= n) {
            return Err(Error::Contract(format!(
                "cross_entropy: {} targets for {b}×{n} logits",
                targets.len()
            )));
        }
        let logits = self.data();
        let mut probs = vec![0.0; b * n];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &logits[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[targets[i]];
            for j in 0..n {
                probs[i * n + j] = (row[j] - lse).exp();
            }
        }
        drop(logits);
        let targets = targets.to_vec();
        Ok(Tensor::from_op(Vec::new(), vec![loss / b as f64], vec![self.clone()], move |_, _, g| {
            let scale = g[0] / b as f64;
            let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                gx[i * n + t] -= scale;
            }
            vec![Some(gx)]
        }))
    }

    /// 1-D cross-correlation with "same" zero padding and stride 1.
    ///
    /// `self`: `[batch, c_in, width]`, `weight`: `[c_out, c_in, k]`,
    /// optional `bias`: `[c_out]`. Output `[batch, c_out, width]`.
    pub fn conv1d(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let [b, cin, w] = *self.shape() else {
            return Err(Error::shape("conv1d", self.shape(), weight.shape()));
        };
        let [cout, cin2, k] = *weight.shape() else {
            return Err(Error::shape("conv1d", self.shape(), weight.shape()));
        };
        if cin != cin2 || k == 0 {
            return Err(Error::shape("conv1d", self.shape(), weight.shape()));
        }
        if let Some(bias) = bias {
            if bias.shape() != [cout] {
                return Err(Error::shape("conv1d", weight.shape(), bias.shape()));
            }
        }
        let pad = (k - 1) / 2;
        let rows = cin * k;
        let x = self.data();
        // im2col: cols[b][(ci·k + kk), t] = x[b, ci, t + kk - pad]
        let mut cols = vec![0.0; b * rows * w];
        for bi in 0..b {
            for ci in 0..cin {
                let src = &x[(bi * cin + ci) * w..(bi * cin + ci + 1) * w];
                for kk in 0..k {
                    let dst = &mut cols[(bi * rows + ci * k + kk) * w..(bi * rows + ci * k + kk + 1) * w];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let s = t as isize + kk as isize - pad as isize;
                        if s >= 0 && (s as usize) < w {
                            *d = src[s as usize];
                        }
                    }
                }
            }
        }
        drop(x);
        let mut out = vec![0.0; b * cout * w];
        {
            let wt = weight.data();
            for bi in 0..b {
                gemm(
                    cout,
                    rows,
                    w,
                    &wt,
                    false,
                    &cols[bi * rows * w..(bi + 1) * rows * w],
                    false,
                    &mut out[bi * cout * w..(bi + 1) * cout * w],
                    false,
                );
            }
            if let Some(bias) = bias {
                let bv = bias.data();
                for bi in 0..b {
                    for co in 0..cout {
                        out[(bi * cout + co) * w..(bi * cout + co + 1) * w]
                            .iter_mut()
                            .for_each(|v| *v += bv[co]);
                    }
                }
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(bias) = bias {
            parents.push(bias.clone());
        }
        Ok(Tensor::from_op(vec![b, cout, w], out, parents, move |p, _, g| {
            let wt = p[1].data();
            let gw = p[1].requires_grad().then(|| {
                let mut gw = vec![0.0; cout * rows];
                for bi in 0..b {
                    gemm(
                        cout,
                        w,
                        rows,
                        &g[bi * cout * w..(bi + 1) * cout * w],
                        false,
                        &cols[bi * rows * w..(bi + 1) * rows * w],
                        true,
                        &mut gw,
                        bi > 0,
                    );
                }
                gw
            });
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![0.0; b * cin * w];
                let mut gcols = vec![0.0; rows * w];
                for bi in 0..b {
                    gemm(rows, cout, w, &wt, true, &g[bi * cout * w..(bi + 1) * cout * w], false, &mut gcols, false);
                    for ci in 0..cin {
                        let dst = &mut gx[(bi * cin + ci) * w..(bi * cin + ci + 1) * w];
                        for kk in 0..k {
                            let src = &gcols[(ci * k + kk) * w..(ci * k + kk + 1) * w];
                            for (t, &v) in src.iter().enumerate() {
                                let s = t as isize + kk as isize - pad as isize;
                                if s >= 0 && (s as usize) < w {
                                    dst[s as usize] += v;
                                }
                            }
                        }
                    }
                }
                gx
            });
            let mut grads = vec![gx, gw];
            if p.len() == 3 {
                let gb = p[2].requires_grad().then(|| {
                    let mut gb = vec![0.0; cout];
                    for bi in 0..b {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            *acc += g[(bi * cout + co) * w..(bi * cout + co + 1) * w].iter().sum::<f64>();
                        }
                    }
                    gb
                });
                grads.push(gb);
            }
            grads
        }))
    }

    /// Average pooling over the last axis, kernel 2, stride 2. A trailing odd
    /// sample is dropped.
    pub fn avg_pool1d(&self) -> Result<Tensor> {
        let w = *self.shape().last().ok_or_else(|| Error::shape("avg_pool1d", self.shape(), &[]))?;
        let half = w / 2;
        let rows = self.numel() / w.max(1);
        let x = self.data();
        let mut out = Vec::with_capacity(rows * half);
        for r in 0..rows {
            let row = &x[r * w..(r + 1) * w];
            out.extend((0..half).map(|j| 0.5 * (row[2 * j] + row[2 * j + 1])));
        }
        drop(x);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = half;
        Ok(Tensor::from_op(shape, out, vec![self.clone()], move |_, _, g| {
            let mut gx = vec![0.0; rows * w];
            for r in 0..rows {
                for j in 0..half {
                    let v = 0.5 * g[r * half + j];
                    gx[r * w + 2 * j] = v;
                    gx[r * w + 2 * j + 1] = v;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Batch normalization of `[batch, channels, length]` (or `[batch,
    /// channels]`) per channel over the batch and length axes.
    ///
    /// In training mode batch statistics are used and the running
    /// statistics are updated with momentum 0.1 (unbiased variance); in
    /// evaluation mode the running statistics are used as constants.
    pub fn batch_norm(&self, gamma: &Tensor, beta: &Tensor, running: &Mutex<RunningStats>, training: bool) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let (b, c, l) = match shape[..] {
            [b, c, l] => (b, c, l),
            [b, c] => (b, c, 1),
            _ => return Err(Error::shape("batch_norm", &shape, gamma.shape())),
        };
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("batch_norm", &shape, gamma.shape()));
        }
        let n = (b * l) as f64;
        let x = self.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if training {
            for bi in 0..b {
                for ci in 0..c {
                    mean[ci] += x[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for bi in 0..b {
                for ci in 0..c {
                    var[ci] += x[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                        .iter()
                        .map(|v| (v - mean[ci]) * (v - mean[ci]))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let mut rs = running.lock();
            let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            for ci in 0..c {
                rs.mean[ci] = (1.0 - BATCH_NORM_MOMENTUM) * rs.mean[ci] + BATCH_NORM_MOMENTUM * mean[ci];
                rs.var[ci] = (1.0 - BATCH_NORM_MOMENTUM) * rs.var[ci] + BATCH_NORM_MOMENTUM * var[ci] * unbias;
            }
        } else {
            let rs = running.lock();
            mean.copy_from_slice(&rs.mean);
            var.copy_from_slice(&rs.var);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        {
            let (gw, bw) = (gamma.data(), beta.data());
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..l {
                        let i = (bi * c + ci) * l + j;
                        let h = (x[i] - mean[ci]) * inv_std[ci];
                        xhat[i] = h;
                        out[i] = h * gw[ci] + bw[ci];
                    }
                }
            }
        }
        drop(x);
        Ok(Tensor::from_op(shape, out, vec![self.clone(), gamma.clone(), beta.clone()], move |p, _, g| {
            let gw = p[1].data();
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            let mut sum_dh = vec![0.0; c];
            let mut sum_dh_h = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    for j in 0..l {
                        let i = (bi * c + ci) * l + j;
                        ggamma[ci] += g[i] * xhat[i];
                        gbeta[ci] += g[i];
                        let dh = g[i] * gw[ci];
                        sum_dh[ci] += dh;
                        sum_dh_h[ci] += dh * xhat[i];
                    }
                }
            }
            let gx = p[0].requires_grad().then(|| {
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        for j in 0..l {
                            let i = (bi * c + ci) * l + j;
                            let dh = g[i] * gw[ci];
                            gx[i] = if training {
                                inv_std[ci] * (dh - sum_dh[ci] / n - xhat[i] * sum_dh_h[ci] / n)
                            } else {
                                inv_std[ci] * dh
                            };
                        }
                    }
                }
                gx
            });
            vec![
                gx,
                p[1].requires_grad().then_some(ggamma),
                p[2].requires_grad().then_some(gbeta),
            ]
        }))
    }
}
