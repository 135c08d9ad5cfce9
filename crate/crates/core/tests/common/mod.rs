//! Plain-loop reference implementations used as test oracles. Everything
//! here works on `Vec<f64>` rows and shares no code with the tensor engine.
#![allow(dead_code)]

use std::f64::consts::PI;

use emmixformer::attention::{EncoderBlock, MultiHeadAttention, Transformer};
use emmixformer::attlstm::{AttLstm, PeepholeLstm, Recurrent};
use emmixformer::fourier::FourierFormer;
use emmixformer::model::MixBlock;
use emmixformer::nn::{LayerNorm, Linear};
use emmixformer::Tensor;

pub type Mat = Vec<Vec<f64>>;

/// `[T, d]` tensor to rows.
pub fn rows(t: &Tensor) -> Mat {
    let d = *t.shape().last().unwrap();
    t.to_vec().chunks(d).map(|c| c.to_vec()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Lin {
    w: Vec<f64>,
    b: Option<Vec<f64>>,
    n_out: usize,
}

impl Lin {
    pub fn of(l: &Linear) -> Self {
        Lin {
            w: l.weight.to_vec(),
            b: l.bias.as_ref().map(|b| b.to_vec()),
            n_out: l.weight.shape()[1],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|j| {
                let mut acc = self.b.as_ref().map_or(0.0, |b| b[j]);
                for (i, xi) in x.iter().enumerate() {
                    acc += xi * self.w[i * self.n_out + j];
                }
                acc
            })
            .collect()
    }

    pub fn apply_rows(&self, x: &Mat) -> Mat {
        x.iter().map(|r| self.apply(r)).collect()
    }
}

/// `softmax(Q Kᵀ / √d_k) V`, one query row at a time.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    let dk = q[0].len() as f64;
    q.iter()
        .map(|qi| {
            let s: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dk.sqrt())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut out = vec![0.0; v[0].len()];
            for (ej, vj) in e.iter().zip(v) {
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += ej / z * x;
                }
            }
            out
        })
        .collect()
}

pub fn layer_norm(x: &[f64], ln: &LayerNorm) -> Vec<f64> {
    let g = ln.gain.to_vec();
    let b = ln.bias.to_vec();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i])
        .collect()
}

pub fn multi_head(x: &Mat, m: &MultiHeadAttention) -> Mat {
    let (q, k, v) = (Lin::of(&m.w_q).apply_rows(x), Lin::of(&m.w_k).apply_rows(x), Lin::of(&m.w_v).apply_rows(x));
    let d = x[0].len();
    let dk = d / m.heads;
    let cols = |a: &Mat, h: usize| -> Mat { a.iter().map(|r| r[h * dk..(h + 1) * dk].to_vec()).collect() };
    let mut merged = vec![Vec::with_capacity(d); x.len()];
    for h in 0..m.heads {
        let o = attention(&cols(&q, h), &cols(&k, h), &cols(&v, h));
        for (row, part) in merged.iter_mut().zip(o) {
            row.extend(part);
        }
    }
    Lin::of(&m.w_o).apply_rows(&merged)
}

pub fn encoder_block(x: &Mat, b: &EncoderBlock) -> Mat {
    let normed: Mat = x.iter().map(|r| layer_norm(r, &b.norm_attn)).collect();
    let a = multi_head(&normed, &b.attn);
    let z: Mat = x.iter().zip(&a).map(|(r, s)| r.iter().zip(s).map(|(p, q)| p + q).collect()).collect();
    let (fc1, fc2) = (Lin::of(&b.fc1), Lin::of(&b.fc2));
    z.iter()
        .map(|zr| {
            let h: Vec<f64> = fc1.apply(&layer_norm(zr, &b.norm_mlp)).into_iter().map(|v| v.max(0.0)).collect();
            let m = fc2.apply(&h);
            let sum: Vec<f64> = m.iter().zip(zr).map(|(p, q)| p + q).collect();
            layer_norm(&sum, &b.norm_out)
        })
        .collect()
}

pub fn sinusoid(t: usize, d: usize) -> Mat {
    (0..t)
        .map(|pos| {
            (0..d)
                .map(|j| {
                    let i = (j / 2) as f64;
                    let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
                    if j % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn transformer(x: &Mat, t: &Transformer) -> Mat {
    let mut h = x.clone();
    if t.positional {
        let pe = sinusoid(x.len(), x[0].len());
        for (r, p) in h.iter_mut().zip(pe) {
            for (a, b) in r.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    for b in &t.blocks {
        h = encoder_block(&h, b);
    }
    h
}

/// One step of the peephole cell: `(h, C)` from `x`, `h₋₁`, `C₋₁`.
pub fn peephole_step(p: &PeepholeLstm, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = x.len();
    let (wf, wi, wo, wc) = (Lin::of(&p.w_f).apply(x), Lin::of(&p.w_i).apply(x), Lin::of(&p.w_o).apply(x), Lin::of(&p.w_c).apply(x));
    let (uf, ui, uo, uc) = (Lin::of(&p.u_f).apply(h), Lin::of(&p.u_i).apply(h), Lin::of(&p.u_o).apply(h), Lin::of(&p.u_c).apply(h));
    let (vf, vi) = (Lin::of(&p.v_f).apply(c), Lin::of(&p.v_i).apply(c));
    let mut c_new = vec![0.0; d];
    for j in 0..d {
        let f = sigmoid(wf[j] + uf[j] + vf[j]);
        let i = sigmoid(wi[j] + ui[j] + vi[j]);
        let cand = (wc[j] + uc[j]).tanh();
        c_new[j] = f * c[j] + i * cand;
    }
    let vo = Lin::of(&p.v_o).apply(&c_new);
    let h_new = (0..d).map(|j| sigmoid(wo[j] + uo[j] + vo[j]) * c_new[j].tanh()).collect();
    (h_new, c_new)
}

fn tokens(v: &[f64], td: usize) -> Mat {
    v.chunks(td).map(|c| c.to_vec()).collect()
}

/// `(SA_x, SA_h, CA_x, CA_h, CA_c)`, each flattened to `d`.
pub fn attention_gates(a: &AttLstm, x: &[f64], h: &[f64], c: &[f64]) -> [Vec<f64>; 5] {
    let td = a.dim / a.n_tokens;
    let (tx, th, tc) = (tokens(x, td), tokens(h, td), tokens(c, td));
    let qx = Lin::of(&a.q_x).apply_rows(&tx);
    let kx = Lin::of(&a.k_x).apply_rows(&tx);
    let vx = Lin::of(&a.v_x).apply_rows(&tx);
    let qh = Lin::of(&a.q_h).apply_rows(&th);
    let kh = Lin::of(&a.k_h).apply_rows(&th);
    let vh = Lin::of(&a.v_h).apply_rows(&th);
    let qc = Lin::of(&a.q_c).apply_rows(&tc);
    [
        flatten(&attention(&qx, &kx, &vx)),
        flatten(&attention(&qh, &kh, &vh)),
        flatten(&attention(&qx, &kh, &vh)),
        flatten(&attention(&qh, &kx, &vx)),
        flatten(&attention(&qc, &kh, &vh)),
    ]
}

pub fn attlstm_step(a: &AttLstm, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let [sa_x, sa_h, ca_x, ca_h, ca_c] = attention_gates(a, x, h, c);
    let cat = |parts: &[&Vec<f64>]| -> Vec<f64> { parts.iter().flat_map(|p| p.iter().copied()).collect() };
    let i = Lin::of(&a.gate_i).apply(&cat(&[&sa_x, &sa_h, &ca_c]));
    let f = Lin::of(&a.gate_f).apply(&cat(&[&ca_h, &sa_x, &ca_c]));
    let o = Lin::of(&a.gate_o).apply(&cat(&[&ca_x, &sa_h]));
    let cand = Lin::of(&a.gate_c).apply(&cat(&[&sa_x, &sa_h]));
    let d = x.len();
    let c_new: Vec<f64> = (0..d).map(|j| sigmoid(f[j]) * c[j] + sigmoid(i[j]) * cand[j].tanh()).collect();
    let h_new = (0..d).map(|j| sigmoid(o[j]) * c_new[j].tanh()).collect();
    (h_new, c_new)
}

pub fn recurrent_sequence(r: &Recurrent, x: &Mat) -> Mat {
    let d = x[0].len();
    let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
    let mut out = Vec::with_capacity(x.len());
    for xt in x {
        (h, c) = match r {
            Recurrent::Attention(a) => attlstm_step(a, xt, &h, &c),
            Recurrent::Peephole(p) => peephole_step(p, xt, &h, &c),
        };
        out.push(h.clone());
    }
    out
}

/// `cos` and `sin` of `2π r / n`, exact on multiples of π.
fn twiddle(r: usize, n: usize) -> (f64, f64) {
    let r = r % n;
    if 2 * r % n == 0 {
        (if r == 0 { 1.0 } else { -1.0 }, 0.0)
    } else {
        let a = 2.0 * PI * r as f64 / n as f64;
        (a.cos(), a.sin())
    }
}

/// Unitary DFT of one real column.
pub fn dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let norm = 1.0 / (n as f64).sqrt();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for k in 0..n {
        let (mut a, mut b) = (0.0, 0.0);
        for (t, xt) in x.iter().enumerate() {
            let (cs, sn) = twiddle(k * t, n);
            a += xt * cs;
            b += xt * sn;
        }
        re[k] = a * norm;
        im[k] = -(b * norm);
    }
    (re, im)
}

/// Real part of the unitary inverse DFT.
pub fn idft_real(re: &[f64], im: &[f64]) -> Vec<f64> {
    let n = re.len();
    let norm = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for k in 0..n {
                let (cs, sn) = twiddle(k * t, n);
                acc += re[k] * cs - im[k] * sn;
            }
            acc * norm
        })
        .collect()
}

pub fn principal_arg(y: f64, x: f64) -> f64 {
    let a = y.atan2(x);
    if a == -PI {
        PI
    } else {
        a
    }
}

/// FourierFormer on `[T][d]` rows: column-wise DFT over time, transformers on
/// amplitude and phase, polar recombination, inverse DFT.
pub fn fourier(x: &Mat, f: &FourierFormer) -> Mat {
    let (t, d) = (x.len(), x[0].len());
    let mut amp = vec![vec![0.0; d]; t];
    let mut phase = vec![vec![0.0; d]; t];
    for j in 0..d {
        let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
        let (re, im) = dft(&col);
        for k in 0..t {
            amp[k][j] = re[k].hypot(im[k]);
            phase[k][j] = principal_arg(im[k], re[k]);
        }
    }
    let amp = f.amplitude.as_ref().map_or(amp.clone(), |tr| transformer(&amp, tr));
    let phase = f.phase.as_ref().map_or(phase.clone(), |tr| transformer(&phase, tr));
    let mut out = vec![vec![0.0; d]; t];
    for j in 0..d {
        let re: Vec<f64> = (0..t).map(|k| amp[k][j] * phase[k][j].cos()).collect();
        let im: Vec<f64> = (0..t).map(|k| amp[k][j] * phase[k][j].sin()).collect();
        for (tt, v) in idft_real(&re, &im).into_iter().enumerate() {
            out[tt][j] = v;
        }
    }
    out
}

/// Mix block on `[T][d]` rows: branches concatenated in the order recurrent,
/// transformer, Fourier, then the projection.
pub fn mix_block(x: &Mat, m: &MixBlock) -> Mat {
    let mut parts: Vec<Mat> = Vec::new();
    if let Some(r) = &m.recurrent {
        parts.push(recurrent_sequence(r, x));
    }
    if let Some(t) = &m.transformer {
        parts.push(transformer(x, t));
    }
    if let Some(f) = &m.fourier {
        parts.push(fourier(x, f));
    }
    let proj = Lin::of(&m.proj);
    (0..x.len())
        .map(|t| {
            let cat: Vec<f64> = parts.iter().flat_map(|p| p[t].iter().copied()).collect();
            proj.apply(&cat)
        })
        .collect()
}

/// EER and FRR at FAR targets from a dense threshold sweep. Scores must be
/// multiples of 1/1000 in [0, 1); thresholds are `m / 10⁶`, `m = 0..=10⁶`.
pub struct DenseSweep {
    pub eer: f64,
    pub frr_at_far: Vec<f64>,
}

pub fn dense_sweep(genuine: &[f64], impostor: &[f64], targets: &[f64]) -> DenseSweep {
    const TICKS: usize = 1_000_000;
    let to_tick = |s: f64| -> usize { (s * 1000.0).round() as usize * 1000 };
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    // counts at each score tick
    let mut gc = vec![0usize; TICKS + 2];
    let mut ic = vec![0usize; TICKS + 2];
    for &g in genuine {
        gc[to_tick(g)] += 1;
    }
    for &i in impostor {
        ic[to_tick(i)] += 1;
    }
    // FAR(θ) = #imp ≥ θ ; FRR(θ) = #gen < θ
    let mut imp_at_or_above = impostor.len();
    let mut gen_below = 0usize;
    let mut prev: Option<(f64, f64)> = None;
    let mut eer = f64::NAN;
    let mut frr = vec![f64::NAN; targets.len()];
    for m in 0..=TICKS {
        if m > 0 {
            imp_at_or_above -= ic[m - 1];
            gen_below += gc[m - 1];
        }
        let far = imp_at_or_above as f64 / ni;
        let fr = gen_below as f64 / ng;
        for (slot, &t) in frr.iter_mut().zip(targets) {
            if slot.is_nan() && far <= t {
                *slot = fr;
            }
        }
        if eer.is_nan() && far - fr <= 0.0 {
            eer = match prev {
                Some((pa, pr)) if far != fr => {
                    let (da, db) = (pa - pr, far - fr);
                    pa + da / (da - db) * (far - pa)
                }
                _ => far,
            };
        }
        prev = Some((far, fr));
    }
    for (slot, &t) in frr.iter_mut().zip(targets) {
        if t < 1.0 / ni {
            *slot = 1.0;
        }
    }
    DenseSweep { eer, frr_at_far: frr }
}
