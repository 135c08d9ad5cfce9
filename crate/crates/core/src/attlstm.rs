//! Recurrent branches: the peephole LSTM baseline and the attention LSTM.
//!
//! Peephole cell:
//!
//! ```text
//! f = σ(W_f x + U_f h + V_f C_{t-1} + b_f)
//! i = σ(W_i x + U_i h + V_i C_{t-1} + b_i)
//! C̃ = tanh(W_C x + U_C h + b_C)
//! C_t = f ⊙ C_{t-1} + i ⊙ C̃
//! o = σ(W_o x + U_o h + V_o C_t + b_o)
//! h_t = o ⊙ tanh(C_t)
//! ```
//!
//! Attention cell: `x`, `h` and `C` are each cut into `n_tokens` tokens and
//! projected to queries/keys/values, then
//!
//! ```text
//! SA_x = Attn(Q_x, K_x, V_x)   SA_h = Attn(Q_h, K_h, V_h)
//! CA_x = Attn(Q_x, K_h, V_h)   CA_h = Attn(Q_h, K_x, V_x)   CA_c = Attn(Q_c, K_h, V_h)
//! i' = σ(L_i[SA_x, SA_h, CA_c])   f' = σ(L_f[CA_h, SA_x, CA_c])
//! o' = σ(L_o[CA_x, SA_h])         C̃' = tanh(L_C[SA_x, SA_h])
//! C' = f' ⊙ C + i' ⊙ C̃'           h' = o' ⊙ tanh(C')
//! ```
//!
//! The cell state only ever acts as a query, so it has no key or value
//! projection.

use rand::Rng;

use crate::attention::attention;
use crate::error::{Error, Result};
use crate::nn::{join, Linear, Module, NamedParam};
use crate::tensor::Tensor;

/// Hidden and cell state, each `[B, d]`.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, dim: usize) -> Self {
        LstmState {
            h: Tensor::zeros(&[batch, dim]),
            c: Tensor::zeros(&[batch, dim]),
        }
    }
}

fn check_step(x: &Tensor, s: &LstmState, dim: usize) -> Result<()> {
    if x.ndim() != 2 || x.dim(1) != dim {
        return Err(Error::shape("lstm step", x.shape(), &[dim]));
    }
    if s.h.shape() != x.shape() || s.c.shape() != x.shape() {
        return Err(Error::shape("lstm step", x.shape(), s.h.shape()));
    }
    Ok(())
}

fn check_sequence(x: &Tensor, dim: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [b, t, d] if d == dim && t >= 1 => Ok((b, t)),
        _ => Err(Error::shape("lstm sequence", x.shape(), &[dim])),
    }
}

#[derive(Debug, Clone)]
pub struct PeepholeLstm {
    pub dim: usize,
    pub w_f: Linear,
    pub w_i: Linear,
    pub w_o: Linear,
    pub w_c: Linear,
    pub u_f: Linear,
    pub u_i: Linear,
    pub u_o: Linear,
    pub u_c: Linear,
    pub v_f: Linear,
    pub v_i: Linear,
    pub v_o: Linear,
}

impl PeepholeLstm {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        let mut lin = |bias| Linear::new(rng, dim, dim, bias);
        PeepholeLstm {
            dim,
            w_f: lin(true),
            w_i: lin(true),
            w_o: lin(true),
            w_c: lin(true),
            u_f: lin(false),
            u_i: lin(false),
            u_o: lin(false),
            u_c: lin(false),
            v_f: lin(false),
            v_i: lin(false),
            v_o: lin(false),
        }
    }

    /// The step with the input projections `W_* x + b_*` already applied,
    /// in the order f, i, o, C.
    fn step_projected(&self, wx: [&Tensor; 4], s: &LstmState) -> Result<LstmState> {
        let f = wx[0].add(&self.u_f.forward(&s.h)?)?.add(&self.v_f.forward(&s.c)?)?.sigmoid();
        let i = wx[1].add(&self.u_i.forward(&s.h)?)?.add(&self.v_i.forward(&s.c)?)?.sigmoid();
        let cand = wx[3].add(&self.u_c.forward(&s.h)?)?.tanh();
        let c = f.mul(&s.c)?.add(&i.mul(&cand)?)?;
        let o = wx[2].add(&self.u_o.forward(&s.h)?)?.add(&self.v_o.forward(&c)?)?.sigmoid();
        let h = o.mul(&c.tanh())?;
        Ok(LstmState { h, c })
    }

    /// One step on `x: [B, d]`.
    pub fn step(&self, x: &Tensor, s: &LstmState) -> Result<LstmState> {
        check_step(x, s, self.dim)?;
        let wx = [
            self.w_f.forward(x)?,
            self.w_i.forward(x)?,
            self.w_o.forward(x)?,
            self.w_c.forward(x)?,
        ];
        self.step_projected([&wx[0], &wx[1], &wx[2], &wx[3]], s)
    }

    /// `[B, T, d]` → hidden states `[B, T, d]` from a zero initial state.
    pub fn sequence(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = check_sequence(x, self.dim)?;
        let wx = [
            self.w_f.forward(x)?,
            self.w_i.forward(x)?,
            self.w_o.forward(x)?,
            self.w_c.forward(x)?,
        ];
        let mut s = LstmState::zeros(b, self.dim);
        let mut hs = Vec::with_capacity(t);
        for step in 0..t {
            let at: Vec<Tensor> = wx.iter().map(|w| w.select(1, step)).collect::<Result<_>>()?;
            s = self.step_projected([&at[0], &at[1], &at[2], &at[3]], &s)?;
            hs.push(s.h.clone());
        }
        Tensor::stack(&hs, 1)
    }
}

impl Module for PeepholeLstm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        for (name, l) in [
            ("w_f", &self.w_f),
            ("w_i", &self.w_i),
            ("w_o", &self.w_o),
            ("w_c", &self.w_c),
            ("u_f", &self.u_f),
            ("u_i", &self.u_i),
            ("u_o", &self.u_o),
            ("u_c", &self.u_c),
            ("v_f", &self.v_f),
            ("v_i", &self.v_i),
            ("v_o", &self.v_o),
        ] {
            l.collect_params(&join(prefix, name), out);
        }
    }
}

/// The five attention outputs of one step, each `[B, d]`.
#[derive(Debug, Clone)]
pub struct AttentionGates {
    pub sa_x: Tensor,
    pub sa_h: Tensor,
    pub ca_x: Tensor,
    pub ca_h: Tensor,
    pub ca_c: Tensor,
}

/// Projections of the input that do not depend on the recurrent state.
struct InputParts {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    sa: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttLstm {
    pub dim: usize,
    pub n_tokens: usize,
    pub q_x: Linear,
    pub k_x: Linear,
    pub v_x: Linear,
    pub q_h: Linear,
    pub k_h: Linear,
    pub v_h: Linear,
    pub q_c: Linear,
    pub gate_i: Linear,
    pub gate_f: Linear,
    pub gate_o: Linear,
    pub gate_c: Linear,
}

impl AttLstm {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, n_tokens: usize) -> Result<Self> {
        if n_tokens == 0 || dim % n_tokens != 0 {
            return Err(Error::Config(format!(
                "attlstm: dim {dim} is not divisible into {n_tokens} tokens"
            )));
        }
        let td = dim / n_tokens;
        let mut proj = || Linear::new(rng, td, td, false);
        let (q_x, k_x, v_x, q_h, k_h, v_h, q_c) = (proj(), proj(), proj(), proj(), proj(), proj(), proj());
        Ok(AttLstm {
            dim,
            n_tokens,
            q_x,
            k_x,
            v_x,
            q_h,
            k_h,
            v_h,
            q_c,
            gate_i: Linear::new(rng, 3 * dim, dim, true),
            gate_f: Linear::new(rng, 3 * dim, dim, true),
            gate_o: Linear::new(rng, 2 * dim, dim, true),
            gate_c: Linear::new(rng, 2 * dim, dim, true),
        })
    }

    pub fn token_dim(&self) -> usize {
        self.dim / self.n_tokens
    }

    /// `[..., d]` → `[N, n_tokens, token_dim]`.
    fn tokens(&self, v: &Tensor) -> Result<Tensor> {
        let n = v.numel() / self.dim;
        v.reshape(&[n, self.n_tokens, self.token_dim()])
    }

    fn flat(&self, v: &Tensor) -> Result<Tensor> {
        let n = v.numel() / self.dim;
        v.reshape(&[n, self.dim])
    }

    /// Works on any number of input vectors; rows are `[N, d]`.
    fn input_parts(&self, x: &Tensor) -> Result<InputParts> {
        let tx = self.tokens(x)?;
        let q = self.q_x.forward(&tx)?;
        let k = self.k_x.forward(&tx)?;
        let v = self.v_x.forward(&tx)?;
        let sa = self.flat(&attention(&q, &k, &v)?)?;
        Ok(InputParts { q, k, v, sa })
    }

    fn gates_from_parts(&self, xp: &InputParts, s: &LstmState) -> Result<AttentionGates> {
        let n = self.n_tokens;
        let th = self.tokens(&s.h)?;
        let qh = self.q_h.forward(&th)?;
        let kh = self.k_h.forward(&th)?;
        let vh = self.v_h.forward(&th)?;
        let qc = self.q_c.forward(&self.tokens(&s.c)?)?;
        // Q_h, Q_x and Q_c all attend over (K_h, V_h); softmax is row-wise,
        // so one call over the stacked queries gives all three.
        let over_h = attention(&Tensor::concat(&[qh.clone(), xp.q.clone(), qc], 1)?, &kh, &vh)?;
        let sa_h = self.flat(&over_h.narrow(1, 0, n)?)?;
        let ca_x = self.flat(&over_h.narrow(1, n, n)?)?;
        let ca_c = self.flat(&over_h.narrow(1, 2 * n, n)?)?;
        let ca_h = self.flat(&attention(&qh, &xp.k, &xp.v)?)?;
        Ok(AttentionGates {
            sa_x: xp.sa.clone(),
            sa_h,
            ca_x,
            ca_h,
            ca_c,
        })
    }

    /// SA_x, SA_h, CA_x, CA_h, CA_c for `x: [B, d]`.
    pub fn attention_gates(&self, x: &Tensor, s: &LstmState) -> Result<AttentionGates> {
        check_step(x, s, self.dim)?;
        self.gates_from_parts(&self.input_parts(x)?, s)
    }

    fn step_from_parts(&self, xp: &InputParts, s: &LstmState) -> Result<LstmState> {
        let g = self.gates_from_parts(xp, s)?;
        let cat = |parts: &[&Tensor]| Tensor::concat(&parts.iter().map(|t| (*t).clone()).collect::<Vec<_>>(), 1);
        let i = self.gate_i.forward(&cat(&[&g.sa_x, &g.sa_h, &g.ca_c])?)?.sigmoid();
        let f = self.gate_f.forward(&cat(&[&g.ca_h, &g.sa_x, &g.ca_c])?)?.sigmoid();
        let o = self.gate_o.forward(&cat(&[&g.ca_x, &g.sa_h])?)?.sigmoid();
        let cand = self.gate_c.forward(&cat(&[&g.sa_x, &g.sa_h])?)?.tanh();
        let c = f.mul(&s.c)?.add(&i.mul(&cand)?)?;
        let h = o.mul(&c.tanh())?;
        Ok(LstmState { h, c })
    }

    /// One step on `x: [B, d]`.
    pub fn step(&self, x: &Tensor, s: &LstmState) -> Result<LstmState> {
        check_step(x, s, self.dim)?;
        self.step_from_parts(&self.input_parts(x)?, s)
    }

    /// `[B, T, d]` → hidden states `[B, T, d]` from a zero initial state.
    pub fn sequence(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = check_sequence(x, self.dim)?;
        let (n, td) = (self.n_tokens, self.token_dim());
        // The input side of every step is computed for all steps at once.
        let all = self.input_parts(x)?;
        let per_step = |v: &Tensor, shape: &[usize], step: usize| v.reshape(shape)?.select(1, step);
        let mut s = LstmState::zeros(b, self.dim);
        let mut hs = Vec::with_capacity(t);
        for step in 0..t {
            let xp = InputParts {
                q: per_step(&all.q, &[b, t, n, td], step)?,
                k: per_step(&all.k, &[b, t, n, td], step)?,
                v: per_step(&all.v, &[b, t, n, td], step)?,
                sa: per_step(&all.sa, &[b, t, self.dim], step)?,
            };
            s = self.step_from_parts(&xp, &s)?;
            hs.push(s.h.clone());
        }
        Tensor::stack(&hs, 1)
    }
}

impl Module for AttLstm {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        for (name, l) in [
            ("q_x", &self.q_x),
            ("k_x", &self.k_x),
            ("v_x", &self.v_x),
            ("q_h", &self.q_h),
            ("k_h", &self.k_h),
            ("v_h", &self.v_h),
            ("q_c", &self.q_c),
            ("gate_i", &self.gate_i),
            ("gate_f", &self.gate_f),
            ("gate_o", &self.gate_o),
            ("gate_c", &self.gate_c),
        ] {
            l.collect_params(&join(prefix, name), out);
        }
    }
}

/// Either recurrent cell, as used inside a mix block.
#[derive(Debug, Clone)]
pub enum Recurrent {
    Attention(AttLstm),
    Peephole(PeepholeLstm),
}

impl Recurrent {
    pub fn sequence(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Recurrent::Attention(c) => c.sequence(x),
            Recurrent::Peephole(c) => c.sequence(x),
        }
    }
}

impl Module for Recurrent {
    fn collect_params(&self, prefix: &str, out: &mut Vec<NamedParam>) {
        match self {
            Recurrent::Attention(c) => c.collect_params(prefix, out),
            Recurrent::Peephole(c) => c.collect_params(prefix, out),
        }
    }
}
