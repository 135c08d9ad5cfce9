//! Elementwise arithmetic, activations, shape manipulation and reductions.

use super::{numel, Tensor};
use crate::error::{Error, Result};

/// How the two operands of a binary op line up. The shorter operand's shape
/// must be a suffix of the longer one (or a single element) and repeats with
/// period equal to its length.
enum Layout {
    Same,
    RhsRepeats,
    LhsRepeats,
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

fn layout(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Layout, Vec<usize>)> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        Ok((Layout::Same, sa.to_vec()))
    } else if is_suffix(sb, sa) || b.numel() == 1 {
        Ok((Layout::RhsRepeats, sa.to_vec()))
    } else if is_suffix(sa, sb) || a.numel() == 1 {
        Ok((Layout::LhsRepeats, sb.to_vec()))
    } else {
        Err(Error::shape(op, sa, sb))
    }
}

/// Sums `g` (length n·period) into a vector of length `period`.
fn fold(g: &[f64], period: usize) -> Vec<f64> {
    let mut out = vec![0.0; period];
    for chunk in g.chunks_exact(period) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // partial derivatives (d/da, d/db) at (a, b)
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let (lay, shape) = layout(op, self, other)?;
        let data: Vec<f64> = {
            let (a, b) = (self.data(), other.data());
            let (na, nb) = (a.len(), b.len());
            match lay {
                Layout::Same => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
                Layout::RhsRepeats => (0..na).map(|i| f(a[i], b[i % nb])).collect(),
                Layout::LhsRepeats => (0..nb).map(|i| f(a[i % na], b[i])).collect(),
            }
        };
        Ok(Tensor::from_op(shape, data, vec![self.clone(), other.clone()], move |p, _out, g| {
            let (a, b) = (p[0].data(), p[1].data());
            let (na, nb) = (a.len(), b.len());
            let n = g.len();
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..n {
                let (x, y) = (a[i % na], b[i % nb]);
                let (dx, dy) = df(x, y);
                ga[i] = g[i] * dx;
                gb[i] = g[i] * dy;
            }
            let ga = if na == n { ga } else { fold(&ga, na) };
            let gb = if nb == n { gb } else { fold(&gb, nb) };
            vec![p[0].requires_grad().then_some(ga), p[1].requires_grad().then_some(gb)]
        }))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    /// `atan2(self, x)` with `self` as the ordinate. Results lie in (-π, π];
    /// the gradient at the origin is taken to be zero.
    pub fn atan2(&self, x: &Tensor) -> Result<Tensor> {
        fn angle(y: f64, x: f64) -> f64 {
            let a = y.atan2(x);
            if a == -std::f64::consts::PI {
                std::f64::consts::PI
            } else {
                a
            }
        }
        self.binary(x, "atan2", angle, |y, x| {
            let r2 = x * x + y * y;
            if r2 == 0.0 {
                (0.0, 0.0)
            } else {
                (x / r2, -y / r2)
            }
        })
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |p, out, g| {
            let x = p[0].data();
            let gx = x.iter().zip(out).zip(g).map(|((&x, &y), &g)| g * df(x, y)).collect();
            vec![Some(gx)]
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |_, _, g| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(|x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Gradient at exactly zero is zero.
    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    /// Gradient at zero is taken to be zero.
    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    pub fn sin(&self) -> Tensor {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], |_, _, g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let n = self.ndim();
        let mut seen = vec![false; n];
        if axes.len() != n || axes.iter().any(|&a| a >= n || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", self.shape(), axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let data = permute_data(&self.data(), self.shape(), axes);
        let mut inverse = vec![0; n];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape_c = out_shape.clone();
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |_, _, g| {
            vec![Some(permute_data(g, &out_shape_c, &inverse))]
        }))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        let mut axes: Vec<usize> = (0..self.ndim()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(Error::shape("transpose", self.shape(), &[a, b]));
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("narrow", shape, &[axis, start, len]));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let full = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let data = {
            let d = self.data();
            let mut v = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                v.extend_from_slice(&d[base..base + len * inner]);
            }
            v
        };
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |_, _, g| {
            let mut gx = vec![0.0; outer * full * inner];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Index `index` along `axis`, dropping that axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        let t = self.narrow(axis, index, 1)?;
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        t.reshape(&shape)
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = first.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        for p in parts {
            let s = p.shape();
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &base, s));
            }
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut out_shape = base.clone();
        out_shape[axis] = total / inner.max(1);
        let mut data = Vec::with_capacity(outer * total);
        {
            let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
            for o in 0..outer {
                for (d, &w) in guards.iter().zip(&widths) {
                    data.extend_from_slice(&d[o * w..(o + 1) * w]);
                }
            }
        }
        Ok(Tensor::from_op(out_shape, data, parts.to_vec(), move |p, _, g| {
            let mut grads: Vec<Vec<f64>> = widths.iter().map(|&w| Vec::with_capacity(outer * w)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &w) in grads.iter_mut().zip(&widths) {
                    gp.extend_from_slice(&g[off..off + w]);
                    off += w;
                }
            }
            grads
                .into_iter()
                .zip(p)
                .map(|(gp, t)| t.requires_grad().then_some(gp))
                .collect()
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let expanded = parts
            .iter()
            .map(|p| {
                let mut s = p.shape().to_vec();
                if axis > s.len() {
                    return Err(Error::shape("stack", p.shape(), &[axis]));
                }
                s.insert(axis, 1);
                p.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&expanded, axis)
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(Vec::new(), vec![s], vec![self.clone()], move |_, _, g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", shape, &[axis]));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let data = {
            let d = self.data();
            let mut v = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                    v[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                }
            }
            v
        };
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |_, _, g| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    gx[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape("mean_axis", self.shape(), &[axis]))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }
}

/// Row-major permutation of `data` with shape `shape`; output axis `i` is
/// input axis `axes[i]`.
pub(crate) fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let n = shape.len();
    if n == 0 {
        return data.to_vec();
    }
    let mut in_strides = vec![1usize; n];
    for i in (0..n - 1).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    // innermost output axis is walked in a tight loop
    let last = n - 1;
    let (last_len, last_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; n];
    let mut base = 0usize;
    loop {
        for j in 0..last_len {
            out.push(data[base + j * last_stride]);
        }
        // advance the outer multi-index
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}
