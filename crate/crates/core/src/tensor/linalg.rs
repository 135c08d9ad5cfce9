//! Matrix products backed by `matrixmultiply::dgemm`.

use super::Tensor;
use crate::error::{Error, Result};

/// `c (m×n) = op(a) (m×k) · op(b) (k×n) [+ c]`, all row-major.
///
/// With `ta` the buffer `a` holds a k×m matrix and is read transposed;
/// likewise `tb` means `b` holds n×k.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], accumulate: bool) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices are at least as long as the strided extents above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct Plan {
    batches: usize,
    m: usize,
    k: usize,
    n: usize,
    // per-batch offsets; zero when the operand is shared across batches
    a_step: usize,
    b_step: usize,
    ta: bool,
    tb: bool,
}

fn plan(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<(Plan, Vec<usize>)> {
    let err = || Error::shape("matmul", a, b);
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (ar, ac) = (a[a.len() - 2], a[a.len() - 1]);
    let (br, bc) = (b[b.len() - 2], b[b.len() - 1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(err());
    }
    let a_batch = &a[..a.len() - 2];
    let b_batch = &b[..b.len() - 2];
    let nb_a: usize = a_batch.iter().product();
    let nb_b: usize = b_batch.iter().product();
    let mut out_shape;
    let p = if b_batch.is_empty() && !ta {
        // shared right operand: fold the batch into the row count
        out_shape = a_batch.to_vec();
        Plan { batches: 1, m: nb_a * m, k, n, a_step: 0, b_step: 0, ta, tb }
    } else if b_batch.is_empty() {
        out_shape = a_batch.to_vec();
        Plan { batches: nb_a, m, k, n, a_step: m * k, b_step: 0, ta, tb }
    } else if a_batch.is_empty() {
        out_shape = b_batch.to_vec();
        Plan { batches: nb_b, m, k, n, a_step: 0, b_step: k * n, ta, tb }
    } else if a_batch == b_batch {
        out_shape = a_batch.to_vec();
        Plan { batches: nb_a, m, k, n, a_step: m * k, b_step: k * n, ta, tb }
    } else {
        return Err(err());
    };
    out_shape.push(m);
    out_shape.push(n);
    Ok((p, out_shape))
}

impl Tensor {
    /// Matrix product over the last two axes. Leading axes are batch axes;
    /// an operand without batch axes is shared across the batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_with(other, false, false)
    }

    /// `self · otherᵀ` on the last two axes.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_with(other, false, true)
    }

    pub fn matmul_with(&self, other: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        let (p, out_shape) = plan(self.shape(), other.shape(), ta, tb)?;
        let (mn, mk, kn) = (p.m * p.n, p.m * p.k, p.k * p.n);
        let mut out = vec![0.0; p.batches * mn];
        {
            let (a, b) = (self.data(), other.data());
            for i in 0..p.batches {
                gemm(
                    p.m,
                    p.k,
                    p.n,
                    &a[i * p.a_step..i * p.a_step + mk],
                    p.ta,
                    &b[i * p.b_step..i * p.b_step + kn],
                    p.tb,
                    &mut out[i * mn..(i + 1) * mn],
                    false,
                );
            }
        }
        Ok(Tensor::from_op(out_shape, out, vec![self.clone(), other.clone()], move |parents, _, g| {
            let (a, b) = (parents[0].data(), parents[1].data());
            let ga = parents[0].requires_grad().then(|| {
                let mut ga = vec![0.0; a.len()];
                for i in 0..p.batches {
                    let gi = &g[i * mn..(i + 1) * mn];
                    let bi = &b[i * p.b_step..i * p.b_step + kn];
                    let dst = &mut ga[i * p.a_step..i * p.a_step + mk];
                    let acc = p.a_step == 0 && i > 0;
                    if p.ta {
                        // stored k×m: b · gᵀ
                        gemm(p.k, p.n, p.m, bi, p.tb, gi, true, dst, acc);
                    } else {
                        gemm(p.m, p.n, p.k, gi, false, bi, !p.tb, dst, acc);
                    }
                }
                ga
            });
            let gb = parents[1].requires_grad().then(|| {
                let mut gb = vec![0.0; b.len()];
                for i in 0..p.batches {
                    let gi = &g[i * mn..(i + 1) * mn];
                    let ai = &a[i * p.a_step..i * p.a_step + mk];
                    let dst = &mut gb[i * p.b_step..i * p.b_step + kn];
                    let acc = p.b_step == 0 && i > 0;
                    if p.tb {
                        // stored n×k: gᵀ · a
                        gemm(p.n, p.m, p.k, gi, true, ai, p.ta, dst, acc);
                    } else {
                        gemm(p.k, p.m, p.n, ai, !p.ta, gi, false, dst, acc);
                    }
                }
                gb
            });
            vec![ga, gb]
        }))
    }
}
