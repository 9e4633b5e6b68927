//! Straight-line numeric kernels shared by the tape's forward and backward
//! rules. Every reduction runs in a fixed order so results are reproducible.

use super::Scalar;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in o_row.iter_mut().enumerate() {
            *o += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[m,n] += a[k,m]ᵀ · b[k,n]`
pub(crate) fn gemm_tn<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], out: &mut [F]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == F::zero() {
                continue;
            }
            let o_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += a_pi * bv;
            }
        }
    }
}

/// Dot product with eight interleaved accumulators, combined in a fixed order.
#[inline]
pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Sum accumulated in double precision.
#[inline]
pub(crate) fn sum_f64<F: Scalar>(xs: impl Iterator<Item = F>) -> f64 {
    xs.fold(0.0, |s, v| s + v.as_f64())
}

/// Logistic function in the branch form that never exponentiates a positive
/// argument.
#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Max-shifted softmax over `len` elements spaced `stride` apart.
pub(crate) fn softmax_strided<F: Scalar>(x: &[F], out: &mut [F], base: usize, len: usize, stride: usize) {
    let mut max = F::neg_infinity();
    for j in 0..len {
        max = max.max(x[base + j * stride]);
    }
    let mut total = 0.0f64;
    for j in 0..len {
        let e = (x[base + j * stride] - max).exp();
        out[base + j * stride] = e;
        total += e.as_f64();
    }
    let inv = 1.0 / total;
    for j in 0..len {
        let idx = base + j * stride;
        out[idx] = F::lit(out[idx].as_f64() * inv);
    }
}
