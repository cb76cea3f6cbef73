//! Raw numeric kernels shared by the graph ops and by inference paths that
//! run without a tape. All buffers are row-major slices; `[C, T]` means row
//! `c` occupies `buf[c*t .. (c+1)*t]`.

use crate::error::{Error, Result};
use crate::Scalar;

/// Dense `out[C_out, T] = W[C_out, C_in] * x[C_in, T]` with optional bias.
/// This is also the 1x1-convolution fast path.
pub fn matmul_ct<T: Scalar>(
    w: &[T],
    x: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    c_in: usize,
    t: usize,
    out: &mut [T],
) {
    debug_assert_eq!(w.len(), c_out * c_in);
    debug_assert_eq!(x.len(), c_in * t);
    debug_assert_eq!(out.len(), c_out * t);
    for co in 0..c_out {
        let orow = &mut out[co * t..(co + 1) * t];
        let b = bias.map_or(T::zero(), |b| b[co]);
        orow.iter_mut().for_each(|v| *v = b);
        let wrow = &w[co * c_in..(co + 1) * c_in];
        for ci in 0..c_in {
            let a = wrow[ci];
            if a == T::zero() {
                continue;
            }
            let xrow = &x[ci * t..(ci + 1) * t];
            for (o, &xv) in orow.iter_mut().zip(xrow) {
                *o = *o + a * xv;
            }
        }
    }
}

/// `dx[C_in, T] += W^T * dout`, the input gradient of [`matmul_ct`].
pub fn matmul_ct_grad_x<T: Scalar>(
    w: &[T],
    dout: &[T],
    c_out: usize,
    c_in: usize,
    t: usize,
    dx: &mut [T],
) {
    for co in 0..c_out {
        let grow = &dout[co * t..(co + 1) * t];
        let wrow = &w[co * c_in..(co + 1) * c_in];
        for ci in 0..c_in {
            let a = wrow[ci];
            if a == T::zero() {
                continue;
            }
            let xrow = &mut dx[ci * t..(ci + 1) * t];
            for (o, &gv) in xrow.iter_mut().zip(grow) {
                *o = *o + a * gv;
            }
        }
    }
}

/// `dw[C_out, C_in] += dout * x^T`, the weight gradient of [`matmul_ct`].
pub fn matmul_ct_grad_w<T: Scalar>(
    x: &[T],
    dout: &[T],
    c_out: usize,
    c_in: usize,
    t: usize,
    dw: &mut [T],
) {
    for co in 0..c_out {
        let grow = &dout[co * t..(co + 1) * t];
        let dwrow = &mut dw[co * c_in..(co + 1) * c_in];
        for ci in 0..c_in {
            let xrow = &x[ci * t..(ci + 1) * t];
            let mut acc = T::zero();
            for (&g, &xv) in grow.iter().zip(xrow) {
                acc = acc + g * xv;
            }
            dwrow[ci] = dwrow[ci] + acc;
        }
    }
}

/// Tap offset of kernel index `k` for an odd, centered kernel.
#[inline]
fn tap_offset(k: usize, kernel: usize, dilation: usize) -> isize {
    (k as isize - (kernel as isize - 1) / 2) * dilation as isize
}

/// The `l`-range (half-open) for which `l + off` stays inside `[0, t)`.
#[inline]
fn valid_range(off: isize, t: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi_signed = t as isize - off;
    let hi = hi_signed.clamp(0, t as isize) as usize;
    (lo.min(t), hi.max(lo.min(t)))
}

/// Non-causal dilated 1-D convolution with zero same-padding:
/// `out[co, l] = bias[co] + sum_{ci,k} w[co,ci,k] * x[ci, l + (k-(K-1)/2)*dilation]`.
pub fn conv1d<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    t: usize,
    out: &mut [T],
) {
    if kernel == 1 {
        matmul_ct(w, x, Some(bias), c_out, c_in, t, out);
        return;
    }
    for co in 0..c_out {
        let orow = &mut out[co * t..(co + 1) * t];
        let b = bias[co];
        orow.iter_mut().for_each(|v| *v = b);
        for ci in 0..c_in {
            let xrow = &x[ci * t..(ci + 1) * t];
            for k in 0..kernel {
                let a = w[(co * c_in + ci) * kernel + k];
                if a == T::zero() {
                    continue;
                }
                let off = tap_offset(k, kernel, dilation);
                let (lo, hi) = valid_range(off, t);
                for l in lo..hi {
                    orow[l] = orow[l] + a * xrow[(l as isize + off) as usize];
                }
            }
        }
    }
}

/// Input gradient of [`conv1d`]: `dx[ci, m] += sum_{co,k} w[co,ci,k] * dout[co, m - off(k)]`.
pub fn conv1d_grad_x<T: Scalar>(
    w: &[T],
    dout: &[T],
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    t: usize,
    dx: &mut [T],
) {
    if kernel == 1 {
        // W^T applied to dout.
        for co in 0..c_out {
            let grow = &dout[co * t..(co + 1) * t];
            for ci in 0..c_in {
                let a = w[co * c_in + ci];
                if a == T::zero() {
                    continue;
                }
                let xrow = &mut dx[ci * t..(ci + 1) * t];
                for (o, &g) in xrow.iter_mut().zip(grow) {
                    *o = *o + a * g;
                }
            }
        }
        return;
    }
    for co in 0..c_out {
        let grow = &dout[co * t..(co + 1) * t];
        for ci in 0..c_in {
            let xrow = &mut dx[ci * t..(ci + 1) * t];
            for k in 0..kernel {
                let a = w[(co * c_in + ci) * kernel + k];
                if a == T::zero() {
                    continue;
                }
                // dout[l] feeds x[l + off]; equivalently dx[m] += a * dout[m - off].
                let off = tap_offset(k, kernel, dilation);
                let (lo, hi) = valid_range(off, t);
                for l in lo..hi {
                    let m = (l as isize + off) as usize;
                    xrow[m] = xrow[m] + a * grow[l];
                }
            }
        }
    }
}

/// Weight and bias gradients of [`conv1d`].
pub fn conv1d_grad_wb<T: Scalar>(
    x: &[T],
    dout: &[T],
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    t: usize,
    dw: &mut [T],
    db: &mut [T],
) {
    for co in 0..c_out {
        let grow = &dout[co * t..(co + 1) * t];
        let mut bacc = T::zero();
        for &g in grow {
            bacc = bacc + g;
        }
        db[co] = db[co] + bacc;
        for ci in 0..c_in {
            let xrow = &x[ci * t..(ci + 1) * t];
            for k in 0..kernel {
                let off = tap_offset(k, kernel, dilation);
                let (lo, hi) = valid_range(off, t);
                let mut acc = T::zero();
                for l in lo..hi {
                    acc = acc + grow[l] * xrow[(l as isize + off) as usize];
                }
                let idx = (co * c_in + ci) * kernel + k;
                dw[idx] = dw[idx] + acc;
            }
        }
    }
}

/// LU decomposition with partial pivoting, in place. Returns the permutation
/// sign and the pivot rows. `a` is `n x n` row-major and ends up holding L
/// (unit diagonal, below) and U (on and above the diagonal).
fn lu_decompose<T: Scalar>(a: &mut [T], n: usize) -> (T, Vec<usize>) {
    let mut sign = T::one();
    let mut pivots = Vec::with_capacity(n);
    for col in 0..n {
        let mut best = col;
        let mut best_abs = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > best_abs {
                best_abs = v;
                best = row;
            }
        }
        pivots.push(best);
        if best != col {
            for j in 0..n {
                a.swap(col * n + j, best * n + j);
            }
            sign = -sign;
        }
        let pivot = a[col * n + col];
        if pivot == T::zero() {
            continue;
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            a[row * n + col] = factor;
            for j in col + 1..n {
                a[row * n + j] = a[row * n + j] - factor * a[col * n + j];
            }
        }
    }
    (sign, pivots)
}

/// `log |det A|` for a square matrix, via LU with partial pivoting.
/// Errors when `|det|` falls below `floor`.
pub fn logabsdet<T: Scalar>(a: &[T], n: usize, floor: f64) -> Result<T> {
    let mut lu = a.to_vec();
    let (_, _) = lu_decompose(&mut lu, n);
    let mut log_abs = T::zero();
    let mut underflow = false;
    for i in 0..n {
        let d = lu[i * n + i].abs();
        if d == T::zero() {
            underflow = true;
            break;
        }
        log_abs = log_abs + d.ln();
    }
    if underflow || log_abs.as_f64() < floor.ln() {
        let det = if underflow { 0.0 } else { log_abs.as_f64().exp() };
        return Err(Error::SingularMatrix { det, floor });
    }
    Ok(log_abs)
}

/// Matrix inverse via Gauss-Jordan with partial pivoting.
/// Errors when a pivot magnitude falls below `floor`.
pub fn invert<T: Scalar>(a: &[T], n: usize, floor: f64) -> Result<Vec<T>> {
    let mut aug = vec![T::zero(); n * 2 * n];
    let m = 2 * n;
    for i in 0..n {
        for j in 0..n {
            aug[i * m + j] = a[i * n + j];
        }
        aug[i * m + n + i] = T::one();
    }
    for col in 0..n {
        let mut best = col;
        let mut best_abs = aug[col * m + col].abs();
        for row in col + 1..n {
            let v = aug[row * m + col].abs();
            if v > best_abs {
                best_abs = v;
                best = row;
            }
        }
        if best_abs.as_f64() < floor {
            return Err(Error::SingularMatrix { det: best_abs.as_f64(), floor });
        }
        if best != col {
            for j in 0..m {
                aug.swap(col * m + j, best * m + j);
            }
        }
        let pivot = aug[col * m + col];
        for j in 0..m {
            aug[col * m + j] = aug[col * m + j] / pivot;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = aug[row * m + col];
            if factor == T::zero() {
                continue;
            }
            for j in 0..m {
                aug[row * m + j] = aug[row * m + j] - factor * aug[col * m + j];
            }
        }
    }
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = aug[i * m + n + j];
        }
    }
    Ok(out)
}
