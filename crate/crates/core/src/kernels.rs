//! Raw slice kernels behind the autodiff graph. Layouts: images are
//! `[channels, height, width]`, matrices are `[rows, cols]`, both row-major.

use alloc::vec;
use alloc::vec::Vec;

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfolds `x` into a `[in_ch*k*k, out_h*out_w]` patch matrix.
pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let npos = oh * ow;
    let mut col = vec![0.0; g.col_rows() * npos];
    for ci in 0..g.in_ch {
        let plane = &x[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (ci * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a patch-matrix gradient back onto the input image.
pub fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let npos = oh * ow;
    for ci in 0..g.in_ch {
        let plane = &mut dx[ci * g.height * g.width..(ci + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (ci * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution forward. Returns the output and the patch matrix (kept for
/// the backward pass).
pub fn conv2d(x: &[f64], w: &[f64], b: Option<&[f64]>, g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let col = im2col(x, g);
    let npos = g.positions();
    let k = g.col_rows();
    let mut out = vec![0.0; g.out_ch * npos];
    for co in 0..g.out_ch {
        let o = &mut out[co * npos..(co + 1) * npos];
        if let Some(b) = b {
            o.fill(b[co]);
        }
        let wrow = &w[co * k..(co + 1) * k];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            axpy(wv, &col[r * npos..(r + 1) * npos], o);
        }
    }
    (out, col)
}

/// Convolution backward: accumulates into `dw`, `db` and (optionally) `dx`.
pub fn conv2d_backward(
    dout: &[f64],
    col: &[f64],
    w: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let npos = g.positions();
    let k = g.col_rows();
    if let Some(db) = db {
        for co in 0..g.out_ch {
            db[co] += dout[co * npos..(co + 1) * npos].iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        for co in 0..g.out_ch {
            let d = &dout[co * npos..(co + 1) * npos];
            for r in 0..k {
                dw[co * k + r] += dot(d, &col[r * npos..(r + 1) * npos]);
            }
        }
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; k * npos];
        for co in 0..g.out_ch {
            let d = &dout[co * npos..(co + 1) * npos];
            for r in 0..k {
                let wv = w[co * k + r];
                if wv != 0.0 {
                    axpy(wv, d, &mut dcol[r * npos..(r + 1) * npos]);
                }
            }
        }
        col2im(&dcol, g, dx);
    }
}

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the sum.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `a[n,k] @ b[k,m]`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let o = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                axpy(av, &b[kk * m..(kk + 1) * m], o);
            }
        }
    }
    out
}

/// `a[n,k] @ b[m,k]^T`.
pub fn matmul_bt(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `a[k,n]^T @ b[k,m]`.
pub fn matmul_at(a: &[f64], b: &[f64], k: usize, n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for kk in 0..k {
        let br = &b[kk * m..(kk + 1) * m];
        for i in 0..n {
            let av = a[kk * n + i];
            if av != 0.0 {
                axpy(av, br, &mut out[i * m..(i + 1) * m]);
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// In-place numerically stable softmax over each row of `[rows, cols]`.
pub fn softmax_rows(x: &mut [f64], cols: usize) {
    for row in x.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean of squared differences. This single routine defines the denoising
/// loss everywhere so that graph and direct evaluations agree bitwise.
pub fn mean_squared(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s / a.len() as f64
}

pub const NORM_EPS: f64 = 1e-5;

/// Normalizes `groups` contiguous chunks of `x` to zero mean and unit
/// variance. Returns `(normalized, rstd per group)`.
pub fn normalize_groups(x: &[f64], groups: usize) -> (Vec<f64>, Vec<f64>) {
    let len = x.len() / groups;
    let mut xhat = vec![0.0; x.len()];
    let mut rstds = Vec::with_capacity(groups);
    for gi in 0..groups {
        let chunk = &x[gi * len..(gi + 1) * len];
        let mean = chunk.iter().sum::<f64>() / len as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let rstd = 1.0 / libm::sqrt(var + NORM_EPS);
        for (o, v) in xhat[gi * len..(gi + 1) * len].iter_mut().zip(chunk) {
            *o = (v - mean) * rstd;
        }
        rstds.push(rstd);
    }
    (xhat, rstds)
}

/// Backward of [`normalize_groups`] given the gradient w.r.t. the normalized
/// values. Accumulates into `dx`.
pub fn normalize_groups_backward(dxhat: &[f64], xhat: &[f64], rstds: &[f64], dx: &mut [f64]) {
    let groups = rstds.len();
    let len = xhat.len() / groups;
    for gi in 0..groups {
        let r = gi * len..(gi + 1) * len;
        let dh = &dxhat[r.clone()];
        let xh = &xhat[r.clone()];
        let mean_dh = dh.iter().sum::<f64>() / len as f64;
        let mean_dhx = dot(dh, xh) / len as f64;
        for ((o, &d), &h) in dx[r].iter_mut().zip(dh).zip(xh) {
            *o += rstds[gi] * (d - mean_dh - h * mean_dhx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; g.out_ch * oh * ow];
        for co in 0..g.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..g.in_ch {
                        for ky in 0..g.kernel {
                            for kx in 0..g.kernel {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                    continue;
                                }
                                s += w[((co * g.in_ch + ci) * g.kernel + ky) * g.kernel + kx]
                                    * x[(ci * g.height + iy as usize) * g.width + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        for &(stride, pad, kernel) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
            let g = ConvGeom { in_ch: 3, out_ch: 5, height: 7, width: 6, kernel, stride, pad };
            let x: Vec<f64> = (0..3 * 7 * 6).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let w: Vec<f64> =
                (0..5 * 3 * kernel * kernel).map(|i| ((i * 13) % 7) as f64 * 0.1 - 0.3).collect();
            let (fast, _) = conv2d(&x, &w, None, &g);
            let slow = naive_conv(&x, &w, &g);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_variants_agree() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect(); // 3x4
        let ab = matmul(&a, &b, 2, 3, 4);
        // b^T stored as 4x3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        assert_eq!(ab, matmul_bt(&a, &bt, 2, 3, 4));
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        assert_eq!(ab, matmul_at(&at, &b, 3, 2, 4));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = vec![1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0];
        softmax_rows(&mut x, 3);
        assert!((x[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((x[3..].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(x.iter().all(|v| v.is_finite()));
    }
}
