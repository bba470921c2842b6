//! Slice-level forward and backward kernels shared by [`crate::ops`] and
//! [`crate::Tape`].
//!
//! Layouts are row-major: images are `[channels, height, width]`, convolution
//! weights are `[out_channels, in_channels, k, k]`. Reductions run in a fixed
//! sequential order, so results are bit-reproducible for fixed inputs.

use crate::Scalar;

/// Output extent of a convolution along one axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - k) / stride + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        conv_out_extent(self.height, self.kernel, self.stride, self.padding)
    }

    pub fn out_width(&self) -> usize {
        conv_out_extent(self.width, self.kernel, self.stride, self.padding)
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `[lo, hi)` whose input column is in bounds for kernel
/// column `kj`.
fn col_span(g: &ConvGeometry, kj: usize, wo: usize) -> (usize, usize) {
    let p = g.padding as isize;
    let s = g.stride as isize;
    let first = ((p - kj as isize).max(0) + s - 1) / s;
    let last = (g.width as isize - 1 + p - kj as isize).div_euclid(s) + 1;
    let lo = (first as usize).min(wo);
    let hi = (last.max(0) as usize).min(wo).max(lo);
    (lo, hi)
}

/// Unfolds output rows `[oy0, oy1)` of `input` into a `[c*k*k, (oy1-oy0)*wo]`
/// patch matrix stored in `cols`.
fn im2col_rows<T: Scalar>(input: &[T], g: &ConvGeometry, oy0: usize, oy1: usize, cols: &mut [T]) {
    let wo = g.out_width();
    let n = (oy1 - oy0) * wo;
    let k = g.kernel;
    cols.fill(T::zero());
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let (lo, hi) = col_span(g, kj, wo);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let out_row = &mut dst[(oy - oy0) * wo + lo..(oy - oy0) * wo + hi];
                    let ix0 = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        out_row.copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (i, o) in out_row.iter_mut().enumerate() {
                            *o = src[ix0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`]: adds patch-matrix gradients onto the input.
fn col2im_rows<T: Scalar>(cols: &[T], g: &ConvGeometry, oy0: usize, oy1: usize, out: &mut [T]) {
    let wo = g.out_width();
    let n = (oy1 - oy0) * wo;
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * n..(row + 1) * n];
                let (lo, hi) = col_span(g, kj, wo);
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let s = &src[(oy - oy0) * wo + lo..(oy - oy0) * wo + hi];
                    let ix0 = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        dst[ix0..ix0 + s.len()].iter_mut().zip(s).for_each(|(d, v)| *d += *v);
                    } else {
                        for (i, v) in s.iter().enumerate() {
                            dst[ix0 + i * g.stride] += *v;
                        }
                    }
                }
            }
        }
    }
}

/// Unfolds `input` into a `[c*k*k, ho*wo]` patch matrix.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let ho = g.out_height();
    let mut cols = vec![T::zero(); g.col_rows() * ho * g.out_width()];
    im2col_rows(input, g, 0, ho, &mut cols);
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, out: &mut [T]) {
    col2im_rows(cols, g, 0, g.out_height(), out);
}

/// Patch matrices are built a band of output rows at a time so each band
/// stays cache resident through its GEMM.
const TILE_ELEMS: usize = 1 << 18;

fn row_band(g: &ConvGeometry) -> usize {
    (TILE_ELEMS / (g.col_rows() * g.out_width()).max(1)).clamp(1, g.out_height().max(1))
}

/// Cross-correlation (no kernel flip) of one `[c, h, w]` image with
/// `out_channels` filters plus bias.
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    out_channels: usize,
    g: &ConvGeometry,
) -> Vec<T> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let n = ho * wo;
    let rows = g.col_rows();
    let mut out = vec![T::zero(); out_channels * n];
    for (d, chunk) in out.chunks_mut(n).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias[d]);
    }
    if g.is_pointwise() {
        T::gemm(out_channels, rows, n, T::one(), weight, rows, 1, input, n, 1, T::one(), &mut out, n, 1);
        return out;
    }
    let band = row_band(g);
    let mut cols = vec![T::zero(); rows * band * wo];
    let mut oy0 = 0;
    while oy0 < ho {
        let oy1 = (oy0 + band).min(ho);
        let m = (oy1 - oy0) * wo;
        let cols = &mut cols[..rows * m];
        im2col_rows(input, g, oy0, oy1, cols);
        T::gemm(out_channels, rows, m, T::one(), weight, rows, 1, cols, m, 1, T::one(), &mut out[oy0 * wo..], n, 1);
        oy0 = oy1;
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    out_channels: usize,
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let n = ho * wo;
    let rows = g.col_rows();
    let mut grad_w = vec![T::zero(); out_channels * rows];
    let grad_b = grad_out.chunks(n).map(|c| c.iter().copied().sum()).collect();
    if g.is_pointwise() {
        T::gemm(out_channels, n, rows, T::one(), grad_out, n, 1, input, 1, n, T::zero(), &mut grad_w, rows, 1);
        let grad_in = need_input.then(|| {
            let mut gi = vec![T::zero(); rows * n];
            T::gemm(rows, out_channels, n, T::one(), weight, 1, rows, grad_out, n, 1, T::zero(), &mut gi, n, 1);
            gi
        });
        return (grad_in, grad_w, grad_b);
    }
    let band = row_band(g);
    let mut cols = vec![T::zero(); rows * band * wo];
    let mut grad_cols = vec![T::zero(); if need_input { rows * band * wo } else { 0 }];
    let mut grad_in = need_input.then(|| vec![T::zero(); g.channels * g.height * g.width]);
    let mut oy0 = 0;
    while oy0 < ho {
        let oy1 = (oy0 + band).min(ho);
        let m = (oy1 - oy0) * wo;
        let go = &grad_out[oy0 * wo..];
        let cols = &mut cols[..rows * m];
        im2col_rows(input, g, oy0, oy1, cols);
        T::gemm(rows, m, out_channels, T::one(), cols, m, 1, go, 1, n, T::one(), &mut grad_w, 1, rows);
        if let Some(gi) = grad_in.as_mut() {
            let gc = &mut grad_cols[..rows * m];
            T::gemm(rows, out_channels, m, T::one(), weight, 1, rows, go, n, 1, T::zero(), gc, m, 1);
            col2im_rows(gc, g, oy0, oy1, gi);
        }
        oy0 = oy1;
    }
    (grad_in, grad_w, grad_b)
}

/// 2x2 max pooling with stride 2. Returns the pooled values and, for each
/// output cell, the flat input index that won. Ties go to the first maximal
/// element in row-major order within the window.
pub fn maxpool2_forward<T: Scalar>(input: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let cands = [
                    base + 2 * oy * w + 2 * ox,
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = cands[0];
                for &idx in &cands[1..] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

/// Source taps for align-corners-false bilinear sampling along one axis.
///
/// For output index `o`, the source coordinate is
/// `(o + 0.5) * in / out - 0.5`, clamped below at 0; the two taps are
/// `floor(src)` and `min(floor(src) + 1, in - 1)`.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i0 == i1 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub fn bilinear_forward<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            let fy = T::from_f64_lossy(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::from_f64_lossy(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    out
}

pub fn bilinear_backward<T: Scalar>(
    grad_out: &[T],
    c: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut gi = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut gi[ch * h * w..(ch + 1) * h * w];
        let go = &grad_out[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let g = go[oy * out_w + ox];
                plane[y0 * w + x0] += g * (T::one() - fy) * (T::one() - fx);
                plane[y0 * w + x1] += g * (T::one() - fy) * fx;
                plane[y1 * w + x0] += g * fy * (T::one() - fx);
                plane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    gi
}

/// Softmax over each contiguous block of `block` values.
pub fn softmax_blocks<T: Scalar>(input: &[T], block: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(input.len());
    for chunk in input.chunks(block) {
        let max = chunk.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in chunk {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Kronecker product of `a: [p, q]` with `f: [fa, fb, rest..]`, producing
/// `[p*fa, q*fb, rest..]` where block `(i, j)` equals `a[i, j] * f`.
pub fn kron_forward<T: Scalar>(a: &[T], p: usize, q: usize, f: &[T], fa: usize, fb: usize, rest: usize) -> Vec<T> {
    let out_cols = q * fb;
    let mut out = vec![T::zero(); p * fa * out_cols * rest];
    for i in 0..p {
        for j in 0..q {
            let s = a[i * q + j];
            for u in 0..fa {
                for v in 0..fb {
                    let src = &f[(u * fb + v) * rest..(u * fb + v + 1) * rest];
                    let row = i * fa + u;
                    let col = j * fb + v;
                    let dst = &mut out[(row * out_cols + col) * rest..(row * out_cols + col + 1) * rest];
                    dst.iter_mut().zip(src).for_each(|(d, &x)| *d = s * x);
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn kron_backward<T: Scalar>(
    grad_out: &[T],
    a: &[T],
    p: usize,
    q: usize,
    f: &[T],
    fa: usize,
    fb: usize,
    rest: usize,
) -> (Vec<T>, Vec<T>) {
    let out_cols = q * fb;
    let mut ga = vec![T::zero(); p * q];
    let mut gf = vec![T::zero(); fa * fb * rest];
    for i in 0..p {
        for j in 0..q {
            let s = a[i * q + j];
            let mut acc = T::zero();
            for u in 0..fa {
                for v in 0..fb {
                    let row = i * fa + u;
                    let col = j * fb + v;
                    let go = &grad_out[(row * out_cols + col) * rest..(row * out_cols + col + 1) * rest];
                    let fv = &f[(u * fb + v) * rest..(u * fb + v + 1) * rest];
                    let gfv = &mut gf[(u * fb + v) * rest..(u * fb + v + 1) * rest];
                    for r in 0..rest {
                        acc += go[r] * fv[r];
                        gfv[r] += go[r] * s;
                    }
                }
            }
            ga[i * q + j] = acc;
        }
    }
    (ga, gf)
}

/// Swaps the first two axes of a `[a, b, rest..]` array.
pub fn swap01<T: Scalar>(input: &[T], a: usize, b: usize, rest: usize) -> Vec<T> {
    let mut out = vec![T::zero(); input.len()];
    for i in 0..a {
        for j in 0..b {
            let src = &input[(i * b + j) * rest..(i * b + j + 1) * rest];
            out[(j * a + i) * rest..(j * a + i + 1) * rest].copy_from_slice(src);
        }
    }
    out
}

/// `y[r] = w[r, :] . x[r_batch, :] + b[r]` for a `[batch, m]` input.
pub fn linear_forward<T: Scalar>(x: &[T], batch: usize, m: usize, w: &[T], out: usize, b: &[T]) -> Vec<T> {
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    T::gemm(batch, m, out, T::one(), x, m, 1, w, 1, m, T::one(), &mut y, out, 1);
    y
}

/// Returns `(grad_x, grad_w, grad_b)` for [`linear_forward`].
pub fn linear_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    m: usize,
    w: &[T],
    out: usize,
    grad_y: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); batch * m];
    T::gemm(batch, out, m, T::one(), grad_y, out, 1, w, m, 1, T::zero(), &mut gx, m, 1);
    let mut gw = vec![T::zero(); out * m];
    T::gemm(out, batch, m, T::one(), grad_y, 1, out, x, m, 1, T::zero(), &mut gw, m, 1);
    let mut gb = vec![T::zero(); out];
    for row in grad_y.chunks(out) {
        gb.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
    }
    (gx, gw, gb)
}

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > T::zero())
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Jensen-Shannon divergence (not square-rooted), natural log.
pub fn js_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    let half = T::from_f64_lossy(0.5);
    let m: Vec<T> = p.iter().zip(q).map(|(&a, &b)| (a + b) * half).collect();
    let js = half * (kl_divergence(p, &m) + kl_divergence(q, &m));
    js.max(T::zero())
}

/// Partial derivative of the JS divergence with respect to `p`, treating each
/// entry as a free variable: `0.5 ln(p_i / m_i)`, zero where `p_i = 0`.
pub fn js_grad_wrt<T: Scalar>(p: &[T], q: &[T]) -> Vec<T> {
    let half = T::from_f64_lossy(0.5);
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            if a > T::zero() {
                half * (a / ((a + b) * half)).ln()
            } else {
                T::zero()
            }
        })
        .collect()
}
