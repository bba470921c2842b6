//! Eager forward operations. Each function validates shapes and then calls the
//! kernel that [`crate::Tape`] also uses, so the recorded and eager paths
//! compute identical values.

use crate::error::{dim_err, Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::{Scalar, Tensor};

pub(crate) fn conv_geometry(
    input: &[usize],
    weight: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(ConvGeometry, usize)> {
    if input.len() != 3 {
        return dim_err(format!("conv2d input must be [c, h, w], got {input:?}"));
    }
    if weight.len() != 4 || weight[2] != weight[3] {
        return dim_err(format!("conv2d weight must be [d, c, k, k], got {weight:?}"));
    }
    if weight[1] != input[0] {
        return dim_err(format!(
            "conv2d weight expects {} input channels, input has {}",
            weight[1], input[0]
        ));
    }
    if bias != [weight[0]] {
        return dim_err(format!("conv2d bias must be [{}], got {bias:?}", weight[0]));
    }
    if stride == 0 {
        return Err(TensorError::Contract("conv2d stride must be >= 1".into()));
    }
    let k = weight[2];
    if k > input[1] + 2 * padding || k > input[2] + 2 * padding {
        return dim_err(format!("kernel {k} larger than padded input {input:?} (padding {padding})"));
    }
    let g = ConvGeometry {
        channels: input[0],
        height: input[1],
        width: input[2],
        kernel: k,
        stride,
        padding,
    };
    Ok((g, weight[0]))
}

/// 2-D cross-correlation: `out[d, y, x] = b[d] + sum_{c,i,j} w[d, c, i, j] *
/// in[c, y*stride + i - pad, x*stride + j - pad]`, zero outside the input.
/// The kernel is not flipped.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (g, d) = conv_geometry(input.shape(), weight.shape(), bias.shape(), stride, padding)?;
    let out = kernels::conv2d_forward(input.data(), weight.data(), bias.data(), d, &g);
    Ok(Tensor::from_parts(vec![d, g.out_height(), g.out_width()], out))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub(crate) fn chw(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => dim_err(format!("{op} expects [c, h, w], got {shape:?}")),
    }
}

pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x.shape(), "maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return dim_err(format!("maxpool2 needs even extents, got {h}x{w}"));
    }
    let (out, _) = kernels::maxpool2_forward(x.data(), c, h, w);
    Ok(Tensor::from_parts(vec![c, h / 2, w / 2], out))
}

pub(crate) fn linear_dims(x: &[usize], w: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    let (batch, m) = match x {
        [m] => (1, *m),
        [batch, m] => (*batch, *m),
        _ => return dim_err(format!("linear input must be [m] or [batch, m], got {x:?}")),
    };
    match w {
        [out, wm] if *wm == m => {
            if b != [*out] {
                return dim_err(format!("linear bias must be [{out}], got {b:?}"));
            }
            Ok((batch, m, *out))
        }
        _ => dim_err(format!("linear weight {w:?} incompatible with input width {m}")),
    }
}

/// `weight . x + bias` for `x: [m]` (or row-wise for `x: [batch, m]`).
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, out) = linear_dims(x.shape(), weight.shape(), bias.shape())?;
    let y = kernels::linear_forward(x.data(), batch, m, weight.data(), out, bias.data());
    let shape = if x.rank() == 1 { vec![out] } else { vec![batch, out] };
    Ok(Tensor::from_parts(shape, y))
}

/// Per-channel softmax over all spatial cells of a `[c, h, w]` map.
pub fn spatial_softmax<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = chw(x.shape(), "spatial_softmax")?;
    Ok(Tensor::from_parts(x.shape().to_vec(), kernels::softmax_blocks(x.data(), h * w)))
}

/// Align-corners-false bilinear resampling; see [`kernels::bilinear_taps`].
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x.shape(), "bilinear_resize")?;
    if out_h == 0 || out_w == 0 {
        return dim_err("bilinear_resize target extents must be >= 1");
    }
    let out = kernels::bilinear_forward(x.data(), c, h, w, out_h, out_w);
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

pub(crate) fn kron_dims(a: &[usize], f: &[usize]) -> Result<(usize, usize, usize, usize, usize, Vec<usize>)> {
    let (p, q) = match a {
        [p, q] => (*p, *q),
        _ => return dim_err(format!("kron left operand must be a matrix, got {a:?}")),
    };
    if f.len() < 2 {
        return dim_err(format!("kron right operand needs rank >= 2, got {f:?}"));
    }
    let rest: usize = f[2..].iter().product();
    let mut shape = vec![p * f[0], q * f[1]];
    shape.extend_from_slice(&f[2..]);
    Ok((p, q, f[0], f[1], rest, shape))
}

/// Kronecker product of `a: [p, q]` with `f: [fa, fb, ..]`; output block
/// `(i, j)` (of extent `fa x fb` on the first two axes) equals `a[i, j] * f`.
pub fn kron<T: Scalar>(a: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
    let (p, q, fa, fb, rest, shape) = kron_dims(a.shape(), f.shape())?;
    Ok(Tensor::from_parts(shape, kernels::kron_forward(a.data(), p, q, f.data(), fa, fb, rest)))
}

pub fn swap_axes01<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 2 {
        return dim_err(format!("swap_axes01 needs rank >= 2, got {s:?}"));
    }
    let rest: usize = s[2..].iter().product();
    let mut shape = vec![s[1], s[0]];
    shape.extend_from_slice(&s[2..]);
    Ok(Tensor::from_parts(shape, kernels::swap01(x.data(), s[0], s[1], rest)))
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = chw(x.shape(), "global_avg_pool")?;
    let n = T::from_usize(h * w).unwrap();
    let data = x.data().chunks(h * w).map(|ch| ch.iter().copied().sum::<T>() / n).collect();
    Ok(Tensor::from_parts(vec![c], data))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return dim_err(format!("add shape mismatch {:?} vs {:?}", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape().to_vec(), data))
}
