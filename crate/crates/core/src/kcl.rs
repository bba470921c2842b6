//! Kronecker convolution layer.
//!
//! The dense weight of an `s -> d` convolution with a `k x k` kernel is
//! assembled as `H = sum_i A_i (x) F_i`, where each `A_i` is an `n x n`
//! matrix and each `F_i` a filter block of shape `[s/n, d/n, k, k]`. Block
//! `(p, q)` of `H` (input-channel block `p`, output-channel block `q`) is
//! therefore `sum_i A_i[p, q] * F_i`. `H` is laid out `[s, d, k, k]` and
//! transposed to `[d, s, k, k]` before the convolution.

use kronmark_tensor::{ops, Scalar, Tape, Tensor, Var};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Learnable scalars of one layer: `n^3 + s*d*k^2/n`, plus `d` with bias.
pub fn count_params(s: usize, d: usize, k: usize, n: usize, with_bias: bool) -> Result<u64> {
    check_divisible(s, d, n)?;
    let body = (n * n * n) as u64 + (s * d * k * k / n) as u64;
    Ok(body + if with_bias { d as u64 } else { 0 })
}

/// Floating-point operations of one forward pass producing an `out_h x
/// out_w` map: `2 * out_h * out_w * d * s * k^2` for the convolution (one
/// multiply-accumulate counts as two FLOPs) plus `n * s * d * k^2` for
/// assembling `H`.
pub fn count_flops(s: usize, d: usize, k: usize, n: usize, out_h: usize, out_w: usize) -> Result<u64> {
    check_divisible(s, d, n)?;
    let (s, d, k, n) = (s as u64, d as u64, k as u64, n as u64);
    Ok(2 * (out_h * out_w) as u64 * d * s * k * k + n * s * d * k * k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub param_count: u64,
    pub flop_count: u64,
}

impl std::ops::Add for LayerCost {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { param_count: self.param_count + o.param_count, flop_count: self.flop_count + o.flop_count }
    }
}

impl std::iter::Sum for LayerCost {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn check_divisible(s: usize, d: usize, n: usize) -> Result<()> {
    if n == 0 || s == 0 || d == 0 {
        return Err(Error::Config(format!("kcl extents must be positive (s={s}, d={d}, n={n})")));
    }
    if s % n != 0 || d % n != 0 {
        return Err(Error::Config(format!("n={n} must divide s={s} and d={d}")));
    }
    Ok(())
}

/// Kronecker product of `a: [p, q]` with `f: [fa, fb, k, k]`.
pub fn kron<T: Scalar>(a: &Tensor<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(ops::kron(a, f)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KclParams<T> {
    s: usize,
    d: usize,
    k: usize,
    n: usize,
    /// `n` matrices of shape `[n, n]`.
    pub a: Vec<Tensor<T>>,
    /// `n` blocks of shape `[s/n, d/n, k, k]`.
    pub f: Vec<Tensor<T>>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> KclParams<T> {
    pub fn new(a: Vec<Tensor<T>>, f: Vec<Tensor<T>>, bias: Tensor<T>) -> Result<Self> {
        let n = a.len();
        if n == 0 || f.len() != n {
            return Err(Error::Config(format!("need n >= 1 matrices and as many filter blocks, got {} and {}", n, f.len())));
        }
        let fs = f[0].shape().to_vec();
        if fs.len() != 4 || fs[2] != fs[3] {
            return Err(Error::Config(format!("filter block must be [s/n, d/n, k, k], got {fs:?}")));
        }
        let (s, d, k) = (fs[0] * n, fs[1] * n, fs[2]);
        for (ai, fi) in a.iter().zip(&f) {
            if ai.shape() != [n, n] {
                return Err(Error::Config(format!("matrix must be [{n}, {n}], got {:?}", ai.shape())));
            }
            if fi.shape() != fs.as_slice() {
                return Err(Error::Config(format!("filter blocks disagree: {fs:?} vs {:?}", fi.shape())));
            }
        }
        if bias.shape() != [d] {
            return Err(Error::Config(format!("bias must be [{d}], got {:?}", bias.shape())));
        }
        Ok(Self { s, d, k, n, a, f, bias })
    }

    /// `A_i = I / sqrt(n)`, `F_i ~ U(-b, b)` with `b = sqrt(6 / fan_in)` and
    /// `fan_in = (s/n) * k^2`, zero bias.
    pub fn init(s: usize, d: usize, k: usize, n: usize, rng: &mut Rng) -> Result<Self> {
        check_divisible(s, d, n)?;
        if k == 0 {
            return Err(Error::Config("kernel size must be positive".into()));
        }
        let diag = 1.0 / (n as f64).sqrt();
        let a = (0..n)
            .map(|_| {
                let mut m = vec![0.0; n * n];
                (0..n).for_each(|i| m[i * n + i] = diag);
                Tensor::from_f64([n, n], &m)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let bound = (6.0 / ((s / n) * k * k) as f64).sqrt();
        let len = (s / n) * (d / n) * k * k;
        let f = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::from_f64([s / n, d / n, k, k], &v)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(a, f, Tensor::zeros([d]))
    }

    pub fn in_channels(&self) -> usize {
        self.s
    }

    pub fn out_channels(&self) -> usize {
        self.d
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn param_count(&self) -> u64 {
        (self.n * self.n * self.n + self.s * self.d * self.k * self.k / self.n + self.d) as u64
    }

    /// `H = sum_i A_i (x) F_i`, shape `[s, d, k, k]`.
    pub fn assemble_weight(&self) -> Result<Tensor<T>> {
        let mut h = kron(&self.a[0], &self.f[0])?;
        for (a, f) in self.a.iter().zip(&self.f).skip(1) {
            h = ops::add(&h, &kron(a, f)?)?;
        }
        Ok(h)
    }

    /// Same as `conv2d(input, swap(H), bias)`.
    pub fn forward(&self, input: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
        let w = ops::swap_axes01(&self.assemble_weight()?)?;
        Ok(ops::conv2d(input, &w, &self.bias, stride, padding)?)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.a.iter().chain(&self.f).chain(std::iter::once(&self.bias))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.a.iter_mut().chain(self.f.iter_mut()).chain(std::iter::once(&mut self.bias))
    }

    /// Tensor names relative to the layer, in [`Self::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.n).map(|i| format!("a{i}")).collect();
        names.extend((0..self.n).map(|i| format!("f{i}")));
        names.push("bias".into());
        names
    }

    /// Records the parameters as tape leaves.
    pub fn record(&self, tape: &mut Tape<T>, trainable: bool) -> KclVars {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone().with_requires_grad(true))
            } else {
                tape.constant(t.clone())
            }
        };
        KclVars {
            a: self.a.iter().map(&mut put).collect(),
            f: self.f.iter().map(&mut put).collect(),
            bias: put(&self.bias),
        }
    }
}

/// Tape handles of one layer's parameters.
#[derive(Debug, Clone)]
pub struct KclVars {
    pub a: Vec<Var>,
    pub f: Vec<Var>,
    pub bias: Var,
}

impl KclVars {
    pub fn all(&self) -> impl Iterator<Item = Var> + '_ {
        self.a.iter().chain(&self.f).copied().chain(std::iter::once(self.bias))
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, input: Var, stride: usize, padding: usize) -> Result<Var> {
        let mut h = tape.kron(self.a[0], self.f[0])?;
        for (&a, &f) in self.a.iter().zip(&self.f).skip(1) {
            let term = tape.kron(a, f)?;
            h = tape.add(h, term)?;
        }
        let w = tape.swap_axes01(h)?;
        Ok(tape.conv2d(input, w, self.bias, stride, padding)?)
    }
}

/// Eager layer forward.
pub fn kcl_forward<T: Scalar>(input: &Tensor<T>, params: &KclParams<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    params.forward(input, stride, padding)
}

pub fn assemble_weight<T: Scalar>(params: &KclParams<T>) -> Result<Tensor<T>> {
    params.assemble_weight()
}
