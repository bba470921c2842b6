//! Wengert tape. Operations are appended in execution order, which is a
//! topological order by construction; [`Tape::backward`] replays it in
//! reverse and applies each operation's local gradient rule.

use crate::error::{dim_err, Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::ops;
use crate::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry, out_channels: usize },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Linear { x: Var, w: Var, b: Var, batch: usize, m: usize, out: usize },
    SpatialSoftmax { x: Var, block: usize },
    Bilinear { x: Var, c: usize, h: usize, w: usize, out_h: usize, out_w: usize },
    Add(Var, Var),
    Kron { a: Var, f: Var, p: usize, q: usize, fa: usize, fb: usize, rest: usize },
    Swap01 { x: Var, a: usize, b: usize, rest: usize },
    GlobalAvgPool { x: Var, hw: usize },
    Reshape(Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    Jsd { p: Var, q: Var, block: usize },
    Euclidean { pred: Var, target: Var },
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Values are immutable once pushed.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], retained for leaves only.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, &x)| *e += x),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut value = value;
        value.zero_grad();
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (geom, d) = ops::conv_geometry(self.shape(input), self.shape(weight), self.shape(bias), stride, padding)?;
        let out = kernels::conv2d_forward(self.value(input).data(), self.value(weight).data(), self.value(bias).data(), d, &geom);
        let value = Tensor::from_parts(vec![d, geom.out_height(), geom.out_width()], out);
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom, out_channels: d }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = ops::chw(self.shape(x), "maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return dim_err(format!("maxpool2 needs even extents, got {h}x{w}"));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(x).data(), c, h, w);
        let value = Tensor::from_parts(vec![c, h / 2, w / 2], out);
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, m, out) = ops::linear_dims(self.shape(x), self.shape(w), self.shape(b))?;
        let y = kernels::linear_forward(self.value(x).data(), batch, m, self.value(w).data(), out, self.value(b).data());
        let shape = if self.value(x).rank() == 1 { vec![out] } else { vec![batch, out] };
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, y), Op::Linear { x, w, b, batch, m, out }, rg))
    }

    pub fn spatial_softmax(&mut self, x: Var) -> Result<Var> {
        let (_, h, w) = ops::chw(self.shape(x), "spatial_softmax")?;
        let value = Tensor::from_parts(self.shape(x).to_vec(), kernels::softmax_blocks(self.value(x).data(), h * w));
        let rg = self.rg(x);
        Ok(self.push(value, Op::SpatialSoftmax { x, block: h * w }, rg))
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        let (c, h, w) = ops::chw(self.shape(x), "bilinear_resize")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Bilinear { x, c, h, w, out_h, out_w }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn kron(&mut self, a: Var, f: Var) -> Result<Var> {
        let (p, q, fa, fb, rest, shape) = ops::kron_dims(self.shape(a), self.shape(f))?;
        let out = kernels::kron_forward(self.value(a).data(), p, q, self.value(f).data(), fa, fb, rest);
        let rg = self.rg(a) || self.rg(f);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Kron { a, f, p, q, fa, fb, rest }, rg))
    }

    pub fn swap_axes01(&mut self, x: Var) -> Result<Var> {
        let value = ops::swap_axes01(self.value(x))?;
        let s = self.shape(x);
        let (a, b, rest) = (s[0], s[1], s[2..].iter().product());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Swap01 { x, a, b, rest }, rg))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = ops::global_avg_pool(self.value(x))?;
        let (_, h, w) = ops::chw(self.shape(x), "global_avg_pool")?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GlobalAvgPool { x, hw: h * w }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let src = self.value(x);
        let value = Tensor::from_parts(src.shape().to_vec(), src.data().iter().map(|&v| v * factor).collect());
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!("{op}: shape {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Mean over the leading axis of `sqrt(JS(p_c, q_c))`, where each slice
    /// `p_c` / `q_c` is a distribution over the remaining axes. Natural log.
    pub fn jsd_loss(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_shape(p, q, "jsd_loss")?;
        let shape = self.shape(p);
        let block: usize = shape[1..].iter().product();
        let channels = shape[0];
        let (pv, qv) = (self.value(p).data(), self.value(q).data());
        let total: T = pv
            .chunks(block)
            .zip(qv.chunks(block))
            .map(|(a, b)| kernels::js_divergence(a, b).sqrt())
            .sum();
        let value = Tensor::scalar(total / T::from_usize(channels).unwrap());
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(value, Op::Jsd { p, q, block }, rg))
    }

    /// `sqrt(sum (pred - target)^2)` over all elements.
    pub fn euclidean_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "euclidean_loss")?;
        let d: T = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(d.sqrt()), Op::Euclidean { pred, target }, rg))
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let v = self.value(pred);
        let s: T = v
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(s / T::from_usize(v.len()).unwrap());
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Intermediate gradients are
    /// released as soon as they have been propagated; only leaf gradients are
    /// returned.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom, out_channels } => {
                let (gi, gw, gb) = kernels::conv2d_backward(val(*input), val(*weight), g, *out_channels, geom, rg(*input));
                if let Some(gi) = gi {
                    accumulate(grads, *input, gi);
                }
                if rg(*weight) {
                    accumulate(grads, *weight, gw);
                }
                if rg(*bias) {
                    accumulate(grads, *bias, gb);
                }
            }
            Op::Relu(x) => {
                let gx = val(*x).iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = y.iter().zip(g).map(|(&s, &gv)| gv * s * (T::one() - s)).collect();
                accumulate(grads, *x, gx);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut gx = vec![T::zero(); val(*x).len()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    gx[idx as usize] += gv;
                }
                accumulate(grads, *x, gx);
            }
            Op::Linear { x, w, b, batch, m, out } => {
                let (gx, gw, gb) = kernels::linear_backward(val(*x), *batch, *m, val(*w), *out, g);
                if rg(*x) {
                    accumulate(grads, *x, gx);
                }
                if rg(*w) {
                    accumulate(grads, *w, gw);
                }
                if rg(*b) {
                    accumulate(grads, *b, gb);
                }
            }
            Op::SpatialSoftmax { x, block } => {
                let y = node.value.data();
                let mut gx = Vec::with_capacity(y.len());
                for (yc, gc) in y.chunks(*block).zip(g.chunks(*block)) {
                    let dot: T = yc.iter().zip(gc).map(|(&a, &b)| a * b).sum();
                    gx.extend(yc.iter().zip(gc).map(|(&a, &b)| a * (b - dot)));
                }
                accumulate(grads, *x, gx);
            }
            Op::Bilinear { x, c, h, w, out_h, out_w } => {
                accumulate(grads, *x, kernels::bilinear_backward(g, *c, *h, *w, *out_h, *out_w));
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if rg(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Kron { a, f, p, q, fa, fb, rest } => {
                let (ga, gf) = kernels::kron_backward(g, val(*a), *p, *q, val(*f), *fa, *fb, *rest);
                if rg(*a) {
                    accumulate(grads, *a, ga);
                }
                if rg(*f) {
                    accumulate(grads, *f, gf);
                }
            }
            Op::Swap01 { x, a, b, rest } => {
                accumulate(grads, *x, kernels::swap01(g, *b, *a, *rest));
            }
            Op::GlobalAvgPool { x, hw } => {
                let inv = T::one() / T::from_usize(*hw).unwrap();
                let gx = g.iter().flat_map(|&gv| std::iter::repeat(gv * inv).take(*hw)).collect();
                accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g.to_vec()),
            Op::Scale(x, factor) => accumulate(grads, *x, g.iter().map(|&v| v * *factor).collect()),
            Op::Sum(x) => accumulate(grads, *x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                accumulate(grads, *x, vec![g[0] / T::from_usize(n).unwrap(); n]);
            }
            Op::Jsd { p, q, block } => {
                let (pv, qv) = (val(*p), val(*q));
                let channels = T::from_usize(pv.len() / block).unwrap();
                let mut gp = Vec::with_capacity(pv.len());
                let mut gq = Vec::with_capacity(pv.len());
                for (pc, qc) in pv.chunks(*block).zip(qv.chunks(*block)) {
                    let js = kernels::js_divergence(pc, qc);
                    let outer = if js > T::zero() {
                        g[0] / (channels * (js.sqrt() + js.sqrt()))
                    } else {
                        T::zero()
                    };
                    gp.extend(kernels::js_grad_wrt(pc, qc).into_iter().map(|v| v * outer));
                    gq.extend(kernels::js_grad_wrt(qc, pc).into_iter().map(|v| v * outer));
                }
                if rg(*p) {
                    accumulate(grads, *p, gp);
                }
                if rg(*q) {
                    accumulate(grads, *q, gq);
                }
            }
            Op::Euclidean { pred, target } => {
                let d = node.value.data()[0];
                let scale = if d > T::zero() { g[0] / d } else { T::zero() };
                let diff: Vec<T> = val(*pred).iter().zip(val(*target)).map(|(&a, &b)| (a - b) * scale).collect();
                if rg(*target) {
                    accumulate(grads, *target, diff.iter().map(|&v| -v).collect());
                }
                if rg(*pred) {
                    accumulate(grads, *pred, diff);
                }
            }
            Op::Mse { pred, target } => {
                let n = T::from_usize(val(*pred).len()).unwrap();
                let scale = (g[0] + g[0]) / n;
                let diff: Vec<T> = val(*pred).iter().zip(val(*target)).map(|(&a, &b)| (a - b) * scale).collect();
                if rg(*target) {
                    accumulate(grads, *target, diff.iter().map(|&v| -v).collect());
                }
                if rg(*pred) {
                    accumulate(grads, *pred, diff);
                }
            }
        }
    }
}
