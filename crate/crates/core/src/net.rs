//! Landmark network: a 14-layer KCL backbone with pooling and residual skip
//! connections, followed by a heatmap head and a coordinate head.

use kronmark_tensor::{Scalar, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, ConfigDigest};
use crate::error::{Error, Result};
use crate::kcl::{count_flops, KclParams, KclVars, LayerCost};
use crate::landmarks::{HeatmapStack, LandmarkSet, Point, HEATMAP_SIZE, IMAGE_SIZE, NUM_LANDMARKS};
use crate::rng::{stream, substream};

pub const NUM_LAYERS: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub n: usize,
    pub kernel: usize,
    pub stride: usize,
    /// 2x2 max pool after the activation.
    pub pool: bool,
}

impl LayerSpec {
    fn new(in_channels: usize, out_channels: usize, stride: usize, pool: bool) -> Self {
        Self { in_channels, out_channels, n: 3, kernel: 3, stride, pool }
    }
}

/// Backbone and head layout.
///
/// Layers are numbered from 1. A skip `(src, dst)` adds the output of layer
/// `src` (after its pool) to the input of layer `dst`; when channel counts
/// differ the source passes through a 1x1 KCL of order `projection_n`, and
/// when spatial extents differ it is bilinearly resized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KpfemConfig {
    pub input_size: usize,
    pub layers: Vec<LayerSpec>,
    pub skips: Vec<(usize, usize)>,
    pub projection_n: usize,
    pub heatmap_size: usize,
}

impl Default for KpfemConfig {
    /// Channels 3-24-24-48-48-96 then 96 throughout, n = 3. Layer 1 has
    /// stride 2 and pools follow layers 2, 4 and 6, giving 96x20x20 features
    /// for a 320x320 input.
    fn default() -> Self {
        let mut layers = vec![
            LayerSpec::new(3, 24, 2, false),
            LayerSpec::new(24, 24, 1, true),
            LayerSpec::new(24, 48, 1, false),
            LayerSpec::new(48, 48, 1, true),
            LayerSpec::new(48, 96, 1, false),
            LayerSpec::new(96, 96, 1, true),
        ];
        layers.extend((0..8).map(|_| LayerSpec::new(96, 96, 1, false)));
        Self {
            input_size: IMAGE_SIZE,
            layers,
            skips: vec![(2, 4), (4, 6), (6, 8), (8, 10), (10, 12), (12, 14)],
            projection_n: 3,
            heatmap_size: HEATMAP_SIZE,
        }
    }
}

impl KpfemConfig {
    /// Full-resolution plan: stride 1 everywhere and pools after layers 2,
    /// 4, 6 and 8. Same channels and output shape as the default, about
    /// three times the FLOPs.
    pub fn full_resolution() -> Self {
        let mut c = Self::default();
        for (i, l) in c.layers.iter_mut().enumerate() {
            l.stride = 1;
            l.pool = matches!(i + 1, 2 | 4 | 6 | 8);
        }
        c
    }

    /// Same layout with every KCL order set to `n`.
    pub fn with_order(&self, n: usize) -> Self {
        let mut c = self.clone();
        c.layers.iter_mut().for_each(|l| l.n = n);
        c.projection_n = n;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != NUM_LAYERS {
            return Err(Error::Config(format!("backbone needs {NUM_LAYERS} layers, got {}", self.layers.len())));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.n == 0 || l.in_channels % l.n != 0 || l.out_channels % l.n != 0 {
                return Err(Error::Config(format!(
                    "layer {}: n={} must divide {} and {}",
                    i + 1,
                    l.n,
                    l.in_channels,
                    l.out_channels
                )));
            }
            if l.kernel == 0 || l.stride == 0 {
                return Err(Error::Config(format!("layer {}: kernel and stride must be positive", i + 1)));
            }
            let prev = if i == 0 { 3 } else { self.layers[i - 1].out_channels };
            if l.in_channels != prev {
                return Err(Error::Config(format!("layer {} expects {} channels, receives {prev}", i + 1, l.in_channels)));
            }
        }
        for &(s, d) in &self.skips {
            if s == 0 || d > NUM_LAYERS || s + 1 >= d {
                return Err(Error::Config(format!("skip ({s}, {d}) must satisfy 1 <= src < dst - 1, dst <= {NUM_LAYERS}")));
            }
        }
        if self.heatmap_size == 0 || self.input_size == 0 {
            return Err(Error::Config("sizes must be positive".into()));
        }
        let shapes = self.layer_shapes()?;
        for &(s, d) in &self.skips {
            let (cs, cd) = (shapes[s - 1].0, self.layers[d - 1].in_channels);
            if cs != cd && (cs % self.projection_n != 0 || cd % self.projection_n != 0) {
                return Err(Error::Config(format!("projection order {} must divide {cs} and {cd}", self.projection_n)));
            }
        }
        Ok(())
    }

    /// `(channels, height, width)` after each layer, including its pool.
    pub fn layer_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut h = self.input_size;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let pad = l.kernel / 2;
            if h + 2 * pad < l.kernel {
                return Err(Error::Config(format!("layer {}: input {h} too small", i + 1)));
            }
            h = (h + 2 * pad - l.kernel) / l.stride + 1;
            if l.pool {
                if h % 2 != 0 {
                    return Err(Error::Config(format!("layer {}: cannot pool odd extent {h}", i + 1)));
                }
                h /= 2;
            }
            out.push((l.out_channels, h, h));
        }
        Ok(out)
    }

    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        Ok(*self.layer_shapes()?.last().unwrap())
    }

    /// Parameter and FLOP count per backbone layer, then one entry per
    /// projected skip, then the two heads.
    pub fn layer_costs(&self) -> Result<Vec<(String, LayerCost)>> {
        self.validate()?;
        let shapes = self.layer_shapes()?;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let pad = l.kernel / 2;
            let h_in = if i == 0 { self.input_size } else { shapes[i - 1].1 };
            let conv_h = (h_in + 2 * pad - l.kernel) / l.stride + 1;
            let cost = LayerCost {
                param_count: crate::kcl::count_params(l.in_channels, l.out_channels, l.kernel, l.n, true)?,
                flop_count: count_flops(l.in_channels, l.out_channels, l.kernel, l.n, conv_h, conv_h)?,
            };
            out.push((format!("layer{}", i + 1), cost));
        }
        for &(s, d) in &self.skips {
            let (cs, hs, _) = shapes[s - 1];
            let cd = self.layers[d - 1].in_channels;
            if cs != cd {
                let n = self.projection_n;
                let cost = LayerCost {
                    param_count: crate::kcl::count_params(cs, cd, 1, n, true)?,
                    flop_count: count_flops(cs, cd, 1, n, hs, hs)?,
                };
                out.push((format!("skip{s}_{d}"), cost));
            }
        }
        let (c, h, w) = self.feature_shape()?;
        let g = self.heatmap_size;
        let l = NUM_LANDMARKS as u64;
        let heat = LayerCost {
            param_count: l * c as u64 + l,
            flop_count: 2 * l * c as u64 * (h * w) as u64 + 8 * l * (g * g) as u64,
        };
        out.push(("heatmap_head".into(), heat));
        let coord = LayerCost {
            param_count: 2 * l * c as u64 + 2 * l,
            flop_count: (c * h * w) as u64 + 2 * 2 * l * c as u64,
        };
        out.push(("coordinate_head".into(), coord));
        Ok(out)
    }

    pub fn total_cost(&self) -> Result<LayerCost> {
        Ok(self.layer_costs()?.into_iter().map(|(_, c)| c).sum())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> ConfigDigest {
        checkpoint::sha256(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkNet<T> {
    config: KpfemConfig,
    pub layers: Vec<KclParams<T>>,
    /// One entry per configured skip; `None` when no projection is needed.
    pub projections: Vec<Option<KclParams<T>>>,
    /// `[12, c, 1, 1]` dense 1x1 convolution.
    pub heat_weight: Tensor<T>,
    pub heat_bias: Tensor<T>,
    /// `[24, c]`.
    pub coord_weight: Tensor<T>,
    pub coord_bias: Tensor<T>,
}

/// Tape handles of every parameter, in [`LandmarkNet::tensors`] order.
#[derive(Debug, Clone)]
pub struct NetVars {
    layers: Vec<KclVars>,
    projections: Vec<Option<KclVars>>,
    heat_weight: Var,
    heat_bias: Var,
    coord_weight: Var,
    coord_bias: Var,
}

impl NetVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(KclVars::all).collect();
        v.extend(self.projections.iter().flatten().flat_map(KclVars::all));
        v.extend([self.heat_weight, self.heat_bias, self.coord_weight, self.coord_bias]);
        v
    }
}

/// Network outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct NetOutputs {
    pub features: Var,
    /// `[12, g, g]` distributions.
    pub heatmaps: Var,
    /// `[24]` normalized `(x, y)` pairs.
    pub coords: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub heatmaps: HeatmapStack,
    /// Pixel coordinates from the coordinate head.
    pub coords: LandmarkSet,
}

fn uniform_tensor<T: Scalar>(shape: &[usize], bound: f64, rng: &mut crate::rng::Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_f64(shape.to_vec(), &v).expect("positive extents")
}

impl<T: Scalar> LandmarkNet<T> {
    pub fn init(config: &KpfemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(NUM_LAYERS);
        for (i, l) in config.layers.iter().enumerate() {
            let mut rng = substream(seed, stream::INIT, i as u64);
            layers.push(KclParams::init(l.in_channels, l.out_channels, l.kernel, l.n, &mut rng)?);
        }
        let shapes = config.layer_shapes()?;
        let mut projections = Vec::with_capacity(config.skips.len());
        for (j, &(s, d)) in config.skips.iter().enumerate() {
            let (cs, cd) = (shapes[s - 1].0, config.layers[d - 1].in_channels);
            projections.push(if cs == cd {
                None
            } else {
                let mut rng = substream(seed, stream::INIT, 100 + j as u64);
                Some(KclParams::init(cs, cd, 1, config.projection_n, &mut rng)?)
            });
        }
        let c = shapes.last().unwrap().0;
        let mut rng = substream(seed, stream::INIT, 200);
        let heat_weight = uniform_tensor(&[NUM_LANDMARKS, c, 1, 1], (6.0 / c as f64).sqrt(), &mut rng);
        let coord_weight = uniform_tensor(&[2 * NUM_LANDMARKS, c], (1.0 / c as f64).sqrt(), &mut rng);
        Ok(Self {
            config: config.clone(),
            layers,
            projections,
            heat_weight,
            heat_bias: Tensor::zeros([NUM_LANDMARKS]),
            coord_weight,
            coord_bias: Tensor::zeros([2 * NUM_LANDMARKS]),
        })
    }

    pub fn config(&self) -> &KpfemConfig {
        &self.config
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = self.layers.iter().flat_map(KclParams::tensors).collect();
        v.extend(self.projections.iter().flatten().flat_map(KclParams::tensors));
        v.extend([&self.heat_weight, &self.heat_bias, &self.coord_weight, &self.coord_bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> = self.layers.iter_mut().flat_map(KclParams::tensors_mut).collect();
        v.extend(self.projections.iter_mut().flatten().flat_map(KclParams::tensors_mut));
        v.extend([&mut self.heat_weight, &mut self.heat_bias, &mut self.coord_weight, &mut self.coord_bias]);
        v
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(l.tensor_names().into_iter().map(|n| format!("layer{}.{n}", i + 1)));
        }
        for (p, &(s, d)) in self.projections.iter().zip(&self.config.skips) {
            if let Some(p) = p {
                v.extend(p.tensor_names().into_iter().map(|n| format!("skip{s}_{d}.{n}")));
            }
        }
        v.extend(["heat.weight", "heat.bias", "coord.weight", "coord.bias"].map(String::from));
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Copy with skip `index` (position in the config's list) removed.
    pub fn without_skip(&self, index: usize) -> Self {
        let mut out = self.clone();
        out.config.skips.remove(index);
        out.projections.remove(index);
        out
    }

    pub fn record(&self, tape: &mut Tape<T>, trainable: bool) -> NetVars {
        let put = |tape: &mut Tape<T>, t: &Tensor<T>| {
            if trainable {
                tape.leaf(t.clone().with_requires_grad(true))
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = self.layers.iter().map(|l| l.record(tape, trainable)).collect();
        let projections = self.projections.iter().map(|p| p.as_ref().map(|p| p.record(tape, trainable))).collect();
        NetVars {
            layers,
            projections,
            heat_weight: put(tape, &self.heat_weight),
            heat_bias: put(tape, &self.heat_bias),
            coord_weight: put(tape, &self.coord_weight),
            coord_bias: put(tape, &self.coord_bias),
        }
    }

    /// Backbone on a recorded `[3, size, size]` input.
    pub fn kpfem_tape(&self, tape: &mut Tape<T>, vars: &NetVars, image: Var) -> Result<Var> {
        let size = self.config.input_size;
        if tape.shape(image) != [3, size, size] {
            return Err(Error::Tensor(kronmark_tensor::TensorError::Dimension(format!(
                "backbone input must be [3, {size}, {size}], got {:?}",
                tape.shape(image)
            ))));
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(NUM_LAYERS);
        let mut x = image;
        for (i, (spec, lv)) in self.config.layers.iter().zip(&vars.layers).enumerate() {
            let layer = i + 1;
            for (j, &(s, d)) in self.config.skips.iter().enumerate() {
                if d == layer {
                    let mut src = outputs[s - 1];
                    if let Some(p) = &vars.projections[j] {
                        src = p.forward(tape, src, 1, 0)?;
                    }
                    let (th, tw) = (tape.shape(x)[1], tape.shape(x)[2]);
                    if tape.shape(src)[1..] != [th, tw] {
                        src = tape.bilinear_resize(src, th, tw)?;
                    }
                    x = tape.add(x, src)?;
                }
            }
            let y = lv.forward(tape, x, spec.stride, spec.kernel / 2)?;
            let mut y = tape.relu(y);
            if spec.pool {
                y = tape.maxpool2(y)?;
            }
            outputs.push(y);
            x = y;
        }
        Ok(x)
    }

    /// Heads on recorded features. The 1x1 heatmap convolution runs before
    /// the bilinear resize; both are linear and the resize preserves
    /// constants, so this equals resizing first.
    pub fn llm_tape(&self, tape: &mut Tape<T>, vars: &NetVars, features: Var) -> Result<(Var, Var)> {
        let g = self.config.heatmap_size;
        let logits = tape.conv2d(features, vars.heat_weight, vars.heat_bias, 1, 0)?;
        let logits = tape.bilinear_resize(logits, g, g)?;
        let heatmaps = tape.spatial_softmax(logits)?;
        let pooled = tape.global_avg_pool(features)?;
        let coords = tape.linear(pooled, vars.coord_weight, vars.coord_bias)?;
        let coords = tape.sigmoid(coords);
        Ok((heatmaps, coords))
    }

    pub fn forward_tape(&self, tape: &mut Tape<T>, vars: &NetVars, image: Var) -> Result<NetOutputs> {
        let features = self.kpfem_tape(tape, vars, image)?;
        let (heatmaps, coords) = self.llm_tape(tape, vars, features)?;
        Ok(NetOutputs { features, heatmaps, coords })
    }

    pub fn kpfem_forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let x = tape.constant(image.clone());
        let f = self.kpfem_tape(&mut tape, &vars, x)?;
        Ok(tape.value(f).clone())
    }

    /// Heads on precomputed features; pixel coordinates assume a square
    /// input of `config.input_size`.
    pub fn llm_forward(&self, features: &Tensor<T>) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let f = tape.constant(features.clone());
        let (h, c) = self.llm_tape(&mut tape, &vars, f)?;
        self.to_prediction(tape.value(h), tape.value(c))
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let x = tape.constant(image.clone());
        let out = self.forward_tape(&mut tape, &vars, x)?;
        self.to_prediction(tape.value(out.heatmaps), tape.value(out.coords))
    }

    fn to_prediction(&self, heat: &Tensor<T>, coords: &Tensor<T>) -> Result<Prediction> {
        let g = self.config.heatmap_size;
        let mut data: Vec<f64> = heat.data().iter().map(|v| v.as_f64()).collect();
        for ch in data.chunks_mut(g * g) {
            let s: f64 = ch.iter().sum();
            ch.iter_mut().for_each(|v| *v /= s);
        }
        let size = self.config.input_size as f64;
        let c: Vec<f64> = coords.data().iter().map(|v| v.as_f64()).collect();
        Ok(Prediction {
            heatmaps: HeatmapStack::new(g, data)?,
            coords: LandmarkSet::from_normalized(&c, size, size)?,
        })
    }

    pub fn digest(&self) -> ConfigDigest {
        self.config.digest()
    }

    pub fn named_tensors_f32(&self) -> Vec<(String, Tensor<f32>)> {
        self.tensor_names().into_iter().zip(self.tensors().into_iter().map(|t| t.cast())).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::write(path, &self.digest(), &self.named_tensors_f32())
    }

    /// Loads parameters written by [`Self::save`] for the same config.
    pub fn load(path: &std::path::Path, config: &KpfemConfig) -> Result<Self> {
        let tensors = checkpoint::read_matching(path, &config.digest())?;
        let mut net = Self::init(config, 0)?;
        net.assign(tensors)?;
        Ok(net)
    }

    fn assign(&mut self, tensors: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let names = self.tensor_names();
        if names.len() != tensors.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, found {}", names.len(), tensors.len())));
        }
        for ((name, slot), (found, t)) in names.iter().zip(self.tensors_mut()).zip(tensors) {
            if *name != found || slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {found} {:?} does not match {name} {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.cast();
        }
        Ok(())
    }
}

/// Per channel, the center of the highest cell mapped to pixels by
/// `(col + 0.5) * width / g`, `(row + 0.5) * height / g`. Ties go to the
/// first cell in row-major order.
pub fn decode_peak(h: &HeatmapStack, width: f64, height: f64) -> LandmarkSet {
    let g = h.size();
    let pts: Vec<Point> = h
        .channels()
        .map(|ch| {
            let (r, c) = argmax_cell(ch, g);
            Point::new((c as f64 + 0.5) * width / g as f64, (r as f64 + 0.5) * height / g as f64)
        })
        .collect();
    LandmarkSet::from_slice(&pts).expect("stack has 12 channels")
}

fn argmax_cell(ch: &[f64], g: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in ch.iter().enumerate() {
        if v > ch[best] {
            best = i;
        }
    }
    (best / g, best % g)
}

/// Like [`decode_peak`], but refines each peak to the probability-weighted
/// centroid of the cells within `radius` of it (Chebyshev distance).
pub fn decode_refined(h: &HeatmapStack, width: f64, height: f64, radius: usize) -> LandmarkSet {
    let g = h.size();
    let pts: Vec<Point> = h
        .channels()
        .map(|ch| {
            let (r, c) = argmax_cell(ch, g);
            let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(g - 1));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(g - 1));
            let (mut sw, mut sr, mut sc) = (0.0, 0.0, 0.0);
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let w = ch[rr * g + cc];
                    sw += w;
                    sr += w * rr as f64;
                    sc += w * cc as f64;
                }
            }
            let (fr, fc) = if sw > 0.0 { (sr / sw, sc / sw) } else { (r as f64, c as f64) };
            Point::new((fc + 0.5) * width / g as f64, (fr + 0.5) * height / g as f64)
        })
        .collect();
    LandmarkSet::from_slice(&pts).expect("stack has 12 channels")
}

/// Window radius used by evaluation decoding.
pub const REFINE_RADIUS: usize = 3;
