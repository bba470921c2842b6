//! Weight estimation: the distance-based regressor (WRM), the PCA ablation,
//! and the pixel-count baselines built on threshold segmentation.

use kronmark_tensor::{AdamConfig, AdamState, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, ConfigDigest};
use crate::dataset::split_indices;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{regression_metrics, RegressionReport};
use crate::morphometrics::{distance_matrix, pca, NUM_DISTANCES};
use crate::rng::{stream, substream};
use crate::synth::SpecimenRecord;

/// Fully connected ReLU network with a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `[out, in]` per layer.
    pub weights: Vec<Tensor<f64>>,
    pub biases: Vec<Tensor<f64>>,
}

impl Mlp {
    /// He-uniform hidden layers, output layer scaled by `1/sqrt(fan_in)`,
    /// zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("bad layer widths {widths:?}")));
        }
        let mut rng = substream(seed, stream::INIT, 1000);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let last = i + 2 == widths.len();
            let bound = if last { (3.0 / w[0] as f64).sqrt() } else { (6.0 / w[0] as f64).sqrt() };
            let v: Vec<f64> = (0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)).collect();
            weights.push(Tensor::new(vec![w[1], w[0]], v)?);
            biases.push(Tensor::zeros([w[1]]));
        }
        Ok(Self { weights, biases })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].shape()[1]];
        w.extend(self.weights.iter().map(|t| t.shape()[0]));
        w
    }

    pub fn inputs(&self) -> usize {
        self.weights[0].shape()[1]
    }

    pub fn tensors(&self) -> Vec<&Tensor<f64>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }

    fn record(&self, tape: &mut Tape<f64>, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { tape.leaf(t.clone().with_requires_grad(true)) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// `x` is `[batch, inputs]`; returns `[batch, outputs]`.
    fn forward_tape(&self, tape: &mut Tape<f64>, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let layers = self.weights.len();
        for l in 0..layers {
            h = tape.linear(h, params[2 * l], params[2 * l + 1])?;
            if l + 1 < layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Outputs for each row of a row-major `[batch, inputs]` matrix.
    pub fn forward(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let m = self.inputs();
        if rows.is_empty() || rows.len() % m != 0 {
            return Err(Error::Input(format!("{} values do not form rows of {m}", rows.len())));
        }
        let mut tape = Tape::new();
        let p = self.record(&mut tape, false);
        let x = tape.constant(Tensor::new(vec![rows.len() / m, m], rows.to_vec())?);
        let y = self.forward_tape(&mut tape, &p, x)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// Per-feature `(x - mean) / std`; a zero spread is replaced by 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[f64], width: usize) -> Result<Self> {
        if width == 0 || rows.is_empty() || rows.len() % width != 0 {
            return Err(Error::Input("cannot fit a standardizer on no data".into()));
        }
        let n = (rows.len() / width) as f64;
        let mean: Vec<f64> = (0..width).map(|f| rows.iter().skip(f).step_by(width).sum::<f64>() / n).collect();
        let std = (0..width)
            .map(|f| {
                let v = rows.iter().skip(f).step_by(width).map(|x| (x - mean[f]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    /// Per-column centering with one shared scale, the root mean column
    /// variance. Keeps the relative spread of PCA scores.
    pub fn fit_pooled(rows: &[f64], width: usize) -> Result<Self> {
        let mut s = Self::fit(rows, width)?;
        let n = (rows.len() / width) as f64;
        let total: f64 = (0..width)
            .map(|f| rows.iter().skip(f).step_by(width).map(|x| (x - s.mean[f]).powi(2)).sum::<f64>() / n)
            .sum();
        let pooled = if total > 0.0 { (total / width as f64).sqrt() } else { 1.0 };
        s.std = vec![pooled; width];
        Ok(s)
    }

    pub fn apply(&self, rows: &[f64]) -> Vec<f64> {
        let w = self.mean.len();
        rows.iter().enumerate().map(|(i, x)| (x - self.mean[i % w]) / self.std[i % w]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorHyper {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RegressorHyper {
    fn default() -> Self {
        Self { hidden: vec![128, 64, 32], learning_rate: 1e-3, epochs: 200, batch_size: 32, seed: 0 }
    }
}

/// MLP regressor with standardized inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub mlp: Mlp,
    pub input: Standardizer,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Regressor {
    pub fn inputs(&self) -> usize {
        self.mlp.inputs()
    }

    /// Raw predictions (grams), not clamped.
    pub fn predict_raw(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let y = self.mlp.forward(&self.input.apply(rows))?;
        Ok(y.into_iter().map(|v| v * self.target_std + self.target_mean).collect())
    }

    /// Predictions with negative values clamped to 0 (logged).
    pub fn predict(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.predict_raw(rows)?;
        let negative = y.iter().filter(|&&v| v < 0.0).count();
        if negative > 0 {
            log::warn!("{negative} negative weight predictions clamped to 0 g");
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(y)
    }

    /// Configuration digest for checkpoints: widths and the standardization
    /// constants are fixed by training, so only the widths enter.
    pub fn digest(&self) -> ConfigDigest {
        checkpoint::sha256(serde_json::to_string(&self.mlp.widths()).unwrap().as_bytes())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut named: Vec<(String, Tensor<f32>)> = Vec::new();
        for (i, (w, b)) in self.mlp.weights.iter().zip(&self.mlp.biases).enumerate() {
            named.push((format!("fc{i}.weight"), w.cast()));
            named.push((format!("fc{i}.bias"), b.cast()));
        }
        let m = self.inputs();
        named.push(("input.mean".into(), Tensor::from_f64(vec![m], &self.input.mean)?));
        named.push(("input.std".into(), Tensor::from_f64(vec![m], &self.input.std)?));
        named.push(("target".into(), Tensor::from_f64(vec![2], &[self.target_mean, self.target_std])?));
        checkpoint::write(path, &self.digest(), &named)
    }
}

/// Minibatch Adam on MSE of standardized targets. Keeps the parameters with
/// the lowest validation MSE (training MSE when `val` is empty).
pub fn train_regressor(
    train_x: &[f64],
    train_y: &[f64],
    val_x: &[f64],
    val_y: &[f64],
    hyper: &RegressorHyper,
) -> Result<Regressor> {
    fit_regressor(train_x, train_y, val_x, val_y, hyper, Standardizer::fit)
}

fn fit_regressor(
    train_x: &[f64],
    train_y: &[f64],
    val_x: &[f64],
    val_y: &[f64],
    hyper: &RegressorHyper,
    scaler: fn(&[f64], usize) -> Result<Standardizer>,
) -> Result<Regressor> {
    let n = train_y.len();
    if n == 0 || train_x.len() % n != 0 || train_x.is_empty() {
        return Err(Error::Input("training data is empty or malformed".into()));
    }
    let m = train_x.len() / n;
    if !val_y.is_empty() && val_x.len() != val_y.len() * m {
        return Err(Error::Input("validation rows do not match the feature count".into()));
    }
    if hyper.epochs == 0 || hyper.batch_size == 0 || !(hyper.learning_rate > 0.0) {
        return Err(Error::Config("epochs, batch size and learning rate must be positive".into()));
    }
    let input = scaler(train_x, m)?;
    let target = Standardizer::fit(train_y, 1)?;
    let (t_mean, t_std) = (target.mean[0], target.std[0]);
    let xs = input.apply(train_x);
    let ys: Vec<f64> = train_y.iter().map(|y| (y - t_mean) / t_std).collect();
    let vx = input.apply(val_x);
    let vy: Vec<f64> = val_y.iter().map(|y| (y - t_mean) / t_std).collect();

    let mut widths = vec![m];
    widths.extend(&hyper.hidden);
    widths.push(1);
    let mut mlp = Mlp::init(&widths, hyper.seed)?;
    let adam = AdamConfig { learning_rate: hyper.learning_rate, ..AdamConfig::default() };
    let mut opt = AdamState::new(adam, mlp.tensors());
    let mut order: Vec<usize> = (0..n).collect();
    let mse = |mlp: &Mlp, x: &[f64], y: &[f64]| -> Result<f64> {
        let p = mlp.forward(x)?;
        Ok(p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
    };
    let mut best = (f64::INFINITY, mlp.clone());
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut substream(hyper.seed, stream::SHUFFLE, 10_000 + epoch as u64));
        for batch in order.chunks(hyper.batch_size) {
            let bx: Vec<f64> = batch.iter().flat_map(|&i| xs[i * m..(i + 1) * m].iter().copied()).collect();
            let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
            let mut tape = Tape::new();
            let params = mlp.record(&mut tape, true);
            let x = tape.constant(Tensor::new(vec![batch.len(), m], bx)?);
            let t = tape.constant(Tensor::new(vec![batch.len(), 1], by)?);
            let y = mlp.forward_tape(&mut tape, &params, x)?;
            let loss = tape.mse_loss(y, t)?;
            let mut g = tape.backward(loss)?;
            let mut tensors = mlp.tensors_mut();
            for (p, v) in tensors.iter_mut().zip(&params) {
                p.zero_grad();
                if let Some(grad) = g.take(*v) {
                    p.accumulate_grad(&grad)?;
                }
            }
            opt.step(&mut tensors)?;
        }
        let score = if vy.is_empty() { mse(&mlp, &xs, &ys)? } else { mse(&mlp, &vx, &vy)? };
        if score < best.0 {
            best = (score, mlp.clone());
        }
    }
    Ok(Regressor { mlp: best.1, input, target_mean: t_mean, target_std: t_std })
}

/// Distances in millimetres, one 66-wide row per record.
pub fn distance_features(records: &[SpecimenRecord]) -> Vec<f64> {
    records
        .iter()
        .flat_map(|r| distance_matrix(&r.landmarks).0.map(|d| d * r.mm_per_px))
        .collect()
}

/// Foreground mask `luminance > threshold` and its pixel count.
pub fn threshold_segment(image: &Image, threshold: f64) -> (Vec<bool>, usize) {
    let mask: Vec<bool> = image.luminance().into_iter().map(|v| v as f64 > threshold).collect();
    let count = mask.iter().filter(|&&m| m).count();
    (mask, count)
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearBaseline {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearBaseline {
    pub fn predict(&self, count: f64) -> f64 {
        self.slope * count + self.intercept
    }
}

/// Ordinary least squares of weight on pixel count.
pub fn fit_linear_baseline(counts: &[f64], weights: &[f64]) -> Result<LinearBaseline> {
    if counts.len() != weights.len() || counts.len() < 2 {
        return Err(Error::Input("need at least two paired samples".into()));
    }
    let n = counts.len() as f64;
    let mx = counts.iter().sum::<f64>() / n;
    let my = weights.iter().sum::<f64>() / n;
    let sxx: f64 = counts.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::SingularFit("all pixel counts are equal".into()));
    }
    let sxy: f64 = counts.iter().zip(weights).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok(LinearBaseline { slope, intercept: my - slope * mx })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `None` for the model on all 66 distances.
    pub components: Option<usize>,
    pub report: RegressionReport,
}

/// Train/val/test features and targets.
#[derive(Debug, Clone)]
pub struct WeightSplit {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub val_x: Vec<f64>,
    pub val_y: Vec<f64>,
    pub test_x: Vec<f64>,
    pub test_y: Vec<f64>,
}

impl WeightSplit {
    /// Rows of `width` features, partitioned 40/20/40 with `seed`.
    pub fn new(features: &[f64], targets: &[f64], width: usize, seed: u64) -> Result<Self> {
        if features.len() != targets.len() * width {
            return Err(Error::Input("feature rows do not match targets".into()));
        }
        let (a, b, c) = split_indices(targets.len(), (0.4, 0.2, 0.4), seed)?;
        let rows = |ix: &[usize]| -> Vec<f64> { ix.iter().flat_map(|&i| features[i * width..(i + 1) * width].to_vec()).collect() };
        let ys = |ix: &[usize]| -> Vec<f64> { ix.iter().map(|&i| targets[i]).collect() };
        Ok(Self {
            train_x: rows(&a),
            train_y: ys(&a),
            val_x: rows(&b),
            val_y: ys(&b),
            test_x: rows(&c),
            test_y: ys(&c),
        })
    }
}

/// One WRM per PCA reduction in `components` plus one on all distances.
/// PCA is fitted on the training rows only. Scores share one input scale so
/// low-variance components stay small.
pub fn pca_ablation(split: &WeightSplit, components: &[usize], hyper: &RegressorHyper) -> Result<Vec<AblationRow>> {
    let width = NUM_DISTANCES;
    if let Some(&c) = components.iter().find(|&&c| c == 0 || c > width) {
        return Err(Error::Input(format!("component count {c} must be in 1..={width}")));
    }
    let mut rows = Vec::with_capacity(components.len() + 1);
    for &k in components {
        let p = pca(&split.train_x, width, k)?;
        let project = |x: &[f64]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(x.len() / width * k);
            for row in x.chunks(width) {
                out.extend(p.transform(row)?);
            }
            Ok(out)
        };
        let (tx, vx, sx) = (project(&split.train_x)?, project(&split.val_x)?, project(&split.test_x)?);
        let model = fit_regressor(&tx, &split.train_y, &vx, &split.val_y, hyper, Standardizer::fit_pooled)?;
        debug_assert_eq!(model.inputs(), k);
        let report = regression_metrics(&model.predict(&sx)?, &split.test_y)?;
        rows.push(AblationRow { components: Some(k), report });
    }
    let model = train_regressor(&split.train_x, &split.train_y, &split.val_x, &split.val_y, hyper)?;
    let report = regression_metrics(&model.predict(&split.test_x)?, &split.test_y)?;
    rows.push(AblationRow { components: None, report });
    Ok(rows)
}

pub const METHOD_NAMES: [&str; 3] = ["Linear Regression", "Deep Learning-based Method", "Proposed Approach"];

#[derive(Debug)]
pub struct MethodRow {
    pub method: &'static str,
    pub result: Result<RegressionReport>,
}

/// Pixel-count linear regression, pixel-count MLP, and the distance WRM,
/// all scored on the same held-out test split.
pub fn compare_methods(records: &[SpecimenRecord], hyper: &RegressorHyper, threshold: f64) -> Result<Vec<MethodRow>> {
    use rayon::prelude::*;
    let weights: Vec<f64> = records.iter().map(|r| r.weight).collect();
    let counts: Vec<f64> = records.par_iter().map(|r| threshold_segment(&r.image, threshold).1 as f64).collect();
    let pix = WeightSplit::new(&counts, &weights, 1, hyper.seed)?;
    let dist = WeightSplit::new(&distance_features(records), &weights, NUM_DISTANCES, hyper.seed)?;

    let linear = (|| {
        let fit = fit_linear_baseline(&pix.train_x, &pix.train_y)?;
        let pred: Vec<f64> = pix.test_x.iter().map(|&c| fit.predict(c)).collect();
        regression_metrics(&pred, &pix.test_y)
    })();
    let mlp = (|| {
        let h = RegressorHyper { hidden: vec![16, 16], ..hyper.clone() };
        let model = train_regressor(&pix.train_x, &pix.train_y, &pix.val_x, &pix.val_y, &h)?;
        regression_metrics(&model.predict(&pix.test_x)?, &pix.test_y)
    })();
    let wrm = (|| {
        let model = train_regressor(&dist.train_x, &dist.train_y, &dist.val_x, &dist.val_y, hyper)?;
        regression_metrics(&model.predict(&dist.test_x)?, &dist.test_y)
    })();
    Ok(METHOD_NAMES.iter().zip([linear, mlp, wrm]).map(|(&method, result)| MethodRow { method, result }).collect())
}
