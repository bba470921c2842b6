//! Multi-task loss and the seeded training loop.

use kronmark_tensor::{AdamConfig, AdamState, Scalar, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentationConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::landmarks::{HeatmapStack, LandmarkSet, NUM_LANDMARKS};
use crate::metrics;
use crate::net::{decode_refined, KpfemConfig, LandmarkNet, REFINE_RADIUS};
use crate::rng::{stream, substream};
use crate::synth::{make_heatmap_targets, SpecimenRecord};

/// Network input: the image shifted to be centered on zero.
pub fn image_input<T: Scalar>(img: &Image) -> Tensor<T> {
    let data: Vec<f64> = img.data().iter().map(|&v| v as f64 - 0.5).collect();
    Tensor::from_f64(vec![3, img.height(), img.width()], &data).expect("image extents are positive")
}

/// Loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    /// Mean over channels of the square-rooted JS divergence.
    pub heatmap: f64,
    /// `sqrt` of summed squared offsets of normalized coordinates.
    pub coords: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        0.5 * (self.heatmap + self.coords)
    }
}

/// `0.5 * (heatmap term + coordinate term)`, averaged over the batch.
/// Coordinates are normalized `[x1, y1, x2, ..]` vectors.
pub fn multitask_loss(
    pred_heat: &[HeatmapStack],
    pred_coords: &[Vec<f64>],
    target_heat: &[HeatmapStack],
    target_coords: &[Vec<f64>],
) -> Result<f64> {
    let b = pred_heat.len();
    if b == 0 || pred_coords.len() != b || target_heat.len() != b || target_coords.len() != b {
        return Err(Error::Input("loss needs equal nonzero batch sizes".into()));
    }
    let mut total = 0.0;
    for i in 0..b {
        target_heat[i].validate()?;
        if pred_heat[i].size() != target_heat[i].size() || pred_coords[i].len() != target_coords[i].len() {
            return Err(Error::Input(format!("sample {i}: prediction and target shapes differ")));
        }
        let mut js = 0.0;
        for (p, q) in pred_heat[i].channels().zip(target_heat[i].channels()) {
            js += metrics::jsd(p, q)?;
        }
        js /= NUM_LANDMARKS as f64;
        let eu: f64 = pred_coords[i].iter().zip(&target_coords[i]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        total += 0.5 * (js + eu);
    }
    Ok(total / b as f64)
}

/// Records the per-sample loss; returns `(loss, heatmap term, coordinate term)`.
pub fn record_loss<T: Scalar>(
    tape: &mut Tape<T>,
    heatmaps: Var,
    coords: Var,
    target_heat: Tensor<T>,
    target_coords: Tensor<T>,
) -> Result<(Var, Var, Var)> {
    let th = tape.constant(target_heat);
    let tc = tape.constant(target_coords);
    let js = tape.jsd_loss(heatmaps, th)?;
    let eu = tape.euclidean_loss(coords, tc)?;
    let sum = tape.add(js, eu)?;
    Ok((tape.scale(sum, T::from_f64_lossy(0.5)), js, eu))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate is multiplied by this every `decay_period` epochs.
    pub decay_factor: f64,
    pub decay_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gaussian width of heatmap targets, in grid cells.
    pub heatmap_sigma: f64,
    pub augmentation: Option<AugmentationConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            decay_factor: 0.1,
            decay_period: 50,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            heatmap_sigma: 1.5,
            augmentation: Some(AugmentationConfig::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Decay of 0.001 every 50 epochs, the literal reading of the schedule.
    pub fn literal_decay(mut self) -> Self {
        self.decay_factor = 0.001;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.decay_period == 0 {
            return Err(Error::Config("learning rate, epochs, batch size and decay period must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!("decay factor must be in (0, 1], got {}", self.decay_factor)));
        }
        if !(self.heatmap_sigma > 0.0) {
            return Err(Error::Config("heatmap sigma must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((epoch / self.decay_period) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossParts,
    pub val: Option<LossParts>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss (the last
    /// epoch when there is no validation set).
    pub net: LandmarkNet<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct SampleResult {
    grads: Vec<Vec<f32>>,
    parts: LossParts,
}

fn targets(rec: &SpecimenRecord, net: &LandmarkNet<f32>, sigma: f64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let size = net.config().input_size as f64;
    let g = net.config().heatmap_size;
    let heat = make_heatmap_targets(&rec.landmarks, sigma, g, size, size)?;
    let th = Tensor::from_f64(vec![NUM_LANDMARKS, g, g], heat.data())?;
    let tc = Tensor::from_f64(vec![2 * NUM_LANDMARKS], &rec.landmarks.normalized(size, size))?;
    Ok((th, tc))
}

fn sample_step(net: &LandmarkNet<f32>, rec: &SpecimenRecord, sigma: f64, want_grads: bool) -> Result<SampleResult> {
    let (th, tc) = targets(rec, net, sigma)?;
    let mut tape = Tape::new();
    let vars = net.record(&mut tape, want_grads);
    let x = tape.constant(image_input(&rec.image));
    let out = net.forward_tape(&mut tape, &vars, x)?;
    let (loss, js, eu) = record_loss(&mut tape, out.heatmaps, out.coords, th, tc)?;
    let parts = LossParts { heatmap: tape.value(js).data()[0] as f64, coords: tape.value(eu).data()[0] as f64 };
    if !parts.total().is_finite() {
        return Err(Error::Contract(format!("non-finite loss on specimen {}", rec.id)));
    }
    let grads = if want_grads {
        let mut g = tape.backward(loss)?;
        vars.all()
            .into_iter()
            .zip(net.tensors())
            .map(|(v, t)| g.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
            .collect()
    } else {
        Vec::new()
    };
    Ok(SampleResult { grads, parts })
}

/// Mean loss over `records` without augmentation.
pub fn evaluate_loss(net: &LandmarkNet<f32>, records: &[SpecimenRecord], sigma: f64) -> Result<LossParts> {
    if records.is_empty() {
        return Err(Error::Input("no records to evaluate".into()));
    }
    let parts: Vec<LossParts> =
        records.par_iter().map(|r| sample_step(net, r, sigma, false).map(|s| s.parts)).collect::<Result<_>>()?;
    let n = parts.len() as f64;
    Ok(LossParts {
        heatmap: parts.iter().map(|p| p.heatmap).sum::<f64>() / n,
        coords: parts.iter().map(|p| p.coords).sum::<f64>() / n,
    })
}

/// Trains with Adam on mini-batches. Shuffling, initialization and
/// augmentation all derive from `cfg.seed`. Per-sample gradients are summed
/// in batch order, so results do not depend on the thread count.
pub fn train(
    train_set: &[SpecimenRecord],
    val_set: &[SpecimenRecord],
    model: &KpfemConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    cfg.validate()?;
    let mut net = LandmarkNet::<f32>::init(model, cfg.seed)?;
    let adam = AdamConfig { learning_rate: cfg.learning_rate, beta1: cfg.beta1, beta2: cfg.beta2, epsilon: cfg.epsilon };
    let mut opt = AdamState::new(adam, net.tensors());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, LandmarkNet<f32>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        opt.set_learning_rate(lr);
        order.shuffle(&mut substream(cfg.seed, stream::SHUFFLE, epoch as u64));
        let (mut sum_heat, mut sum_coord) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<SampleResult> = batch
                .par_iter()
                .map(|&i| {
                    let key = (epoch * train_set.len() + i) as u64;
                    let sample = match &cfg.augmentation {
                        Some(aug) => augment(&train_set[i], aug, &mut substream(cfg.seed, stream::AUGMENT, key)).0,
                        None => train_set[i].clone(),
                    };
                    sample_step(&net, &sample, cfg.heatmap_sigma, true)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f32;
            let mut tensors = net.tensors_mut();
            for (k, t) in tensors.iter_mut().enumerate() {
                let mut acc = vec![0.0f32; t.len()];
                for r in &results {
                    acc.iter_mut().zip(&r.grads[k]).for_each(|(a, g)| *a += g);
                }
                acc.iter_mut().for_each(|a| *a *= scale);
                t.zero_grad();
                t.accumulate_grad(&acc)?;
            }
            opt.step(&mut tensors)?;
            for r in &results {
                sum_heat += r.parts.heatmap;
                sum_coord += r.parts.coords;
            }
        }
        let n = train_set.len() as f64;
        let train_parts = LossParts { heatmap: sum_heat / n, coords: sum_coord / n };
        let val = if val_set.is_empty() { None } else { Some(evaluate_loss(&net, val_set, cfg.heatmap_sigma)?) };
        let score = val.map_or(train_parts.total(), |v| v.total());
        log::info!(
            "epoch {}/{}: lr {lr:.2e} train {:.5} (heat {:.5}, coords {:.5}) val {}",
            epoch + 1,
            cfg.epochs,
            train_parts.total(),
            train_parts.heatmap,
            train_parts.coords,
            val.map_or("-".to_string(), |v| format!("{:.5}", v.total()))
        );
        history.push(EpochStats { epoch: epoch + 1, learning_rate: lr, train: train_parts, val });
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score < *b || val.is_none(),
        };
        if improved {
            best = Some((score, epoch + 1, net.clone()));
        }
    }
    let (_, best_epoch, net) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { net, best_epoch, history })
}

/// Landmarks decoded from the heatmap head for each record.
pub fn predict_landmarks(net: &LandmarkNet<f32>, images: &[&Image]) -> Result<Vec<LandmarkSet>> {
    let size = net.config().input_size as f64;
    images
        .par_iter()
        .map(|img| {
            let p = net.forward(&image_input(img))?;
            Ok(decode_refined(&p.heatmaps, size, size, REFINE_RADIUS))
        })
        .collect()
}

/// Per-image OKS of predictions against ground truth, summarized as AP/AR.
pub fn evaluate_landmarks(
    pred: &[LandmarkSet],
    gt: &[LandmarkSet],
    cfg: &metrics::OksConfig,
) -> Result<metrics::EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!("{} predictions for {} ground truths", pred.len(), gt.len())));
    }
    let oks: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| metrics::oks(p, g, cfg)).collect::<Result<_>>()?;
    metrics::ap_ar(&oks)
}
