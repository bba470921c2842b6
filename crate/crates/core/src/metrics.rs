//! Evaluation measures: keypoint distance, divergences, OKS with the AP/AR
//! sweep, and regression errors.
//!
//! Logarithms are natural everywhere and `0 * ln 0` is taken as 0.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};

/// `sqrt(sum_i |g_i - p_i|^2)`.
///
/// The square root is applied to the summed squared offsets, so a single
/// point reduces to its ordinary Euclidean distance.
pub fn euclidean_distance(g: &[Point], p: &[Point]) -> Result<f64> {
    if g.len() != p.len() {
        return Err(Error::Input(format!("point counts differ: {} vs {}", g.len(), p.len())));
    }
    let sq: f64 = g.iter().zip(p).map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sum();
    Ok(sq.sqrt())
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Input(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Input(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// Kullback-Leibler divergence `sum p_i ln(p_i / q_i)`.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Input(format!("support sizes differ: {} vs {}", p.len(), q.len())));
    }
    check_distribution(p, "P")?;
    check_distribution(q, "Q")?;
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi == 0.0 {
                return Err(Error::InfiniteDivergence { index: i });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// Square-rooted Jensen-Shannon divergence, in `[0, sqrt(ln 2)]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Input(format!("support sizes differ: {} vs {}", p.len(), q.len())));
    }
    check_distribution(p, "P")?;
    check_distribution(q, "Q")?;
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            acc += pi * (pi / m).ln();
        }
        if qi > 0.0 {
            acc += qi * (qi / m).ln();
        }
    }
    Ok((0.5 * acc).max(0.0).sqrt())
}

/// How the object scale `s` of an OKS comparison is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScaleRule {
    /// `sqrt` of the area of the ground-truth landmark bounding box.
    GtBboxArea,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OksConfig {
    pub falloff: [f64; NUM_LANDMARKS],
    pub visible: [bool; NUM_LANDMARKS],
    pub scale: ScaleRule,
}

impl Default for OksConfig {
    fn default() -> Self {
        Self { falloff: [0.1; NUM_LANDMARKS], visible: [true; NUM_LANDMARKS], scale: ScaleRule::GtBboxArea }
    }
}

impl OksConfig {
    pub fn scale_for(&self, gt: &LandmarkSet) -> Result<f64> {
        let s = match self.scale {
            ScaleRule::GtBboxArea => {
                let (x0, y0, x1, y1) = gt.bbox();
                ((x1 - x0) * (y1 - y0)).sqrt()
            }
            ScaleRule::Fixed(s) => s,
        };
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::UndefinedMetric(format!("object scale is {s}")));
        }
        Ok(s)
    }
}

/// Object keypoint similarity: mean of `exp(-d_i^2 / (2 s^2 k_i^2))` over
/// visible keypoints.
pub fn oks(pred: &LandmarkSet, gt: &LandmarkSet, cfg: &OksConfig) -> Result<f64> {
    let visible = cfg.visible.iter().filter(|&&v| v).count();
    if visible == 0 {
        return Err(Error::UndefinedMetric("no visible keypoints".into()));
    }
    if cfg.falloff.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::Config("OKS falloff constants must be positive".into()));
    }
    let s = cfg.scale_for(gt)?;
    let mut acc = 0.0;
    for i in 0..NUM_LANDMARKS {
        if cfg.visible[i] {
            let d2 = (pred.points[i].x - gt.points[i].x).powi(2) + (pred.points[i].y - gt.points[i].y).powi(2);
            let k = cfg.falloff[i];
            acc += (-d2 / (2.0 * s * s * k * k)).exp();
        }
    }
    Ok(acc / visible as f64)
}

pub const OKS_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ar: f64,
    pub ar50: f64,
    pub ar75: f64,
    /// Fraction of images at or above each of [`OKS_THRESHOLDS`].
    pub per_threshold: Vec<f64>,
    pub oks: Vec<f64>,
}

impl EvalReport {
    pub fn mean_oks(&self) -> f64 {
        self.oks.iter().sum::<f64>() / self.oks.len() as f64
    }
}

/// Single-instance AP/AR: with one prediction per image, precision and
/// recall at threshold `t` both equal the fraction of images whose OKS is at
/// least `t`. AP and AR average that over `.50:.05:.95`.
pub fn ap_ar(oks_values: &[f64]) -> Result<EvalReport> {
    if oks_values.is_empty() {
        return Err(Error::Input("AP/AR needs at least one OKS value".into()));
    }
    let n = oks_values.len() as f64;
    let at = |t: f64| oks_values.iter().filter(|&&o| o >= t).count() as f64 / n;
    let per_threshold: Vec<f64> = OKS_THRESHOLDS.iter().map(|&t| at(t)).collect();
    let mean = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalReport {
        ap: mean,
        ap50: per_threshold[0],
        ap75: per_threshold[5],
        ar: mean,
        ar50: per_threshold[0],
        ar75: per_threshold[5],
        per_threshold,
        oks: oks_values.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionReport {
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionReport> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "need equal nonzero lengths, got {} predictions and {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R^2 is undefined for constant targets".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Ok(RegressionReport { mae, mse: ss_res / n, r2: 1.0 - ss_res / ss_tot })
}

/// Mean absolute difference between paired measurements.
pub fn mad(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Input(format!("need equal nonzero lengths, got {} and {}", x.len(), y.len())));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}
