//! Keypoint-aware augmentation: flips, shift/scale, rotation, blur and RGB
//! shift, each applied with its own probability.
//!
//! The geometric steps compose into one affine map on pixel coordinates.
//! The image is resampled once through its inverse, and landmarks are mapped
//! forward through the same matrix.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point};
use crate::rng::Rng;
use crate::synth::SpecimenRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub shift_scale_p: f64,
    /// Maximum shift as a fraction of the image extent.
    pub shift_limit: f64,
    /// Scale factor drawn from `1 +- scale_limit`.
    pub scale_limit: f64,
    pub rotate_p: f64,
    /// Degrees.
    pub rotate_limit: f64,
    pub blur_p: f64,
    /// Box blur radius in pixels.
    pub blur_limit: usize,
    pub rgb_shift_p: f64,
    /// Per-channel additive shift limit on the unit scale.
    pub rgb_shift_limit: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            hflip_p: 0.5,
            vflip_p: 0.5,
            shift_scale_p: 0.5,
            shift_limit: 0.0625,
            scale_limit: 0.20,
            rotate_p: 0.5,
            rotate_limit: 20.0,
            blur_p: 0.3,
            blur_limit: 1,
            rgb_shift_p: 0.3,
            rgb_shift_limit: 25.0 / 255.0,
        }
    }
}

impl AugmentationConfig {
    /// Everything off.
    pub fn none() -> Self {
        Self {
            hflip_p: 0.0,
            vflip_p: 0.0,
            shift_scale_p: 0.0,
            rotate_p: 0.0,
            blur_p: 0.0,
            rgb_shift_p: 0.0,
            ..Self::default()
        }
    }
}

/// Row-major 2x3 affine map `[a b c; d e f]` on pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.0;
        Point::new(m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5])
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Affine) -> Affine {
        let (a, b) = (&self.0, &first.0);
        Affine([
            a[0] * b[0] + a[1] * b[3],
            a[0] * b[1] + a[1] * b[4],
            a[0] * b[2] + a[1] * b[5] + a[2],
            a[3] * b[0] + a[4] * b[3],
            a[3] * b[1] + a[4] * b[4],
            a[3] * b[2] + a[4] * b[5] + a[5],
        ])
    }

    pub fn inverse(&self) -> Affine {
        let m = &self.0;
        let det = m[0] * m[4] - m[1] * m[3];
        let (a, b, d, e) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
        Affine([a, b, -(a * m[2] + b * m[5]), d, e, -(d * m[2] + e * m[5])])
    }

    /// Rotation by `degrees` about `center`; positive angles turn
    /// counter-clockwise on screen (y points down).
    pub fn rotation(degrees: f64, center: Point) -> Affine {
        let (s, c) = degrees.to_radians().sin_cos();
        let (cx, cy) = (center.x, center.y);
        Affine([c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy])
    }

    /// Uniform scale about `center` followed by a translation.
    pub fn scale_shift(scale: f64, dx: f64, dy: f64, center: Point) -> Affine {
        Affine([scale, 0.0, center.x * (1.0 - scale) + dx, 0.0, scale, center.y * (1.0 - scale) + dy])
    }

    pub fn hflip(width: usize) -> Affine {
        Affine([-1.0, 0.0, (width - 1) as f64, 0.0, 1.0, 0.0])
    }

    pub fn vflip(height: usize) -> Affine {
        Affine([1.0, 0.0, 0.0, 0.0, -1.0, (height - 1) as f64])
    }
}

/// What [`augment`] sampled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentRecord {
    pub hflip: bool,
    pub vflip: bool,
    pub scale: f64,
    pub shift: (f64, f64),
    pub rotation_deg: f64,
    pub blur: bool,
    pub rgb_shift: [f64; 3],
    pub transform: Affine,
    /// Landmarks (0-based) that left the frame and were clamped to it.
    pub clamped: Vec<usize>,
}

/// Resamples `img` so that output pixel `p` takes the input value at
/// `m^-1(p)`, with bilinear interpolation and border clamping.
pub fn warp_affine(img: &Image, m: &Affine) -> Image {
    let inv = m.inverse();
    let (w, h) = (img.width(), img.height());
    let mut out = Image::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let src = inv.apply(Point::new(x as f64, y as f64));
            for c in 0..3 {
                out.set(c, x, y, img.sample(c, src.x, src.y));
            }
        }
    }
    out
}

/// `(2r+1)^2` box filter per channel, border pixels replicated.
pub fn box_blur(img: &Image, radius: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let r = radius as isize;
    let mut out = img.clone();
    let norm = ((2 * r + 1) * (2 * r + 1)) as f32;
    for c in 0..3 {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        acc += img.get(c, sx, sy);
                    }
                }
                out.set(c, x as usize, y as usize, acc / norm);
            }
        }
    }
    out
}

/// Samples the transforms of `cfg`, applies them to image and landmarks, and
/// returns what was applied.
pub fn augment(rec: &SpecimenRecord, cfg: &AugmentationConfig, rng: &mut Rng) -> (SpecimenRecord, AugmentRecord) {
    let (w, h) = (rec.image.width(), rec.image.height());
    let center = Point::new((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let hflip = rng.gen_bool(cfg.hflip_p);
    let vflip = rng.gen_bool(cfg.vflip_p);
    let (mut scale, mut shift) = (1.0, (0.0, 0.0));
    if rng.gen_bool(cfg.shift_scale_p) {
        scale = 1.0 + rng.gen_range(-cfg.scale_limit..=cfg.scale_limit);
        shift = (
            rng.gen_range(-cfg.shift_limit..=cfg.shift_limit) * w as f64,
            rng.gen_range(-cfg.shift_limit..=cfg.shift_limit) * h as f64,
        );
    }
    let rotation_deg = if rng.gen_bool(cfg.rotate_p) { rng.gen_range(-cfg.rotate_limit..=cfg.rotate_limit) } else { 0.0 };
    let blur = rng.gen_bool(cfg.blur_p);
    let rgb_shift = if rng.gen_bool(cfg.rgb_shift_p) {
        [0; 3].map(|_| rng.gen_range(-cfg.rgb_shift_limit..=cfg.rgb_shift_limit))
    } else {
        [0.0; 3]
    };

    let mut m = Affine::IDENTITY;
    if hflip {
        m = Affine::hflip(w).compose(&m);
    }
    if vflip {
        m = Affine::vflip(h).compose(&m);
    }
    m = Affine::scale_shift(scale, shift.0, shift.1, center).compose(&m);
    m = Affine::rotation(rotation_deg, center).compose(&m);

    let mut image = if m == Affine::IDENTITY { rec.image.clone() } else { warp_affine(&rec.image, &m) };
    if blur && cfg.blur_limit > 0 {
        image = box_blur(&image, cfg.blur_limit);
    }
    if rgb_shift != [0.0; 3] {
        let n = w * h;
        for (c, &s) in rgb_shift.iter().enumerate() {
            for v in &mut image.data_mut()[c * n..(c + 1) * n] {
                *v = (*v + s as f32).clamp(0.0, 1.0);
            }
        }
    }

    let mut clamped = Vec::new();
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    let mut points = rec.landmarks.points;
    for (i, p) in points.iter_mut().enumerate() {
        let q = m.apply(*p);
        let c = Point::new(q.x.clamp(0.0, xm), q.y.clamp(0.0, ym));
        if c != q {
            clamped.push(i);
        }
        *p = c;
    }
    if !clamped.is_empty() {
        log::debug!("specimen {}: landmarks {:?} clamped to the frame", rec.id, clamped);
    }
    let out = SpecimenRecord { id: rec.id, image, landmarks: LandmarkSet::new(points), weight: rec.weight, mm_per_px: rec.mm_per_px };
    let record = AugmentRecord { hflip, vflip, scale, shift, rotation_deg, blur, rgb_shift, transform: m, clamped };
    (out, record)
}
