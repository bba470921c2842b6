//! Procedural specimens: a striped, segmented body along a curved spine,
//! rendered over a textured background, with landmarks and an allometric
//! weight.
//!
//! The canonical pose is horizontal with the head on the left. Positions
//! along the body are expressed as a spine parameter `t` in `[0, 1]`: the
//! antennal-scale tip is `t = 0`, the carapace ends at `t = 0.42`, six
//! abdominal segments span `0.42..0.86`, and the tail fan runs to `t = 1`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::landmarks::{HeatmapStack, LandmarkSet, Point, HEATMAP_SIZE, IMAGE_SIZE, NUM_LANDMARKS};
use crate::rng::{stream, substream, Rng};

const CARAPACE_END: f64 = 0.42;
const TAIL_START: f64 = 0.86;
const SEGMENTS: usize = 6;
const SPINE_SAMPLES: usize = 160;
const REFERENCE_HEIGHT_RATIO: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Total body length range in mm.
    pub length_mm: (f64, f64),
    /// Maximum body height as a fraction of length.
    pub height_ratio: (f64, f64),
    /// Total downward bend of the abdomen, radians.
    pub curvature: (f64, f64),
    pub allometry_a: f64,
    pub allometry_b: f64,
    /// Sensitivity of weight to relative body height.
    pub width_coupling: f64,
    pub noise_std: f64,
    pub mm_per_px: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            length_mm: (100.0, 140.0),
            height_ratio: (0.17, 0.23),
            curvature: (0.0, 0.4),
            allometry_a: 1.2e-5,
            allometry_b: 3.0,
            width_coupling: 0.3,
            noise_std: 0.02,
            mm_per_px: 0.6,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !range_ok(self.length_mm) || self.length_mm.0 <= 0.0 {
            return Err(Error::Config(format!("bad length range {:?}", self.length_mm)));
        }
        if !range_ok(self.height_ratio) || self.height_ratio.0 <= 0.0 || self.height_ratio.1 > 0.5 {
            return Err(Error::Config(format!("bad height ratio range {:?}", self.height_ratio)));
        }
        if !range_ok(self.curvature) || self.curvature.0 < 0.0 || self.curvature.1 > 1.2 {
            return Err(Error::Config(format!("bad curvature range {:?}", self.curvature)));
        }
        if !(self.allometry_a > 0.0) || !(2.5..=3.5).contains(&self.allometry_b) {
            return Err(Error::Config(format!(
                "allometry needs a > 0 and b in [2.5, 3.5], got a={} b={}",
                self.allometry_a, self.allometry_b
            )));
        }
        if !(self.noise_std >= 0.0) || !(self.mm_per_px > 0.0) {
            return Err(Error::Config("noise_std must be >= 0 and mm_per_px > 0".into()));
        }
        if self.length_mm.1 / self.mm_per_px > 0.85 * IMAGE_SIZE as f64 {
            return Err(Error::Config(format!(
                "a {} mm body at {} mm/px does not fit the {IMAGE_SIZE}px frame",
                self.length_mm.1, self.mm_per_px
            )));
        }
        Ok(())
    }

    /// `a * L^b * (1 + c * rw) * (1 + noise)`, with `rw` the height ratio
    /// relative to 0.20.
    pub fn weight(&self, length_mm: f64, height_ratio: f64, noise: f64) -> f64 {
        let rw = height_ratio / REFERENCE_HEIGHT_RATIO - 1.0;
        self.allometry_a * length_mm.powf(self.allometry_b) * (1.0 + self.width_coupling * rw) * (1.0 + noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecimenRecord {
    pub id: u64,
    pub image: Image,
    pub landmarks: LandmarkSet,
    pub weight: f64,
    pub mm_per_px: f64,
}

/// Latent shape parameters of one specimen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Morphology {
    pub length_mm: f64,
    pub height_ratio: f64,
    pub curvature: f64,
}

/// Half body height at spine position `t`, as a fraction of maximum height.
fn profile(t: f64) -> f64 {
    if t < 0.08 {
        0.12 + 0.5 * t / 0.08
    } else if t < 0.30 {
        0.62 + 0.38 * (t - 0.08) / 0.22
    } else if t < CARAPACE_END {
        1.0
    } else if t < TAIL_START {
        1.0 - 0.45 * (t - CARAPACE_END) / (TAIL_START - CARAPACE_END)
    } else {
        let u = (t - TAIL_START) / (1.0 - TAIL_START);
        0.55 + 0.25 * (u * std::f64::consts::PI).sin() - 0.35 * u * u
    }
}

fn segment_mid(seg: usize) -> f64 {
    let w = (TAIL_START - CARAPACE_END) / SEGMENTS as f64;
    CARAPACE_END + (seg as f64 + 0.5) * w
}

#[derive(Debug, Clone)]
struct Body {
    spine: Vec<Point>,
    /// Unit dorsal normal per spine sample.
    normal: Vec<Point>,
    half_height: Vec<f64>,
}

impl Body {
    fn build(m: &Morphology, mm_per_px: f64) -> Self {
        let len_px = m.length_mm / mm_per_px;
        let max_h = m.height_ratio * len_px;
        let n = SPINE_SAMPLES;
        let ds = len_px / (n - 1) as f64;
        let mut spine = Vec::with_capacity(n);
        let mut normal = Vec::with_capacity(n);
        let mut half_height = Vec::with_capacity(n);
        let mut p = Point::new(0.0, 0.0);
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let bend = if t <= CARAPACE_END {
                0.0
            } else {
                let u = (t - CARAPACE_END) / (1.0 - CARAPACE_END);
                m.curvature * u * u * (3.0 - 2.0 * u)
            };
            let (dx, dy) = (bend.cos(), bend.sin());
            if i > 0 {
                p = Point::new(p.x + dx * ds, p.y + dy * ds);
            }
            spine.push(p);
            normal.push(Point::new(dy, -dx));
            half_height.push(0.5 * max_h * profile(t));
        }
        Self { spine, normal, half_height }
    }

    fn at(&self, t: f64) -> (Point, Point, f64) {
        let f = t.clamp(0.0, 1.0) * (SPINE_SAMPLES - 1) as f64;
        let i = (f.floor() as usize).min(SPINE_SAMPLES - 2);
        let w = f - i as f64;
        let lerp = |a: f64, b: f64| a + (b - a) * w;
        let (p0, p1) = (self.spine[i], self.spine[i + 1]);
        let (n0, n1) = (self.normal[i], self.normal[i + 1]);
        let nx = lerp(n0.x, n1.x);
        let ny = lerp(n0.y, n1.y);
        let nl = nx.hypot(ny);
        (
            Point::new(lerp(p0.x, p1.x), lerp(p0.y, p1.y)),
            Point::new(nx / nl, ny / nl),
            lerp(self.half_height[i], self.half_height[i + 1]),
        )
    }

    fn edge(&self, t: f64, dorsal: bool) -> Point {
        let (p, n, h) = self.at(t);
        let s = if dorsal { h } else { -h };
        Point::new(p.x + n.x * s, p.y + n.y * s)
    }

    fn landmarks(&self) -> [Point; NUM_LANDMARKS] {
        let spine = |t: f64| self.at(t).0;
        [
            spine(0.0),
            spine(TAIL_START),
            spine(1.0),
            self.edge(CARAPACE_END, true),
            self.edge(0.27, false),
            self.edge(CARAPACE_END, false),
            self.edge(segment_mid(0), true),
            self.edge(segment_mid(0), false),
            self.edge(segment_mid(2), true),
            self.edge(segment_mid(2), false),
            self.edge(segment_mid(SEGMENTS - 1), true),
            self.edge(segment_mid(SEGMENTS - 1), false),
        ]
    }

    /// Closed outline: dorsal edge head to tail, then ventral edge back.
    fn outline(&self) -> Vec<Point> {
        let dorsal = (0..SPINE_SAMPLES).map(|i| self.offset(i, 1.0));
        let ventral = (0..SPINE_SAMPLES).rev().map(|i| self.offset(i, -1.0));
        dorsal.chain(ventral).collect()
    }

    fn offset(&self, i: usize, side: f64) -> Point {
        let (p, n, h) = (self.spine[i], self.normal[i], self.half_height[i] * side);
        Point::new(p.x + n.x * h, p.y + n.y * h)
    }

    fn translate(&mut self, dx: f64, dy: f64) {
        for p in &mut self.spine {
            p.x += dx;
            p.y += dy;
        }
    }
}

/// Fractional area of each pixel covered by a closed polygon, sampled on
/// four sub-rows per pixel with exact horizontal span overlap.
fn coverage(poly: &[Point], width: usize, height: usize) -> Vec<f32> {
    const SUB: usize = 4;
    let mut cov = vec![0.0f32; width * height];
    let mut xs = Vec::new();
    for py in 0..height {
        for sub in 0..SUB {
            let y = py as f64 - 0.5 + (sub as f64 + 0.5) / SUB as f64;
            xs.clear();
            for k in 0..poly.len() {
                let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                if (a.y <= y && b.y > y) || (b.y <= y && a.y > y) {
                    xs.push(a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                let (x0, x1) = (span[0].max(-0.5), span[1].min(width as f64 - 0.5));
                if x1 <= x0 {
                    continue;
                }
                let first = (x0 + 0.5).floor() as usize;
                let last = ((x1 + 0.5).ceil() as usize).min(width);
                for px in first..last {
                    let lo = x0.max(px as f64 - 0.5);
                    let hi = x1.min(px as f64 + 0.5);
                    if hi > lo {
                        cov[py * width + px] += ((hi - lo) / SUB as f64) as f32;
                    }
                }
            }
        }
    }
    cov
}

/// Smooth random field: bilinear upsampling of a coarse uniform grid.
fn value_noise(rng: &mut Rng, width: usize, height: usize, cells: usize) -> Vec<f32> {
    let g = cells + 1;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.gen::<f32>()).collect();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let fy = y as f32 / (height - 1) as f32 * cells as f32;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let wy = fy - y0 as f32;
        for x in 0..width {
            let fx = x as f32 / (width - 1) as f32 * cells as f32;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let wx = fx - x0 as f32;
            let v = |r: usize, c: usize| grid[r * g + c];
            let top = v(y0, x0) * (1.0 - wx) + v(y0, x0 + 1) * wx;
            let bot = v(y0 + 1, x0) * (1.0 - wx) + v(y0 + 1, x0 + 1) * wx;
            out[y * width + x] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

fn render(body: &Body, rng: &mut Rng) -> Image {
    let (w, h) = (IMAGE_SIZE, IMAGE_SIZE);
    let n = w * h;
    let mut img = Image::filled(w, h, [0.0; 3]);

    let tint = [rng.gen_range(0.08..0.16), rng.gen_range(0.10..0.18), rng.gen_range(0.12..0.22)];
    let coarse = value_noise(rng, w, h, 6);
    let fine = value_noise(rng, w, h, 40);
    {
        let data = img.data_mut();
        for i in 0..n {
            let t = 0.75 + 0.5 * coarse[i] + 0.25 * (fine[i] - 0.5);
            for c in 0..3 {
                data[c * n + i] = tint[c] * t;
            }
        }
    }
    let specks = rng.gen_range(0..8);
    for _ in 0..specks {
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let r = rng.gen_range(1.0..3.5);
        let v: f32 = rng.gen_range(0.45..0.9);
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    for c in 0..3 {
                        img.set(c, x, y, v);
                    }
                }
            }
        }
    }

    let cov = coverage(&body.outline(), w, h);
    let brightness: f64 = rng.gen_range(0.62..0.92);
    let band_width: f64 = rng.gen_range(0.006..0.014);
    let band_depth: f64 = rng.gen_range(0.35..0.6);
    let shell = [1.0, rng.gen_range(0.78..0.9), rng.gen_range(0.62..0.78)];
    let flesh = [0.86, 0.92, 1.0];
    let (eye_p, eye_n, eye_h) = body.at(0.11);
    let eye = Point::new(eye_p.x + eye_n.x * 0.3 * eye_h, eye_p.y + eye_n.y * 0.3 * eye_h);
    let eye_r = (0.35 * eye_h).max(1.5);
    let boundaries: Vec<f64> = (0..=SEGMENTS)
        .map(|k| CARAPACE_END + k as f64 * (TAIL_START - CARAPACE_END) / SEGMENTS as f64)
        .collect();

    let data = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            let a = cov[y * w + x].min(1.0);
            if a <= 0.0 {
                continue;
            }
            let q = Point::new(x as f64, y as f64);
            let (mut best, mut bi) = (f64::INFINITY, 0);
            for (i, s) in body.spine.iter().enumerate() {
                let d = (s.x - q.x).powi(2) + (s.y - q.y).powi(2);
                if d < best {
                    best = d;
                    bi = i;
                }
            }
            let t = bi as f64 / (SPINE_SAMPLES - 1) as f64;
            let rel = (best.sqrt() / body.half_height[bi].max(1e-6)).min(1.0);
            let (s, nrm) = (body.spine[bi], body.normal[bi]);
            let dorsal = (q.x - s.x) * nrm.x + (q.y - s.y) * nrm.y > 0.0;
            let mut shade = brightness * (1.0 - 0.35 * rel * rel);
            if dorsal && (0.70..0.86).contains(&rel) {
                shade *= 0.55;
            } else if !dorsal {
                shade *= 0.88;
            }
            if boundaries.iter().any(|&b| (t - b).abs() < band_width) {
                shade *= 1.0 - band_depth;
            }
            let base = if t < CARAPACE_END { shell } else { flesh };
            let in_eye = q.dist(eye) <= eye_r;
            for c in 0..3 {
                let v = if in_eye { 0.05 } else { shade * base[c] };
                let i = c * n + y * w + x;
                data[i] = data[i] * (1.0 - a) + v as f32 * a;
            }
        }
    }
    for v in img.data_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = (*v + 0.015 * noise as f32).clamp(0.0, 1.0);
    }
    img.quantize();
    img
}

fn quantize_coord(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Draws one specimen with its own substream of `seed`, so records are
/// independent of generation order.
pub fn generate_specimen(seed: u64, id: u64, cfg: &GeneratorConfig) -> Result<SpecimenRecord> {
    cfg.validate()?;
    let mut rng = substream(seed, stream::SPECIMEN, id);
    let morph = Morphology {
        length_mm: uniform(&mut rng, cfg.length_mm),
        height_ratio: uniform(&mut rng, cfg.height_ratio),
        curvature: uniform(&mut rng, cfg.curvature),
    };
    let noise: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.noise_std;
    let weight = cfg.weight(morph.length_mm, morph.height_ratio, noise).max(1e-6);

    let mut body = Body::build(&morph, cfg.mm_per_px);
    let outline = body.outline();
    let (x0, y0, x1, y1) = outline.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
    );
    let margin = 6.0;
    let max = IMAGE_SIZE as f64 - 1.0 - margin;
    let center = 0.5 * (IMAGE_SIZE as f64 - 1.0);
    let jitter = 24.0;
    let dx = (center - 0.5 * (x0 + x1) + rng.gen_range(-jitter..jitter)).clamp(margin - x0, max - x1);
    let dy = (center - 0.5 * (y0 + y1) + rng.gen_range(-jitter..jitter)).clamp(margin - y0, max - y1);
    body.translate(dx, dy);

    let landmarks = LandmarkSet::new(body.landmarks().map(|p| Point::new(quantize_coord(p.x), quantize_coord(p.y))));
    let image = render(&body, &mut rng);
    Ok(SpecimenRecord { id, image, landmarks, weight, mm_per_px: cfg.mm_per_px })
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Generates `count` records with ids `0..count`.
pub fn generate_dataset(seed: u64, count: usize, cfg: &GeneratorConfig) -> Result<Vec<SpecimenRecord>> {
    use rayon::prelude::*;
    cfg.validate()?;
    (0..count as u64).into_par_iter().map(|id| generate_specimen(seed, id, cfg)).collect()
}

/// Heatmap cell center for pixel coordinate `x` on an axis of `extent`
/// pixels divided into `grid` cells: `x * grid / extent - 0.5`.
pub fn pixel_to_grid(x: f64, extent: f64, grid: usize) -> f64 {
    x * grid as f64 / extent - 0.5
}

/// One normalized Gaussian per landmark on a `grid x grid` map covering a
/// `width x height` image. `sigma` is in grid cells.
pub fn make_heatmap_targets(
    lm: &LandmarkSet,
    sigma: f64,
    grid: usize,
    width: f64,
    height: f64,
) -> Result<HeatmapStack> {
    if !(sigma > 0.0) {
        return Err(Error::Input(format!("sigma must be positive, got {sigma}")));
    }
    if !lm.within(width, height) {
        return Err(Error::Contract("landmark outside the image".into()));
    }
    let cells = grid * grid;
    let mut data = vec![0.0; NUM_LANDMARKS * cells];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (k, p) in lm.points.iter().enumerate() {
        let (u, v) = (pixel_to_grid(p.x, width, grid), pixel_to_grid(p.y, height, grid));
        let ch = &mut data[k * cells..(k + 1) * cells];
        let gx: Vec<f64> = (0..grid).map(|c| (-(c as f64 - u).powi(2) * inv).exp()).collect();
        let gy: Vec<f64> = (0..grid).map(|r| (-(r as f64 - v).powi(2) * inv).exp()).collect();
        for r in 0..grid {
            for c in 0..grid {
                ch[r * grid + c] = gy[r] * gx[c];
            }
        }
        let s: f64 = ch.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Contract(format!("heatmap for landmark {} underflowed", k + 1)));
        }
        ch.iter_mut().for_each(|x| *x /= s);
    }
    HeatmapStack::new(grid, data)
}

/// Targets for the default 56-cell grid over a 320-pixel frame.
pub fn default_heatmap_targets(lm: &LandmarkSet, sigma: f64) -> Result<HeatmapStack> {
    make_heatmap_targets(lm, sigma, HEATMAP_SIZE, IMAGE_SIZE as f64, IMAGE_SIZE as f64)
}
