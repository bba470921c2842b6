//! Landmark sets and heatmap stacks.
//!
//! The 12 landmarks are indexed 0..12 in code and numbered 1..=12 in
//! reports. Their anatomy:
//!
//! | # | position |
//! |---|----------|
//! | 1 | most anterior point of the antennal scale |
//! | 2 | most anterior point of the tail |
//! | 3 | most posterior point of the tail |
//! | 4 | carapace/abdomen junction, dorsal |
//! | 5 | midway along the carapace, ventral |
//! | 6 | carapace/abdomen junction, ventral |
//! | 7, 8 | first abdominal segment midpoint, dorsal / ventral |
//! | 9, 10 | third abdominal segment midpoint, dorsal / ventral |
//! | 11, 12 | last abdominal segment midpoint, dorsal / ventral |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 12;
/// Side of the square network input, in pixels.
pub const IMAGE_SIZE: usize = 320;
/// Side of the square heatmap grid.
pub const HEATMAP_SIZE: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Exactly 12 ordered points, in pixel coordinates at the API boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: [Point; NUM_LANDMARKS],
}

impl LandmarkSet {
    pub fn new(points: [Point; NUM_LANDMARKS]) -> Self {
        Self { points }
    }

    pub fn from_slice(points: &[Point]) -> Result<Self> {
        let arr: [Point; NUM_LANDMARKS] = points.try_into().map_err(|_| {
            Error::Input(format!("expected {NUM_LANDMARKS} landmarks, got {}", points.len()))
        })?;
        Ok(Self::new(arr))
    }

    /// Landmark by its 1-based anatomical number.
    pub fn number(&self, n: usize) -> Point {
        self.points[n - 1]
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Self::new(self.points.map(f))
    }

    /// Coordinates divided by the image extents, flattened `[x1, y1, x2, ..]`.
    pub fn normalized(&self, width: f64, height: f64) -> [f64; 2 * NUM_LANDMARKS] {
        let mut out = [0.0; 2 * NUM_LANDMARKS];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p.x / width;
            out[2 * i + 1] = p.y / height;
        }
        out
    }

    pub fn from_normalized(v: &[f64], width: f64, height: f64) -> Result<Self> {
        if v.len() != 2 * NUM_LANDMARKS {
            return Err(Error::Input(format!("expected {} coordinates, got {}", 2 * NUM_LANDMARKS, v.len())));
        }
        let pts: Vec<Point> = v.chunks(2).map(|c| Point::new(c[0] * width, c[1] * height)).collect();
        Self::from_slice(&pts)
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
        )
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.points
            .iter()
            .all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= width && p.y <= height)
    }
}

/// One spatial distribution per landmark on a square grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    size: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    /// Accepts `NUM_LANDMARKS * size * size` nonnegative values where every
    /// channel sums to 1 within 1e-6.
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != NUM_LANDMARKS * size * size {
            return Err(Error::Input(format!(
                "heatmap stack of side {size} needs {} values, got {}",
                NUM_LANDMARKS * size * size,
                data.len()
            )));
        }
        let stack = Self { size, data };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, ch) in self.channels().enumerate() {
            if ch.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Contract(format!("heatmap channel {c} has a negative or non-finite cell")));
            }
            let s: f64 = ch.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Contract(format!("heatmap channel {c} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.size * self.size)
    }
}
