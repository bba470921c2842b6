//! Dataset splitting and the on-disk layout.
//!
//! A dataset directory holds `index.jsonl` and `images/{id:06}.png`. Each
//! index line is one JSON object:
//!
//! ```text
//! {"id":3,"image":"images/000003.png","landmarks":[[12.50,140.25],...],"weight":21.734,"mm_per_px":0.6}
//! ```
//!
//! Coordinates are written with exactly two fractional digits; weight and
//! scale use the shortest text that parses back to the same value.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::landmarks::{LandmarkSet, Point, NUM_LANDMARKS};
use crate::rng::{stream, substream};
use crate::synth::SpecimenRecord;

pub const INDEX_FILE: &str = "index.jsonl";

/// Sizes by the largest-remainder rule: each part gets `floor(f * n)` and
/// the leftover items go to the largest fractional remainders, earlier parts
/// first on ties.
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| !(f >= 0.0)) {
        return Err(Error::Input(format!("split fractions must be >= 0 and sum to 1, got {fractions:?}")));
    }
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Index partition `(train, val, test)` after a seeded shuffle.
pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return Err(Error::Input(format!("splitting needs at least 3 records, got {n}")));
    }
    let sizes = split_sizes(n, &[fractions.0, fractions.1, fractions.2])?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, stream::SPLIT, 0));
    let test = idx.split_off(sizes[0] + sizes[1]);
    let val = idx.split_off(sizes[0]);
    Ok((idx, val, test))
}

pub fn split<T: Clone>(data: &[T], fractions: (f64, f64, f64), seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = split_indices(data.len(), fractions, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| data[i].clone()).collect();
    Ok((pick(a), pick(b), pick(c)))
}

pub fn image_path(id: u64) -> String {
    format!("images/{id:06}.png")
}

fn index_line(rec: &SpecimenRecord) -> String {
    let mut s = format!("{{\"id\":{},\"image\":\"{}\",\"landmarks\":[", rec.id, image_path(rec.id));
    for (i, p) in rec.landmarks.points.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "[{:.2},{:.2}]", p.x, p.y).unwrap();
    }
    write!(s, "],\"weight\":{:?},\"mm_per_px\":{:?}}}", rec.weight, rec.mm_per_px).unwrap();
    s
}

/// Text of `index.jsonl` for `records`, in the given order.
pub fn index_text(records: &[SpecimenRecord]) -> String {
    records.iter().map(|r| index_line(r) + "\n").collect()
}

pub fn save_dataset(records: &[SpecimenRecord], dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for rec in records {
        rec.image.save_png(&dir.join(image_path(rec.id)))?;
    }
    let index = dir.join(INDEX_FILE);
    fs::write(&index, index_text(records)).map_err(|e| Error::io(&index, e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    id: u64,
    image: String,
    landmarks: Vec<[f64; 2]>,
    weight: f64,
    mm_per_px: f64,
}

/// One parsed index line without its image.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub id: u64,
    pub image: PathBuf,
    pub landmarks: LandmarkSet,
    pub weight: f64,
    pub mm_per_px: f64,
}

pub fn read_index(dir: &Path) -> Result<Vec<IndexRecord>> {
    let path = dir.join(INDEX_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let e: IndexEntry = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if e.landmarks.len() != NUM_LANDMARKS {
            return Err(parse_err(format!("expected {NUM_LANDMARKS} landmarks, got {}", e.landmarks.len())));
        }
        if !(e.weight > 0.0) || !(e.mm_per_px > 0.0) {
            return Err(parse_err("weight and mm_per_px must be positive".into()));
        }
        let pts: Vec<Point> = e.landmarks.iter().map(|&[x, y]| Point::new(x, y)).collect();
        out.push(IndexRecord {
            id: e.id,
            image: dir.join(&e.image),
            landmarks: LandmarkSet::from_slice(&pts)?,
            weight: e.weight,
            mm_per_px: e.mm_per_px,
        });
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<SpecimenRecord>> {
    let index = read_index(dir)?;
    for r in &index {
        if !r.image.exists() {
            return Err(Error::MissingFile(r.image.clone()));
        }
    }
    use rayon::prelude::*;
    index
        .into_par_iter()
        .map(|r| {
            Ok(SpecimenRecord {
                id: r.id,
                image: Image::load_png(&r.image)?,
                landmarks: r.landmarks,
                weight: r.weight,
                mm_per_px: r.mm_per_px,
            })
        })
        .collect()
}
