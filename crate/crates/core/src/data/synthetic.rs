//! Digit-like synthetic images for environments without MNIST.
//!
//! Each class is a seven-segment glyph drawn with soft strokes; samples vary
//! in position, slant, stroke width and brightness, and carry pixel noise.

use std::fs;
use std::path::{Path, PathBuf};

use super::idx::{encode_images, encode_labels, image_bytes};
use crate::error::Result;
use crate::ring::RngStream;
use crate::tensor::RealTensor;

const SIDE: usize = 28;

// segment endpoints in a unit box: x in [0, 1] left to right, y in [0, 2] top to bottom
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // top
    ((1.0, 0.0), (1.0, 1.0)), // upper right
    ((1.0, 1.0), (1.0, 2.0)), // lower right
    ((0.0, 2.0), (1.0, 2.0)), // bottom
    ((0.0, 1.0), (0.0, 2.0)), // lower left
    ((0.0, 0.0), (0.0, 1.0)), // upper left
    ((0.0, 1.0), (1.0, 1.0)), // middle
];

const GLYPHS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn gaussian(rng: &mut RngStream) -> f64 {
    let u1 = rng.unit_f64().max(f64::MIN_POSITIVE);
    let u2 = rng.unit_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn render(label: u8, rng: &mut RngStream) -> Vec<f64> {
    let width = 9.0 + 3.0 * rng.unit_f64();
    let height = 8.0 + 2.0 * rng.unit_f64();
    let left = 14.0 - width / 2.0 + 4.0 * (rng.unit_f64() - 0.5);
    let top = 14.0 - height + 4.0 * (rng.unit_f64() - 0.5);
    let slant = 0.25 * (rng.unit_f64() - 0.5);
    let radius = 1.0 + 0.6 * rng.unit_f64();
    let ink = 0.75 + 0.25 * rng.unit_f64();
    let place = |(x, y): (f64, f64)| (left + x * width - slant * (y - 1.0) * height, top + y * height);
    let strokes: Vec<((f64, f64), (f64, f64))> = SEGMENTS
        .iter()
        .zip(GLYPHS[label as usize])
        .filter(|(_, on)| *on)
        .map(|(&(a, b), _)| (place(a), place(b)))
        .collect();
    let mut out = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(a, b)| distance_to_segment(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let v = ink * (1.0 - (d - radius).max(0.0)).clamp(0.0, 1.0) + 0.08 * gaussian(rng);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// `n` images `[n, 28, 28, 1]` in `[0, 1]` with uniformly drawn labels.
/// Deterministic in `seed`.
pub fn synthetic_digits(n: usize, seed: u64) -> (RealTensor, Vec<u8>) {
    let mut rng = RngStream::new(seed, "synthetic-digits");
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.below(10) as u8;
        data.extend(render(label, &mut rng));
        labels.push(label);
    }
    let images = RealTensor {
        shape: vec![n, SIDE, SIDE, 1],
        data,
    };
    (images, labels)
}

/// Writes `images.idx` and `labels.idx` under `dir` and returns their paths.
pub fn write_fixture(dir: &Path, n: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let (images, labels) = synthetic_digits(n, seed);
    let image_path = dir.join("images.idx");
    let label_path = dir.join("labels.idx");
    fs::write(&image_path, encode_images(&image_bytes(&images), n, SIDE, SIDE))?;
    fs::write(&label_path, encode_labels(&labels))?;
    Ok((image_path, label_path))
}
