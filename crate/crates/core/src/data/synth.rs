//! Deterministic synthetic digit corpus.
//!
//! Ten stroke-based glyphs (one per class) are rasterized at 28x28 through a
//! soft distance field, with a small random affine jitter per sample
//! (rotation, scale, translation). The result is a stand-in for handwritten
//! digits with the same container format, value range, and class structure:
//! distinct, coherent categories that a classifier and a density model can
//! latch onto. Everything is a pure function of (count, seed).

use std::io::Write;
use std::path::Path;

use super::{write_idx_bytes, IdxDataset};
use crate::error::{Error, Result};
use crate::{Rng, Tensor};

const SIDE: usize = 28;
const PIXELS: usize = SIDE * SIDE;
/// Stroke half-width and falloff width, in glyph units (glyph box is 1x1,
/// drawn about 20px tall).
const CORE: f64 = 0.055;
const SOFT: f64 = 0.045;

type Point = [f64; 2];

/// Sampled ellipse arc; the y axis points down, matching image rows.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, t0: f64, t1: f64) -> Vec<Point> {
    const STEPS: usize = 32;
    (0..=STEPS)
        .map(|i| {
            let t = t0 + (t1 - t0) * i as f64 / STEPS as f64;
            [cx + rx * t.cos(), cy + ry * t.sin()]
        })
        .collect()
}

fn seg(a: Point, b: Point) -> Vec<Point> {
    vec![a, b]
}

/// Polyline strokes for each digit, in the unit glyph box.
fn digit_strokes(digit: u8) -> Vec<Vec<Point>> {
    use std::f64::consts::PI;
    match digit {
        0 => vec![arc(0.50, 0.50, 0.27, 0.40, 0.0, 2.0 * PI)],
        1 => vec![
            seg([0.36, 0.24], [0.54, 0.08]),
            seg([0.54, 0.08], [0.54, 0.92]),
        ],
        2 => vec![
            arc(0.48, 0.28, 0.25, 0.20, PI, 2.0 * PI),
            seg([0.73, 0.30], [0.26, 0.90]),
            seg([0.26, 0.90], [0.74, 0.90]),
        ],
        3 => vec![
            arc(0.44, 0.29, 0.26, 0.21, 0.85 * PI, 2.10 * PI),
            arc(0.44, 0.70, 0.28, 0.23, 1.90 * PI, 3.15 * PI),
        ],
        4 => vec![
            seg([0.62, 0.08], [0.62, 0.92]),
            seg([0.62, 0.08], [0.28, 0.62]),
            seg([0.28, 0.62], [0.78, 0.62]),
        ],
        5 => vec![
            seg([0.70, 0.10], [0.32, 0.10]),
            seg([0.32, 0.10], [0.30, 0.46]),
            arc(0.47, 0.66, 0.26, 0.24, 1.35 * PI, 2.85 * PI),
        ],
        6 => vec![
            seg([0.58, 0.08], [0.36, 0.45]),
            arc(0.48, 0.66, 0.24, 0.24, 0.0, 2.0 * PI),
        ],
        7 => vec![
            seg([0.26, 0.10], [0.74, 0.10]),
            seg([0.74, 0.10], [0.42, 0.92]),
        ],
        8 => vec![
            arc(0.50, 0.30, 0.22, 0.20, 0.0, 2.0 * PI),
            arc(0.50, 0.70, 0.26, 0.22, 0.0, 2.0 * PI),
        ],
        9 => vec![
            arc(0.52, 0.34, 0.24, 0.24, 0.0, 2.0 * PI),
            seg([0.76, 0.34], [0.62, 0.92]),
        ],
        _ => unreachable!("digits are 0..=9"),
    }
}

fn seg_dist(p: Point, a: Point, b: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn strokes_dist(p: Point, strokes: &[Vec<Point>]) -> f64 {
    let mut best = f64::INFINITY;
    for line in strokes {
        for w in line.windows(2) {
            best = best.min(seg_dist(p, w[0], w[1]));
        }
    }
    best
}

/// Rasterizes one jittered glyph to 784 bytes. Consumes exactly four
/// uniforms from `rng` (rotation, scale, two translations).
pub fn glyph_bytes(digit: u8, rng: &mut Rng) -> Vec<u8> {
    let strokes = digit_strokes(digit);
    let theta = (rng.uniform() * 2.0 - 1.0) * 0.12;
    let scale = 0.85 + rng.uniform() * 0.25;
    let tx = (rng.uniform() * 2.0 - 1.0) * 1.5;
    let ty = (rng.uniform() * 2.0 - 1.0) * 1.5;
    let (sin, cos) = theta.sin_cos();
    let center = SIDE as f64 / 2.0;
    let glyph_px = 20.0 * scale;

    let mut out = Vec::with_capacity(PIXELS);
    for row in 0..SIDE {
        for col in 0..SIDE {
            // Pixel center, back through the inverse affine, into glyph coords.
            let x = col as f64 + 0.5 - center - tx;
            let y = row as f64 + 0.5 - center - ty;
            let gx = (cos * x + sin * y) / glyph_px + 0.5;
            let gy = (-sin * x + cos * y) / glyph_px + 0.5;
            let d = strokes_dist([gx, gy], &strokes);
            let intensity = ((CORE + SOFT - d) / SOFT).clamp(0.0, 1.0);
            out.push((intensity * 255.0 + 0.5) as u8);
        }
    }
    out
}

/// n samples with labels cycling 0..9; one flat byte buffer per output.
pub fn generate(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = Rng::new(seed);
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = (i % 10) as u8;
        images.extend_from_slice(&glyph_bytes(digit, &mut rng));
        labels.push(digit);
    }
    (images, labels)
}

/// In-memory dataset, byte-quantized exactly like the file form.
pub fn dataset(n: usize, seed: u64) -> IdxDataset {
    let (images, labels) = generate(n, seed);
    let data: Vec<f64> = images.iter().map(|&b| b as f64 / 255.0).collect();
    let images = Tensor::new(vec![n, PIXELS], data).expect("n*784 pixels");
    IdxDataset::from_parts(images, Some(labels)).expect("counts match")
}

/// Writes a train/test corpus under `dir` using the conventional file
/// names. The training images are gzipped, which also exercises the
/// loader's transparent decompression; the other files stay plain.
pub fn write_corpus(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let write = |name: &str, bytes: &[u8], gzip: bool| -> Result<()> {
        let path = dir.join(name);
        let err = |e| Error::io(path.display().to_string(), e);
        if gzip {
            let mut enc =
                flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(bytes).map_err(err)?;
            std::fs::write(&path, enc.finish().map_err(err)?).map_err(err)
        } else {
            std::fs::write(&path, bytes).map_err(err)
        }
    };

    let (train_images, train_labels) = generate(n_train, seed);
    write(
        "train-images-idx3-ubyte.gz",
        &write_idx_bytes(&[n_train, SIDE, SIDE], &train_images),
        true,
    )?;
    write(
        "train-labels-idx1-ubyte",
        &write_idx_bytes(&[n_train], &train_labels),
        false,
    )?;

    let (test_images, test_labels) = generate(n_test, seed.wrapping_add(1));
    write(
        "t10k-images-idx3-ubyte",
        &write_idx_bytes(&[n_test, SIDE, SIDE], &test_images),
        false,
    )?;
    write(
        "t10k-labels-idx1-ubyte",
        &write_idx_bytes(&[n_test], &test_labels),
        false,
    )
}
