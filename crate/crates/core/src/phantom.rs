//! Synthetic multichannel tissue phantoms.
//!
//! Every channel lives on a shared elliptical "tissue" region: a low base
//! level plus 3–8 anisotropic Gaussian blobs, some shared across channels
//! with channel-specific amplitudes and some unique to the channel. After
//! normalising to a peak of 1, 1% Gaussian noise is added and the result is
//! clipped to `[0, 1]`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{ChannelStack, GridSpec};
use crate::ingest::{ChannelSpec, SampleMeta, DEFAULT_PPM};

pub const NOISE_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
struct Blob {
    row: f64,
    col: f64,
    sigma_r: f64,
    sigma_c: f64,
    cos: f64,
    sin: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, support: &Support, rows: f64, cols: f64) -> Self {
        let (row, col) = loop {
            let r = rng.random_range(0.0..rows);
            let c = rng.random_range(0.0..cols);
            if support.level(r, c) > 0.8 {
                break (r, c);
            }
        };
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Self {
            row,
            col,
            sigma_r: rng.random_range(0.04..0.14) * rows,
            sigma_c: rng.random_range(0.04..0.14) * cols,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    fn value(&self, r: f64, c: f64) -> f64 {
        let (dr, dc) = (r - self.row, c - self.col);
        let u = self.cos * dr + self.sin * dc;
        let v = -self.sin * dr + self.cos * dc;
        (-0.5 * ((u / self.sigma_r).powi(2) + (v / self.sigma_c).powi(2))).exp()
    }
}

/// Smooth-edged ellipse, 1 inside and 0 outside.
#[derive(Clone, Copy, Debug)]
struct Support {
    row: f64,
    col: f64,
    radius_r: f64,
    radius_c: f64,
}

impl Support {
    fn draw(rng: &mut ChaCha8Rng, rows: f64, cols: f64) -> Self {
        Self {
            row: rows * rng.random_range(0.42..0.58),
            col: cols * rng.random_range(0.42..0.58),
            radius_r: rows * rng.random_range(0.32..0.45),
            radius_c: cols * rng.random_range(0.32..0.45),
        }
    }

    fn level(&self, r: f64, c: f64) -> f64 {
        let d = ((r - self.row) / self.radius_r).powi(2) + ((c - self.col) / self.radius_c).powi(2);
        // Linear ramp over the outer 10% of the radius.
        ((1.0 - d.sqrt()) / 0.1).clamp(0.0, 1.0)
    }
}

/// A deterministic phantom for `seed`; see the module docs.
pub fn generate_phantom(seed: u64, grid: GridSpec, depth: usize) -> Result<ChannelStack> {
    if depth == 0 {
        return Err(Error::invalid("phantom needs at least one channel"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (grid.rows() as f64, grid.cols() as f64);
    let support = Support::draw(&mut rng, rows, cols);
    let shared: Vec<Blob> = (0..rng.random_range(2..=5))
        .map(|_| Blob::random(&mut rng, &support, rows, cols))
        .collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");

    let mut planes = Vec::with_capacity(depth);
    for _ in 0..depth {
        let base = rng.random_range(0.1..0.3);
        let mut blobs: Vec<(Blob, f64)> = shared
            .iter()
            .map(|b| (*b, rng.random_range(0.2..1.0)))
            .collect();
        for _ in 0..rng.random_range(1..=3) {
            blobs.push((Blob::random(&mut rng, &support, rows, cols), rng.random_range(0.3..1.0)));
        }
        let clean = Array2::from_shape_fn(grid.shape(), |(r, c)| {
            let (r, c) = (r as f64, c as f64);
            let s = support.level(r, c);
            s * (base + blobs.iter().map(|(b, a)| a * b.value(r, c)).sum::<f64>())
        });
        let peak = clean.iter().cloned().fold(0.0, f64::max);
        let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        planes.push(clean.mapv(|v| (v * scale + noise.sample(&mut rng)).clamp(0.0, 1.0)));
    }
    let labels = (0..depth).map(|z| 400.0 + 25.0 * z as f64 + 0.5).collect();
    ChannelStack::new(grid, planes, labels)
}

/// Metadata that describes a phantom as if it had been acquired at one
/// spectrum per pixel.
pub fn phantom_meta(name: &str, stack: &ChannelStack) -> SampleMeta {
    let grid = stack.grid();
    SampleMeta {
        name: name.to_string(),
        width_mm: grid.cols() as f64 * grid.pixel_width_um() / 1000.0,
        height_mm: grid.rows() as f64 * grid.pixel_height_um() / 1000.0,
        scan_rate_um_per_s: grid.pixel_width_um(),
        acq_rate_spectra_per_s: 1.0,
        rows: grid.rows(),
        cols: grid.cols(),
        channels: stack
            .labels()
            .iter()
            .map(|&label| ChannelSpec { label, ppm: DEFAULT_PPM })
            .collect(),
        defective_rows: Vec::new(),
    }
}

/// Cells inside the tissue region of the phantom for `seed`.
pub fn phantom_support(seed: u64, grid: GridSpec) -> Array2<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (grid.rows() as f64, grid.cols() as f64);
    let support = Support::draw(&mut rng, rows, cols);
    Array2::from_shape_fn(grid.shape(), |(r, c)| support.level(r as f64, c as f64) >= 1.0)
}
