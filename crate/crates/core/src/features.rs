//! Hand-crafted per-location descriptors for the feature-based ERD models.
//!
//! For an unmeasured cell `t` of channel `z` (all distances physical):
//!
//! 0. IDW-weighted mean of `|X̂(t) − X(sᵢ)|` over the nearest measured `sᵢ`
//! 1. population variance of those neighbour values
//! 2. distance to the nearest measured cell
//! 3. measured cells within `2·pitch` of `t`, divided by the disc area
//! 4. magnitude of the central-difference gradient of `X̂` at `t`
//! 5. mean `|X̂(t) − X̂(u)|` over the in-grid 8-connected neighbours `u`
//!
//! `pitch` is the smaller pixel dimension. Gradients fall back to one-sided
//! differences on the grid border.

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, MeasurementMask};
use crate::neighbors::NeighborIndex;
use crate::reconstruct::{idw_weight, Reconstruction};

pub const NUM_FEATURES: usize = 6;

pub type Features = [f64; NUM_FEATURES];

/// Feature rows for every unmeasured cell, in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub cells: Vec<Cell>,
    pub rows: Vec<Features>,
}

/// Radius of the density disc.
pub(crate) fn density_radius(grid: &GridSpec) -> f64 {
    2.0 * grid.pixel_width_um().min(grid.pixel_height_um())
}

/// Features of cell `u` given the neighbour index and the current `X̂` plane
/// (which holds the measured values on S).
pub(crate) fn feature_row(index: &NeighborIndex, recon: &[f64], u: usize, power: f64) -> Features {
    let grid = index.grid();
    let neigh = index.neighbors(u);
    let xt = recon[u];

    let mut wsum = 0.0;
    let mut wdiff = 0.0;
    let mut mean = 0.0;
    for n in neigh {
        let w = idw_weight(n.dist2, power);
        let v = recon[n.index];
        wsum += w;
        wdiff += w * (xt - v).abs();
        mean += v;
    }
    let count = neigh.len() as f64;
    mean /= count;
    let variance = neigh
        .iter()
        .map(|n| {
            let e = recon[n.index] - mean;
            e * e
        })
        .sum::<f64>()
        / count;

    let nearest = neigh[0].dist2.sqrt();

    let radius = density_radius(grid);
    let r2 = radius * radius;
    let (ur, uc) = (u / grid.cols(), u % grid.cols());
    let ry = (radius / grid.pixel_height_um()).floor() as usize;
    let rx = (radius / grid.pixel_width_um()).floor() as usize;
    let mut inside = 0usize;
    for r in ur.saturating_sub(ry)..=(ur + ry).min(grid.rows() - 1) {
        for c in uc.saturating_sub(rx)..=(uc + rx).min(grid.cols() - 1) {
            let s = r * grid.cols() + c;
            if index.is_measured(s) && grid.offset_dist2(r.abs_diff(ur), c.abs_diff(uc)) <= r2 {
                inside += 1;
            }
        }
    }
    let density = inside as f64 / (std::f64::consts::PI * r2);

    let at = |r: usize, c: usize| recon[r * grid.cols() + c];
    let diff = |lo: usize, hi: usize, step: f64, get: &dyn Fn(usize) -> f64| {
        (get(hi) - get(lo)) / ((hi - lo) as f64 * step)
    };
    let gx = diff(
        uc.saturating_sub(1),
        (uc + 1).min(grid.cols() - 1),
        grid.pixel_width_um(),
        &|c| at(ur, c),
    );
    let gy = diff(
        ur.saturating_sub(1),
        (ur + 1).min(grid.rows() - 1),
        grid.pixel_height_um(),
        &|r| at(r, uc),
    );
    let gradient = (gx * gx + gy * gy).sqrt();

    let mut ring = 0.0;
    let mut ring_n = 0usize;
    for r in ur.saturating_sub(1)..=(ur + 1).min(grid.rows() - 1) {
        for c in uc.saturating_sub(1)..=(uc + 1).min(grid.cols() - 1) {
            if r == ur && c == uc {
                continue;
            }
            ring += (xt - at(r, c)).abs();
            ring_n += 1;
        }
    }

    [
        wdiff / wsum,
        variance,
        nearest,
        density,
        gradient,
        ring / ring_n as f64,
    ]
}

/// Unmeasured cells whose features may change after a reveal.
///
/// `touched` are cells whose estimates changed (including `revealed`).
/// Gradient and ring features read the 3x3 neighbourhood; the density
/// feature reads a disc around each revealed cell.
pub(crate) fn dirty_cells(index: &NeighborIndex, touched: &[usize], revealed: &[usize]) -> Vec<usize> {
    let grid = index.grid();
    let mut flag = vec![false; grid.len()];
    let mut mark = |center: usize, ry: usize, rx: usize| {
        let (r0, c0) = (center / grid.cols(), center % grid.cols());
        for r in r0.saturating_sub(ry)..=(r0 + ry).min(grid.rows() - 1) {
            for c in c0.saturating_sub(rx)..=(c0 + rx).min(grid.cols() - 1) {
                flag[r * grid.cols() + c] = true;
            }
        }
    };
    for &u in touched {
        mark(u, 1, 1);
    }
    let radius = density_radius(grid);
    let ry = (radius / grid.pixel_height_um()).floor() as usize;
    let rx = (radius / grid.pixel_width_um()).floor() as usize;
    for &s in revealed {
        mark(s, ry, rx);
    }
    (0..grid.len())
        .filter(|&u| flag[u] && !index.is_measured(u))
        .collect()
}

/// Features of channel `channel` for every unmeasured cell of `recon`.
pub fn extract_features(recon: &Reconstruction, channel: usize) -> Result<FeatureSet> {
    if channel >= recon.stack().depth() {
        return Err(Error::invalid(format!(
            "channel {channel} out of range for {} channels",
            recon.stack().depth()
        )));
    }
    let mask: &MeasurementMask = recon.source_mask();
    if mask.count() == 0 {
        return Err(Error::NoMeasurements);
    }
    let index = NeighborIndex::build(mask, 10);
    let plane = recon.stack().channel_slice(channel);
    let grid = recon.grid();
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for u in 0..grid.len() {
        if index.is_measured(u) {
            continue;
        }
        cells.push(grid.cell(u));
        rows.push(feature_row(&index, plane, u, 2.0));
    }
    Ok(FeatureSet { cells, rows })
}
