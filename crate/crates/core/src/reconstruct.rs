//! Inverse-distance-weighted mean interpolation of unmeasured cells.
//!
//! For an unmeasured cell `t` the estimate is `Σ wᵢ·X(sᵢ) / Σ wᵢ` over its
//! nearest measured cells, `wᵢ = dist(t, sᵢ)^-power`. Neighbours are
//! accumulated in ascending `(distance, row-major)` order so results do not
//! depend on how the work is scheduled.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, ChannelStack, GridSpec, MeasuredValues, MeasurementMask};
use crate::neighbors::{Neighbor, NeighborIndex};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdwParams {
    pub neighbors: usize,
    pub power: f64,
}

impl Default for IdwParams {
    fn default() -> Self {
        Self {
            neighbors: 10,
            power: 2.0,
        }
    }
}

impl IdwParams {
    fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::invalid("IDW needs at least one neighbour"));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::invalid(format!("IDW power must be positive, got {}", self.power)));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn idw_weight(dist2: f64, power: f64) -> f64 {
    if power == 2.0 {
        1.0 / dist2
    } else {
        general_weight(dist2, power)
    }
}

#[inline(never)]
fn general_weight(dist2: f64, power: f64) -> f64 {
    dist2.powf(-0.5 * power)
}

#[inline]
pub(crate) fn idw_value(neighbors: &[Neighbor], plane: &[f64], power: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for n in neighbors {
        let w = idw_weight(n.dist2, power);
        num += w * plane[n.index];
        den += w;
    }
    num / den
}

/// A full estimate `X̂`: measured values at S, interpolated values at T.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    stack: ChannelStack,
    source_mask: MeasurementMask,
}

impl Reconstruction {
    pub fn stack(&self) -> &ChannelStack {
        &self.stack
    }

    pub fn source_mask(&self) -> &MeasurementMask {
        &self.source_mask
    }

    pub fn grid(&self) -> &GridSpec {
        self.stack.grid()
    }

    pub fn plane(&self, z: usize) -> &Array2<f64> {
        self.stack.channel(z)
    }

    pub fn into_stack(self) -> ChannelStack {
        self.stack
    }
}

/// IDW reconstruction over the `neighbors` nearest measured cells, power 2.
pub fn reconstruct(measured: &MeasuredValues, neighbors: usize) -> Result<Reconstruction> {
    reconstruct_with(
        measured,
        &IdwParams {
            neighbors,
            ..IdwParams::default()
        },
    )
}

pub fn reconstruct_with(measured: &MeasuredValues, params: &IdwParams) -> Result<Reconstruction> {
    Ok(ScanState::new(measured, *params)?.reconstruction())
}

/// Incrementally maintained reconstruction for a progressing scan.
///
/// Holds the mask, the neighbour index, the measured values and the current
/// `X̂` planes. Revealing cells updates only the estimates whose neighbour
/// lists change; the result is bit-identical to a fresh reconstruction.
#[derive(Clone, Debug)]
pub struct ScanState {
    params: IdwParams,
    mask: MeasurementMask,
    index: NeighborIndex,
    labels: Vec<f64>,
    values: Vec<Vec<f64>>,
    recon: Vec<Vec<f64>>,
}

impl ScanState {
    pub fn new(measured: &MeasuredValues, params: IdwParams) -> Result<Self> {
        params.validate()?;
        if measured.mask().count() == 0 {
            return Err(Error::NoMeasurements);
        }
        let mask = measured.mask().clone();
        let index = NeighborIndex::build(&mask, params.neighbors);
        let values: Vec<Vec<f64>> = (0..measured.depth()).map(|z| measured.dense(z)).collect();
        let n = mask.grid().len();
        let recon = values
            .iter()
            .map(|plane| {
                (0..n)
                    .map(|u| {
                        if index.is_measured(u) {
                            plane[u]
                        } else {
                            idw_value(index.neighbors(u), plane, params.power)
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            params,
            mask,
            index,
            labels: measured.labels().to_vec(),
            values,
            recon,
        })
    }

    /// Measures `cells` against `truth` and refreshes the affected estimates.
    ///
    /// Returns every cell whose estimate may have changed (the revealed cells
    /// and the cells whose neighbour lists changed), sorted row-major.
    pub fn reveal(&mut self, cells: &[Cell], truth: &ChannelStack) -> Result<Vec<usize>> {
        truth.grid().ensure_same(self.mask.grid(), "reveal")?;
        if truth.depth() != self.values.len() {
            return Err(Error::invalid("truth depth differs from scan state"));
        }
        let grid = *self.mask.grid();
        let mut touched = Vec::new();
        for &cell in cells {
            grid.check(cell)?;
            let s = grid.index(cell);
            if self.index.is_measured(s) {
                continue;
            }
            touched.extend(self.index.insert(s));
            touched.push(s);
            for z in 0..self.values.len() {
                let v = truth.channel_slice(z)[s];
                self.values[z][s] = v;
                self.recon[z][s] = v;
            }
        }
        self.mask = self.mask.with_measured(cells.iter().copied())?;
        touched.sort_unstable();
        touched.dedup();
        for &u in &touched {
            if self.index.is_measured(u) {
                continue;
            }
            let neigh = self.index.neighbors(u);
            for z in 0..self.values.len() {
                self.recon[z][u] = idw_value(neigh, &self.values[z], self.params.power);
            }
        }
        Ok(touched)
    }

    pub fn params(&self) -> &IdwParams {
        &self.params
    }

    pub fn mask(&self) -> &MeasurementMask {
        &self.mask
    }

    pub fn grid(&self) -> &GridSpec {
        self.mask.grid()
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn depth(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Row-major `X̂` of channel `z`.
    pub fn recon_plane(&self, z: usize) -> &[f64] {
        &self.recon[z]
    }

    /// Row-major measured values of channel `z`, zero on T.
    pub fn value_plane(&self, z: usize) -> &[f64] {
        &self.values[z]
    }

    pub fn reconstruction(&self) -> Reconstruction {
        let grid = *self.mask.grid();
        let planes = self
            .recon
            .iter()
            .map(|p| Array2::from_shape_vec(grid.shape(), p.clone()).expect("plane length matches grid"))
            .collect();
        Reconstruction {
            stack: ChannelStack::new(grid, planes, self.labels.clone())
                .expect("reconstruction of valid measurements is a valid stack"),
            source_mask: self.mask.clone(),
        }
    }
}
