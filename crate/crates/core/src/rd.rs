//! Ground-truth reduction in distortion (RD).
//!
//! `exact_rd` measures, for every unmeasured cell `t`, how much the total
//! absolute reconstruction error drops when `t` is revealed and the sample
//! re-interpolated. `approx_rd` replaces the re-interpolation with a
//! Gaussian-weighted sum of the current error around `t`, with strength
//! `σ(t) = dist(t, S) / c`, evaluated over a static or σ-proportional window.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{apply_mask, Cell, ChannelStack, GridSpec, MeasuredValues, MeasurementMask};
use crate::neighbors::Neighbor;
use crate::reconstruct::{idw_weight, IdwParams, ScanState};

/// Region over which the Gaussian error sum is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WindowMode {
    /// `side x side` box centred on `t`.
    Static { side: usize },
    /// Box with per-axis radius `⌈multiple·σ(t) / pixel pitch⌉`.
    Dynamic { multiple: f64 },
}

impl WindowMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WindowMode::Static { side } if side < 3 || side % 2 == 0 => Err(Error::invalid(
                format!("static window side must be odd and >= 3, got {side}"),
            )),
            WindowMode::Dynamic { multiple } if !(multiple >= 1.0 && multiple.is_finite()) => Err(
                Error::invalid(format!("dynamic window multiple must be >= 1, got {multiple}")),
            ),
            _ => Ok(()),
        }
    }

    /// Half extents `(rows, cols)` of the window around a cell with strength `sigma`.
    fn radii(&self, grid: &GridSpec, sigma: f64) -> (usize, usize) {
        match *self {
            WindowMode::Static { side } => (side / 2, side / 2),
            WindowMode::Dynamic { multiple } => {
                let reach = multiple * sigma;
                (
                    (reach / grid.pixel_height_um()).ceil() as usize,
                    (reach / grid.pixel_width_um()).ceil() as usize,
                )
            }
        }
    }
}

impl fmt::Display for WindowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowMode::Static { side } => write!(f, "static:{side}"),
            WindowMode::Dynamic { multiple } => write!(f, "dyn:{multiple}"),
        }
    }
}

impl FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("window `{s}`: expected static:N or dyn:N")))?;
        let mode = match kind.trim() {
            "static" => WindowMode::Static {
                side: value
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("window `{s}`: bad side")))?,
            },
            "dyn" | "dynamic" => WindowMode::Dynamic {
                multiple: value
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("window `{s}`: bad multiple")))?,
            },
            _ => return Err(Error::invalid(format!("window `{s}`: unknown kind `{kind}`"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Parameters of the Gaussian RD approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdParams {
    pub c: f64,
    pub window: WindowMode,
    /// Selected channel indices, Z.
    pub channels: Vec<usize>,
}

impl RdParams {
    /// Multichannel default: `c = 8`, dynamic `3σ` window.
    pub fn multichannel(depth: usize) -> Self {
        Self {
            c: 8.0,
            window: WindowMode::Dynamic { multiple: 3.0 },
            channels: (0..depth).collect(),
        }
    }

    /// Single-channel baseline: `c = 4`, static `15x15` window.
    pub fn single_channel(channel: usize) -> Self {
        Self {
            c: 4.0,
            window: WindowMode::Static { side: 15 },
            channels: vec![channel],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid(format!("c must be positive, got {}", self.c)));
        }
        self.window.validate()?;
        if self.channels.is_empty() {
            return Err(Error::invalid("RD needs at least one channel"));
        }
        Ok(())
    }
}

pub(crate) fn check_channels(channels: &[usize], depth: usize) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::invalid("channel selection is empty"));
    }
    if let Some(z) = channels.iter().find(|z| **z >= depth) {
        return Err(Error::invalid(format!(
            "channel {z} out of range for {depth} channels"
        )));
    }
    Ok(())
}

/// Per-channel RD planes and their average, R̄.
#[derive(Clone, Debug, PartialEq)]
pub struct RdMap {
    channels: Vec<usize>,
    planes: Vec<Array2<f64>>,
    mean: Array2<f64>,
}

impl RdMap {
    pub(crate) fn from_rows(grid: &GridSpec, channels: Vec<usize>, rows: Vec<Vec<f64>>) -> Self {
        let planes: Vec<Array2<f64>> = rows
            .into_iter()
            .map(|p| Array2::from_shape_vec(grid.shape(), p).expect("plane length matches grid"))
            .collect();
        let mean = mean_plane(&planes);
        Self {
            channels,
            planes,
            mean,
        }
    }

    /// Builds a map from explicit planes; the average is recomputed.
    pub fn new(channels: Vec<usize>, planes: Vec<Array2<f64>>) -> Result<Self> {
        if planes.is_empty() || planes.len() != channels.len() {
            return Err(Error::invalid("RD map needs one plane per channel"));
        }
        if planes.iter().any(|p| p.dim() != planes[0].dim()) {
            return Err(Error::invalid("RD planes differ in shape"));
        }
        let mean = mean_plane(&planes);
        Ok(Self {
            channels,
            planes,
            mean,
        })
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn planes(&self) -> &[Array2<f64>] {
        &self.planes
    }

    pub fn plane(&self, i: usize) -> &Array2<f64> {
        &self.planes[i]
    }

    /// R̄.
    pub fn mean(&self) -> &Array2<f64> {
        &self.mean
    }
}

fn mean_plane(planes: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = Array2::<f64>::zeros(planes[0].dim());
    for p in planes {
        acc += p;
    }
    let d = planes.len() as f64;
    acc.mapv_into(|v| v / d)
}

/// Elementwise mean of the channel planes, R̄ = (1/d)·Σ R_z.
pub fn average_rd(map: &RdMap) -> Array2<f64> {
    mean_plane(&map.planes)
}

/// σ(t): distance from `t` to the nearest measured cell, divided by `c`.
pub fn sigma(t: Cell, mask: &MeasurementMask, c: f64) -> Result<f64> {
    let grid = mask.grid();
    grid.check(t)?;
    if mask.count() == 0 {
        return Err(Error::NoMeasurements);
    }
    let best = mask
        .measured_cells()
        .into_iter()
        .map(|s| grid.dist2(s, t))
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt() / c)
}

/// Unnormalised Gaussian sum of `error` around `t`:
/// `Σ_u error(u)·exp(-‖u − t‖² / (2σ²))` over the clipped window.
/// With `sigma == 0` the kernel collapses to the error at `t`.
pub fn gaussian_error_sum(
    error: &Array2<f64>,
    grid: &GridSpec,
    t: Cell,
    sigma: f64,
    window: WindowMode,
) -> Result<f64> {
    grid.check(t)?;
    if error.dim() != grid.shape() {
        return Err(Error::GridMismatch("error plane shape".into()));
    }
    window.validate()?;
    let plane = error.as_standard_layout();
    let slice = plane.as_slice().expect("standard layout");
    let mut out = [0.0];
    window_sum(grid, &[slice], grid.index(t), sigma, window, &mut out);
    Ok(out[0])
}

/// Accumulates the Gaussian window sum for every error plane into `out`.
fn window_sum(
    grid: &GridSpec,
    errors: &[&[f64]],
    t: usize,
    sigma: f64,
    window: WindowMode,
    out: &mut [f64],
) {
    if sigma == 0.0 {
        for (o, e) in out.iter_mut().zip(errors) {
            *o = e[t];
        }
        return;
    }
    let (tr, tc) = (t / grid.cols(), t % grid.cols());
    let (ry, rx) = window.radii(grid, sigma);
    let r0 = tr.saturating_sub(ry);
    let r1 = (tr + ry).min(grid.rows() - 1);
    let c0 = tc.saturating_sub(rx);
    let c1 = (tc + rx).min(grid.cols() - 1);
    let inv = 1.0 / (2.0 * sigma * sigma);
    out.iter_mut().for_each(|o| *o = 0.0);
    for r in r0..=r1 {
        for c in c0..=c1 {
            let w = (-grid.offset_dist2(r.abs_diff(tr), c.abs_diff(tc)) * inv).exp();
            let u = r * grid.cols() + c;
            for (o, e) in out.iter_mut().zip(errors) {
                *o += e[u] * w;
            }
        }
    }
}

fn error_planes(state: &ScanState, truth: &ChannelStack, channels: &[usize]) -> Vec<Vec<f64>> {
    channels
        .iter()
        .map(|&z| {
            truth
                .channel_slice(z)
                .iter()
                .zip(state.recon_plane(z))
                .map(|(x, xh)| (x - xh).abs())
                .collect()
        })
        .collect()
}

/// Approximate RD for the current scan state.
pub(crate) fn approx_rd_state(
    state: &ScanState,
    truth: &ChannelStack,
    params: &RdParams,
) -> Result<RdMap> {
    params.validate()?;
    check_channels(&params.channels, truth.depth())?;
    let grid = *state.grid();
    let errors = error_planes(state, truth, &params.channels);
    let err_refs: Vec<&[f64]> = errors.iter().map(|e| e.as_slice()).collect();
    let nch = params.channels.len();
    let mut rows = vec![vec![0.0; grid.len()]; nch];
    let mut acc = vec![0.0; nch];
    let index = state.index();
    for t in 0..grid.len() {
        if index.is_measured(t) {
            continue;
        }
        let sigma = index.neighbors(t)[0].dist2.sqrt() / params.c;
        window_sum(&grid, &err_refs, t, sigma, params.window, &mut acc);
        for (row, v) in rows.iter_mut().zip(&acc) {
            row[t] = *v;
        }
    }
    Ok(RdMap::from_rows(&grid, params.channels.clone(), rows))
}

/// Gaussian approximation of RD for every unmeasured cell of `measured`.
pub fn approx_rd(
    sample: &ChannelStack,
    measured: &MeasuredValues,
    params: &RdParams,
) -> Result<RdMap> {
    sample.grid().ensure_same(measured.grid(), "approx_rd")?;
    let state = ScanState::new(measured, IdwParams::default())?;
    approx_rd_state(&state, sample, params)
}

/// IDW estimate at `u` after additionally revealing `cand`.
/// Produces the weights in the order a fresh reconstruction would use.
#[inline]
fn merged_weights(neigh: &[Neighbor], cand: Neighbor, k: usize, power: f64, out: &mut Vec<(f64, usize)>) {
    out.clear();
    let mut inserted = false;
    for n in neigh {
        if out.len() == k {
            break;
        }
        if !inserted && cand.precedes(n) {
            out.push((idw_weight(cand.dist2, power), cand.index));
            inserted = true;
            if out.len() == k {
                break;
            }
        }
        out.push((idw_weight(n.dist2, power), n.index));
    }
    if !inserted && out.len() < k {
        out.push((idw_weight(cand.dist2, power), cand.index));
    }
}

/// Exact RD for the current scan state.
///
/// Only cells whose neighbour lists would admit `t` can change when `t` is
/// revealed, so each unmeasured `u` visits just the candidates closer than
/// its current farthest neighbour. Contributions are accumulated in
/// row-major order of `u`, matching [`exact_rd_naive`] bit for bit.
pub(crate) fn exact_rd_state(
    state: &ScanState,
    truth: &ChannelStack,
    channels: &[usize],
) -> Result<RdMap> {
    check_channels(channels, truth.depth())?;
    let grid = *state.grid();
    let n = grid.len();
    let index = state.index();
    let k = index.k();
    let power = state.params().power;
    let errors = error_planes(state, truth, channels);
    let truth_planes: Vec<&[f64]> = channels.iter().map(|&z| truth.channel_slice(z)).collect();
    let value_planes: Vec<&[f64]> = channels.iter().map(|&z| state.value_plane(z)).collect();
    let nch = channels.len();
    let mut rows = vec![vec![0.0; n]; nch];
    let measured = index.measured_flags();
    let mut weights = Vec::with_capacity(k + 1);

    let mut visit = |u: usize, t: usize, rows: &mut Vec<Vec<f64>>| {
        let cand = Neighbor {
            dist2: grid.dist2_index(u, t),
            index: t,
        };
        if !index.would_accept(u, &cand) {
            return;
        }
        merged_weights(index.neighbors(u), cand, k, power, &mut weights);
        for ch in 0..nch {
            let mut num = 0.0;
            let mut den = 0.0;
            for &(w, s) in weights.iter() {
                let v = if s == t { truth_planes[ch][t] } else { value_planes[ch][s] };
                num += w * v;
                den += w;
            }
            let updated = (truth_planes[ch][u] - num / den).abs();
            rows[ch][t] += errors[ch][u] - updated;
        }
    };

    for u in 0..n {
        if measured[u] {
            continue;
        }
        let neigh = index.neighbors(u);
        let full = neigh.len() == k;
        let (ur, uc) = (u / grid.cols(), u % grid.cols());
        let (r0, r1, c0, c1) = if full {
            let reach = neigh[k - 1].dist2.sqrt();
            let ry = (reach / grid.pixel_height_um()).floor() as usize + 1;
            let rx = (reach / grid.pixel_width_um()).floor() as usize + 1;
            (
                ur.saturating_sub(ry),
                (ur + ry).min(grid.rows() - 1),
                uc.saturating_sub(rx),
                (uc + rx).min(grid.cols() - 1),
            )
        } else {
            (0, grid.rows() - 1, 0, grid.cols() - 1)
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                let t = r * grid.cols() + c;
                if measured[t] {
                    continue;
                }
                if t == u {
                    // Revealing u makes its own estimate exact.
                    for ch in 0..nch {
                        rows[ch][u] += errors[ch][u] - 0.0;
                    }
                } else {
                    visit(u, t, &mut rows);
                }
            }
        }
    }
    Ok(RdMap::from_rows(&grid, channels.to_vec(), rows))
}

/// Exact RD over all channels of `sample`.
pub fn exact_rd(sample: &ChannelStack, measured: &MeasuredValues) -> Result<RdMap> {
    sample.grid().ensure_same(measured.grid(), "exact_rd")?;
    let channels: Vec<usize> = (0..sample.depth()).collect();
    let state = ScanState::new(measured, IdwParams::default())?;
    exact_rd_state(&state, sample, &channels)
}

/// Reference exact RD: a full re-reconstruction per candidate cell.
///
/// Quadratic in the grid size; intended for verification on small grids.
pub fn exact_rd_naive(sample: &ChannelStack, measured: &MeasuredValues) -> Result<RdMap> {
    sample.grid().ensure_same(measured.grid(), "exact_rd_naive")?;
    let grid = *sample.grid();
    let d = sample.depth();
    let mask = measured.mask();
    let base = ScanState::new(measured, IdwParams::default())?;
    let mut rows = vec![vec![0.0; grid.len()]; d];
    for t in mask.unmeasured_cells() {
        let next = mask.with_measured([t])?;
        let after = ScanState::new(&apply_mask(sample, &next)?, IdwParams::default())?;
        for (z, row) in rows.iter_mut().enumerate() {
            let x = sample.channel_slice(z);
            let before = base.recon_plane(z);
            let revealed = after.recon_plane(z);
            let mut total = 0.0;
            for u in 0..grid.len() {
                total += (x[u] - before[u]).abs() - (x[u] - revealed[u]).abs();
            }
            row[grid.index(t)] = total;
        }
    }
    Ok(RdMap::from_rows(&grid, (0..d).collect(), rows))
}

/// Where ground-truth RD comes from: the exact definition or the
/// Gaussian approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RdSource {
    Exact { channels: Vec<usize> },
    Approx(RdParams),
}

impl RdSource {
    pub fn channels(&self) -> &[usize] {
        match self {
            RdSource::Exact { channels } => channels,
            RdSource::Approx(p) => &p.channels,
        }
    }

    pub(crate) fn compute_state(&self, state: &ScanState, truth: &ChannelStack) -> Result<RdMap> {
        match self {
            RdSource::Exact { channels } => exact_rd_state(state, truth, channels),
            RdSource::Approx(params) => approx_rd_state(state, truth, params),
        }
    }

    /// RD of `truth` under `mask`, using default IDW settings.
    pub fn compute(&self, truth: &ChannelStack, mask: &MeasurementMask) -> Result<RdMap> {
        let measured = apply_mask(truth, mask)?;
        if mask.unmeasured_count() == 0 {
            let n = truth.grid().len();
            let rows = self.channels().iter().map(|_| vec![0.0; n]).collect();
            return Ok(RdMap::from_rows(truth.grid(), self.channels().to_vec(), rows));
        }
        let state = ScanState::new(&measured, IdwParams::default())?;
        self.compute_state(&state, truth)
    }
}

impl fmt::Display for RdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RdSource::Exact { .. } => write!(f, "exact"),
            RdSource::Approx(p) => write!(f, "approx(c={}, {})", p.c, p.window),
        }
    }
}
