//! Estimated-RD regressors and the ERD maps they produce.

pub mod ls;
pub mod mlp;
pub mod unet;

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dirty_cells, feature_row};
use crate::grid::{GridSpec, MeasuredValues};
use crate::neighbors::NeighborIndex;
use crate::rd::{check_channels, RdSource};
use crate::reconstruct::{Reconstruction, ScanState};

pub use ls::{fit_ls, LsFit, LsModel};
pub use mlp::{fit_mlp, MlpConfig, MlpFit, MlpModel};
pub use unet::{Architecture, UNetModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Regressor {
    Ls(LsModel),
    Mlp(MlpModel),
    #[serde(skip)]
    Unet(UNetModel),
}

/// A regressor together with the channel selection it was trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErdModel {
    pub regressor: Regressor,
    pub channels: Vec<usize>,
    /// Ground-truth RD the model was trained against, if known.
    #[serde(default)]
    pub rd: Option<RdSource>,
}

impl ErdModel {
    pub fn new(regressor: Regressor, channels: Vec<usize>, rd: Option<RdSource>) -> Result<Self> {
        let model = Self {
            regressor,
            channels,
            rd,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn family(&self) -> &'static str {
        match self.regressor {
            Regressor::Ls(_) => "ls",
            Regressor::Mlp(_) => "mlp",
            Regressor::Unet(_) => "unet",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::ModelFormat("model has no channels".into()));
        }
        match &self.regressor {
            Regressor::Ls(m) => m.validate(),
            Regressor::Mlp(m) => m.validate(),
            Regressor::Unet(_) => Ok(()),
        }
    }

    /// Writes LS and MLP models as JSON.
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        if matches!(self.regressor, Regressor::Unet(_)) {
            return Err(Error::invalid("U-Net models use the binary weight format"));
        }
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    /// Errors unless `channels` is the model's own selection and fits `depth`.
    pub fn check_selection(&self, channels: &[usize], depth: usize) -> Result<()> {
        if channels != self.channels.as_slice() {
            return Err(Error::ChannelMismatch {
                requested: channels.to_vec(),
                expected: self.channels.clone(),
            });
        }
        check_channels(channels, depth)
    }
}

/// The per-channel network input: `[X̂ on T, X on S, 1 on S]`, zeros elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub planes: Array3<f64>,
}

impl ModelInput {
    fn from_planes(grid: &GridSpec, recon: &[f64], measured: &[bool]) -> Self {
        let (rows, cols) = grid.shape();
        let planes = Array3::from_shape_fn((3, rows, cols), |(p, r, c)| {
            let u = r * cols + c;
            match (p, measured[u]) {
                (0, false) => recon[u],
                (1, true) => recon[u],
                (2, true) => 1.0,
                _ => 0.0,
            }
        });
        Self { planes }
    }

    pub fn to_f32(&self) -> Array3<f32> {
        self.planes.mapv(|v| v as f32)
    }
}

pub fn model_input(recon: &Reconstruction, channel: usize) -> Result<ModelInput> {
    check_channels(&[channel], recon.stack().depth())?;
    Ok(ModelInput::from_planes(
        recon.grid(),
        recon.stack().channel_slice(channel),
        recon.source_mask().as_slice(),
    ))
}

/// Per-channel ERD planes `E_z` and their mean `Ē`, zero on S.
#[derive(Clone, Debug, PartialEq)]
pub struct ErdMap {
    channels: Vec<usize>,
    planes: Vec<Array2<f64>>,
    mean: Array2<f64>,
}

impl ErdMap {
    fn from_rows(grid: &GridSpec, channels: Vec<usize>, rows: &[Vec<f64>], mean: &[f64]) -> Self {
        let to = |v: &[f64]| Array2::from_shape_vec(grid.shape(), v.to_vec()).expect("plane length matches grid");
        Self {
            channels,
            planes: rows.iter().map(|r| to(r)).collect(),
            mean: to(mean),
        }
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn planes(&self) -> &[Array2<f64>] {
        &self.planes
    }

    /// Ē.
    pub fn mean(&self) -> &Array2<f64> {
        &self.mean
    }
}

#[inline]
fn cell_mean(planes: &[Vec<f64>], u: usize) -> f64 {
    let mut s = 0.0;
    for p in planes {
        s += p[u];
    }
    s / planes.len() as f64
}

/// Incrementally maintained ERD for a progressing scan.
///
/// Feature-based models refresh only cells whose features can change after
/// a reveal; the U-Net is re-run on every update.
pub(crate) struct ErdEngine<'a> {
    model: &'a ErdModel,
    planes: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl<'a> ErdEngine<'a> {
    pub(crate) fn new(model: &'a ErdModel, state: &ScanState) -> Result<Self> {
        model.check_selection(&model.channels, state.depth())?;
        let n = state.grid().len();
        let mut engine = Self {
            model,
            planes: vec![vec![0.0; n]; model.channels.len()],
            mean: vec![0.0; n],
        };
        engine.refresh_all(state)?;
        Ok(engine)
    }

    fn refresh_all(&mut self, state: &ScanState) -> Result<()> {
        let index = state.index();
        let cells: Vec<usize> = (0..state.grid().len()).filter(|&u| !index.is_measured(u)).collect();
        self.planes.iter_mut().for_each(|p| p.iter_mut().for_each(|v| *v = 0.0));
        self.refresh_cells(state, &cells)?;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        for &u in &cells {
            self.mean[u] = cell_mean(&self.planes, u);
        }
        Ok(())
    }

    fn refresh_cells(&mut self, state: &ScanState, cells: &[usize]) -> Result<()> {
        let index = state.index();
        let power = state.params().power;
        match &self.model.regressor {
            Regressor::Ls(m) => {
                for (plane, &z) in self.planes.iter_mut().zip(&self.model.channels) {
                    let recon = state.recon_plane(z);
                    for &u in cells {
                        plane[u] = m.predict(&feature_row(index, recon, u, power));
                    }
                }
            }
            Regressor::Mlp(m) => {
                let mut scratch = (Vec::with_capacity(64), Vec::with_capacity(64));
                for (plane, &z) in self.planes.iter_mut().zip(&self.model.channels) {
                    let recon = state.recon_plane(z);
                    for &u in cells {
                        plane[u] = m.predict_with(&feature_row(index, recon, u, power), &mut scratch);
                    }
                }
            }
            Regressor::Unet(net) => {
                let grid = state.grid();
                for (plane, &z) in self.planes.iter_mut().zip(&self.model.channels) {
                    let input = ModelInput::from_planes(grid, state.recon_plane(z), index.measured_flags());
                    let out = net.infer(&input.to_f32())?;
                    for (u, v) in out.iter().enumerate() {
                        plane[u] = if index.is_measured(u) { 0.0 } else { *v as f64 };
                    }
                }
            }
        }
        Ok(())
    }

    /// Brings the ERD up to date after `revealed` cells were measured and the
    /// estimates at `touched` changed.
    pub(crate) fn update(&mut self, state: &ScanState, touched: &[usize], revealed: &[usize]) -> Result<()> {
        if matches!(self.model.regressor, Regressor::Unet(_)) {
            return self.refresh_all(state);
        }
        for &s in revealed {
            for p in &mut self.planes {
                p[s] = 0.0;
            }
            self.mean[s] = 0.0;
        }
        let dirty = dirty_cells(state.index(), touched, revealed);
        self.refresh_cells(state, &dirty)?;
        for &u in &dirty {
            self.mean[u] = cell_mean(&self.planes, u);
        }
        Ok(())
    }

    pub(crate) fn mean(&self) -> &[f64] {
        &self.mean
    }

    #[cfg(test)]
    fn map(&self, grid: &GridSpec) -> ErdMap {
        ErdMap::from_rows(grid, self.model.channels.clone(), &self.planes, &self.mean)
    }
}

/// ERD of `model` for the given reconstruction; measured cells are zero.
pub fn erd_for(
    model: &ErdModel,
    recon: &Reconstruction,
    measured: &MeasuredValues,
    channels: &[usize],
) -> Result<ErdMap> {
    model.check_selection(channels, recon.stack().depth())?;
    if measured.mask() != recon.source_mask() {
        return Err(Error::GridMismatch(
            "measured values and reconstruction use different masks".into(),
        ));
    }
    let grid = *recon.grid();
    let mask = recon.source_mask();
    let n = grid.len();
    let mut rows = vec![vec![0.0; n]; channels.len()];
    let mut mean = vec![0.0; n];
    if mask.unmeasured_count() == 0 {
        return Ok(ErdMap::from_rows(&grid, channels.to_vec(), &rows, &mean));
    }
    let cells: Vec<usize> = (0..n).filter(|&u| !mask.as_slice()[u]).collect();
    match &model.regressor {
        Regressor::Unet(net) => {
            for (row, &z) in rows.iter_mut().zip(channels) {
                let out = net.infer(&model_input(recon, z)?.to_f32())?;
                for &u in &cells {
                    row[u] = out.as_slice().expect("standard layout")[u] as f64;
                }
            }
        }
        Regressor::Ls(_) | Regressor::Mlp(_) => {
            if mask.count() == 0 {
                return Err(Error::NoMeasurements);
            }
            let index = NeighborIndex::build(mask, 10);
            let mut scratch = (Vec::new(), Vec::new());
            for (row, &z) in rows.iter_mut().zip(channels) {
                let plane = recon.stack().channel_slice(z);
                for &u in &cells {
                    let f = feature_row(&index, plane, u, 2.0);
                    row[u] = match &model.regressor {
                        Regressor::Ls(m) => m.predict(&f),
                        Regressor::Mlp(m) => m.predict_with(&f, &mut scratch),
                        Regressor::Unet(_) => unreachable!(),
                    };
                }
            }
        }
    }
    for &u in &cells {
        mean[u] = cell_mean(&rows, u);
    }
    Ok(ErdMap::from_rows(&grid, channels.to_vec(), &rows, &mean))
}
