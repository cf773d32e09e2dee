//! Channel extraction and row realignment for line-scanned samples, plus the
//! on-disk sample directory format.
//!
//! A sample directory holds `meta.json` and one `channel_<label>.f32` file per
//! channel (row-major little-endian `f32`, `rows·cols` values).

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ChannelStack, GridSpec};
use crate::io::{read_plane, write_plane};

pub const DEFAULT_PPM: f64 = 20.0;

/// An m/z window `[mz·(1 − Δ·10⁻⁶), mz·(1 + Δ·10⁻⁶)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MzWindow {
    pub center: f64,
    pub ppm: f64,
}

impl MzWindow {
    pub fn new(center: f64, ppm: f64) -> Result<Self> {
        if !(center > 0.0 && center.is_finite() && ppm >= 0.0 && ppm.is_finite()) {
            return Err(Error::invalid(format!("invalid m/z window {center} ± {ppm} ppm")));
        }
        Ok(Self { center, ppm })
    }

    pub fn bounds(&self) -> (f64, f64) {
        let d = self.ppm * 1e-6;
        (self.center * (1.0 - d), self.center * (1.0 + d))
    }

    pub fn contains(&self, mz: f64) -> bool {
        let (lo, hi) = self.bounds();
        mz >= lo && mz <= hi
    }
}

/// Sum of the intensities whose m/z falls inside the closed window.
pub fn integrate_window(spectrum: &[(f64, f64)], window: &MzWindow) -> f64 {
    spectrum
        .iter()
        .filter(|(mz, _)| window.contains(*mz))
        .map(|(_, i)| i)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub label: f64,
    #[serde(default = "default_ppm")]
    pub ppm: f64,
}

fn default_ppm() -> f64 {
    DEFAULT_PPM
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub name: String,
    pub width_mm: f64,
    pub height_mm: f64,
    pub scan_rate_um_per_s: f64,
    pub acq_rate_spectra_per_s: f64,
    pub rows: usize,
    pub cols: usize,
    pub channels: Vec<ChannelSpec>,
    /// Raw row indices excluded from the grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub defective_rows: Vec<usize>,
}

impl SampleMeta {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.width_mm,
            self.height_mm,
            self.scan_rate_um_per_s,
            self.acq_rate_spectra_per_s,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!(
                "sample {}: physical dimensions and rates must be positive",
                self.name
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::invalid(format!("sample {}: no channels", self.name)));
        }
        Ok(())
    }

    /// Grid with pixel pitch `width / cols` by `height / rows`.
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            self.rows,
            self.cols,
            self.width_mm * 1000.0 / self.cols as f64,
            self.height_mm * 1000.0 / self.rows as f64,
        )
    }

    pub fn labels(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.label).collect()
    }
}

/// Horizontal positions per row: FOV width over scan rate times acquisition
/// rate, rounded, at least 2.
pub fn target_columns(meta: &SampleMeta) -> usize {
    let n = (meta.width_mm * 1000.0 / meta.scan_rate_um_per_s * meta.acq_rate_spectra_per_s).round();
    (n as usize).max(2)
}

/// One acquired line: timestamps and per-spectrum channel intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub timestamps: Vec<f64>,
    /// `intensities[i][z]` belongs to `timestamps[i]`.
    pub intensities: Vec<Vec<f64>>,
}

impl RawRow {
    pub fn new(timestamps: Vec<f64>, intensities: Vec<Vec<f64>>) -> Result<Self> {
        if timestamps.is_empty() || timestamps.len() != intensities.len() {
            return Err(Error::invalid("row needs one intensity vector per timestamp"));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("row timestamps must be strictly increasing"));
        }
        let d = intensities[0].len();
        if d == 0 || intensities.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("every spectrum needs the same channel count"));
        }
        Ok(Self {
            timestamps,
            intensities,
        })
    }

    pub fn depth(&self) -> usize {
        self.intensities[0].len()
    }
}

/// Linear interpolation of each channel onto `n_cols` evenly spaced times
/// spanning the row. Returns `[channel][column]`.
pub fn realign_row(row: &RawRow, n_cols: usize) -> Result<Vec<Vec<f64>>> {
    if n_cols < 2 {
        return Err(Error::invalid("realignment needs at least 2 columns"));
    }
    let d = row.depth();
    let t = &row.timestamps;
    if t.len() == 1 {
        return Ok((0..d).map(|z| vec![row.intensities[0][z]; n_cols]).collect());
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let mut out = vec![vec![0.0; n_cols]; d];
    let mut seg = 0;
    for j in 0..n_cols {
        let tj = if j == n_cols - 1 {
            t1
        } else {
            t0 + (t1 - t0) * j as f64 / (n_cols - 1) as f64
        };
        while seg + 2 < t.len() && tj > t[seg + 1] {
            seg += 1;
        }
        let (ta, tb) = (t[seg], t[seg + 1]);
        let f = ((tj - ta) / (tb - ta)).clamp(0.0, 1.0);
        for (z, col) in out.iter_mut().enumerate() {
            let (a, b) = (row.intensities[seg][z], row.intensities[seg + 1][z]);
            col[j] = if f == 0.0 {
                a
            } else if f == 1.0 {
                b
            } else {
                a + (b - a) * f
            };
        }
    }
    Ok(out)
}

/// Assembles a stack from raw rows: drops defective rows, realigns the rest
/// to [`target_columns`] and derives the grid from the metadata.
pub fn assemble_rows(meta: &SampleMeta, rows: &[RawRow]) -> Result<ChannelStack> {
    meta.validate()?;
    let d = meta.channels.len();
    let kept: Vec<&RawRow> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| !meta.defective_rows.contains(i))
        .map(|(_, r)| r)
        .collect();
    if kept.len() < 2 {
        return Err(Error::invalid("fewer than 2 usable rows"));
    }
    if kept.iter().any(|r| r.depth() != d) {
        return Err(Error::invalid("row channel count differs from metadata"));
    }
    let cols = target_columns(meta);
    let lines: Vec<Vec<Vec<f64>>> = kept
        .par_iter()
        .map(|r| realign_row(r, cols))
        .collect::<Result<_>>()?;
    let n = kept.len();
    let planes = (0..d)
        .map(|z| Array2::from_shape_fn((n, cols), |(r, c)| lines[r][z][c].max(0.0)))
        .collect();
    let resolved = SampleMeta {
        rows: n,
        cols,
        ..meta.clone()
    };
    ChannelStack::new(resolved.grid()?, planes, meta.labels())
}

fn channel_file(label: f64) -> String {
    format!("channel_{label}.f32")
}

pub fn save_sample(dir: impl AsRef<Path>, meta: &SampleMeta, stack: &ChannelStack) -> Result<()> {
    let dir = dir.as_ref();
    if (meta.rows, meta.cols) != stack.grid().shape() || meta.channels.len() != stack.depth() {
        return Err(Error::GridMismatch("metadata does not describe the stack".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&path, e))?;
    for (spec, plane) in meta.channels.iter().zip(stack.channels()) {
        write_plane(dir.join(channel_file(spec.label)), plane)?;
    }
    Ok(())
}

pub fn load_sample(dir: impl AsRef<Path>) -> Result<(SampleMeta, ChannelStack)> {
    let dir = dir.as_ref();
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SampleMeta = serde_json::from_str(&text)?;
    meta.validate()?;
    let planes = meta
        .channels
        .iter()
        .map(|c| read_plane(dir.join(channel_file(c.label)), meta.rows, meta.cols))
        .collect::<Result<Vec<_>>>()?;
    let stack = ChannelStack::new(meta.grid()?, planes, meta.labels())?;
    Ok((meta, stack))
}

/// Sample directories directly under `root` (those holding `meta.json`),
/// sorted by path. `root` itself counts if it is a sample directory.
pub fn sample_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    if root.join("meta.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        warn!("no sample directories under {}", root.display());
    }
    Ok(dirs)
}
