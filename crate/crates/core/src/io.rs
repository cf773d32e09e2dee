//! Plane and mask files: raw little-endian `f32` planes (row-major) and
//! binary P5 PGM masks (0 / 255).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MeasurementMask};
use crate::rd::RdMap;

pub fn read_f32(path: impl AsRef<Path>, expected: usize) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * expected {
        return Err(Error::invalid(format!(
            "{}: expected {expected} f32 values, found {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_f32(path: impl AsRef<Path>, values: impl IntoIterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_plane(path: impl AsRef<Path>, plane: &Array2<f64>) -> Result<()> {
    write_f32(path, plane.iter().map(|v| *v as f32))
}

pub fn read_plane(path: impl AsRef<Path>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let values = read_f32(path, rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), values.into_iter().map(f64::from).collect())
        .expect("length checked"))
}

pub fn write_pgm(path: impl AsRef<Path>, mask: &MeasurementMask) -> Result<()> {
    let (rows, cols) = mask.grid().shape();
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(mask.as_array().iter().map(|m| if *m { 255u8 } else { 0 }));
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads a P5 mask; any non-zero pixel counts as measured.
pub fn read_pgm(path: impl AsRef<Path>, grid: GridSpec) -> Result<MeasurementMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = || Error::invalid(format!("{}: malformed P5 image", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(bad());
    }
    let (cols, rows) = (num(&fields[1])?, num(&fields[2])?);
    if (rows, cols) != grid.shape() {
        return Err(Error::GridMismatch(format!(
            "{}: mask is {rows}x{cols}, grid is {}x{}",
            path.display(),
            grid.rows(),
            grid.cols()
        )));
    }
    let data = bytes.get(pos..pos + rows * cols).ok_or_else(bad)?;
    let arr = Array2::from_shape_vec((rows, cols), data.iter().map(|b| *b != 0).collect())
        .expect("length checked");
    MeasurementMask::new(grid, arr)
}

#[derive(Serialize)]
struct RdSidecar<'a, P: Serialize> {
    rows: usize,
    cols: usize,
    channels: &'a [usize],
    files: Vec<String>,
    mean: String,
    params: &'a P,
}

/// Writes `<stem>_z<channel>.f32` per plane, `<stem>_mean.f32`, and a
/// `<stem>.json` sidecar recording the parameters.
pub fn write_rd_map<P: Serialize>(dir: impl AsRef<Path>, stem: &str, map: &RdMap, params: &P) -> Result<()> {
    let dir = dir.as_ref();
    let (rows, cols) = map.mean().dim();
    let mut files = Vec::new();
    for (z, plane) in map.channels().iter().zip(map.planes()) {
        let name = format!("{stem}_z{z}.f32");
        write_plane(dir.join(&name), plane)?;
        files.push(name);
    }
    let mean = format!("{stem}_mean.f32");
    write_plane(dir.join(&mean), map.mean())?;
    let sidecar = RdSidecar {
        rows,
        cols,
        channels: map.channels(),
        files,
        mean,
        params,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
}
