//! Grid geometry, measurement masks and multichannel intensity stacks.
//!
//! Cells are addressed `(row, col)`, zero-based; every flattened ordering in
//! the crate is row-major. Distances are always computed in physical units
//! (micrometres) so that non-square pixels do not bias neighbourhoods.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A grid location.
///
/// The derived ordering is row-major, which is the tie-break order used
/// throughout the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

#[derive(Deserialize)]
struct GridSpecRepr {
    rows: usize,
    cols: usize,
    pixel_width_um: f64,
    pixel_height_um: f64,
}

/// Sampling grid with physical pixel size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr")]
pub struct GridSpec {
    rows: usize,
    cols: usize,
    pixel_width_um: f64,
    pixel_height_um: f64,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        GridSpec::new(r.rows, r.cols, r.pixel_width_um, r.pixel_height_um)
    }
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, pixel_width_um: f64, pixel_height_um: f64) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {rows}x{cols}"
            )));
        }
        if !(pixel_width_um.is_finite() && pixel_width_um > 0.0)
            || !(pixel_height_um.is_finite() && pixel_height_um > 0.0)
        {
            return Err(Error::invalid(format!(
                "pixel dimensions must be positive, got {pixel_width_um}x{pixel_height_um} um"
            )));
        }
        Ok(Self {
            rows,
            cols,
            pixel_width_um,
            pixel_height_um,
        })
    }

    /// Grid with 1 um square pixels.
    pub fn unit(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, 1.0, 1.0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixel_width_um(&self) -> f64 {
        self.pixel_width_um
    }

    pub fn pixel_height_um(&self) -> f64 {
        self.pixel_height_um
    }

    /// Number of cells, |Ω|.
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub(crate) fn check(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                row: cell.row,
                col: cell.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    /// Row-major flat index.
    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    #[inline]
    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    /// Physical coordinate `(y, x)` of a cell centre in micrometres.
    pub fn physical(&self, cell: Cell) -> (f64, f64) {
        (
            cell.row as f64 * self.pixel_height_um,
            cell.col as f64 * self.pixel_width_um,
        )
    }

    /// Squared physical length of a `(row, col)` cell offset.
    ///
    /// Every distance comparison in the crate goes through this function so
    /// that equal offsets always produce bit-identical distances.
    #[inline]
    pub fn offset_dist2(&self, drow: usize, dcol: usize) -> f64 {
        let dy = drow as f64 * self.pixel_height_um;
        let dx = dcol as f64 * self.pixel_width_um;
        dy * dy + dx * dx
    }

    #[inline]
    pub fn dist2(&self, a: Cell, b: Cell) -> f64 {
        self.offset_dist2(a.row.abs_diff(b.row), a.col.abs_diff(b.col))
    }

    #[inline]
    pub(crate) fn dist2_index(&self, a: usize, b: usize) -> f64 {
        let (ar, ac) = (a / self.cols, a % self.cols);
        let (br, bc) = (b / self.cols, b % self.cols);
        self.offset_dist2(ar.abs_diff(br), ac.abs_diff(bc))
    }

    /// Returns a copy with both pixel dimensions multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.pixel_width_um * factor,
            self.pixel_height_um * factor,
        )
    }

    pub(crate) fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} @ {}x{} um vs {}x{} @ {}x{} um",
                self.rows,
                self.cols,
                self.pixel_width_um,
                self.pixel_height_um,
                other.rows,
                other.cols,
                other.pixel_width_um,
                other.pixel_height_um
            )))
        }
    }
}

/// Euclidean distance between two cells in physical units.
pub fn physical_distance(a: Cell, b: Cell, grid: &GridSpec) -> Result<f64> {
    grid.check(a)?;
    grid.check(b)?;
    Ok(grid.dist2(a, b).sqrt())
}

/// A stack of `d` co-registered intensity planes, one per m/z channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    grid: GridSpec,
    channels: Vec<Array2<f64>>,
    labels: Vec<f64>,
}

impl ChannelStack {
    pub fn new(grid: GridSpec, channels: Vec<Array2<f64>>, labels: Vec<f64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("a channel stack needs at least one channel"));
        }
        if labels.len() != channels.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} channels",
                labels.len(),
                channels.len()
            )));
        }
        if labels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("channel labels must be strictly increasing"));
        }
        let channels = channels
            .into_iter()
            .enumerate()
            .map(|(z, plane)| {
                if plane.dim() != grid.shape() {
                    return Err(Error::GridMismatch(format!(
                        "channel {z} has shape {:?}, grid is {:?}",
                        plane.dim(),
                        grid.shape()
                    )));
                }
                if let Some(v) = plane.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::invalid(format!(
                        "channel {z} contains an invalid intensity {v}"
                    )));
                }
                Ok(plane.as_standard_layout().into_owned())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            channels,
            labels,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Number of channels, `d`.
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Array2<f64>] {
        &self.channels
    }

    pub fn channel(&self, z: usize) -> &Array2<f64> {
        &self.channels[z]
    }

    /// Row-major view of one channel.
    pub fn channel_slice(&self, z: usize) -> &[f64] {
        self.channels[z]
            .as_slice()
            .expect("planes are stored in standard layout")
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn value(&self, z: usize, cell: Cell) -> f64 {
        self.channels[z][[cell.row, cell.col]]
    }

    /// Stack restricted to the given channel indices.
    pub fn select(&self, channels: &[usize]) -> Result<Self> {
        let mut planes = Vec::with_capacity(channels.len());
        let mut labels = Vec::with_capacity(channels.len());
        for &z in channels {
            if z >= self.depth() {
                return Err(Error::invalid(format!(
                    "channel {z} out of range for {} channels",
                    self.depth()
                )));
            }
            planes.push(self.channels[z].clone());
            labels.push(self.labels[z]);
        }
        Self::new(self.grid, planes, labels)
    }

    /// Same intensities on a differently scaled grid with identical shape.
    pub fn with_grid(&self, grid: GridSpec) -> Result<Self> {
        Self::new(grid, self.channels.clone(), self.labels.clone())
    }
}

/// Partition of the grid into measured (S) and unmeasured (T) cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeasurementMask {
    grid: GridSpec,
    measured: Array2<bool>,
    count: usize,
}

impl Eq for GridSpec {}

impl MeasurementMask {
    pub fn new(grid: GridSpec, measured: Array2<bool>) -> Result<Self> {
        if measured.dim() != grid.shape() {
            return Err(Error::GridMismatch(format!(
                "mask shape {:?} does not match grid {:?}",
                measured.dim(),
                grid.shape()
            )));
        }
        let measured = measured.as_standard_layout().into_owned();
        let count = measured.iter().filter(|m| **m).count();
        Ok(Self {
            grid,
            measured,
            count,
        })
    }

    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            measured: Array2::from_elem(grid.shape(), false),
            count: 0,
        }
    }

    pub fn full(grid: GridSpec) -> Self {
        Self {
            grid,
            measured: Array2::from_elem(grid.shape(), true),
            count: grid.len(),
        }
    }

    pub fn from_cells<I>(grid: GridSpec, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = Cell>,
    {
        Self::empty(grid).with_measured(cells)
    }

    /// New mask with the given cells additionally measured.
    pub fn with_measured<I>(&self, cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = Cell>,
    {
        let mut next = self.clone();
        for cell in cells {
            self.grid.check(cell)?;
            let slot = &mut next.measured[[cell.row, cell.col]];
            if !*slot {
                *slot = true;
                next.count += 1;
            }
        }
        Ok(next)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.measured
    }

    pub(crate) fn as_slice(&self) -> &[bool] {
        self.measured
            .as_slice()
            .expect("masks are stored in standard layout")
    }

    /// Measured count, `k = |S|`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Unmeasured count, `q = |T|`.
    pub fn unmeasured_count(&self) -> usize {
        self.grid.len() - self.count
    }

    /// Measured fraction of the field of view in `[0, 1]`.
    pub fn fraction(&self) -> f64 {
        self.count as f64 / self.grid.len() as f64
    }

    pub fn is_measured(&self, cell: Cell) -> bool {
        self.measured[[cell.row, cell.col]]
    }

    /// S in row-major order.
    pub fn measured_cells(&self) -> Vec<Cell> {
        self.cells_where(true)
    }

    /// T in row-major order.
    pub fn unmeasured_cells(&self) -> Vec<Cell> {
        self.cells_where(false)
    }

    fn cells_where(&self, state: bool) -> Vec<Cell> {
        self.measured
            .indexed_iter()
            .filter(|(_, m)| **m == state)
            .map(|((r, c), _)| Cell::new(r, c))
            .collect()
    }

    /// Whether any cell on `row` is measured.
    pub fn row_has_measurement(&self, row: usize) -> bool {
        self.measured.row(row).iter().any(|m| *m)
    }
}

/// Ground-truth intensities revealed at the measured cells, `X^(S)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredValues {
    mask: MeasurementMask,
    labels: Vec<f64>,
    cells: Vec<Cell>,
    values: Vec<Vec<f64>>,
}

impl MeasuredValues {
    pub fn mask(&self) -> &MeasurementMask {
        &self.mask
    }

    pub fn grid(&self) -> &GridSpec {
        self.mask.grid()
    }

    pub fn depth(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Measured cells in row-major order.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Values of channel `z`, aligned with [`cells`](Self::cells).
    pub fn channel_values(&self, z: usize) -> &[f64] {
        &self.values[z]
    }

    pub fn get(&self, z: usize, cell: Cell) -> Option<f64> {
        self.cells
            .binary_search(&cell)
            .ok()
            .map(|i| self.values[z][i])
    }

    /// Row-major plane holding the measured values and zero elsewhere.
    pub fn dense(&self, z: usize) -> Vec<f64> {
        let grid = self.grid();
        let mut plane = vec![0.0; grid.len()];
        for (cell, v) in self.cells.iter().zip(&self.values[z]) {
            plane[grid.index(*cell)] = *v;
        }
        plane
    }
}

/// Reveals the ground truth at every measured cell of `mask`.
pub fn apply_mask(sample: &ChannelStack, mask: &MeasurementMask) -> Result<MeasuredValues> {
    sample.grid().ensure_same(mask.grid(), "apply_mask")?;
    let cells = mask.measured_cells();
    let values = sample
        .channels()
        .iter()
        .map(|plane| cells.iter().map(|c| plane[[c.row, c.col]]).collect())
        .collect();
    Ok(MeasuredValues {
        mask: mask.clone(),
        labels: sample.labels().to_vec(),
        cells,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn stack3() -> ChannelStack {
        let grid = GridSpec::unit(3, 3).unwrap();
        let a = Array2::from_shape_fn((3, 3), |(r, c)| (r * 3 + c) as f64);
        let b = a.mapv(|v| v * 2.0);
        ChannelStack::new(grid, vec![a, b], vec![100.0, 200.0]).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_shapes() {
        assert!(GridSpec::new(1, 5, 1.0, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 0.0, 1.0).is_err());
        assert!(GridSpec::new(5, 5, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn full_mask_reveals_everything() {
        let s = stack3();
        let mv = apply_mask(&s, &MeasurementMask::full(*s.grid())).unwrap();
        assert_eq!(mv.cells().len(), 9);
        for z in 0..2 {
            assert_eq!(mv.dense(z).as_slice(), s.channel_slice(z));
        }
    }

    #[test]
    fn empty_mask_reveals_nothing() {
        let s = stack3();
        let mv = apply_mask(&s, &MeasurementMask::empty(*s.grid())).unwrap();
        assert_eq!(mv.mask().count(), 0);
        assert!(mv.cells().is_empty());
        assert!(mv.channel_values(0).is_empty());
    }

    #[test]
    fn singleton_mask() {
        let s = stack3();
        let mask = MeasurementMask::from_cells(*s.grid(), [Cell::new(1, 1)]).unwrap();
        let mv = apply_mask(&s, &mask).unwrap();
        assert_eq!(mv.channel_values(0), &[4.0]);
        assert_eq!(mv.channel_values(1), &[8.0]);
        assert_eq!(mv.get(1, Cell::new(1, 1)), Some(8.0));
        assert_eq!(mv.get(1, Cell::new(0, 1)), None);
    }

    #[test]
    fn apply_mask_rejects_grid_mismatch() {
        let s = stack3();
        let other = GridSpec::new(3, 3, 2.0, 1.0).unwrap();
        assert!(matches!(
            apply_mask(&s, &MeasurementMask::empty(other)),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn stack_validation() {
        let grid = GridSpec::unit(2, 2).unwrap();
        let p = array![[0.0, 1.0], [2.0, 3.0]];
        assert!(ChannelStack::new(grid, vec![], vec![]).is_err());
        assert!(ChannelStack::new(grid, vec![p.clone(), p.clone()], vec![2.0, 1.0]).is_err());
        assert!(ChannelStack::new(grid, vec![p.mapv(|v| v - 1.0)], vec![1.0]).is_err());
        assert!(ChannelStack::new(grid, vec![p], vec![1.0]).is_ok());
    }

    #[test]
    fn distance_examples() {
        let g = GridSpec::new(4, 4, 15.0, 10.0).unwrap();
        let a = Cell::new(0, 0);
        assert_eq!(physical_distance(a, a, &g).unwrap(), 0.0);
        assert_eq!(physical_distance(a, Cell::new(0, 1), &g).unwrap(), 15.0);
        assert_abs_diff_eq!(
            physical_distance(a, Cell::new(1, 1), &g).unwrap(),
            (15.0f64 * 15.0 + 10.0 * 10.0).sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            physical_distance(a, Cell::new(1, 1), &g).unwrap(),
            18.027756377319946,
            epsilon = 1e-12
        );
        assert!(matches!(
            physical_distance(a, Cell::new(4, 0), &g),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn grid_serde_validates() {
        let ok: GridSpec = serde_json::from_str(
            r#"{"rows":3,"cols":4,"pixel_width_um":15.0,"pixel_height_um":10.0}"#,
        )
        .unwrap();
        assert_eq!(ok.len(), 12);
        let bad = serde_json::from_str::<GridSpec>(
            r#"{"rows":1,"cols":4,"pixel_width_um":15.0,"pixel_height_um":10.0}"#,
        );
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn mask_partitions_grid(rows in 2usize..12, cols in 2usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let grid = GridSpec::unit(rows, cols).unwrap();
            let arr = Array2::from_shape_fn((rows, cols), |(r, c)| bits[r * 12 + c]);
            let mask = MeasurementMask::new(grid, arr).unwrap();
            let s = mask.measured_cells();
            let t = mask.unmeasured_cells();
            prop_assert_eq!(s.len() + t.len(), grid.len());
            prop_assert_eq!(s.len(), mask.count());
            prop_assert_eq!(t.len(), mask.unmeasured_count());
            prop_assert!(s.iter().all(|c| !t.contains(c)));
        }

        #[test]
        fn distance_is_a_metric(
            w in 0.5f64..40.0, h in 0.5f64..40.0,
            pts in proptest::collection::vec((0usize..9, 0usize..9), 3)
        ) {
            let g = GridSpec::new(9, 9, w, h).unwrap();
            let [a, b, c] = [Cell::from(pts[0]), Cell::from(pts[1]), Cell::from(pts[2])];
            let ab = physical_distance(a, b, &g).unwrap();
            let ba = physical_distance(b, a, &g).unwrap();
            let bc = physical_distance(b, c, &g).unwrap();
            let ac = physical_distance(a, c, &g).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
