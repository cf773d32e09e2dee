//! Exact k-nearest-measured-neighbour lists for every unmeasured cell.
//!
//! Neighbours are ordered by `(squared physical distance, row-major index)`,
//! which makes the lists unique and the IDW accumulation order fixed. The
//! index can be built from scratch or updated one revealed cell at a time;
//! both paths produce identical lists.

use crate::grid::{GridSpec, MeasurementMask};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub dist2: f64,
    pub index: usize,
}

impl Neighbor {
    #[inline]
    pub fn precedes(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

#[derive(Clone, Debug)]
pub struct NeighborIndex {
    grid: GridSpec,
    k: usize,
    measured: Vec<bool>,
    measured_count: usize,
    lists: Vec<Neighbor>,
    lens: Vec<usize>,
}

impl NeighborIndex {
    /// Builds the lists for every unmeasured cell of `mask`, keeping the `k`
    /// closest measured cells.
    pub fn build(mask: &MeasurementMask, k: usize) -> Self {
        assert!(k >= 1, "neighbour count must be positive");
        let grid = *mask.grid();
        let n = grid.len();
        let measured = mask.as_slice().to_vec();
        let measured_idx: Vec<usize> = (0..n).filter(|&i| measured[i]).collect();
        let mut index = Self {
            grid,
            k,
            measured,
            measured_count: measured_idx.len(),
            lists: vec![
                Neighbor {
                    dist2: f64::INFINITY,
                    index: usize::MAX
                };
                n * k
            ],
            lens: vec![0; n],
        };
        if measured_idx.is_empty() {
            return index;
        }

        // Brute force costs |S| per cell; a ring search costs roughly the
        // area holding k measured cells. Pick whichever is cheaper.
        let km = measured_idx.len() as f64;
        let brute = km * km <= 1.3 * k as f64 * n as f64;
        for u in 0..n {
            if index.measured[u] {
                continue;
            }
            if brute {
                for &s in &measured_idx {
                    let cand = Neighbor {
                        dist2: grid.dist2_index(u, s),
                        index: s,
                    };
                    index.offer(u, cand);
                }
            } else {
                index.ring_search(u);
            }
        }
        index
    }

    fn ring_search(&mut self, u: usize) {
        let grid = self.grid;
        let (rows, cols) = (grid.rows() as isize, grid.cols() as isize);
        let (ur, uc) = ((u / grid.cols()) as isize, (u % grid.cols()) as isize);
        let max_r = rows.max(cols);
        for r in 0..=max_r {
            let r0 = ur - r;
            let r1 = ur + r;
            let c0 = uc - r;
            let c1 = uc + r;
            for row in r0.max(0)..=r1.min(rows - 1) {
                let on_edge_row = row == r0 || row == r1;
                if on_edge_row {
                    for col in c0.max(0)..=c1.min(cols - 1) {
                        self.consider(u, row as usize, col as usize);
                    }
                } else {
                    if c0 >= 0 {
                        self.consider(u, row as usize, c0 as usize);
                    }
                    if c1 < cols && c1 != c0 {
                        self.consider(u, row as usize, c1 as usize);
                    }
                }
            }
            if self.lens[u] == self.k {
                let next = (r + 1) as usize;
                let bound = grid.offset_dist2(next, 0).min(grid.offset_dist2(0, next));
                if bound > self.worst(u).dist2 {
                    break;
                }
            }
        }
    }

    #[inline]
    fn consider(&mut self, u: usize, row: usize, col: usize) {
        let s = row * self.grid.cols() + col;
        if self.measured[s] {
            let cand = Neighbor {
                dist2: self.grid.dist2_index(u, s),
                index: s,
            };
            self.offer(u, cand);
        }
    }

    #[inline]
    fn worst(&self, u: usize) -> Neighbor {
        self.lists[u * self.k + self.lens[u] - 1]
    }

    /// Inserts `cand` into the sorted list of `u` if it belongs there.
    /// Returns whether the list changed.
    #[inline]
    fn offer(&mut self, u: usize, cand: Neighbor) -> bool {
        let k = self.k;
        let len = self.lens[u];
        let list = &mut self.lists[u * k..u * k + k];
        if len == k && !cand.precedes(&list[k - 1]) {
            return false;
        }
        let mut pos = len.min(k - 1);
        // Shift larger entries right.
        while pos > 0 && cand.precedes(&list[pos - 1]) {
            list[pos] = list[pos - 1];
            pos -= 1;
        }
        list[pos] = cand;
        if len < k {
            self.lens[u] = len + 1;
        }
        true
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn measured_count(&self) -> usize {
        self.measured_count
    }

    pub fn is_measured(&self, index: usize) -> bool {
        self.measured[index]
    }

    pub(crate) fn measured_flags(&self) -> &[bool] {
        &self.measured
    }

    /// Sorted neighbours of cell `index`; empty for measured cells.
    #[inline]
    pub fn neighbors(&self, index: usize) -> &[Neighbor] {
        &self.lists[index * self.k..index * self.k + self.lens[index]]
    }

    /// Whether revealing `cand` would change the neighbour list of `u`.
    #[inline]
    pub fn would_accept(&self, u: usize, cand: &Neighbor) -> bool {
        self.lens[u] < self.k || cand.precedes(&self.worst(u))
    }

    /// Marks `s` as measured and updates every list it enters.
    ///
    /// Returns the unmeasured cells whose lists changed, in row-major order.
    pub fn insert(&mut self, s: usize) -> Vec<usize> {
        if self.measured[s] {
            return Vec::new();
        }
        self.measured[s] = true;
        self.measured_count += 1;
        self.lens[s] = 0;
        let mut changed = Vec::new();
        for u in 0..self.grid.len() {
            if self.measured[u] {
                continue;
            }
            let cand = Neighbor {
                dist2: self.grid.dist2_index(u, s),
                index: s,
            };
            if self.offer(u, cand) {
                changed.push(u);
            }
        }
        changed
    }
}
