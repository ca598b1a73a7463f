//! Uniform rectangular grids in one or two dimensions.
//!
//! Nodes are indexed row-major with the first axis fastest:
//! `index = i + j * (n_x + 1)`. Cells follow the same convention with
//! `n_x` cells per row. One-dimensional grids use only the first axis; the
//! second component of every [`Point`] is then zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the domain; the second component is unused (zero) in 1D.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
}

impl Grid {
    /// Builds a grid over the box `[lower, upper]` with `n` cells per axis.
    pub fn new(dim: usize, lower: &[f64], upper: &[f64], n: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if lower.len() != dim || upper.len() != dim || n.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and cell counts, got {}/{}/{}",
                lower.len(),
                upper.len(),
                n.len()
            )));
        }
        let mut grid = Grid { dim, lower: [0.0; 2], upper: [0.0; 2], n: [1; 2], h: [1.0; 2] };
        for a in 0..dim {
            if !(lower[a].is_finite() && upper[a].is_finite()) || upper[a] <= lower[a] {
                return Err(Error::InvalidGrid(format!("degenerate extent [{}, {}] on axis {a}", lower[a], upper[a])));
            }
            if n[a] < 2 {
                return Err(Error::InvalidGrid(format!("axis {a} needs at least 2 cells, got {}", n[a])));
            }
            grid.lower[a] = lower[a];
            grid.upper[a] = upper[a];
            grid.n[a] = n[a];
            grid.h[a] = (upper[a] - lower[a]) / n[a] as f64;
        }
        Ok(grid)
    }

    pub fn new_1d(lower: f64, upper: f64, n: usize) -> Result<Self> {
        Self::new(1, &[lower], &[upper], &[n])
    }

    pub fn new_2d(lower: [f64; 2], upper: [f64; 2], n: [usize; 2]) -> Result<Self> {
        Self::new(2, &lower, &upper, &n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    /// Cell count along `axis` (1 for the unused axis of a 1D grid).
    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    /// Largest spacing over the active axes.
    pub fn h_max(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).fold(0.0, f64::max)
    }

    pub fn h_min(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).fold(f64::INFINITY, f64::min)
    }

    /// Euclidean diameter of the domain box.
    pub fn diameter(&self) -> f64 {
        (0..self.dim).map(|a| (self.upper[a] - self.lower[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn nodes_along(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis] + 1
        } else {
            1
        }
    }

    pub fn cells_along(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n[axis]
        } else {
            1
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes_along(0) * self.nodes_along(1)
    }

    pub fn cell_count(&self) -> usize {
        self.cells_along(0) * self.cells_along(1)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h[a]).product()
    }

    /// Corners per cell: 2 in 1D, 4 in 2D.
    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        i + j * self.nodes_along(0)
    }

    pub fn node_ij(&self, index: usize) -> (usize, usize) {
        let nx = self.nodes_along(0);
        (index % nx, index / nx)
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        i + j * self.cells_along(0)
    }

    pub fn cell_ij(&self, index: usize) -> (usize, usize) {
        let nx = self.cells_along(0);
        (index % nx, index / nx)
    }

    /// Node coordinate `a + k h`, reproducible from the integer index.
    pub fn node_coord(&self, index: usize) -> Point {
        let (i, j) = self.node_ij(index);
        let mut x = [0.0; 2];
        x[0] = self.lower[0] + i as f64 * self.h[0];
        if self.dim == 2 {
            x[1] = self.lower[1] + j as f64 * self.h[1];
        }
        x
    }

    pub fn cell_center(&self, index: usize) -> Point {
        let (i, j) = self.cell_ij(index);
        let mut x = [0.0; 2];
        x[0] = self.lower[0] + (i as f64 + 0.5) * self.h[0];
        if self.dim == 2 {
            x[1] = self.lower[1] + (j as f64 + 0.5) * self.h[1];
        }
        x
    }

    pub fn is_boundary_node(&self, index: usize) -> bool {
        let (i, j) = self.node_ij(index);
        if i == 0 || i == self.n[0] {
            return true;
        }
        self.dim == 2 && (j == 0 || j == self.n[1])
    }

    /// Corner node indices of a cell; only the first
    /// [`corners_per_cell`](Self::corners_per_cell) entries are meaningful.
    /// 2D order: (i, j), (i+1, j), (i, j+1), (i+1, j+1).
    pub fn cell_corners(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(cell);
        let a = self.node_index(i, j);
        if self.dim == 1 {
            [a, a + 1, a, a + 1]
        } else {
            let b = self.node_index(i, j + 1);
            [a, a + 1, b, b + 1]
        }
    }

    /// Weights `w_k` such that the cell gradient is `sum_k w_k u_k` over the
    /// corners returned by [`cell_corners`](Self::cell_corners).
    pub fn gradient_weights(&self) -> [[f64; 2]; 4] {
        if self.dim == 1 {
            let s = 1.0 / self.h[0];
            [[-s, 0.0], [s, 0.0], [0.0, 0.0], [0.0, 0.0]]
        } else {
            let sx = 0.5 / self.h[0];
            let sy = 0.5 / self.h[1];
            [[-sx, -sy], [sx, -sy], [-sx, sy], [sx, sy]]
        }
    }

    /// Cells having `node` as a corner.
    pub fn cells_of_node(&self, node: usize) -> Vec<usize> {
        let (i, j) = self.node_ij(node);
        let mut out = Vec::with_capacity(4);
        let is = [i.checked_sub(1), (i < self.n[0]).then_some(i)];
        if self.dim == 1 {
            out.extend(is.into_iter().flatten());
            return out;
        }
        let js = [j.checked_sub(1), (j < self.n[1]).then_some(j)];
        for cj in js.into_iter().flatten() {
            for ci in is.into_iter().flatten() {
                out.push(self.cell_index(ci, cj));
            }
        }
        out
    }

    /// Distance from `x` to the boundary of the domain box (negative outside).
    pub fn distance_to_boundary(&self, x: &Point) -> f64 {
        (0..self.dim).map(|a| (x[a] - self.lower[a]).min(self.upper[a] - x[a])).fold(f64::INFINITY, f64::min)
    }

    /// Whether the closed ball `B_r(x)` lies in the closed domain box.
    pub fn contains_ball(&self, x: &Point, r: f64) -> bool {
        self.distance_to_boundary(x) >= r - 1e-12 * self.diameter()
    }

    /// Cell containing `x`, clamped to the grid.
    pub fn locate_cell(&self, x: &Point) -> usize {
        let mut ij = [0usize; 2];
        for a in 0..self.dim {
            let t = ((x[a] - self.lower[a]) / self.h[a]).floor();
            ij[a] = (t.max(0.0) as usize).min(self.n[a] - 1);
        }
        self.cell_index(ij[0], ij[1])
    }

    /// Cells whose centers lie within Euclidean distance `r` of `x`.
    pub fn cells_in_ball(&self, x: &Point, r: f64) -> Vec<usize> {
        self.indices_in_ball(x, r, true)
    }

    /// Nodes within Euclidean distance `r` of `x`.
    pub fn nodes_in_ball(&self, x: &Point, r: f64) -> Vec<usize> {
        self.indices_in_ball(x, r, false)
    }

    fn indices_in_ball(&self, x: &Point, r: f64, cells: bool) -> Vec<usize> {
        let shift = if cells { 0.5 } else { 0.0 };
        let mut range = [(0usize, 0usize); 2];
        for a in 0..2 {
            let count = if cells { self.cells_along(a) } else { self.nodes_along(a) };
            if a >= self.dim {
                range[a] = (0, 0);
                continue;
            }
            let lo = ((x[a] - r - self.lower[a]) / self.h[a] - shift).ceil().max(0.0);
            let hi = ((x[a] + r - self.lower[a]) / self.h[a] - shift).floor();
            if hi < 0.0 || lo as usize >= count {
                return Vec::new();
            }
            range[a] = (lo as usize, (hi as usize).min(count - 1));
        }
        let r2 = r * r;
        let mut out = Vec::new();
        for j in range[1].0..=range[1].1 {
            for i in range[0].0..=range[0].1 {
                let idx = if cells { self.cell_index(i, j) } else { self.node_index(i, j) };
                let c = if cells { self.cell_center(idx) } else { self.node_coord(idx) };
                if dist2(&c, x) <= r2 {
                    out.push(idx);
                }
            }
        }
        out
    }
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

pub(crate) fn dist(a: &Point, b: &Point) -> f64 {
    dist2(a, b).sqrt()
}

pub(crate) fn dot(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn norm(a: &[f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_nodes() {
        let g = Grid::new_1d(0.0, 1.0, 10).unwrap();
        assert_eq!(g.node_count(), 11);
        assert_eq!(g.cell_count(), 10);
        for k in 0..11 {
            assert_eq!(g.node_coord(k)[0], k as f64 * 0.1);
        }
    }

    #[test]
    fn two_dimensional_counts() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap();
        assert_eq!(g.node_count(), 25);
        assert_eq!(g.cell_count(), 16);
        assert_eq!(g.cell_corners(0), [0, 1, 5, 6]);
        assert_eq!(g.cells_of_node(6).len(), 4);
        assert_eq!(g.cells_of_node(0), vec![0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Grid::new(3, &[0.0; 3], &[1.0; 3], &[4; 3]), Err(Error::InvalidGrid(_))));
        assert!(Grid::new_1d(0.0, 1.0, 1).is_err());
        assert!(Grid::new_1d(1.0, 1.0, 4).is_err());
    }

    #[test]
    fn boundary_flags() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [3, 3]).unwrap();
        let interior: Vec<_> = (0..g.node_count()).filter(|&k| !g.is_boundary_node(k)).collect();
        assert_eq!(interior, vec![5, 6, 9, 10]);
    }

    #[test]
    fn ball_queries() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [10, 10]).unwrap();
        let cells = g.cells_in_ball(&[0.5, 0.5], 0.12);
        assert_eq!(cells.len(), 4);
        let nodes = g.nodes_in_ball(&[0.5, 0.5], 0.12);
        assert_eq!(nodes.len(), 5);
        assert!(g.contains_ball(&[0.5, 0.5], 0.5));
        assert!(!g.contains_ball(&[0.5, 0.5], 0.51));
    }
}
