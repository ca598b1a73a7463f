//! Scalar fields on a [`Grid`] and the problem data built from them: the
//! exponent `p(x)`, the volume coefficient `lambda(x)`, the free-boundary
//! gradient value `lambda*(x)` and the Dirichlet data `phi0`.
//!
//! `u` and `phi0` live at nodes; `p`, `lambda` and `lambda*` live at cell
//! centers so every cell carries one exponent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Node,
    Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    location: Location,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wraps `values`; fails on a length mismatch or a non-finite entry.
    pub fn from_values(grid: Grid, location: Location, values: Vec<f64>) -> Result<Self> {
        let expected = match location {
            Location::Node => grid.node_count(),
            Location::Cell => grid.cell_count(),
        };
        if values.len() != expected {
            return Err(Error::InvalidArgument(format!("field has {} values, grid needs {expected}", values.len())));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(ScalarField { grid, location, values })
    }

    pub fn constant(grid: Grid, location: Location, value: f64) -> Result<Self> {
        let len = match location {
            Location::Node => grid.node_count(),
            Location::Cell => grid.cell_count(),
        };
        Self::from_values(grid, location, vec![value; len])
    }

    /// Samples `f` at node coordinates or cell centers. The closure receives
    /// a slice of length `grid.dim()`.
    pub fn sample<F>(grid: Grid, location: Location, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> f64,
    {
        let dim = grid.dim();
        let values = match location {
            Location::Node => (0..grid.node_count()).map(|k| f(&grid.node_coord(k)[..dim])).collect(),
            Location::Cell => (0..grid.cell_count()).map(|k| f(&grid.cell_center(k)[..dim])).collect(),
        };
        Self::from_values(grid, location, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn location(&self) -> Location {
        self.location
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Coordinate of entry `index` (node coordinate or cell center).
    pub fn coord(&self, index: usize) -> Point {
        match self.location {
            Location::Node => self.grid.node_coord(index),
            Location::Cell => self.grid.cell_center(index),
        }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::from_values(self.grid, self.location, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        self.map(|v| c * v)
    }

    pub fn same_support(&self, other: &ScalarField) -> bool {
        self.grid == other.grid && self.location == other.location
    }

    /// Cell field of corner averages; a cell field is returned unchanged.
    pub fn to_cells(&self) -> ScalarField {
        match self.location {
            Location::Cell => self.clone(),
            Location::Node => ScalarField {
                grid: self.grid,
                location: Location::Cell,
                values: cell_average(&self.grid, &self.values),
            },
        }
    }

    /// Multilinear interpolation at an arbitrary point, clamped to the grid.
    pub fn interpolate(&self, x: &Point) -> f64 {
        match self.location {
            Location::Node => interpolate_lattice(&self.grid, &self.values, x, false),
            Location::Cell => interpolate_lattice(&self.grid, &self.values, x, true),
        }
    }
}

/// Corner average of a node vector, one value per cell.
pub fn cell_average(grid: &Grid, nodes: &[f64]) -> Vec<f64> {
    let nc = grid.corners_per_cell();
    let inv = 1.0 / nc as f64;
    (0..grid.cell_count())
        .map(|c| {
            let corners = grid.cell_corners(c);
            corners[..nc].iter().map(|&k| nodes[k]).sum::<f64>() * inv
        })
        .collect()
}

/// Per-cell gradient of a node vector: forward difference in 1D, averaged
/// edge differences of the four corners in 2D.
pub fn gradient_of(grid: &Grid, nodes: &[f64]) -> Vec<[f64; 2]> {
    let w = grid.gradient_weights();
    let nc = grid.corners_per_cell();
    (0..grid.cell_count())
        .map(|c| {
            let corners = grid.cell_corners(c);
            let mut g = [0.0; 2];
            for k in 0..nc {
                let v = nodes[corners[k]];
                g[0] += w[k][0] * v;
                g[1] += w[k][1] * v;
            }
            g
        })
        .collect()
}

/// Cell gradients of a node-centered field.
pub fn cell_gradient(u: &ScalarField) -> Result<Vec<[f64; 2]>> {
    if u.location() != Location::Node {
        return Err(Error::InvalidArgument("cell_gradient needs a node-centered field".into()));
    }
    Ok(gradient_of(u.grid(), u.values()))
}

/// Interpolates a lattice (nodes, or cell centers when `cells`) at `x`,
/// clamping to the outermost lattice points.
pub(crate) fn interpolate_lattice(grid: &Grid, values: &[f64], x: &Point, cells: bool) -> f64 {
    let shift = if cells { 0.5 } else { 0.0 };
    let mut base = [0usize; 2];
    let mut frac = [0.0; 2];
    let mut count = [1usize; 2];
    for a in 0..grid.dim() {
        count[a] = if cells { grid.cells_along(a) } else { grid.nodes_along(a) };
        let t = (x[a] - grid.lower(a)) / grid.h(a) - shift;
        let t = t.clamp(0.0, (count[a] - 1) as f64);
        let i = (t.floor() as usize).min(count[a].saturating_sub(2));
        base[a] = i;
        frac[a] = t - i as f64;
    }
    let at = |i: usize, j: usize| values[i + j * count[0]];
    if grid.dim() == 1 {
        if count[0] == 1 {
            return values[0];
        }
        let (i, s) = (base[0], frac[0]);
        (1.0 - s) * at(i, 0) + s * at(i + 1, 0)
    } else {
        let (i, j) = (base[0], base[1]);
        let (s, t) = (frac[0], frac[1]);
        let i1 = (i + 1).min(count[0] - 1);
        let j1 = (j + 1).min(count[1] - 1);
        (1.0 - s) * (1.0 - t) * at(i, j) + s * (1.0 - t) * at(i1, j) + (1.0 - s) * t * at(i, j1) + s * t * at(i1, j1)
    }
}

/// Central-difference gradient of a cell field at cell `c` (one-sided on the
/// outermost cells).
pub(crate) fn cell_field_gradient(field: &ScalarField, c: usize) -> [f64; 2] {
    let grid = field.grid();
    let (i, j) = grid.cell_ij(c);
    let ij = [i, j];
    let v = field.values();
    let mut g = [0.0; 2];
    for a in 0..grid.dim() {
        let n = grid.cells_along(a);
        let lo = ij[a].saturating_sub(1);
        let hi = (ij[a] + 1).min(n - 1);
        let mut lo_ij = ij;
        let mut hi_ij = ij;
        lo_ij[a] = lo;
        hi_ij[a] = hi;
        let span = (hi - lo) as f64 * grid.h(a);
        g[a] = (v[grid.cell_index(hi_ij[0], hi_ij[1])] - v[grid.cell_index(lo_ij[0], lo_ij[1])]) / span;
    }
    g
}

/// The variable exponent `p(x)` on cells with its recomputed bounds and
/// Lipschitz estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentField {
    field: ScalarField,
    p_min: f64,
    p_max: f64,
    lipschitz: f64,
}

impl ExponentField {
    pub fn new(field: ScalarField) -> Result<Self> {
        if field.location() != Location::Cell {
            return Err(Error::InvalidExponent("p must be cell-centered".into()));
        }
        let p_min = field.min();
        let p_max = field.max();
        if !(p_min > 1.0) {
            return Err(Error::InvalidExponent(format!("p_min = {p_min} must exceed 1")));
        }
        let lipschitz = adjacent_slope(&field);
        Ok(ExponentField { field, p_min, p_max, lipschitz })
    }

    pub fn constant(grid: Grid, p: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, Location::Cell, p)?)
    }

    pub fn sample<F: FnMut(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        Self::new(ScalarField::sample(grid, Location::Cell, f)?)
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn p_min(&self) -> f64 {
        self.p_min
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// Largest finite-difference slope between axis-adjacent cells.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn at(&self, x: &Point) -> f64 {
        self.field.interpolate(x)
    }
}

fn adjacent_slope(field: &ScalarField) -> f64 {
    let grid = field.grid();
    let v = field.values();
    let mut slope: f64 = 0.0;
    for c in 0..grid.cell_count() {
        let (i, j) = grid.cell_ij(c);
        if i + 1 < grid.cells_along(0) {
            let d = (v[grid.cell_index(i + 1, j)] - v[c]).abs() / grid.h(0);
            slope = slope.max(d);
        }
        if grid.dim() == 2 && j + 1 < grid.cells_along(1) {
            let d = (v[grid.cell_index(i, j + 1)] - v[c]).abs() / grid.h(1);
            slope = slope.max(d);
        }
    }
    slope
}

/// The volume coefficient `lambda(x)` on cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    field: ScalarField,
    lambda1: f64,
    lambda2: f64,
}

impl CoefficientField {
    pub fn new(field: ScalarField) -> Result<Self> {
        if field.location() != Location::Cell {
            return Err(Error::InvalidCoefficient("lambda must be cell-centered".into()));
        }
        let lambda1 = field.min();
        let lambda2 = field.max();
        if !(lambda1 > 0.0) {
            return Err(Error::InvalidCoefficient(format!("lambda1 = {lambda1} must be positive")));
        }
        Ok(CoefficientField { field, lambda1, lambda2 })
    }

    pub fn constant(grid: Grid, lambda: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, Location::Cell, lambda)?)
    }

    /// The degenerate coefficient `lambda = 0`, for which the energy is the
    /// Dirichlet energy alone and there is no free boundary. This is the only
    /// nonpositive coefficient accepted.
    pub fn zero(grid: Grid) -> Result<Self> {
        Ok(CoefficientField { field: ScalarField::constant(grid, Location::Cell, 0.0)?, lambda1: 0.0, lambda2: 0.0 })
    }

    pub fn is_zero(&self) -> bool {
        self.lambda2 == 0.0
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
}

/// Nonnegative Dirichlet data on nodes. Only boundary nodes constrain the
/// problem; interior values serve as an optional initial guess.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryData {
    phi0: ScalarField,
    sup_phi0: f64,
}

impl BoundaryData {
    pub fn new(phi0: ScalarField) -> Result<Self> {
        if phi0.location() != Location::Node {
            return Err(Error::InvalidArgument("phi0 must be node-centered".into()));
        }
        if let Some((index, &value)) = phi0.values().iter().enumerate().find(|(_, &v)| v < 0.0) {
            return Err(Error::NegativeBoundaryData { index, value });
        }
        let grid = *phi0.grid();
        let sup_phi0 =
            (0..grid.node_count()).filter(|&k| grid.is_boundary_node(k)).map(|k| phi0.values()[k]).fold(0.0, f64::max);
        Ok(BoundaryData { phi0, sup_phi0 })
    }

    pub fn sample<F: FnMut(&[f64]) -> f64>(grid: Grid, f: F) -> Result<Self> {
        Self::new(ScalarField::sample(grid, Location::Node, f)?)
    }

    pub fn field(&self) -> &ScalarField {
        &self.phi0
    }

    pub fn values(&self) -> &[f64] {
        self.phi0.values()
    }

    pub fn grid(&self) -> &Grid {
        self.phi0.grid()
    }

    /// Maximum of `phi0` over boundary nodes.
    pub fn sup(&self) -> f64 {
        self.sup_phi0
    }
}

/// Pointwise free-boundary gradient value `(p lambda / (p - 1))^(1/p)`.
pub fn lambda_star_value(p: f64, lambda: f64) -> f64 {
    (p * lambda / (p - 1.0)).powf(1.0 / p)
}

/// `lambda*` on cells from the exponent and coefficient fields.
pub fn lambda_star(p: &ExponentField, lam: &CoefficientField) -> Result<ScalarField> {
    if !p.field().same_support(lam.field()) {
        return Err(Error::GridMismatch);
    }
    let values = p.values().iter().zip(lam.values()).map(|(&pc, &lc)| lambda_star_value(pc, lc)).collect();
    ScalarField::from_values(*p.grid(), Location::Cell, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_1d(n: usize) -> Grid {
        Grid::new_1d(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn samples_nodes_and_cells() {
        let g = unit_1d(2);
        let nodes = ScalarField::sample(g, Location::Node, |x| x[0]).unwrap();
        assert_eq!(nodes.values(), &[0.0, 0.5, 1.0]);
        let cells = ScalarField::sample(g, Location::Cell, |x| x[0]).unwrap();
        assert_eq!(cells.values(), &[0.25, 0.75]);
    }

    #[test]
    fn non_finite_sample_names_index() {
        let g = unit_1d(2);
        let f = |x: &[f64]| 1.0 / (x[0] - 0.5);
        assert!(ScalarField::sample(g, Location::Cell, f).is_ok());
        assert!(matches!(ScalarField::sample(g, Location::Node, f), Err(Error::NonFinite { index: 1, .. })));
    }

    #[test]
    fn lambda_star_examples() {
        assert_abs_diff_eq!(lambda_star_value(2.0, 0.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(lambda_star_value(2.0, 1.0), std::f64::consts::SQRT_2, epsilon = 1e-12);
        assert_abs_diff_eq!(lambda_star_value(3.0, 2.0), 1.44224957, epsilon = 1e-8);
    }

    #[test]
    fn lambda_star_rejects_mismatched_grids() {
        let p = ExponentField::constant(unit_1d(4), 2.0).unwrap();
        let lam = CoefficientField::constant(unit_1d(5), 1.0).unwrap();
        assert_eq!(lambda_star(&p, &lam), Err(Error::GridMismatch));
    }

    #[test]
    fn gradient_exact_on_affine() {
        let g = unit_1d(10);
        let u = ScalarField::sample(g, Location::Node, |x| x[0]).unwrap();
        for d in cell_gradient(&u).unwrap() {
            assert_abs_diff_eq!(d[0], 1.0, epsilon = 1e-12);
        }
        let g2 = Grid::new_2d([0.0, 0.0], [1.0, 2.0], [5, 7]).unwrap();
        let u = ScalarField::sample(g2, Location::Node, |x| 2.0 * x[0] + 3.0 * x[1]).unwrap();
        for d in cell_gradient(&u).unwrap() {
            assert_abs_diff_eq!(d[0], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d[1], 3.0, epsilon = 1e-12);
        }
        let c = ScalarField::constant(g2, Location::Node, 4.0).unwrap();
        assert!(cell_gradient(&c).unwrap().iter().all(|d| d == &[0.0, 0.0]));
    }

    #[test]
    fn exponent_bounds_recomputed() {
        let g = unit_1d(4);
        let p = ExponentField::sample(g, |x| 2.0 + x[0]).unwrap();
        assert_abs_diff_eq!(p.p_min(), 2.125);
        assert_abs_diff_eq!(p.p_max(), 2.875);
        assert_abs_diff_eq!(p.lipschitz(), 1.0, epsilon = 1e-12);
        assert!(ExponentField::constant(g, 1.0).is_err());
        assert!(CoefficientField::constant(g, 0.0).is_err());
    }

    #[test]
    fn boundary_sup_and_sign() {
        let g = unit_1d(4);
        let bd = BoundaryData::sample(g, |x| 0.5 * (1.0 - x[0])).unwrap();
        assert_eq!(bd.sup(), 0.5);
        assert!(matches!(BoundaryData::sample(g, |x| x[0] - 0.5), Err(Error::NegativeBoundaryData { index: 0, .. })));
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let nodes = ScalarField::sample(g, Location::Node, f).unwrap();
        let x = [0.37, 0.81];
        assert_abs_diff_eq!(nodes.interpolate(&x), f(&x), epsilon = 1e-12);
        let lin = |x: &[f64]| 3.0 * x[0] + x[1];
        let cells = ScalarField::sample(g, Location::Cell, lin).unwrap();
        assert_abs_diff_eq!(cells.interpolate(&x), lin(&x), epsilon = 1e-12);
    }

    #[test]
    fn lambda_star_monotone_in_lambda() {
        let g = unit_1d(8);
        let p = ExponentField::sample(g, |x| 1.5 + 2.0 * x[0]).unwrap();
        let lo = CoefficientField::new(ScalarField::sample(g, Location::Cell, |x| 0.5 + x[0]).unwrap()).unwrap();
        let hi = CoefficientField::new(ScalarField::sample(g, Location::Cell, |x| 0.6 + x[0]).unwrap()).unwrap();
        let a = lambda_star(&p, &lo).unwrap();
        let b = lambda_star(&p, &hi).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x < y));
    }
}
