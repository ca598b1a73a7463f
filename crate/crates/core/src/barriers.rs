//! Barrier calculus for the p(x)-Laplacian: the Gaussian barrier
//! `w = M exp(-mu |x|^2)` on an annulus, the non-divergence form of
//! `Delta_{p(x)}`, and the weak subsolution inequality satisfied by `|grad u|`.
//!
//! All barrier derivatives are closed-form; grids enter only through the
//! exponent (`grad p` by central differences of the cell field) and through
//! the discrete solutions being checked.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{cell_average, cell_field_gradient, gradient_of, ExponentField, Location, ScalarField};
use crate::grid::{dot, norm, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpBarrier {
    pub m: f64,
    pub mu: f64,
    /// Outer radius.
    pub r1: f64,
    /// Inner radius, `0 < r2 < r1`.
    pub r2: f64,
    pub center: Point,
}

impl ExpBarrier {
    pub fn new(m: f64, mu: f64, r1: f64, r2: f64, center: Point) -> Result<Self> {
        if !(m > 0.0 && mu > 0.0 && r2 > 0.0 && r2 < r1 && r1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "barrier needs M > 0, mu > 0, 0 < r2 < r1 (got M={m}, mu={mu}, r1={r1}, r2={r2})"
            )));
        }
        Ok(ExpBarrier { m, mu, r1, r2, center })
    }

    fn offset(&self, x: &Point) -> [f64; 2] {
        [x[0] - self.center[0], x[1] - self.center[1]]
    }

    pub fn value(&self, x: &Point) -> f64 {
        let y = self.offset(x);
        self.m * (-self.mu * dot(&y, &y)).exp()
    }

    /// `-2 mu w y`.
    pub fn gradient(&self, x: &Point) -> [f64; 2] {
        let y = self.offset(x);
        let s = -2.0 * self.mu * self.value(x);
        [s * y[0], s * y[1]]
    }

    /// `2 mu w (2 mu y y^T - I)`.
    pub fn hessian(&self, x: &Point) -> [[f64; 2]; 2] {
        let y = self.offset(x);
        let s = 2.0 * self.mu * self.value(x);
        let mut h = [[0.0; 2]; 2];
        for (i, row) in h.iter_mut().enumerate() {
            for (j, e) in row.iter_mut().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                *e = s * (2.0 * self.mu * y[i] * y[j] - id);
            }
        }
        h
    }
}

fn grad_p_at(p: &ExponentField, x: &Point) -> [f64; 2] {
    cell_field_gradient(p.field(), p.grid().locate_cell(x))
}

/// `exp(mu |y|^2) (2 M mu)^(-1) |grad w|^(2-p) Delta_{p(x)} w` at `x`, with
/// `y = x - center`, expanded in closed form:
/// `(p-2)(2mu|y|^2 - 1) + (2mu|y|^2 - N) - <y, grad p>(ln M + ln(2mu|y|)) + mu <y, grad p> |y|^2`.
pub fn exp_barrier_operator(barrier: &ExpBarrier, p: &ExponentField, x: &Point) -> Result<f64> {
    let y = barrier.offset(x);
    let r = norm(&y);
    let tol = 1e-12 * barrier.r1;
    if r < barrier.r2 - tol || r > barrier.r1 + tol {
        return Err(Error::OutsideAnnulus { radius: r, inner: barrier.r2, outer: barrier.r1 });
    }
    let dim = p.grid().dim() as f64;
    let pc = p.at(x);
    let dp = grad_p_at(p, x);
    let mu = barrier.mu;
    let r2 = r * r;
    let yp = dot(&y, &dp);
    Ok((pc - 2.0) * (2.0 * mu * r2 - 1.0) + (2.0 * mu * r2 - dim) - yp * (barrier.m.ln() + (2.0 * mu * r).ln())
        + mu * yp * r2)
}

/// Constants of the barrier lower bound `C1 (mu - C2 G |ln M|)`, `G = sup |grad p|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpLemmaConstants {
    /// Largest admissible `G`: `(p_- - 1) r2^2 / (2 r1 (r1^2 + 1))`.
    pub eps0: f64,
    /// Smallest admissible `mu`.
    pub mu0: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Constants for exponent bounds `p_min, p_max`, gradient bound `grad_p_sup`
/// and dimension `dim`. With `|grad p| <= eps0`, `mu >= max(1, mu0)` and
/// `r2 <= |y| <= r1`,
/// `op >= 2 mu (p_- - 1) r2^2 - mu r1 (r1^2 + 1) G - (p_+ - 2 + N) - r1 G (C_r + |ln M|)`
/// with `C_r = max |ln 2r|` over the annulus (using `ln mu <= mu`), and
/// the first two terms are at least `mu A`, `A = 3/2 (p_- - 1) r2^2`.
pub fn exp_lemma_constants(
    barrier: &ExpBarrier,
    p_min: f64,
    p_max: f64,
    grad_p_sup: f64,
    dim: usize,
) -> ExpLemmaConstants {
    let (r1, r2) = (barrier.r1, barrier.r2);
    let eps0 = (p_min - 1.0) * r2 * r2 / (2.0 * r1 * (r1 * r1 + 1.0));
    let a = 1.5 * (p_min - 1.0) * r2 * r2;
    let c_r = (2.0 * r1).ln().abs().max((2.0 * r2).ln().abs());
    let mu0 = (2.0 * (p_max - 2.0 + dim as f64 + r1 * grad_p_sup * c_r) / a).max(1.0);
    ExpLemmaConstants { eps0, mu0, c1: 0.5 * a, c2: 2.0 * r1 / a }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpLemmaReport {
    pub min: f64,
    pub constants: ExpLemmaConstants,
    pub grad_p_sup: f64,
    /// `C1 (mu - C2 G |ln M|)`.
    pub threshold: f64,
    pub pass: bool,
}

/// `sup |grad p|` over all cells, by central differences.
pub fn grad_p_sup(p: &ExponentField) -> f64 {
    (0..p.grid().cell_count()).map(|c| norm(&cell_field_gradient(p.field(), c))).fold(0.0, f64::max)
}

/// Deterministic annulus samples: `radii` levels from `r2` to `r1` and
/// `angles` directions (two directions in 1D).
pub fn annulus_samples(barrier: &ExpBarrier, dim: usize, radii: usize, angles: usize) -> Vec<Point> {
    let mut out = Vec::new();
    let levels = radii.max(2);
    for k in 0..levels {
        let r = barrier.r2 + (barrier.r1 - barrier.r2) * k as f64 / (levels - 1) as f64;
        if dim == 1 {
            out.push([barrier.center[0] - r, 0.0]);
            out.push([barrier.center[0] + r, 0.0]);
            continue;
        }
        for a in 0..angles.max(1) {
            let t = std::f64::consts::TAU * a as f64 / angles.max(1) as f64;
            out.push([barrier.center[0] + r * t.cos(), barrier.center[1] + r * t.sin()]);
        }
    }
    out
}

/// Evaluates the normalized operator on `samples` and compares its minimum
/// with `C1 (mu - C2 G |ln M|)`.
pub fn verify_exp_lemma(barrier: &ExpBarrier, p: &ExponentField, samples: &[Point]) -> Result<ExpLemmaReport> {
    if samples.is_empty() {
        return Err(Error::TooFewPoints { found: 0, needed: 1 });
    }
    let g = grad_p_sup(p);
    let constants = exp_lemma_constants(barrier, p.p_min(), p.p_max(), g, p.grid().dim());
    if g > constants.eps0 {
        return Err(Error::HypothesisViolated(format!("sup |grad p| = {g} exceeds eps0 = {}", constants.eps0)));
    }
    let mut min = f64::INFINITY;
    for x in samples {
        min = min.min(exp_barrier_operator(barrier, p, x)?);
    }
    let threshold = constants.c1 * (barrier.mu - constants.c2 * g * barrier.m.ln().abs());
    Ok(ExpLemmaReport { min, constants, grad_p_sup: g, threshold, pass: min >= threshold })
}

/// `mu = max(mu0, 2 C2 G |ln M|)`.
pub fn admissible_mu(constants: &ExpLemmaConstants, grad_p_sup: f64, m: f64) -> f64 {
    constants.mu0.max(2.0 * constants.c2 * grad_p_sup * m.ln().abs())
}

/// Non-divergence coefficients per selected cell:
/// `Delta_{p(x)} u = a : D^2 u + drift . grad u`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonDivCoeffs {
    pub cells: Vec<usize>,
    /// `|grad u|^(p-2) (I + (p-2) n n^T)`, `n = grad u / |grad u|`.
    pub a: Vec<[[f64; 2]; 2]>,
    /// `|grad u|^(p-2) ln|grad u| grad p`.
    pub drift: Vec<[f64; 2]>,
    /// Eigenvalues `(min, max)` of `I + (p-2) n n^T` per cell.
    pub eigenvalues: Vec<(f64, f64)>,
    /// Bounds over all selected cells.
    pub ellipticity: (f64, f64),
}

fn symmetric_eigenvalues(m: &[[f64; 2]; 2]) -> (f64, f64) {
    let tr = 0.5 * (m[0][0] + m[1][1]);
    let d = 0.5 * (m[0][0] - m[1][1]);
    let r = (d * d + m[0][1] * m[1][0]).max(0.0).sqrt();
    (tr - r, tr + r)
}

fn check_band(cell: usize, value: f64, band: (f64, f64)) -> Result<()> {
    if !(band.0 > 0.0 && value >= band.0 && value <= band.1) {
        return Err(Error::GradientBand { cell, value, lo: band.0, hi: band.1 });
    }
    Ok(())
}

pub fn nondiv_coeffs(u: &ScalarField, p: &ExponentField, cells: &[usize], band: (f64, f64)) -> Result<NonDivCoeffs> {
    if u.location() != Location::Node || u.grid() != p.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = u.grid();
    let dim = grid.dim();
    let grads = gradient_of(grid, u.values());
    let mut out = NonDivCoeffs {
        cells: cells.to_vec(),
        a: Vec::with_capacity(cells.len()),
        drift: Vec::with_capacity(cells.len()),
        eigenvalues: Vec::with_capacity(cells.len()),
        ellipticity: (f64::INFINITY, f64::NEG_INFINITY),
    };
    for &c in cells {
        let g = grads[c];
        let n = norm(&g);
        check_band(c, n, band)?;
        let pc = p.values()[c];
        let unit = [g[0] / n, g[1] / n];
        let mut b = [[0.0; 2]; 2];
        for i in 0..dim {
            for j in 0..dim {
                let id = if i == j { 1.0 } else { 0.0 };
                b[i][j] = id + (pc - 2.0) * unit[i] * unit[j];
            }
        }
        let eig = if dim == 1 { (b[0][0], b[0][0]) } else { symmetric_eigenvalues(&b) };
        let s = n.powf(pc - 2.0);
        let dp = cell_field_gradient(p.field(), c);
        out.a.push([[s * b[0][0], s * b[0][1]], [s * b[1][0], s * b[1][1]]]);
        out.drift.push([s * n.ln() * dp[0], s * n.ln() * dp[1]]);
        out.eigenvalues.push(eig);
        out.ellipticity = (out.ellipticity.0.min(eig.0), out.ellipticity.1.max(eig.1));
    }
    Ok(out)
}

/// Weak form of `-div(D grad v) + B . grad v <= div H` for `v = |grad u|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubsolutionCheck {
    /// `sum [D grad v . grad phi + (B . grad v) phi + H . grad phi] |c|`,
    /// expected `<= 0` up to discretization.
    pub value: f64,
    /// Same sum with every term replaced by its absolute value.
    pub scale: f64,
    /// Size of the sum produced by rounding alone: `grad v` carries an error
    /// of about `eps_mach |grad u| / h` even when `v` is exactly constant.
    pub rounding_floor: f64,
    pub cells: usize,
}

/// Safety factor on machine epsilon in [`SubsolutionCheck::rounding_floor`].
pub const ROUNDING_FACTOR: f64 = 64.0;

/// `v = |grad u|` lives on cells and `grad v` is taken by central differences
/// of adjacent cells; `phi` is a nonnegative node field whose support cells
/// must lie in the band.
pub fn gradient_subsolution_check(
    u: &ScalarField,
    p: &ExponentField,
    band: (f64, f64),
    phi: &ScalarField,
) -> Result<SubsolutionCheck> {
    let grid = u.grid();
    if u.location() != Location::Node || phi.location() != Location::Node || grid != p.grid() || grid != phi.grid() {
        return Err(Error::GridMismatch);
    }
    if let Some((k, &v)) = phi.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::InvalidArgument(format!("test field negative at node {k}: {v}")));
    }
    let grads = gradient_of(grid, u.values());
    let v = ScalarField::from_values(*grid, Location::Cell, grads.iter().map(norm).collect())?;
    let dphi = gradient_of(grid, phi.values());
    let phi_c = cell_average(grid, phi.values());
    let k = grid.corners_per_cell();
    let vol = grid.cell_volume();
    let mut value = 0.0;
    let mut scale = 0.0;
    let mut rounding_floor = 0.0;
    let h_min = grid.h_min();
    let mut count = 0;
    for c in 0..grid.cell_count() {
        let corners = grid.cell_corners(c);
        if corners[..k].iter().all(|&n| phi.values()[n] == 0.0) {
            continue;
        }
        let g = grads[c];
        let n = v.values()[c];
        check_band(c, n, band)?;
        let pc = p.values()[c];
        let unit = [g[0] / n, g[1] / n];
        let dv = cell_field_gradient(&v, c);
        let dp = cell_field_gradient(p.field(), c);
        // D grad v = |grad u|^(p-1) (grad v + (p-2) (n . grad v) n)
        let s = n.powf(pc - 1.0);
        let nd = dot(&unit, &dv);
        let d_dv = [s * (dv[0] + (pc - 2.0) * nd * unit[0]), s * (dv[1] + (pc - 2.0) * nd * unit[1])];
        let b = [s * n.ln() * dp[0], s * n.ln() * dp[1]];
        let hs = n.powf(pc - 2.0) * n.ln() * dot(&g, &dp);
        let h = [hs * g[0], hs * g[1]];
        let terms = [dot(&d_dv, &dphi[c]), dot(&b, &dv) * phi_c[c], dot(&h, &dphi[c])];
        value += terms.iter().sum::<f64>() * vol;
        scale += terms.iter().map(|t| t.abs()).sum::<f64>() * vol;
        rounding_floor += ROUNDING_FACTOR * f64::EPSILON * s * (n / h_min) * norm(&dphi[c]) * vol;
        count += 1;
    }
    Ok(SubsolutionCheck { value, scale, rounding_floor, cells: count })
}
