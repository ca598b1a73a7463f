//! The free-boundary energy
//!
//! ```text
//! J(u) = int |grad u|^p(x) / p(x) + lambda(x) chi{u > 0} dx
//! ```
//!
//! evaluated exactly on the grid, together with the smoothed surrogate used
//! for descent,
//!
//! ```text
//! J_eps,delta(u) = sum_c [ (|g_c|^2 + delta^2)^(p_c/2) - delta^p_c ] / p_c |c|
//!                + sum_c lambda_c s_eps(ubar_c) |c|,     s_eps(t) = clamp(t/eps, 0, 1),
//! ```
//!
//! and its exact gradient with respect to node values. Sums run over cells in
//! row-major order so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{CoefficientField, ExponentField, Location, ScalarField};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalParams {
    /// Width of the indicator ramp.
    pub eps: f64,
    /// Gradient regularization.
    pub delta: f64,
    /// Positivity threshold for set extraction.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dirichlet: f64,
    pub volume: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(dirichlet: f64, volume: f64) -> Self {
        EnergyBreakdown { dirichlet, volume, total: dirichlet + volume }
    }
}

/// Whether a cell value counts as positive at threshold `tau`. A value equal
/// to a positive threshold counts as positive; at `tau = 0` only strictly
/// positive values do.
pub fn counts_positive(value: f64, tau: f64) -> bool {
    value > tau || (tau > 0.0 && value == tau)
}

/// How the ramp derivative is taken at `ubar = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RampRule {
    /// `s_eps'(0) = 0`: the zero field is a critical point.
    ZeroAtOrigin,
    /// Right derivative `1/eps`, the derivative along feasible directions
    /// once `u >= 0` is enforced.
    RightDerivative,
}

/// Raw view of the problem data used by the inner loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Integrand<'a> {
    pub grid: &'a Grid,
    pub p: &'a [f64],
    pub lambda: Option<&'a [f64]>,
    pub eps: f64,
    pub delta: f64,
}

impl Integrand<'_> {
    /// Dirichlet and volume parts of the smoothed energy; when `grad` is
    /// given it receives the exact gradient (all nodes, boundary included).
    pub fn evaluate(&self, u: &[f64], grad: Option<&mut [f64]>, rule: RampRule) -> (f64, f64) {
        let grid = self.grid;
        let w = grid.gradient_weights();
        let nc = grid.corners_per_cell();
        let vol = grid.cell_volume();
        let inv_nc = 1.0 / nc as f64;
        let d2 = self.delta * self.delta;
        let mut dirichlet = 0.0;
        let mut volume = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for c in 0..grid.cell_count() {
            let corners = grid.cell_corners(c);
            let mut gx = 0.0;
            let mut gy = 0.0;
            let mut avg = 0.0;
            for k in 0..nc {
                let v = u[corners[k]];
                gx += w[k][0] * v;
                gy += w[k][1] * v;
                avg += v;
            }
            avg *= inv_nc;
            let pc = self.p[c];
            let q = gx * gx + gy * gy + d2;
            let offset = if self.delta > 0.0 { self.delta.powf(pc) } else { 0.0 };
            let base = if q > 0.0 { q.powf(0.5 * pc) } else { 0.0 };
            dirichlet += (base - offset) / pc * vol;
            let (ramp, slope) = match self.lambda {
                Some(lam) => {
                    let (s, ds) = ramp(avg, self.eps, rule);
                    (lam[c] * s, lam[c] * ds)
                }
                None => (0.0, 0.0),
            };
            volume += ramp * vol;
            if let Some(g) = grad.as_deref_mut() {
                // d/dg of (q^(p/2))/p is q^(p/2 - 1) g
                let flux = if q > 0.0 { base / q } else { 0.0 };
                let fx = flux * gx * vol;
                let fy = flux * gy * vol;
                let fv = slope * inv_nc * vol;
                for k in 0..nc {
                    g[corners[k]] += w[k][0] * fx + w[k][1] * fy + fv;
                }
            }
        }
        (dirichlet, volume)
    }

    /// `J(v) - J(u)` split into Dirichlet and volume parts, accumulated cell
    /// by cell from the increments so that changes far below the rounding
    /// level of the totals are still resolved.
    pub fn change(&self, u: &[f64], v: &[f64], rule: RampRule) -> (f64, f64) {
        let grid = self.grid;
        let w = grid.gradient_weights();
        let nc = grid.corners_per_cell();
        let vol = grid.cell_volume();
        let inv_nc = 1.0 / nc as f64;
        let d2 = self.delta * self.delta;
        let mut dirichlet = 0.0;
        let mut volume = 0.0;
        for c in 0..grid.cell_count() {
            let corners = grid.cell_corners(c);
            let mut g = [0.0; 2];
            let mut dg = [0.0; 2];
            let mut avg = 0.0;
            let mut davg = 0.0;
            let mut moved = false;
            for k in 0..nc {
                let a = u[corners[k]];
                let du = v[corners[k]] - a;
                moved |= du != 0.0;
                for i in 0..2 {
                    g[i] += w[k][i] * a;
                    dg[i] += w[k][i] * du;
                }
                avg += a;
                davg += du;
            }
            if !moved {
                continue;
            }
            let pc = self.p[c];
            let q = g[0] * g[0] + g[1] * g[1] + d2;
            let dq = dg[0] * (2.0 * g[0] + dg[0]) + dg[1] * (2.0 * g[1] + dg[1]);
            let de = if q + dq <= 0.0 {
                -q.powf(0.5 * pc)
            } else if q > 0.0 {
                q.powf(0.5 * pc) * (0.5 * pc * (dq / q).ln_1p()).exp_m1()
            } else {
                (q + dq).max(0.0).powf(0.5 * pc)
            };
            dirichlet += de / pc * vol;
            if let Some(lam) = self.lambda {
                let (a, b) = (avg * inv_nc, (avg + davg) * inv_nc);
                let ds = if a > 0.0 && a < self.eps && b > 0.0 && b < self.eps {
                    davg * inv_nc / self.eps
                } else {
                    ramp(b, self.eps, rule).0 - ramp(a, self.eps, rule).0
                };
                volume += lam[c] * ds * vol;
            }
        }
        (dirichlet, volume)
    }

    /// Per-cell Hessians of the Dirichlet part (times the cell volume,
    /// stored as `[xx, xy, yy]`) and the diagonal of the assembled Hessian.
    /// The piecewise-linear volume term contributes nothing.
    pub fn hessian(&self, u: &[f64], hess: &mut [[f64; 3]], diag: &mut [f64]) {
        let grid = self.grid;
        let w = grid.gradient_weights();
        let nc = grid.corners_per_cell();
        let vol = grid.cell_volume();
        let d2 = self.delta * self.delta;
        diag.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..grid.cell_count() {
            let corners = grid.cell_corners(c);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for k in 0..nc {
                gx += w[k][0] * u[corners[k]];
                gy += w[k][1] * u[corners[k]];
            }
            let pc = self.p[c];
            let q = gx * gx + gy * gy + d2;
            // q^(p/2-1) I + (p-2) q^(p/2-2) g g^T
            let (a, b) = if q > 0.0 {
                let a = q.powf(0.5 * pc - 1.0);
                (a, (pc - 2.0) * a / q)
            } else if pc == 2.0 {
                (1.0, 0.0)
            } else {
                (0.0, 0.0)
            };
            let h = [(a + b * gx * gx) * vol, b * gx * gy * vol, (a + b * gy * gy) * vol];
            hess[c] = h;
            for k in 0..nc {
                let [wx, wy] = w[k];
                diag[corners[k]] += wx * wx * h[0] + 2.0 * wx * wy * h[1] + wy * wy * h[2];
            }
        }
    }

    /// `out = H v` for the Hessians produced by [`Integrand::hessian`].
    pub fn hessian_apply(&self, hess: &[[f64; 3]], v: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let w = grid.gradient_weights();
        let nc = grid.corners_per_cell();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (c, h) in hess.iter().enumerate() {
            let corners = grid.cell_corners(c);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for k in 0..nc {
                gx += w[k][0] * v[corners[k]];
                gy += w[k][1] * v[corners[k]];
            }
            let fx = h[0] * gx + h[1] * gy;
            let fy = h[1] * gx + h[2] * gy;
            for k in 0..nc {
                out[corners[k]] += w[k][0] * fx + w[k][1] * fy;
            }
        }
    }
}

fn ramp(t: f64, eps: f64, rule: RampRule) -> (f64, f64) {
    if t <= 0.0 {
        let slope = if t == 0.0 && rule == RampRule::RightDerivative { 1.0 / eps } else { 0.0 };
        (0.0, slope)
    } else if t < eps {
        (t / eps, 1.0 / eps)
    } else {
        (1.0, 0.0)
    }
}

fn check_inputs(u: &ScalarField, p: &ExponentField, lam: &CoefficientField) -> Result<()> {
    if u.location() != Location::Node {
        return Err(Error::InvalidArgument("energy needs a node-centered u".into()));
    }
    if u.grid() != p.grid() || !p.field().same_support(lam.field()) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// The exact energy with the sharp indicator `[ubar_c > tau]` (see
/// [`counts_positive`] for the tie rule).
pub fn energy_exact(u: &ScalarField, p: &ExponentField, lam: &CoefficientField, tau: f64) -> Result<EnergyBreakdown> {
    check_inputs(u, p, lam)?;
    let grid = u.grid();
    let integrand = Integrand { grid, p: p.values(), lambda: None, eps: 1.0, delta: 0.0 };
    let (dirichlet, _) = integrand.evaluate(u.values(), None, RampRule::ZeroAtOrigin);
    let vol = grid.cell_volume();
    let avg = u.to_cells();
    let volume =
        avg.values().iter().zip(lam.values()).filter(|(&a, _)| counts_positive(a, tau)).map(|(_, &l)| l * vol).sum();
    Ok(EnergyBreakdown::new(dirichlet, volume))
}

/// Dirichlet and volume parts of `J_eps,delta`.
pub fn energy_smoothed_breakdown(
    u: &ScalarField,
    p: &ExponentField,
    lam: &CoefficientField,
    eps: f64,
    delta: f64,
) -> Result<EnergyBreakdown> {
    check_inputs(u, p, lam)?;
    if !(eps > 0.0) || !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("need eps > 0 and delta >= 0, got eps={eps}, delta={delta}")));
    }
    let integrand = Integrand { grid: u.grid(), p: p.values(), lambda: Some(lam.values()), eps, delta };
    let (d, v) = integrand.evaluate(u.values(), None, RampRule::ZeroAtOrigin);
    Ok(EnergyBreakdown::new(d, v))
}

pub fn energy_smoothed(
    u: &ScalarField,
    p: &ExponentField,
    lam: &CoefficientField,
    eps: f64,
    delta: f64,
) -> Result<f64> {
    energy_smoothed_breakdown(u, p, lam, eps, delta).map(|e| e.total)
}

/// Gradient of [`energy_smoothed`] with respect to node values, with
/// `s_eps'(0) = 0` and boundary components set to zero.
pub fn energy_gradient(
    u: &ScalarField,
    p: &ExponentField,
    lam: &CoefficientField,
    eps: f64,
    delta: f64,
) -> Result<ScalarField> {
    energy_smoothed_breakdown(u, p, lam, eps, delta)?;
    let grid = *u.grid();
    let integrand = Integrand { grid: &grid, p: p.values(), lambda: Some(lam.values()), eps, delta };
    let mut g = vec![0.0; grid.node_count()];
    integrand.evaluate(u.values(), Some(&mut g), RampRule::ZeroAtOrigin);
    for (k, v) in g.iter_mut().enumerate() {
        if grid.is_boundary_node(k) {
            *v = 0.0;
        }
    }
    ScalarField::from_values(grid, Location::Node, g)
}

/// Both sides of the monotonicity inequality for `A(q) = |q|^(p-2) q`:
/// `rhs = (A(eta) - A(xi)) . (eta - xi)` and `lhs = |eta - xi|^p` for
/// `p >= 2`, `|eta - xi|^2 (|eta| + |xi|)^(p-2)` otherwise.
pub fn monotonicity_gap(p: f64, eta: &[f64], xi: &[f64]) -> Result<(f64, f64)> {
    if !(p > 1.0) || eta.len() != xi.len() {
        return Err(Error::InvalidArgument(format!("monotonicity_gap needs p > 1 and equal lengths (p={p})")));
    }
    let len = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a = |v: &[f64]| -> Vec<f64> {
        let n = len(v);
        let s = if n > 0.0 { n.powf(p - 2.0) } else { 0.0 };
        v.iter().map(|x| s * x).collect()
    };
    let diff: Vec<f64> = eta.iter().zip(xi).map(|(a, b)| a - b).collect();
    let (ae, ax) = (a(eta), a(xi));
    let rhs = ae.iter().zip(&ax).zip(&diff).map(|((x, y), d)| (x - y) * d).sum();
    let dn = len(&diff);
    let lhs = if dn == 0.0 {
        0.0
    } else if p >= 2.0 {
        dn.powf(p)
    } else {
        dn * dn * (len(eta) + len(xi)).powf(p - 2.0)
    };
    Ok((lhs, rhs))
}
