//! Minimization of the smoothed free-boundary energy over the admissible
//! class (boundary values fixed to `phi0`, interior values in
//! `[0, sup phi0]`) with continuation in the ramp width `eps` and the
//! gradient regularization `delta`.

use serde::{Deserialize, Serialize};

use crate::descent::{descend, Bounds, StageLabel};
use crate::error::{Error, Result};
use crate::field::{gradient_of, BoundaryData, CoefficientField, ExponentField, Location, ScalarField};
use crate::functional::{counts_positive, EnergyBreakdown, Integrand, RampRule};
use crate::grid::{dot, Grid};
use crate::pxharmonic::solve_dirichlet;

/// Default ramp floor as a multiple of `h * max lambda*`.
pub const EPS_FLOOR_FACTOR: f64 = 0.5;
pub const DEFAULT_INNER_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_INNER_ITERS: usize = 200_000;
/// Final regularization when `p_min < 2`.
pub const DELTA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSchedule {
    pub eps_list: Vec<f64>,
    pub delta_list: Vec<f64>,
    pub inner_tol: f64,
    pub max_inner_iters: usize,
}

impl ContinuationSchedule {
    /// `eps` runs over `{0.5, 0.25, 0.1, 0.05} * sup phi0` down to the floor
    /// `0.5 h max lambda*`; `delta` over `{1e-1, 1e-2, 1e-3}` followed by 0
    /// when `p_min >= 2`.
    pub fn default_for(grid: &Grid, p: &ExponentField, lambda_star_max: f64, sup_phi0: f64) -> Self {
        let floor = eps_floor(grid, lambda_star_max);
        let mut eps_list: Vec<f64> = [0.5, 0.25, 0.1, 0.05].iter().map(|f| f * sup_phi0).collect();
        let mut e = 0.05 * sup_phi0;
        while e > floor {
            e *= 0.5;
            eps_list.push(e);
        }
        eps_list.retain(|&e| e > floor);
        eps_list.push(floor);
        let mut delta_list = vec![1e-1, 1e-2, DELTA_MIN];
        if p.p_min() >= 2.0 {
            delta_list.push(0.0);
        }
        ContinuationSchedule {
            eps_list,
            delta_list,
            inner_tol: DEFAULT_INNER_TOL,
            max_inner_iters: DEFAULT_MAX_INNER_ITERS,
        }
    }

    pub fn validate(&self, eps_floor: f64, p_min: f64) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if self.eps_list.is_empty() || self.delta_list.is_empty() {
            return bad("eps and delta lists must be nonempty".into());
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps list must be strictly decreasing".into());
        }
        if self.delta_list.windows(2).any(|w| w[1] > w[0]) {
            return bad("delta list must be nonincreasing".into());
        }
        let last_eps = *self.eps_list.last().unwrap();
        if !(last_eps >= eps_floor * (1.0 - 1e-12)) {
            return bad(format!("last eps {last_eps} is below the floor {eps_floor}"));
        }
        if self.delta_list.iter().any(|&d| !(d >= 0.0)) {
            return bad("delta entries must be nonnegative".into());
        }
        let last_delta = *self.delta_list.last().unwrap();
        if p_min < 2.0 && last_delta <= 0.0 {
            return bad(format!("p_min = {p_min} < 2 needs a positive final delta"));
        }
        if !(self.inner_tol > 0.0) || self.max_inner_iters == 0 {
            return bad("inner_tol and max_inner_iters must be positive".into());
        }
        Ok(())
    }

    /// `(eps, delta)` per stage; the shorter list repeats its last entry.
    pub fn stages(&self) -> Vec<(f64, f64)> {
        let n = self.eps_list.len().max(self.delta_list.len());
        (0..n)
            .map(|i| {
                let e = self.eps_list[i.min(self.eps_list.len() - 1)];
                let d = self.delta_list[i.min(self.delta_list.len() - 1)];
                (e, d)
            })
            .collect()
    }

    pub fn final_delta(&self) -> f64 {
        *self.delta_list.last().unwrap_or(&0.0)
    }

    pub fn final_eps(&self) -> f64 {
        *self.eps_list.last().unwrap_or(&0.0)
    }
}

/// `0.5 h max lambda*`, or `0.5 h` when `lambda* = 0` (the volume term
/// then vanishes and the width is immaterial).
pub fn eps_floor(grid: &Grid, lambda_star_max: f64) -> f64 {
    let scale = if lambda_star_max > 0.0 { lambda_star_max } else { 1.0 };
    EPS_FLOOR_FACTOR * grid.h_max() * scale
}

#[derive(Debug, Clone)]
pub enum Init {
    /// Start from the p(x)-harmonic extension of `phi0` (the `lambda = 0`
    /// minimizer).
    Dirichlet,
    Field(ScalarField),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub eps: f64,
    pub delta: f64,
    pub iterations: usize,
    pub energy: EnergyBreakdown,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MinimizerResult {
    pub u: ScalarField,
    pub energy_trace: Vec<StageTrace>,
    pub grad_norm_final: f64,
    pub stages: usize,
    pub converged: bool,
    /// Accepted one-layer retreats of the positivity set after the last
    /// stage. Descent alone stalls at the first saturated-cell configuration
    /// it meets; each retreat zeroes the positive frontier, re-descends and
    /// is kept only if the final-stage energy drops.
    pub retreats: usize,
}

/// Interior values clamped to `[0, sup phi0]`, boundary values set to `phi0`.
pub fn clamp_projection(u: &ScalarField, phi0: &BoundaryData) -> Result<ScalarField> {
    if u.grid() != phi0.grid() || u.location() != Location::Node {
        return Err(Error::GridMismatch);
    }
    let grid = *u.grid();
    let sup = phi0.sup();
    let values = (0..grid.node_count())
        .map(|k| if grid.is_boundary_node(k) { phi0.values()[k] } else { u.values()[k].clamp(0.0, sup) })
        .collect();
    ScalarField::from_values(grid, Location::Node, values)
}

pub fn minimize(
    phi0: &BoundaryData,
    p: &ExponentField,
    lam: &CoefficientField,
    schedule: &ContinuationSchedule,
    init: Init,
) -> Result<MinimizerResult> {
    let grid = *phi0.grid();
    if p.grid() != &grid || lam.field().grid() != &grid {
        return Err(Error::GridMismatch);
    }
    if schedule.eps_list.is_empty() || schedule.delta_list.is_empty() {
        return Err(Error::InvalidSchedule("empty schedule".into()));
    }
    let start = match init {
        Init::Dirichlet => solve_dirichlet(phi0.field(), p, schedule.inner_tol)?.v,
        Init::Field(f) => f,
    };
    let mut u = clamp_projection(&start, phi0)?.into_values();
    let free: Vec<bool> = (0..grid.node_count()).map(|k| !grid.is_boundary_node(k)).collect();
    let bounds = Bounds { lower: 0.0, upper: phi0.sup() };
    let mut trace = Vec::new();
    let stages = schedule.stages();
    let mut grad_norm_final = 0.0;
    let mut converged = true;
    for (stage, &(eps, delta)) in stages.iter().enumerate() {
        let integrand = Integrand { grid: &grid, p: p.values(), lambda: Some(lam.values()), eps, delta };
        let outcome = descend(
            &integrand,
            &free,
            bounds,
            &mut u,
            schedule.inner_tol,
            schedule.max_inner_iters,
            StageLabel { stage, eps, delta },
        )?;
        log::info!(
            "stage {stage} eps {eps:.3e} delta {delta:.1e}: {} iterations, energy {:.12e}, grad {:.3e}",
            outcome.iterations,
            outcome.dirichlet + outcome.volume,
            outcome.grad_norm
        );
        trace.push(StageTrace {
            eps,
            delta,
            iterations: outcome.iterations,
            energy: EnergyBreakdown::new(outcome.dirichlet, outcome.volume),
            grad_norm: outcome.grad_norm,
            converged: outcome.converged,
        });
        grad_norm_final = outcome.grad_norm;
        converged = outcome.converged;
    }
    let &(eps, delta) = stages.last().expect("nonempty schedule");
    let integrand = Integrand { grid: &grid, p: p.values(), lambda: Some(lam.values()), eps, delta };
    let label = StageLabel { stage: stages.len() - 1, eps, delta };
    let mut retreats = 0;
    for _ in 0..grid.nodes_along(0).max(grid.nodes_along(1)) {
        let frontier = frontier_nodes(&grid, &u);
        if frontier.is_empty() {
            break;
        }
        let mut candidate = u.clone();
        let mut pinned = free.clone();
        for k in frontier {
            candidate[k] = 0.0;
            pinned[k] = false;
        }
        let constrained =
            descend(&integrand, &pinned, bounds, &mut candidate, schedule.inner_tol, schedule.max_inner_iters, label)?;
        let (d, v) = integrand.change(&u, &candidate, RampRule::RightDerivative);
        if !constrained.converged || d + v >= 0.0 {
            break;
        }
        let outcome =
            descend(&integrand, &free, bounds, &mut candidate, schedule.inner_tol, schedule.max_inner_iters, label)?;
        if !outcome.converged {
            break;
        }
        u = candidate;
        retreats += 1;
        let last = trace.last_mut().expect("nonempty trace");
        last.iterations += constrained.iterations + outcome.iterations;
        last.energy = EnergyBreakdown::new(outcome.dirichlet, outcome.volume);
        last.grad_norm = outcome.grad_norm;
        grad_norm_final = outcome.grad_norm;
    }
    if retreats > 0 {
        log::info!("free boundary retreated {retreats} layer(s) at the final stage");
    }
    Ok(MinimizerResult {
        u: ScalarField::from_values(grid, Location::Node, u)?,
        energy_trace: trace,
        grad_norm_final,
        stages: stages.len(),
        converged,
        retreats,
    })
}

/// Interior nodes with positive value sharing a cell with a zero node.
fn frontier_nodes(grid: &Grid, u: &[f64]) -> Vec<usize> {
    let nc = grid.corners_per_cell();
    (0..grid.node_count())
        .filter(|&k| !grid.is_boundary_node(k) && u[k] > 0.0)
        .filter(|&k| grid.cells_of_node(k).iter().any(|&c| grid.cell_corners(c)[..nc].iter().any(|&m| u[m] == 0.0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubharmonicityResidual {
    /// Most negative tent pairing.
    pub min: f64,
    /// Largest tent pairing magnitude.
    pub scale: f64,
    /// Interior node attaining `min`.
    pub node: usize,
}

impl SubharmonicityResidual {
    /// `min >= -(rel scale + inner_tol |c|)`. The second term is the
    /// stationarity tolerance of the solve: a minimizer converged to
    /// `inner_tol` can have pairings that small of either sign, which is all
    /// an exactly harmonic solution shows.
    pub fn passes(&self, rel: f64, inner_tol: f64, cell_volume: f64) -> bool {
        self.min >= -(rel * self.scale + inner_tol * cell_volume)
    }
}

/// Pairings `-sum_c A(grad u) . grad xi_k |c|` of the flux
/// `A(q) = (|q|^2 + delta^2)^((p-2)/2) q` with the tent `xi_k` at every
/// interior node.
pub fn tent_pairings(u: &ScalarField, p: &ExponentField, delta: f64) -> Result<Vec<f64>> {
    if u.grid() != p.grid() || u.location() != Location::Node {
        return Err(Error::GridMismatch);
    }
    let grid = *u.grid();
    let integrand = Integrand { grid: &grid, p: p.values(), lambda: None, eps: 1.0, delta };
    let mut g = vec![0.0; grid.node_count()];
    integrand.evaluate(u.values(), Some(&mut g), RampRule::ZeroAtOrigin);
    Ok(g.into_iter().map(|v| -v).collect())
}

pub fn subharmonicity_residual(u: &ScalarField, p: &ExponentField, delta: f64) -> Result<SubharmonicityResidual> {
    let pairings = tent_pairings(u, p, delta)?;
    let grid = u.grid();
    let mut out = SubharmonicityResidual { min: f64::INFINITY, scale: 0.0, node: 0 };
    for (k, &v) in pairings.iter().enumerate() {
        if grid.is_boundary_node(k) {
            continue;
        }
        out.scale = out.scale.max(v.abs());
        if v < out.min {
            out.min = v;
            out.node = k;
        }
    }
    Ok(out)
}

/// Sup over interior nodes whose incident cells have every corner above
/// `tau` of the Dirichlet-energy gradient divided by the cell volume; `None`
/// when no node qualifies.
pub fn positive_set_residual(u: &ScalarField, p: &ExponentField, tau: f64, delta: f64) -> Result<Option<f64>> {
    let pairings = tent_pairings(u, p, delta)?;
    let grid = *u.grid();
    let nc = grid.corners_per_cell();
    let vol = grid.cell_volume();
    let vals = u.values();
    let mut out: Option<f64> = None;
    for k in 0..grid.node_count() {
        if grid.is_boundary_node(k) {
            continue;
        }
        let inside = grid.cells_of_node(k).iter().all(|&c| {
            let corners = grid.cell_corners(c);
            corners[..nc].iter().all(|&m| vals[m] > tau)
        });
        if inside {
            let r = (pairings[k] / vol).abs();
            out = Some(out.map_or(r, |m: f64| m.max(r)));
        }
    }
    Ok(out)
}

/// Number of cells counted positive at threshold `tau`.
pub fn positive_cell_count(u: &ScalarField, tau: f64) -> usize {
    u.to_cells().values().iter().filter(|&&v| counts_positive(v, tau)).count()
}

/// Dirichlet flux `|grad u|^(p-2) grad u` per cell.
pub(crate) fn flux(grid: &Grid, u: &[f64], p: &[f64]) -> Vec<[f64; 2]> {
    gradient_of(grid, u)
        .into_iter()
        .zip(p)
        .map(|(g, &pc)| {
            let n2 = dot(&g, &g);
            let s = if n2 > 0.0 { n2.powf(0.5 * pc - 1.0) } else { 0.0 };
            [s * g[0], s * g[1]]
        })
        .collect()
}
