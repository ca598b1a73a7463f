//! Bound-constrained descent shared by the free-boundary minimizer and the
//! p(x)-harmonic Dirichlet solver.
//!
//! Each iteration splits the free nodes into an active set (pinned at a
//! bound with the gradient pushing outward) and the rest, computes a
//! truncated Newton direction on the rest by preconditioned conjugate
//! gradients, and backtracks along the projection arc with a monotone
//! Armijo rule. When that fails a scaled projected gradient step is taken.
//! Boundary nodes never move.

use crate::error::{Error, Result};
use crate::functional::{Integrand, RampRule};

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;
const NEWTON_MIN_STEP: f64 = 1e-8;
const ACTIVE_WIDTH: f64 = 1e-3;
const CG_MAX_ITERS: usize = 4000;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const FREE: Bounds = Bounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    fn project(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StageLabel {
    pub stage: usize,
    pub eps: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Outcome {
    pub iterations: usize,
    /// Sup norm of `u - P(u - g / |c|)` over interior nodes.
    pub grad_norm: f64,
    pub converged: bool,
    pub dirichlet: f64,
    pub volume: f64,
}

/// Sup-norm projected gradient of the density-scaled gradient `g / vol`.
pub(crate) fn projected_gradient_norm(u: &[f64], grad: &[f64], free: &[bool], bounds: Bounds, vol: f64) -> f64 {
    let mut m: f64 = 0.0;
    for k in 0..u.len() {
        if free[k] {
            let step = u[k] - bounds.project(u[k] - grad[k] / vol);
            m = m.max(step.abs());
        }
    }
    m
}

struct Workspace {
    hess: Vec<[f64; 3]>,
    diag: Vec<f64>,
    mask: Vec<bool>,
    d: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    s: Vec<f64>,
    hs: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, cells: usize) -> Self {
        Workspace {
            hess: vec![[0.0; 3]; cells],
            diag: vec![0.0; n],
            mask: vec![false; n],
            d: vec![0.0; n],
            r: vec![0.0; n],
            z: vec![0.0; n],
            s: vec![0.0; n],
            hs: vec![0.0; n],
        }
    }
}

/// Preconditioned CG on the masked system `H d = -g`, truncated at the
/// forcing tolerance or on nonpositive curvature.
fn newton_direction(integrand: &Integrand<'_>, grad: &[f64], ws: &mut Workspace) {
    let n = grad.len();
    let Workspace { hess, diag, mask, d, r, z, s, hs } = ws;
    let mut rr0 = 0.0;
    for k in 0..n {
        d[k] = 0.0;
        if mask[k] {
            r[k] = -grad[k];
            rr0 += r[k] * r[k];
        } else {
            r[k] = 0.0;
        }
    }
    let rnorm0 = rr0.sqrt();
    if rnorm0 == 0.0 {
        return;
    }
    let forcing = rnorm0 * rnorm0.sqrt().min(0.1);
    let precondition = |r: &[f64], z: &mut [f64]| {
        for k in 0..n {
            z[k] = if mask[k] && diag[k] > 0.0 { r[k] / diag[k] } else { r[k] };
            if !mask[k] {
                z[k] = 0.0;
            }
        }
    };
    precondition(r, z);
    s.copy_from_slice(z);
    let mut rz: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
    for _ in 0..CG_MAX_ITERS {
        integrand.hessian_apply(hess, s, hs);
        let mut curvature = 0.0;
        let mut ss = 0.0;
        for k in 0..n {
            if mask[k] {
                curvature += s[k] * hs[k];
                ss += s[k] * s[k];
            }
        }
        if curvature <= 1e-14 * ss * diag.iter().fold(0.0f64, |m, &v| m.max(v)) {
            if d.iter().all(|&v| v == 0.0) {
                d.copy_from_slice(z);
            }
            return;
        }
        let a = rz / curvature;
        let mut rr = 0.0;
        for k in 0..n {
            if mask[k] {
                d[k] += a * s[k];
                r[k] -= a * hs[k];
                rr += r[k] * r[k];
            }
        }
        if rr.sqrt() <= forcing {
            return;
        }
        precondition(r, z);
        let rz_new: f64 = r.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            s[k] = if mask[k] { z[k] + beta * s[k] } else { 0.0 };
        }
    }
}

pub(crate) fn descend(
    integrand: &Integrand<'_>,
    free: &[bool],
    bounds: Bounds,
    u: &mut [f64],
    tol: f64,
    max_iters: usize,
    label: StageLabel,
) -> Result<Outcome> {
    let n = u.len();
    let vol = integrand.grid.cell_volume();
    let rule = RampRule::RightDerivative;
    for k in 0..n {
        if free[k] {
            u[k] = bounds.project(u[k]);
        }
    }
    let mut grad = vec![0.0; n];
    let (mut dir_e, mut vol_e) = integrand.evaluate(u, Some(&mut grad), rule);
    let mut energy = dir_e + vol_e;
    let non_finite = |iteration| Error::NonFiniteEnergy { stage: label.stage, iteration };
    if !energy.is_finite() {
        return Err(non_finite(0));
    }
    let mut ws = Workspace::new(n, integrand.grid.cell_count());
    let mut trial = vec![0.0; n];
    let mut grad_norm = projected_gradient_norm(u, &grad, free, bounds, vol);
    let mut iterations = 0;
    while iterations < max_iters && grad_norm > tol {
        integrand.hessian(u, &mut ws.hess, &mut ws.diag);
        let width = ACTIVE_WIDTH.min(grad_norm);
        for k in 0..n {
            ws.mask[k] = free[k]
                && !((u[k] <= bounds.lower + width && grad[k] > 0.0)
                    || (u[k] >= bounds.upper - width && grad[k] < 0.0));
        }
        newton_direction(integrand, &grad, &mut ws);
        for k in 0..n {
            if free[k] && !ws.mask[k] {
                // pinned nodes are pushed onto their bound by the projection
                ws.d[k] = -grad[k] / ws.diag[k].max(vol);
            }
        }
        let mut accepted = None;
        let mut t = 1.0;
        while t >= NEWTON_MIN_STEP {
            let mut decrease = 0.0;
            for k in 0..n {
                trial[k] = if free[k] { bounds.project(u[k] + t * ws.d[k]) } else { u[k] };
                decrease += grad[k] * (trial[k] - u[k]);
            }
            if !(decrease < 0.0) {
                break;
            }
            let (d, v) = integrand.change(u, &trial, rule);
            if !(d + v).is_finite() {
                return Err(non_finite(iterations));
            }
            if d + v <= ARMIJO * decrease {
                accepted = Some((d, v));
                break;
            }
            t *= 0.5;
        }
        if accepted.is_none() {
            // scaled projected gradient step
            let dmax = ws.diag.iter().zip(free).filter(|(_, &f)| f).fold(0.0f64, |m, (&v, _)| m.max(v));
            let alpha = if dmax > 0.0 { 1.0 / dmax } else { 1.0 / vol };
            let mut t = 1.0;
            loop {
                let mut decrease = 0.0;
                for k in 0..n {
                    trial[k] = if free[k] { bounds.project(u[k] - t * alpha * grad[k]) } else { u[k] };
                    decrease += grad[k] * (trial[k] - u[k]);
                }
                let (d, v) = integrand.change(u, &trial, rule);
                if !(d + v).is_finite() {
                    return Err(non_finite(iterations));
                }
                if d + v <= ARMIJO * decrease && decrease < 0.0 {
                    accepted = Some((d, v));
                    break;
                }
                t *= 0.5;
                if t * alpha * vol < MIN_STEP {
                    return Err(Error::LineSearch {
                        stage: label.stage,
                        eps: label.eps,
                        delta: label.delta,
                        iteration: iterations,
                        grad_norm,
                    });
                }
            }
        }
        let (d, v) = accepted.expect("a step was accepted");
        debug_assert!(d + v <= 0.0);
        u.copy_from_slice(&trial);
        (dir_e, vol_e) = integrand.evaluate(u, Some(&mut grad), rule);
        energy = dir_e + vol_e;
        grad_norm = projected_gradient_norm(u, &grad, free, bounds, vol);
        iterations += 1;
        if iterations % 100 == 0 {
            log::debug!("stage {} iter {} energy {:.12e} grad {:.3e}", label.stage, iterations, energy, grad_norm);
        }
    }
    Ok(Outcome { iterations, grad_norm, converged: grad_norm <= tol, dirichlet: dir_e, volume: vol_e })
}
