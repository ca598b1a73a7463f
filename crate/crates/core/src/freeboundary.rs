//! Discrete free boundary `{u = tau}` and the quantities constrained along
//! it: the gradient condition `|grad u| = lambda*`, density and growth
//! bounds, blow-ups, the measure `Lambda = div(|grad u|^(p-2) grad u)` and
//! the weak free-boundary identity.
//!
//! In 1D the free boundary is the set of linear-interpolated crossings of
//! `u = tau` between adjacent nodes; in 2D it is the marching-squares
//! polyline of the same level set, with saddle cells resolved by the cell
//! average.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{cell_average, gradient_of, interpolate_lattice, ExponentField, Location, ScalarField};
use crate::functional::counts_positive;
use crate::grid::{dist, dot, norm, Grid, Point};
use crate::optimizer::flux;
use crate::pxharmonic::adjacent_cells;

/// Probe depth for the gradient trace, in units of `h`.
pub const PROBE_CELLS: f64 = 3.0;
/// Points closer than this many cells to the domain boundary are left out
/// of the gradient-condition summary.
pub const MARGIN_CELLS: f64 = 5.0;

/// `tau = h max(lambda*)`.
pub fn default_tau(grid: &Grid, lambda_star_max: f64) -> f64 {
    grid.h_max() * lambda_star_max
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeBoundary {
    pub tau: f64,
    /// Set when `u <= tau` everywhere or `u > tau` everywhere.
    pub none: bool,
    pub points: Vec<Point>,
    /// Unit normals pointing out of `{u > tau}`.
    pub normals: Vec<[f64; 2]>,
    /// `|grad u|` probed at depth `probe` inside the positivity set.
    pub grad_trace: Vec<f64>,
    pub lambda_star_local: Vec<f64>,
    /// Polyline edges as index pairs into `points` (empty in 1D).
    pub segments: Vec<(usize, usize)>,
    pub probe: f64,
}

impl FreeBoundary {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total polyline length (2D) or number of points (1D).
    pub fn measure(&self) -> f64 {
        if self.segments.is_empty() {
            return self.points.len() as f64;
        }
        self.segments.iter().map(|&(a, b)| dist(&self.points[a], &self.points[b])).sum()
    }

    fn require_points(&self) -> Result<()> {
        if self.none || self.points.is_empty() {
            Err(Error::NoFreeBoundary)
        } else {
            Ok(())
        }
    }
}

fn require_node(u: &ScalarField) -> Result<()> {
    if u.location() != Location::Node {
        return Err(Error::InvalidArgument("free-boundary analysis needs a node field".into()));
    }
    Ok(())
}

/// Extracts `{u = tau}` with normals, traces and local `lambda*`
/// (`lambda_star` is a cell field on the same grid).
pub fn extract(u: &ScalarField, tau: f64, lambda_star: &ScalarField) -> Result<FreeBoundary> {
    require_node(u)?;
    let grid = *u.grid();
    if lambda_star.grid() != &grid || lambda_star.location() != Location::Cell {
        return Err(Error::GridMismatch);
    }
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be nonnegative, got {tau}")));
    }
    let vals = u.values();
    let (points, segments, edges) =
        if grid.dim() == 1 { crossings_1d(&grid, vals, tau) } else { marching_squares(&grid, vals, tau) };
    let grads = gradient_of(&grid, vals);
    let avg = cell_average(&grid, vals);
    let gx: Vec<f64> = grads.iter().map(|g| g[0]).collect();
    let gy: Vec<f64> = grads.iter().map(|g| g[1]).collect();
    let probe = PROBE_CELLS * grid.h_max();
    let mut normals = Vec::with_capacity(points.len());
    let mut grad_trace = Vec::with_capacity(points.len());
    let mut lambda_star_local = Vec::with_capacity(points.len());
    for (x, &(pos, neg)) in points.iter().zip(&edges) {
        let nu = normal_at(&grid, &grads, &avg, tau, x, &grid.node_coord(pos), &grid.node_coord(neg));
        let y = [x[0] - probe * nu[0], x[1] - probe * nu[1]];
        let g = [interpolate_lattice(&grid, &gx, &y, true), interpolate_lattice(&grid, &gy, &y, true)];
        normals.push(nu);
        grad_trace.push(norm(&g));
        lambda_star_local.push(interpolate_lattice(&grid, lambda_star.values(), x, true));
    }
    Ok(FreeBoundary { tau, none: points.is_empty(), points, normals, grad_trace, lambda_star_local, segments, probe })
}

/// `-grad u` averaged over the cells containing `x`, preferring cells counted
/// positive; falls back to the edge direction when that average vanishes.
fn normal_at(grid: &Grid, grads: &[[f64; 2]], avg: &[f64], tau: f64, x: &Point, pos: &Point, neg: &Point) -> [f64; 2] {
    let cells = adjacent_cells(grid, x);
    let positive: Vec<usize> = cells.iter().copied().filter(|&c| counts_positive(avg[c], tau)).collect();
    let chosen = if positive.is_empty() { &cells } else { &positive };
    let mut g = [0.0; 2];
    for &c in chosen {
        g[0] -= grads[c][0];
        g[1] -= grads[c][1];
    }
    let n = norm(&g);
    if n > 0.0 {
        return [g[0] / n, g[1] / n];
    }
    let d = [neg[0] - pos[0], neg[1] - pos[1]];
    let n = norm(&d);
    [d[0] / n, d[1] / n]
}

type Extraction = (Vec<Point>, Vec<(usize, usize)>, Vec<(usize, usize)>);

fn crossing(grid: &Grid, vals: &[f64], tau: f64, a: usize, b: usize) -> Option<(Point, (usize, usize))> {
    let pa = counts_positive(vals[a], tau);
    let pb = counts_positive(vals[b], tau);
    if pa == pb {
        return None;
    }
    let (pos, neg) = if pa { (a, b) } else { (b, a) };
    let (xa, xb) = (grid.node_coord(a), grid.node_coord(b));
    let (va, vb) = (vals[a] - tau, vals[b] - tau);
    let s = if va == vb { 0.5 } else { (va / (va - vb)).clamp(0.0, 1.0) };
    Some(([xa[0] + s * (xb[0] - xa[0]), xa[1] + s * (xb[1] - xa[1])], (pos, neg)))
}

fn crossings_1d(grid: &Grid, vals: &[f64], tau: f64) -> Extraction {
    let mut points = Vec::new();
    let mut edges = Vec::new();
    for k in 0..grid.cells_along(0) {
        if let Some((x, e)) = crossing(grid, vals, tau, k, k + 1) {
            points.push(x);
            edges.push(e);
        }
    }
    (points, Vec::new(), edges)
}

fn marching_squares(grid: &Grid, vals: &[f64], tau: f64) -> Extraction {
    // vertex per crossed lattice edge, keyed by (lower node, axis)
    let mut index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut points = Vec::new();
    let mut edges = Vec::new();
    let mut vertex = |a: usize, b: usize, axis: usize, points: &mut Vec<Point>, edges: &mut Vec<(usize, usize)>| {
        let key = (a.min(b), axis);
        if let Some(&v) = index.get(&key) {
            return Some(v);
        }
        let (x, e) = crossing(grid, vals, tau, a, b)?;
        points.push(x);
        edges.push(e);
        index.insert(key, points.len() - 1);
        Some(points.len() - 1)
    };
    let mut segments = Vec::new();
    let avg = cell_average(grid, vals);
    for c in 0..grid.cell_count() {
        let [c0, c1, c2, c3] = grid.cell_corners(c);
        // bottom, right, top, left
        let sides = [(c0, c1, 0), (c1, c3, 1), (c2, c3, 0), (c0, c2, 1)];
        let mut hit = [None; 4];
        for (s, &(a, b, axis)) in sides.iter().enumerate() {
            hit[s] = vertex(a, b, axis, &mut points, &mut edges);
        }
        let found: Vec<usize> = hit.iter().flatten().copied().collect();
        match found.len() {
            2 => segments.push((found[0], found[1])),
            4 => {
                let [b, r, t, l] = [hit[0].unwrap(), hit[1].unwrap(), hit[2].unwrap(), hit[3].unwrap()];
                let center_positive = counts_positive(avg[c], tau);
                let diagonal_positive = counts_positive(vals[c0], tau);
                // isolate the corners on the side of the center's opposite sign
                if center_positive == diagonal_positive {
                    // c1 and c2 are cut off
                    segments.push((b, r));
                    segments.push((l, t));
                } else {
                    // c0 and c3 are cut off
                    segments.push((b, l));
                    segments.push((r, t));
                }
            }
            _ => {}
        }
    }
    (points, segments, edges)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaStarCondition {
    /// `|grad_trace - lambda*| / lambda*` per point.
    pub errors: Vec<f64>,
    /// Max over points at least `margin` from the domain boundary.
    pub max: f64,
    pub margin: f64,
    pub counted: usize,
}

pub fn lambda_star_condition(fb: &FreeBoundary, grid: &Grid) -> Result<LambdaStarCondition> {
    fb.require_points()?;
    let margin = MARGIN_CELLS * grid.h_max();
    let errors: Vec<f64> = fb.grad_trace.iter().zip(&fb.lambda_star_local).map(|(g, l)| (g - l).abs() / l).collect();
    let interior: Vec<f64> = errors
        .iter()
        .zip(&fb.points)
        .filter(|(_, x)| grid.distance_to_boundary(x) >= margin)
        .map(|(&e, _)| e)
        .collect();
    if interior.is_empty() {
        return Err(Error::TooFewPoints { found: 0, needed: 1 });
    }
    Ok(LambdaStarCondition {
        max: interior.iter().copied().fold(0.0, f64::max),
        counted: interior.len(),
        errors,
        margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BallSample {
    pub point: usize,
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallReport {
    pub samples: Vec<BallSample>,
    /// Point/radius pairs whose ball leaves the domain.
    pub skipped: usize,
    pub min: f64,
    pub max: f64,
}

impl BallReport {
    fn collect(samples: Vec<BallSample>, skipped: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooFewPoints { found: 0, needed: 1 });
        }
        let min = samples.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
        let max = samples.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
        Ok(BallReport { samples, skipped, min, max })
    }
}

fn over_balls<F>(grid: &Grid, fb: &FreeBoundary, radii: &[f64], mut f: F) -> Result<BallReport>
where
    F: FnMut(&Point, f64) -> Option<f64>,
{
    fb.require_points()?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (i, x) in fb.points.iter().enumerate() {
        for &r in radii {
            if !grid.contains_ball(x, r) {
                skipped += 1;
                continue;
            }
            match f(x, r) {
                Some(value) => samples.push(BallSample { point: i, r, value }),
                None => skipped += 1,
            }
        }
    }
    BallReport::collect(samples, skipped)
}

/// `|B_r ∩ {u > tau}| / |B_r|` by counting cells with centers in the ball.
pub fn density_ratios(u: &ScalarField, tau: f64, fb: &FreeBoundary, radii: &[f64]) -> Result<BallReport> {
    require_node(u)?;
    let grid = *u.grid();
    let avg = cell_average(&grid, u.values());
    over_balls(&grid, fb, radii, |x, r| {
        let cells = grid.cells_in_ball(x, r);
        if cells.is_empty() {
            return None;
        }
        let positive = cells.iter().filter(|&&c| counts_positive(avg[c], tau)).count();
        Some(positive as f64 / cells.len() as f64)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Growth {
    /// `sup_{B_r} u / r`.
    pub nondegeneracy: BallReport,
    /// `sup_{B_{3r/4}} u / r`.
    pub linear_growth: BallReport,
}

fn sup_over(u: &ScalarField, x: &Point, r: f64) -> Option<f64> {
    let nodes = u.grid().nodes_in_ball(x, r);
    if nodes.is_empty() {
        return None;
    }
    Some(nodes.iter().map(|&k| u.values()[k]).fold(f64::NEG_INFINITY, f64::max))
}

pub fn nondegeneracy(u: &ScalarField, fb: &FreeBoundary, radii: &[f64]) -> Result<Growth> {
    require_node(u)?;
    let grid = *u.grid();
    Ok(Growth {
        nondegeneracy: over_balls(&grid, fb, radii, |x, r| sup_over(u, x, r).map(|s| s / r))?,
        linear_growth: over_balls(&grid, fb, radii, |x, r| sup_over(u, x, 0.75 * r).map(|s| s / r))?,
    })
}

/// Nodes per axis of the blow-up reference grid `[-1, 1]^N`.
pub const BLOWUP_NODES: usize = 65;

/// `u_rho(x) = u(x0 + rho x) / rho` on the reference grid `[-1, 1]^N`,
/// resampled by multilinear interpolation.
pub fn blowup(u: &ScalarField, x0: &Point, rho: f64) -> Result<ScalarField> {
    require_node(u)?;
    let grid = *u.grid();
    let dim = grid.dim();
    let inside = rho > 0.0
        && (0..dim).all(|a| {
            let tol = 1e-12 * grid.diameter();
            x0[a] - rho >= grid.lower(a) - tol && x0[a] + rho <= grid.upper(a) + tol
        });
    if !inside {
        return Err(Error::Containment { x: x0[0], y: x0[1], radius: rho });
    }
    let cells = BLOWUP_NODES - 1;
    let reference = Grid::new(dim, &[-1.0, -1.0][..dim], &[1.0, 1.0][..dim], &[cells, cells][..dim])?;
    ScalarField::sample(reference, Location::Node, |x| {
        let mut y = *x0;
        for a in 0..dim {
            y[a] += rho * x[a];
        }
        interpolate_lattice(&grid, u.values(), &y, false) / rho
    })
}

/// Sup distance on the reference grid between a blow-up and the half-plane
/// profile `lambda* <x, nu>^-`.
pub fn blowup_distance(blown: &ScalarField, lambda_star: f64, nu: &[f64; 2]) -> f64 {
    (0..blown.len())
        .map(|k| {
            let x = blown.coord(k);
            let profile = lambda_star * (-dot(&x, nu)).max(0.0);
            (blown.values()[k] - profile).abs()
        })
        .fold(0.0, f64::max)
}

/// Point where the linear extension of `u` from the level `tau` reaches
/// zero: `x + (tau / grad_trace) nu`.
pub fn zero_anchor(fb: &FreeBoundary, i: usize) -> Point {
    let x = fb.points[i];
    let nu = fb.normals[i];
    let s = if fb.grad_trace[i] > 0.0 { fb.tau / fb.grad_trace[i] } else { 0.0 };
    [x[0] + s * nu[0], x[1] + s * nu[1]]
}

/// The pairing `phi -> -sum_c |grad u|^(p-2) grad u . grad phi |c|`, which
/// represents `Lambda = div(|grad u|^(p-2) grad u)` on test fields.
#[derive(Debug, Clone)]
pub struct MeasureLambda<'a> {
    u: &'a ScalarField,
    flux: Vec<[f64; 2]>,
}

impl<'a> MeasureLambda<'a> {
    pub fn new(u: &'a ScalarField, p: &ExponentField) -> Result<Self> {
        require_node(u)?;
        if u.grid() != p.grid() {
            return Err(Error::GridMismatch);
        }
        let flux = flux(u.grid(), u.values(), p.values());
        Ok(MeasureLambda { u, flux })
    }

    /// Pairing with a node test field, restricted to cells selected by
    /// `keep`.
    fn pairing_where(&self, phi: &ScalarField, keep: impl Fn(usize) -> bool) -> Result<f64> {
        if phi.grid() != self.u.grid() || phi.location() != Location::Node {
            return Err(Error::GridMismatch);
        }
        let grid = self.u.grid();
        let dphi = gradient_of(grid, phi.values());
        let vol = grid.cell_volume();
        Ok(-(0..grid.cell_count()).filter(|&c| keep(c)).map(|c| dot(&self.flux[c], &dphi[c]) * vol).sum::<f64>())
    }

    pub fn pairing(&self, phi: &ScalarField) -> Result<f64> {
        self.pairing_where(phi, |_| true)
    }
}

/// Cone test field `max(0, 1 - |x - center| / radius)` on the nodes.
pub fn tent(grid: &Grid, center: &Point, radius: f64) -> Result<ScalarField> {
    let c = *center;
    ScalarField::sample(*grid, Location::Node, |x| {
        let mut y = [0.0; 2];
        y[..x.len()].copy_from_slice(x);
        (1.0 - dist(&y, &c) / radius).max(0.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub relerr: f64,
}

/// Both sides of `-int_{u > 0} |grad u|^(p-2) grad u . grad phi =
/// int_{FB} (lambda*)^(p-1) phi`. The left side sums over cells counted
/// positive at `fb.tau`; the right side is a point sum (1D) or a midpoint
/// rule on the polyline (2D).
pub fn weak_identity_residual(
    u: &ScalarField,
    p: &ExponentField,
    fb: &FreeBoundary,
    phi: &ScalarField,
) -> Result<WeakIdentity> {
    require_node(u)?;
    let grid = *u.grid();
    if phi.grid() != &grid || phi.location() != Location::Node {
        return Err(Error::GridMismatch);
    }
    if let Some(k) = (0..grid.node_count()).find(|&k| grid.is_boundary_node(k) && phi.values()[k] != 0.0) {
        return Err(Error::BoundaryNonzero { index: k, value: phi.values()[k] });
    }
    let avg = cell_average(&grid, u.values());
    let lhs = MeasureLambda::new(u, p)?.pairing_where(phi, |c| counts_positive(avg[c], fb.tau))?;
    let density = |x: &Point, l: f64| {
        let pc = interpolate_lattice(&grid, p.values(), x, true);
        l.powf(pc - 1.0) * interpolate_lattice(&grid, phi.values(), x, false)
    };
    let rhs = if fb.none {
        0.0
    } else if fb.segments.is_empty() {
        fb.points.iter().zip(&fb.lambda_star_local).map(|(x, &l)| density(x, l)).sum()
    } else {
        fb.segments
            .iter()
            .map(|&(a, b)| {
                let (xa, xb) = (fb.points[a], fb.points[b]);
                let mid = [0.5 * (xa[0] + xb[0]), 0.5 * (xa[1] + xb[1])];
                let l = 0.5 * (fb.lambda_star_local[a] + fb.lambda_star_local[b]);
                density(&mid, l) * dist(&xa, &xb)
            })
            .sum()
    };
    let scale = phi.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * scale.max(1.0);
    Ok(WeakIdentity { lhs, rhs, relerr: (lhs - rhs).abs() / rhs.abs().max(floor) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerimeterSample {
    pub point: usize,
    pub r: f64,
    /// `Lambda(B_r) / r^(N-1)`.
    pub lambda_ratio: f64,
    /// `H^(N-1)(FB ∩ B_r) / r^(N-1)`.
    pub hausdorff_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerimeterReport {
    pub samples: Vec<PerimeterSample>,
    pub skipped: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub hausdorff_min: f64,
    pub hausdorff_max: f64,
}

/// Length of the part of segment `a b` inside the closed disk `B_r(x)`.
fn clipped_length(a: &Point, b: &Point, x: &Point, r: f64) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let f = [a[0] - x[0], a[1] - x[1]];
    let aa = dot(&d, &d);
    if aa == 0.0 {
        return 0.0;
    }
    let bb = 2.0 * dot(&f, &d);
    let cc = dot(&f, &f) - r * r;
    let disc = bb * bb - 4.0 * aa * cc;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    let t0 = ((-bb - sq) / (2.0 * aa)).max(0.0);
    let t1 = ((-bb + sq) / (2.0 * aa)).min(1.0);
    (t1 - t0).max(0.0) * aa.sqrt()
}

/// `Lambda(B_r)` from the pairing with a smoothed indicator of `B_r` (one
/// inside, linear decay over `2h`), and the free-boundary measure inside
/// `B_r`, both divided by `r^(N-1)`.
pub fn perimeter_scaling(
    u: &ScalarField,
    p: &ExponentField,
    fb: &FreeBoundary,
    radii: &[f64],
) -> Result<PerimeterReport> {
    require_node(u)?;
    fb.require_points()?;
    let grid = *u.grid();
    let measure = MeasureLambda::new(u, p)?;
    let ramp = 2.0 * grid.h_max();
    let exponent = (grid.dim() - 1) as i32;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (i, x) in fb.points.iter().enumerate() {
        for &r in radii {
            if !grid.contains_ball(x, r + ramp) {
                skipped += 1;
                continue;
            }
            let c = *x;
            let phi = ScalarField::sample(grid, Location::Node, |y| {
                let mut z = [0.0; 2];
                z[..y.len()].copy_from_slice(y);
                (1.0 - (dist(&z, &c) - r) / ramp).clamp(0.0, 1.0)
            })?;
            let lambda = measure.pairing(&phi)?;
            let hausdorff = if fb.segments.is_empty() {
                fb.points.iter().filter(|y| dist(y, x) <= r).count() as f64
            } else {
                fb.segments.iter().map(|&(a, b)| clipped_length(&fb.points[a], &fb.points[b], x, r)).sum()
            };
            let scale = r.powi(exponent);
            samples.push(PerimeterSample {
                point: i,
                r,
                lambda_ratio: lambda / scale,
                hausdorff_ratio: hausdorff / scale,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::TooFewPoints { found: 0, needed: 1 });
    }
    let fold = |f: fn(&PerimeterSample) -> f64| {
        let lo = samples.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (lambda_min, lambda_max) = fold(|s| s.lambda_ratio);
    let (hausdorff_min, hausdorff_max) = fold(|s| s.hausdorff_ratio);
    Ok(PerimeterReport { samples, skipped, lambda_min, lambda_max, hausdorff_min, hausdorff_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalFit {
    /// All normal differences vanish; `gamma` and `constant` are then
    /// meaningless and set to infinity and zero.
    pub flat: bool,
    pub gamma: f64,
    pub constant: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
    pub r_squared: f64,
    pub pairs: usize,
}

pub const MIN_FIT_POINTS: usize = 8;

/// Least-squares fit of `log |nu_i - nu_j| = log C + gamma log |x_i - x_j|`
/// over point pairs at distance in `[2h, 0.25 diam]`.
pub fn normal_hoelder_fit(fb: &FreeBoundary, grid: &Grid) -> Result<NormalFit> {
    if grid.dim() != 2 {
        return Err(Error::InvalidArgument("normal fit needs a 2D free boundary".into()));
    }
    if fb.points.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewPoints { found: fb.points.len(), needed: MIN_FIT_POINTS });
    }
    let lo = 2.0 * grid.h_max();
    let hi = 0.25 * grid.diameter();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut pairs = 0;
    for i in 0..fb.points.len() {
        for j in i + 1..fb.points.len() {
            let d = dist(&fb.points[i], &fb.points[j]);
            if d < lo || d > hi {
                continue;
            }
            pairs += 1;
            let (a, b) = (fb.normals[i], fb.normals[j]);
            let dn = norm(&[a[0] - b[0], a[1] - b[1]]);
            if dn > 1e-12 {
                xs.push(d.ln());
                ys.push(dn.ln());
            }
        }
    }
    if xs.len() < 2 {
        return Ok(NormalFit { flat: true, gamma: f64::INFINITY, constant: 0.0, residual: 0.0, r_squared: 1.0, pairs });
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let gamma = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - gamma * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - intercept - gamma * x;
            e * e
        })
        .sum();
    Ok(NormalFit {
        flat: false,
        gamma,
        constant: intercept.exp(),
        residual: (sse / m).sqrt(),
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{lambda_star, CoefficientField};
    use approx::assert_abs_diff_eq;

    fn half_plane(n: usize, slope: f64) -> (ScalarField, ScalarField) {
        let g = Grid::new_2d([-1.0, -1.0], [1.0, 1.0], [n, n]).unwrap();
        let u = ScalarField::sample(g, Location::Node, |x| slope * (-x[1]).max(0.0)).unwrap();
        let ls = ScalarField::constant(g, Location::Cell, 1.0).unwrap();
        (u, ls)
    }

    #[test]
    fn half_plane_extraction() {
        let (u, ls) = half_plane(40, 1.0);
        let h = 0.05;
        let fb = extract(&u, h, &ls).unwrap();
        assert!(!fb.none);
        assert_eq!(fb.points.len(), 41);
        assert_eq!(fb.segments.len(), 40);
        for (x, nu) in fb.points.iter().zip(&fb.normals) {
            assert!(x[1].abs() <= h);
            assert_abs_diff_eq!(norm(nu), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(nu[1], 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(fb.measure(), 2.0, epsilon = 1e-12);
        let cond = lambda_star_condition(&fb, u.grid()).unwrap();
        assert!(cond.max < 1e-12, "{}", cond.max);
    }

    #[test]
    fn wrong_slope_is_detected() {
        let (u, ls) = half_plane(40, 2.0);
        let fb = extract(&u, 0.05, &ls).unwrap();
        let cond = lambda_star_condition(&fb, u.grid()).unwrap();
        assert_abs_diff_eq!(cond.max, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_crossing_means_none() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [8, 8]).unwrap();
        let ls = ScalarField::constant(g, Location::Cell, 1.0).unwrap();
        let u = ScalarField::constant(g, Location::Node, 1.0).unwrap();
        let fb = extract(&u, 0.1, &ls).unwrap();
        assert!(fb.none && fb.is_empty());
        assert!(matches!(lambda_star_condition(&fb, &g), Err(Error::NoFreeBoundary)));
        let zero = ScalarField::constant(g, Location::Node, 0.0).unwrap();
        assert!(extract(&zero, 0.1, &ls).unwrap().none);
    }

    #[test]
    fn one_dimensional_crossing() {
        let g = Grid::new_1d(0.0, 1.0, 10).unwrap();
        let u = ScalarField::sample(g, Location::Node, |x| (0.5 - x[0]).max(0.0)).unwrap();
        let ls = ScalarField::constant(g, Location::Cell, 1.0).unwrap();
        let fb = extract(&u, 0.1, &ls).unwrap();
        assert_eq!(fb.points.len(), 1);
        assert_abs_diff_eq!(fb.points[0][0], 0.4, epsilon = 1e-12);
        assert_eq!(fb.normals[0], [1.0, 0.0]);
        assert_abs_diff_eq!(fb.grad_trace[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn saddle_cell_follows_center_value() {
        let g = Grid::new_2d([0.0, 0.0], [2.0, 2.0], [2, 2]).unwrap();
        let ls = ScalarField::constant(g, Location::Cell, 1.0).unwrap();
        // in the cell [0,1]^2 the corners (0,0) and (1,1) are positive
        let mut vals = vec![0.0; 9];
        vals[0] = 1.0;
        vals[4] = 1.0;
        let u = ScalarField::from_values(g, Location::Node, vals).unwrap();
        let in_first_cell = |fb: &FreeBoundary| -> Vec<(f64, f64)> {
            let mut sums: Vec<(f64, f64)> = fb
                .segments
                .iter()
                .map(|s| (fb.points[s.0], fb.points[s.1]))
                .filter(|(a, b)| a[0].max(a[1]).max(b[0]).max(b[1]) <= 1.0 + 1e-12)
                .map(|(a, b)| (a[0] + b[0], a[1] + b[1]))
                .collect();
            sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sums
        };
        // center value 0.5 > tau: the negative corners (1,0) and (0,1) are cut off
        let joined = in_first_cell(&extract(&u, 0.4, &ls).unwrap());
        assert_eq!(joined.len(), 2);
        assert!(joined[0].0 < 1.0 && joined[0].1 > 1.0);
        assert!(joined[1].0 > 1.0 && joined[1].1 < 1.0);
        // center value below tau: the positive corners are cut off
        let split = in_first_cell(&extract(&u, 0.6, &ls).unwrap());
        assert_eq!(split.len(), 2);
        assert!(split[0].0 < 1.0 && split[0].1 < 1.0);
        assert!(split[1].0 > 1.0 && split[1].1 > 1.0);
    }

    #[test]
    fn half_plane_density_and_growth() {
        let (u, ls) = half_plane(64, 1.0);
        let h = 2.0 / 64.0;
        let fb = extract(&u, h, &ls).unwrap();
        let radii = [4.0 * h, 8.0 * h, 16.0 * h];
        let d = density_ratios(&u, h, &fb, &radii).unwrap();
        for s in &d.samples {
            assert!((s.value - 0.5).abs() <= 2.0 * h / s.r, "{s:?}");
        }
        let growth = nondegeneracy(&u, &fb, &radii).unwrap();
        // sup over B_r of (-y)^+ from a point at height -tau is r + tau
        for s in &growth.nondegeneracy.samples {
            assert!(s.value >= 1.0 && s.value <= 1.0 + 1.5 * h / s.r, "{s:?}");
        }
    }

    #[test]
    fn blowup_of_half_plane_is_fixed_point() {
        let (u, _) = half_plane(64, 1.0);
        for rho in [0.5, 0.25, 0.1] {
            let b = blowup(&u, &[0.0, 0.0], rho).unwrap();
            assert!(blowup_distance(&b, 1.0, &[0.0, 1.0]) < 1e-12);
        }
        assert!(blowup(&u, &[0.8, 0.0], 0.5).is_err());
    }

    #[test]
    fn blowup_of_one_dimensional_profile() {
        let g = Grid::new_1d(0.0, 1.0, 100).unwrap();
        let u = ScalarField::sample(g, Location::Node, |x| (0.5 - x[0]).max(0.0)).unwrap();
        let b = blowup(&u, &[0.5, 0.0], 0.2).unwrap();
        assert!(blowup_distance(&b, 1.0, &[1.0, 0.0]) < 1e-12);
        assert!(blowup(&u, &[0.5, 0.0], 0.6).is_err());
    }

    #[test]
    fn measure_lambda_on_one_dimensional_profile() {
        let n = 100;
        let g = Grid::new_1d(0.0, 1.0, n).unwrap();
        let p = ExponentField::constant(g, 2.0).unwrap();
        let lam = CoefficientField::constant(g, 0.5).unwrap();
        let ls = lambda_star(&p, &lam).unwrap();
        let u = ScalarField::sample(g, Location::Node, |x| (0.5 - x[0]).max(0.0)).unwrap();
        let m = MeasureLambda::new(&u, &p).unwrap();
        // supported in the positive set: zero by harmonicity
        assert_abs_diff_eq!(m.pairing(&tent(&g, &[0.25, 0.0], 0.1).unwrap()).unwrap(), 0.0, epsilon = 1e-12);
        // supported in the zero set
        assert_abs_diff_eq!(m.pairing(&tent(&g, &[0.75, 0.0], 0.1).unwrap()).unwrap(), 0.0, epsilon = 1e-12);
        // centered on the kink: point mass of weight 1
        assert_abs_diff_eq!(m.pairing(&tent(&g, &[0.5, 0.0], 0.1).unwrap()).unwrap(), 1.0, epsilon = 1e-12);
        let fb = extract(&u, 0.0, &ls).unwrap();
        assert_eq!(fb.points.len(), 1);
        let w = weak_identity_residual(&u, &p, &fb, &tent(&g, &[0.5, 0.0], 0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(w.lhs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.rhs, 1.0, epsilon = 1e-12);
        let per = perimeter_scaling(&u, &p, &fb, &[0.05, 0.1, 0.2]).unwrap();
        for s in &per.samples {
            assert_abs_diff_eq!(s.lambda_ratio, 1.0, epsilon = 1e-12);
            assert_eq!(s.hausdorff_ratio, 1.0);
        }
    }

    #[test]
    fn weak_identity_rejects_boundary_support() {
        let g = Grid::new_1d(0.0, 1.0, 10).unwrap();
        let p = ExponentField::constant(g, 2.0).unwrap();
        let ls = ScalarField::constant(g, Location::Cell, 1.0).unwrap();
        let u = ScalarField::sample(g, Location::Node, |x| (0.5 - x[0]).max(0.0)).unwrap();
        let fb = extract(&u, 0.0, &ls).unwrap();
        let phi = ScalarField::constant(g, Location::Node, 1.0).unwrap();
        assert!(weak_identity_residual(&u, &p, &fb, &phi).is_err());
    }

    #[test]
    fn half_plane_chord_length() {
        let (u, ls) = half_plane(64, 1.0);
        let p = ExponentField::constant(*u.grid(), 2.0).unwrap();
        let fb = extract(&u, 0.0, &ls).unwrap();
        let per = perimeter_scaling(&u, &p, &fb, &[0.25]).unwrap();
        for s in &per.samples {
            assert_abs_diff_eq!(s.hausdorff_ratio, 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn circle_normals_fit_gamma_one() {
        let g = Grid::new_2d([-1.0, -1.0], [1.0, 1.0], [80, 80]).unwrap();
        let r0 = 0.5;
        let u = ScalarField::sample(g, Location::Node, |x| (r0 - (x[0] * x[0] + x[1] * x[1]).sqrt()).max(0.0)).unwrap();
        let ls = ScalarField::constant(g, Location::Cell, 1.0).unwrap();
        let fb = extract(&u, 0.0, &ls).unwrap();
        let fit = normal_hoelder_fit(&fb, &g).unwrap();
        assert!(!fit.flat);
        assert!((fit.gamma - 1.0).abs() < 0.1, "{fit:?}");
        assert!((fit.constant - 1.0 / r0).abs() < 0.5, "{fit:?}");
        let (flat, ls) = half_plane(32, 1.0);
        let fb = extract(&flat, 0.0, &ls).unwrap();
        assert!(normal_hoelder_fit(&fb, flat.grid()).unwrap().flat);
    }
}
