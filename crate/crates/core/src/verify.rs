//! The verification suite: solve an instance and run every regularity and
//! free-boundary check on the result, in a fixed order, into one report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::barriers::{
    admissible_mu, annulus_samples, exp_lemma_constants, grad_p_sup, gradient_subsolution_check, nondiv_coeffs,
    verify_exp_lemma, ExpBarrier,
};
use crate::error::{Error, Result};
use crate::field::{
    cell_average, gradient_of, lambda_star, BoundaryData, CoefficientField, ExponentField, Location, ScalarField,
};
use crate::freeboundary::{
    blowup, blowup_distance, default_tau, density_ratios, extract, lambda_star_condition, nondegeneracy,
    perimeter_scaling, tent, weak_identity_residual, FreeBoundary,
};
use crate::functional::{counts_positive, energy_exact, EnergyBreakdown};
use crate::grid::{dist, norm, Grid, Point};
use crate::optimizer::{
    eps_floor, minimize, positive_set_residual, subharmonicity_residual, ContinuationSchedule, Init, MinimizerResult,
};
use crate::vxspace::invariant_trials;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Check names in report order, each with the statement it tests.
pub const REGISTRY: &[(&str, &str)] = &[
    ("max_principle", "minimizers satisfy 0 <= u <= sup phi0"),
    ("subharmonicity", "minimizers are p(x)-subharmonic: every nonnegative tent pairing of -div(|grad u|^(p-2) grad u) is >= 0"),
    ("px_harmonicity", "u is p(x)-harmonic in its positivity set"),
    ("holder_seminorm", "u is Hoelder continuous of every order gamma0 < 1"),
    ("lipschitz_quotient", "u is locally Lipschitz continuous when p >= 2"),
    ("nondegeneracy", "sup over B_r(x0) of u is at least c r at free boundary points"),
    ("linear_growth", "sup over B_(3r/4)(x0) of u is at most C r at free boundary points"),
    ("density", "the positivity set has density in [c, 1 - c] in balls centered on the free boundary"),
    ("lambda_star_condition", "|grad u| tends to lambda* = (p lambda / (p - 1))^(1/p) at the free boundary"),
    ("weak_identity", "-int_{u>0} |grad u|^(p-2) grad u . grad phi = int_FB (lambda*)^(p-1) phi dH^(N-1)"),
    ("perimeter_scaling", "Lambda = div(|grad u|^(p-2) grad u) has density (lambda*)^(p-1) with respect to H^(N-1) on the free boundary, both comparable to r^(N-1)"),
    ("blowup_development", "u(x) = lambda*(x0) <x - x0, nu(x0)>^- + o(|x - x0|) at free boundary points"),
    ("vxspace", "Luxemburg norm homogeneity, unit ball, constant-exponent reduction and the modular/norm bound"),
    ("barrier_lemma", "the Gaussian barrier satisfies Delta_p(x) w >= C1 (mu - C2 |grad p| |ln M|) (normalized) on an annulus"),
    ("ellipticity_pinch", "the non-divergence coefficients I + (p - 2) n n^T have eigenvalues {1, p - 1}"),
    ("gradient_subsolution", "v = |grad u| is a weak subsolution: -div(D grad v) + B . grad v <= div H"),
];

pub fn statement(name: &str) -> Option<&'static str> {
    REGISTRY.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statement: String,
    pub values: BTreeMap<String, f64>,
    pub tol: Option<f64>,
    pub status: Status,
    pub notes: String,
}

impl Check {
    fn new(name: &str) -> Self {
        Check {
            name: name.to_string(),
            statement: statement(name).expect("unregistered check").to_string(),
            values: BTreeMap::new(),
            tol: None,
            status: Status::Skip,
            notes: String::new(),
        }
    }

    fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    fn tol(mut self, t: f64) -> Self {
        self.tol = Some(t);
        self
    }

    fn verdict(mut self, pass: bool) -> Self {
        self.status = if pass { Status::Pass } else { Status::Fail };
        self
    }

    fn skip(mut self, reason: &str) -> Self {
        self.status = Status::Skip;
        self.notes = reason.to_string();
        self
    }

    fn note(mut self, note: &str) -> Self {
        self.notes = note.to_string();
        self
    }
}

/// Summary of the solve behind a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub stages: usize,
    pub converged: bool,
    pub retreats: usize,
    pub grad_norm_final: f64,
    /// Final-stage smoothed energy.
    pub energy_smoothed: EnergyBreakdown,
    /// Energy with the sharp indicator at threshold `tau`.
    pub energy_exact: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub artifact_version: String,
    /// Caller-supplied description of the instance (grid, field specs, seed).
    pub instance: serde_json::Value,
    pub schedule: ContinuationSchedule,
    pub options: SuiteOptions,
    pub tau: f64,
    pub solve: Option<SolveSummary>,
    /// Seconds since the epoch; the only field allowed to differ between
    /// identical runs.
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub meta: ReportMeta,
    pub checks: Vec<Check>,
    /// False when a check aborted on an infrastructure error; `error` then
    /// says why and later checks are missing.
    pub complete: bool,
    pub error: Option<String>,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| c.status == Status::Fail).map(|c| c.name.as_str()).collect()
    }

    /// Complete and no failing check.
    pub fn all_pass(&self) -> bool {
        self.complete && self.failures().is_empty()
    }
}

/// Problem data plus schedule.
#[derive(Debug, Clone)]
pub struct Instance {
    pub phi0: BoundaryData,
    pub p: ExponentField,
    pub lambda: CoefficientField,
    pub schedule: ContinuationSchedule,
    pub meta: serde_json::Value,
}

impl Instance {
    /// Validates grids and the schedule; `schedule = None` takes the default.
    pub fn new(
        phi0: BoundaryData,
        p: ExponentField,
        lambda: CoefficientField,
        schedule: Option<ContinuationSchedule>,
        meta: serde_json::Value,
    ) -> Result<Self> {
        let grid = *phi0.grid();
        if p.grid() != &grid || lambda.field().grid() != &grid {
            return Err(Error::GridMismatch);
        }
        let ls_max = lambda_star(&p, &lambda)?.max();
        let schedule = schedule.unwrap_or_else(|| ContinuationSchedule::default_for(&grid, &p, ls_max, phi0.sup()));
        schedule.validate(eps_floor(&grid, ls_max), p.p_min())?;
        Ok(Instance { phi0, p, lambda, schedule, meta })
    }

    pub fn grid(&self) -> &Grid {
        self.phi0.grid()
    }

    pub fn lambda_star(&self) -> ScalarField {
        lambda_star(&self.p, &self.lambda).expect("grids checked at construction")
    }

    pub fn solve(&self) -> Result<MinimizerResult> {
        minimize(&self.phi0, &self.p, &self.lambda, &self.schedule, Init::Dirichlet)
    }
}

/// Location of the free boundary for constant `p`, `lambda` on `(0, 1)` with
/// `phi0(0) = a`, `phi0(1) = 0`: `s = a ((p - 1) / (p lambda))^(1/p)`,
/// when that is below 1.
pub fn oracle_free_boundary(p: f64, lambda: f64, a: f64) -> f64 {
    a * ((p - 1.0) / (p * lambda)).powf(1.0 / p)
}

/// The 1D instance on `(0, 1)` with constant `p`, `lambda` and boundary
/// values `a`, `0`, with its exact free-boundary location.
pub fn oracle_1d(n: usize, p: f64, lambda: f64, a: f64) -> Result<(Instance, f64)> {
    let grid = Grid::new_1d(0.0, 1.0, n)?;
    let phi0 = BoundaryData::sample(grid, |x| if x[0] == 0.0 { a } else { 0.0 })?;
    let pf = ExponentField::constant(grid, p)?;
    let lam = CoefficientField::constant(grid, lambda)?;
    let meta = serde_json::json!({
        "oracle_1d": { "n": n, "p": p, "lambda": lambda, "a": a }
    });
    Ok((Instance::new(phi0, pf, lam, None, meta)?, oracle_free_boundary(p, lambda, a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteOptions {
    /// Positivity threshold; `None` takes `h max lambda*`.
    pub tau: Option<f64>,
    pub holder_gamma: f64,
    pub vx_trials: usize,
    pub seed: u64,
    /// Ball radii for the local free-boundary checks, in units of `h`.
    pub radii_cells: Vec<f64>,
    pub density_bounds: (f64, f64),
    /// Pass iff `sup_{B_r} u / r >= factor * min lambda*`.
    pub nondegeneracy_factor: f64,
    /// Pass iff `sup_{B_{3r/4}} u / r <= factor * max lambda*`.
    pub linear_growth_factor: f64,
    /// `None`: 0.05 in 1D, 0.2 in 2D.
    pub lambda_star_tol: Option<f64>,
    /// `None`: 0.1 in 1D, 0.2 in 2D.
    pub weak_identity_tol: Option<f64>,
    /// Tent radius for the weak identity, in units of `h`.
    pub tent_cells: f64,
    pub max_tents: usize,
    /// Pass iff every `Lambda(B_r) / H(FB ∩ B_r)` lies in
    /// `[min q / slack, slack max q]`, `q = (lambda*)^(p-1)`.
    pub perimeter_slack: f64,
    pub blowup_radii: Vec<f64>,
    pub barrier_amplitude: f64,
    /// Pass iff the weak subsolution sum is at most `tol * scale`.
    pub subsolution_tol: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            tau: None,
            holder_gamma: 0.9,
            vx_trials: 100,
            seed: 0,
            radii_cells: vec![4.0, 8.0, 16.0],
            density_bounds: (0.15, 0.85),
            nondegeneracy_factor: 0.3,
            linear_growth_factor: 2.0,
            lambda_star_tol: None,
            weak_identity_tol: None,
            tent_cells: 8.0,
            max_tents: 16,
            perimeter_slack: 2.0,
            blowup_radii: vec![0.2, 0.1, 0.05],
            barrier_amplitude: 10.0,
            subsolution_tol: 0.05,
        }
    }
}

/// Solves the instance and verifies the minimizer. Solver errors are
/// returned as errors; check-level errors end the report early.
pub fn run_suite(instance: &Instance, options: &SuiteOptions) -> Result<VerificationReport> {
    let result = instance.solve()?;
    let tau = suite_tau(instance, options);
    let summary = SolveSummary {
        stages: result.stages,
        converged: result.converged,
        retreats: result.retreats,
        grad_norm_final: result.grad_norm_final,
        energy_smoothed: result.energy_trace.last().map(|s| s.energy).unwrap_or_default(),
        energy_exact: energy_exact(&result.u, &instance.p, &instance.lambda, tau)?,
    };
    Ok(verify_field(instance, &result.u, Some(summary), options))
}

fn suite_tau(instance: &Instance, options: &SuiteOptions) -> f64 {
    options.tau.unwrap_or_else(|| default_tau(instance.grid(), instance.lambda_star().max()))
}

const NO_FB: &str = "no free boundary";

/// Runs every registered check on a given node field.
pub fn verify_field(
    instance: &Instance,
    u: &ScalarField,
    solve: Option<SolveSummary>,
    options: &SuiteOptions,
) -> VerificationReport {
    let tau = suite_tau(instance, options);
    let mut report = VerificationReport {
        meta: ReportMeta {
            artifact_version: ARTIFACT_VERSION.to_string(),
            instance: instance.meta.clone(),
            schedule: instance.schedule.clone(),
            options: options.clone(),
            tau,
            solve,
            timestamp: None,
        },
        checks: Vec::new(),
        complete: true,
        error: None,
    };
    if u.grid() != instance.grid() || u.location() != Location::Node {
        report.complete = false;
        report.error = Some(Error::GridMismatch.to_string());
        return report;
    }
    let ctx = Context::new(instance, u, tau, options);
    for (name, _) in REGISTRY {
        match ctx.run(name) {
            Ok(check) => report.checks.push(check),
            Err(e) => {
                report.complete = false;
                report.error = Some(format!("{name}: {e}"));
                break;
            }
        }
    }
    report
}

struct Context<'a> {
    inst: &'a Instance,
    u: &'a ScalarField,
    grid: Grid,
    tau: f64,
    opts: &'a SuiteOptions,
    ls: ScalarField,
    fb: Option<FreeBoundary>,
    fb_reason: &'static str,
    radii: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(inst: &'a Instance, u: &'a ScalarField, tau: f64, opts: &'a SuiteOptions) -> Self {
        let grid = *inst.grid();
        let ls = inst.lambda_star();
        let h = grid.h_max();
        let (fb, fb_reason) = if inst.lambda.is_zero() {
            (None, "no free boundary: lambda = 0, the minimizer is p(x)-harmonic")
        } else {
            match extract(u, tau, &ls) {
                Ok(fb) if fb.none => (None, NO_FB),
                // crossings only next to the boundary come from the data, not
                // from a free boundary
                Ok(fb) if fb.points.iter().all(|x| grid.distance_to_boundary(x) < h) => {
                    (None, "no free boundary: level set only touches the domain boundary")
                }
                Ok(fb) => (Some(fb), ""),
                Err(_) => (None, NO_FB),
            }
        };
        let radii = opts.radii_cells.iter().map(|c| c * h).collect();
        Context { inst, u, grid, tau, opts, ls, fb, fb_reason, radii }
    }

    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn final_delta(&self) -> f64 {
        self.inst.schedule.final_delta()
    }

    fn run(&self, name: &str) -> Result<Check> {
        let c = Check::new(name);
        match name {
            "max_principle" => self.max_principle(c),
            "subharmonicity" => self.subharmonicity(c),
            "px_harmonicity" => self.px_harmonicity(c),
            "holder_seminorm" => self.holder(c),
            "lipschitz_quotient" => self.lipschitz(c),
            "nondegeneracy" | "linear_growth" => self.growth(c),
            "density" => self.density(c),
            "lambda_star_condition" => self.lambda_star(c),
            "weak_identity" => self.weak_identity(c),
            "perimeter_scaling" => self.perimeter(c),
            "blowup_development" => self.blowup(c),
            "vxspace" => self.vxspace(c),
            "barrier_lemma" => self.barrier(c),
            "ellipticity_pinch" => self.ellipticity(c),
            "gradient_subsolution" => self.subsolution(c),
            _ => unreachable!("check {name} has no runner"),
        }
    }

    fn max_principle(&self, c: Check) -> Result<Check> {
        let sup = self.inst.phi0.sup();
        let vals = self.u.values();
        let violations = vals.iter().filter(|&&v| !(v >= 0.0 && v <= sup)).count();
        Ok(c.value("violations", violations as f64)
            .value("min", self.u.min())
            .value("max", self.u.max())
            .value("sup_phi0", sup)
            .tol(0.0)
            .verdict(violations == 0))
    }

    fn subharmonicity(&self, c: Check) -> Result<Check> {
        let r = subharmonicity_residual(self.u, &self.inst.p, self.final_delta())?;
        let tol = 1e-6;
        let floor = self.inst.schedule.inner_tol * self.grid.cell_volume();
        Ok(c.value("min", r.min)
            .value("scale", r.scale)
            .value("solver_floor", floor)
            .value("node", r.node as f64)
            .tol(tol)
            .verdict(r.passes(tol, self.inst.schedule.inner_tol, self.grid.cell_volume())))
    }

    fn px_harmonicity(&self, c: Check) -> Result<Check> {
        let tol = 10.0 * self.inst.schedule.inner_tol;
        match positive_set_residual(self.u, &self.inst.p, self.tau, self.final_delta())? {
            Some(r) => Ok(c.value("residual", r).tol(tol).verdict(r <= tol)),
            None => Ok(c.tol(tol).skip("no interior node of the positivity set")),
        }
    }

    /// `sup |u(x) - u(y)| / |x - y|^gamma` over node pairs with
    /// `lo <= |x - y| <= hi`, optionally interior nodes only.
    fn pair_quotient(&self, gamma: f64, lo: f64, hi: f64, interior: bool) -> (f64, usize) {
        let g = &self.grid;
        let vals = self.u.values();
        let span: Vec<usize> = (0..g.dim()).map(|a| (hi / g.h(a)).floor() as usize).collect();
        let mut best = 0.0f64;
        let mut pairs = 0;
        for k in 0..g.node_count() {
            if interior && g.is_boundary_node(k) {
                continue;
            }
            let (i, j) = g.node_ij(k);
            let xk = g.node_coord(k);
            let jr = if g.dim() == 2 { j..=(j + span[1]).min(g.n(1)) } else { 0..=0 };
            for jj in jr {
                let i_lo = if jj == j { i + 1 } else { i.saturating_sub(span[0]) };
                for ii in i_lo..=(i + span[0]).min(g.n(0)) {
                    let m = g.node_index(ii, jj);
                    if interior && g.is_boundary_node(m) {
                        continue;
                    }
                    let d = dist(&xk, &g.node_coord(m));
                    if d < lo || d > hi {
                        continue;
                    }
                    pairs += 1;
                    best = best.max((vals[k] - vals[m]).abs() / d.powf(gamma));
                }
            }
        }
        (best, pairs)
    }

    fn holder(&self, c: Check) -> Result<Check> {
        let gamma = self.opts.holder_gamma;
        let (v, pairs) = self.pair_quotient(gamma, 0.0, 0.25 * self.grid.diameter(), false);
        Ok(c.value("seminorm", v)
            .value("gamma", gamma)
            .value("pairs", pairs as f64)
            .verdict(v.is_finite())
            .note("tracked value; finite on every grid, its refinement behavior is the evidence"))
    }

    fn lipschitz(&self, c: Check) -> Result<Check> {
        let h = self.grid.h_max();
        let (v, pairs) = self.pair_quotient(1.0, 2.0 * h, 0.25 * self.grid.diameter(), true);
        let c = c.value("quotient", v).value("pairs", pairs as f64);
        if self.inst.p.p_min() < 2.0 {
            return Ok(c.skip("report-only: Lipschitz continuity is only established for p >= 2"));
        }
        Ok(c.verdict(v.is_finite()).note("interior node pairs at distance >= 2h; tracked value"))
    }

    fn require_fb(&self, c: Check) -> std::result::Result<&FreeBoundary, Check> {
        match &self.fb {
            Some(fb) => Ok(fb),
            None => Err(c.skip(self.fb_reason)),
        }
    }

    fn growth(&self, c: Check) -> Result<Check> {
        let fb = match self.require_fb(c.clone()) {
            Ok(fb) => fb,
            Err(skip) => return Ok(skip),
        };
        let g = match nondegeneracy(self.u, fb, &self.radii) {
            Ok(g) => g,
            Err(Error::TooFewPoints { .. }) => {
                return Ok(c.skip("no ball around a free boundary point fits in the domain"))
            }
            Err(e) => return Err(e),
        };
        if c.name == "nondegeneracy" {
            let bound = self.opts.nondegeneracy_factor * self.ls.min();
            Ok(c.value("min", g.nondegeneracy.min)
                .value("bound", bound)
                .value("samples", g.nondegeneracy.samples.len() as f64)
                .value("skipped", g.nondegeneracy.skipped as f64)
                .tol(self.opts.nondegeneracy_factor)
                .verdict(g.nondegeneracy.min >= bound))
        } else {
            let bound = self.opts.linear_growth_factor * self.ls.max();
            Ok(c.value("max", g.linear_growth.max)
                .value("bound", bound)
                .value("samples", g.linear_growth.samples.len() as f64)
                .tol(self.opts.linear_growth_factor)
                .verdict(g.linear_growth.max <= bound))
        }
    }

    fn density(&self, c: Check) -> Result<Check> {
        let fb = match self.require_fb(c.clone()) {
            Ok(fb) => fb,
            Err(skip) => return Ok(skip),
        };
        let d = match density_ratios(self.u, self.tau, fb, &self.radii) {
            Ok(d) => d,
            Err(Error::TooFewPoints { .. }) => {
                return Ok(c.skip("no ball around a free boundary point fits in the domain"))
            }
            Err(e) => return Err(e),
        };
        let (lo, hi) = self.opts.density_bounds;
        Ok(c.value("min", d.min)
            .value("max", d.max)
            .value("samples", d.samples.len() as f64)
            .value("skipped", d.skipped as f64)
            .tol(lo)
            .verdict(d.min >= lo && d.max <= hi))
    }

    fn lambda_star(&self, c: Check) -> Result<Check> {
        let fb = match self.require_fb(c.clone()) {
            Ok(fb) => fb,
            Err(skip) => return Ok(skip),
        };
        let tol = self.opts.lambda_star_tol.unwrap_or(if self.dim() == 1 { 0.05 } else { 0.2 });
        match lambda_star_condition(fb, &self.grid) {
            Ok(l) => Ok(c
                .value("max_relerr", l.max)
                .value("points", l.counted as f64)
                .value("margin", l.margin)
                .tol(tol)
                .verdict(l.max <= tol)),
            Err(Error::TooFewPoints { .. }) => {
                Ok(c.tol(tol).skip("no free boundary point away from the domain boundary"))
            }
            Err(e) => Err(e),
        }
    }

    /// Indices of free boundary points whose ball of radius `r` (plus one
    /// cell) stays inside the domain, evenly thinned to at most `max`.
    fn interior_points(&self, fb: &FreeBoundary, r: f64, max: usize) -> Vec<usize> {
        let h = self.grid.h_max();
        let all: Vec<usize> =
            (0..fb.len()).filter(|&i| self.grid.distance_to_boundary(&fb.points[i]) >= r + h).collect();
        if all.len() <= max {
            return all;
        }
        (0..max).map(|k| all[k * all.len() / max]).collect()
    }

    fn weak_identity(&self, c: Check) -> Result<Check> {
        let fb = match self.require_fb(c.clone()) {
            Ok(fb) => fb,
            Err(skip) => return Ok(skip),
        };
        let tol = self.opts.weak_identity_tol.unwrap_or(if self.dim() == 1 { 0.1 } else { 0.2 });
        let r = self.opts.tent_cells * self.grid.h_max();
        let centers = self.interior_points(fb, r, self.opts.max_tents);
        if centers.is_empty() {
            return Ok(c.tol(tol).skip("no tent around a free boundary point fits in the domain"));
        }
        let mut worst = 0.0f64;
        for &i in &centers {
            let phi = tent(&self.grid, &fb.points[i], r)?;
            let w = weak_identity_residual(self.u, &self.inst.p, fb, &phi)?;
            worst = worst.max(w.relerr);
        }
        Ok(c.value("max_relerr", worst)
            .value("tents", centers.len() as f64)
            .value("radius", r)
            .tol(tol)
            .verdict(worst <= tol))
    }

    fn perimeter(&self, c: Check) -> Result<Check> {
        let fb = match self.require_fb(c.clone()) {
            Ok(fb) => fb,
            Err(skip) => return Ok(skip),
        };
        let per = match perimeter_scaling(self.u, &self.inst.p, fb, &self.radii) {
            Ok(p) => p,
            Err(Error::TooFewPoints { .. }) => {
                return Ok(c.skip("no ball around a free boundary point fits in the domain"))
            }
            Err(e) => return Err(e),
        };
        let q: Vec<f64> =
            fb.lambda_star_local.iter().zip(&fb.points).map(|(l, x)| l.powf(self.inst.p.at(x) - 1.0)).collect();
        let q_min = q.iter().copied().fold(f64::INFINITY, f64::min);
        let q_max = q.iter().copied().fold(0.0, f64::max);
        let slack = self.opts.perimeter_slack;
        let ratios: Vec<f64> = per
            .samples
            .iter()
            .filter(|s| s.hausdorff_ratio > 0.0)
            .map(|s| s.lambda_ratio / s.hausdorff_ratio)
            .collect();
        let r_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = ratios.iter().copied().fold(0.0, f64::max);
        let pass = ratios.len() == per.samples.len() && r_min >= q_min / slack && r_max <= slack * q_max;
        Ok(c.value("lambda_min", per.lambda_min)
            .value("lambda_max", per.lambda_max)
            .value("hausdorff_min", per.hausdorff_min)
            .value("hausdorff_max", per.hausdorff_max)
            .value("density_min", r_min)
            .value("density_max", r_max)
            .value("q_min", q_min)
            .value("q_max", q_max)
            .tol(slack)
            .verdict(pass))
    }

    fn blowup(&self, c: Check) -> Result<Check> {
        let fb = match self.require_fb(c.clone()) {
            Ok(fb) => fb,
            Err(skip) => return Ok(skip),
        };
        // the free boundary point farthest from the domain boundary
        let i = (0..fb.len())
            .max_by(|&a, &b| {
                let da = self.grid.distance_to_boundary(&fb.points[a]);
                let db = self.grid.distance_to_boundary(&fb.points[b]);
                da.partial_cmp(&db).unwrap()
            })
            .expect("nonempty free boundary");
        let x0 = fb.points[i];
        let mut distances = Vec::new();
        let mut c = c.value("x0", x0[0]);
        if self.dim() == 2 {
            c = c.value("y0", x0[1]);
        }
        for &rho in &self.opts.blowup_radii {
            match blowup(self.u, &x0, rho) {
                Ok(b) => {
                    let d = blowup_distance(&b, fb.lambda_star_local[i], &fb.normals[i]);
                    c = c.value(&format!("distance_rho_{rho}"), d);
                    distances.push(d);
                }
                Err(Error::Containment { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        if distances.len() < 2 {
            return Ok(c.skip("fewer than two blow-up radii fit in the domain"));
        }
        let decreasing = distances.windows(2).all(|w| w[1] < w[0]);
        Ok(c.verdict(decreasing)
            .note("pass iff the sup distance to the half-plane profile strictly decreases as rho decreases"))
    }

    fn vxspace(&self, c: Check) -> Result<Check> {
        let t = invariant_trials(&self.grid, Some(&self.inst.p), self.opts.vx_trials, self.opts.seed)?;
        Ok(c.value("homogeneity", t.homogeneity)
            .value("unit_ball", t.unit_ball)
            .value("constant_reduction", t.constant_reduction)
            .value("equi_failures", t.equi_failures as f64)
            .value("trials", t.trials as f64)
            .verdict(t.pass()))
    }

    fn barrier(&self, c: Check) -> Result<Check> {
        let g = &self.grid;
        let mut center = [0.0; 2];
        let mut half = f64::INFINITY;
        for a in 0..g.dim() {
            center[a] = 0.5 * (g.lower(a) + g.upper(a));
            half = half.min(0.5 * (g.upper(a) - g.lower(a)));
        }
        let (r1, r2, m) = (0.8 * half, 0.4 * half, self.opts.barrier_amplitude);
        let probe = ExpBarrier::new(m, 1.0, r1, r2, center)?;
        let gs = grad_p_sup(&self.inst.p);
        let k = exp_lemma_constants(&probe, self.inst.p.p_min(), self.inst.p.p_max(), gs, g.dim());
        let c = c.value("grad_p_sup", gs).value("eps0", k.eps0);
        if gs > k.eps0 {
            return Ok(c.skip("lemma hypotheses violated: sup |grad p| exceeds eps0"));
        }
        let mu = admissible_mu(&k, gs, m);
        let barrier = ExpBarrier::new(m, mu, r1, r2, center)?;
        let rep = verify_exp_lemma(&barrier, &self.inst.p, &annulus_samples(&barrier, g.dim(), 16, 64))?;
        Ok(c.value("min", rep.min)
            .value("threshold", rep.threshold)
            .value("mu", mu)
            .value("mu0", rep.constants.mu0)
            .value("c1", rep.constants.c1)
            .value("c2", rep.constants.c2)
            .verdict(rep.pass)
            .note("C1, C2, mu0, eps0 are derived from the explicit estimates of the barrier computation"))
    }

    /// Cells of the positivity set with nonzero gradient.
    fn positive_cells(&self) -> Vec<usize> {
        let avg = cell_average(&self.grid, self.u.values());
        let grads = gradient_of(&self.grid, self.u.values());
        (0..self.grid.cell_count()).filter(|&c| counts_positive(avg[c], self.tau) && norm(&grads[c]) > 0.0).collect()
    }

    fn ellipticity(&self, c: Check) -> Result<Check> {
        let cells = self.positive_cells();
        if cells.is_empty() {
            return Ok(c.skip("no positive cell with nonzero gradient"));
        }
        let grads = gradient_of(&self.grid, self.u.values());
        let n: Vec<f64> = cells.iter().map(|&k| norm(&grads[k])).collect();
        let band = (n.iter().copied().fold(f64::INFINITY, f64::min), n.iter().copied().fold(0.0, f64::max));
        let nd = nondiv_coeffs(self.u, &self.inst.p, &cells, band)?;
        let mut worst = 0.0f64;
        for (&k, e) in cells.iter().zip(&nd.eigenvalues) {
            let pc = self.inst.p.values()[k];
            let (lo, hi) =
                if self.dim() == 1 { (pc - 1.0, pc - 1.0) } else { (1f64.min(pc - 1.0), 1f64.max(pc - 1.0)) };
            worst = worst.max((e.0 - lo).abs()).max((e.1 - hi).abs());
        }
        let tol = 1e-12;
        Ok(c.value("max_deviation", worst)
            .value("cells", cells.len() as f64)
            .value("eig_min", nd.ellipticity.0)
            .value("eig_max", nd.ellipticity.1)
            .tol(tol)
            .verdict(worst <= tol))
    }

    fn subsolution(&self, c: Check) -> Result<Check> {
        let tol = self.opts.subsolution_tol;
        let h = self.grid.h_max();
        // node of the positivity set farthest from both the free boundary
        // and the domain boundary
        let fb_points: &[Point] = self.fb.as_ref().map_or(&[], |f| &f.points);
        let mut best = (0.0, 0usize);
        for k in 0..self.grid.node_count() {
            if !(self.u.values()[k] > self.tau) {
                continue;
            }
            let x = self.grid.node_coord(k);
            let d = fb_points.iter().map(|y| dist(&x, y)).fold(self.grid.distance_to_boundary(&x), f64::min);
            if d > best.0 {
                best = (d, k);
            }
        }
        let r = 0.5 * best.0;
        if r < 3.0 * h {
            return Ok(c.tol(tol).skip("positivity set too thin for a test function"));
        }
        let center = self.grid.node_coord(best.1);
        let phi = tent(&self.grid, &center, r)?;
        let grads = gradient_of(&self.grid, self.u.values());
        let mut band = (f64::INFINITY, 0.0f64);
        for cell in self.grid.cells_in_ball(&center, r + 2.0 * h) {
            let n = norm(&grads[cell]);
            band = (band.0.min(n), band.1.max(n));
        }
        if !(band.0 > 0.0) {
            return Ok(c.tol(tol).skip("gradient vanishes on the test support"));
        }
        let s = gradient_subsolution_check(self.u, &self.inst.p, band, &phi)?;
        Ok(c.value("value", s.value)
            .value("scale", s.scale)
            .value("rounding_floor", s.rounding_floor)
            .value("radius", r)
            .value("band_lo", band.0)
            .value("band_hi", band.1)
            .tol(tol)
            .verdict(s.value <= tol * s.scale + s.rounding_floor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub h: f64,
    pub lambda_star_error: Option<f64>,
    pub fb_error: Option<f64>,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub rows: Vec<RefinementRow>,
    /// Fitted slope of `log error` against `log h`; `None` when skipped.
    pub lambda_star_order: Option<f64>,
    pub fb_order: Option<f64>,
    /// Quantities whose error grew by more than 20% between consecutive
    /// levels.
    pub flags: Vec<String>,
}

/// Errors at or below this are treated as interpolation noise and left out
/// of order fits.
pub const ERROR_FLOOR: f64 = 1e-10;

/// Log-log least-squares slope; `None` with fewer than two usable points.
pub fn fit_order(h: &[f64], err: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        h.iter().zip(err).filter(|(_, &e)| e > ERROR_FLOOR).map(|(&h, &e)| (h.ln(), e.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Per-level quantities for solved fields on successively finer grids
/// (coarsest first). Free-boundary location errors are measured against
/// `reference` points when given, otherwise against the finest level.
pub fn refinement_study(levels: &[(Instance, ScalarField)], reference: Option<&[Point]>) -> Result<RefinementStudy> {
    if levels.len() < 3 {
        return Err(Error::InvalidArgument(format!("refinement needs at least 3 levels, got {}", levels.len())));
    }
    let opts = SuiteOptions::default();
    let mut fbs = Vec::new();
    let mut rows = Vec::new();
    for (inst, u) in levels {
        let ctx = Context::new(inst, u, suite_tau(inst, &opts), &opts);
        let lerr = match &ctx.fb {
            Some(fb) => lambda_star_condition(fb, inst.grid()).ok().map(|l| l.max),
            None => None,
        };
        let h = inst.grid().h_max();
        let (lip, _) = ctx.pair_quotient(1.0, 2.0 * h, 0.25 * inst.grid().diameter(), true);
        fbs.push(ctx.fb.clone());
        rows.push(RefinementRow { h, lambda_star_error: lerr, fb_error: None, lipschitz: lip });
    }
    let finest: Option<Vec<Point>> = match reference {
        Some(r) => Some(r.to_vec()),
        None => fbs.last().cloned().flatten().map(|f| f.points),
    };
    let last = if reference.is_some() { rows.len() } else { rows.len() - 1 };
    if let Some(refpts) = finest.filter(|r| !r.is_empty()) {
        for (row, fb) in rows.iter_mut().zip(&fbs).take(last) {
            row.fb_error = fb.as_ref().map(|fb| {
                fb.points
                    .iter()
                    .map(|x| refpts.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
                    .fold(0.0, f64::max)
            });
        }
    }
    let mut flags = Vec::new();
    let series = |f: &dyn Fn(&RefinementRow) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
        rows.iter().filter_map(|r| f(r).map(|e| (r.h, e))).unzip()
    };
    let (hl, el) = series(&|r| r.lambda_star_error);
    let (hf, ef) = series(&|r| r.fb_error);
    for (name, e) in [("lambda_star_error", &el), ("fb_error", &ef)] {
        if e.windows(2).any(|w| w[0] > ERROR_FLOOR && w[1] > 1.2 * w[0]) {
            flags.push(format!("{name} not decreasing under refinement"));
        }
    }
    Ok(RefinementStudy { lambda_star_order: fit_order(&hl, &el), fb_order: fit_order(&hf, &ef), rows, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_total_and_unique() {
        let mut names: Vec<&str> = REGISTRY.iter().map(|(n, _)| *n).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), REGISTRY.len());
        for (n, s) in REGISTRY {
            assert_eq!(statement(n), Some(*s));
            assert!(!s.is_empty());
        }
    }

    #[test]
    fn oracle_location() {
        assert!((oracle_free_boundary(2.0, 0.5, 0.5) - 0.5).abs() < 1e-15);
        // p = 3, lambda = 1: s = a (2/3)^(1/3)
        assert!((oracle_free_boundary(3.0, 1.0, 0.6) - 0.6 * (2.0f64 / 3.0).powf(1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn order_fit() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|h| 3.0 * h * h).collect();
        assert!((fit_order(&h, &e).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(fit_order(&h, &[0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn exact_half_plane_levels_hit_the_floor() {
        let mut levels = Vec::new();
        for n in [32, 64, 128] {
            let (inst, _) = oracle_1d(n, 2.0, 0.5, 0.5).unwrap();
            let u = ScalarField::sample(*inst.grid(), Location::Node, |x| (0.5 - x[0]).max(0.0)).unwrap();
            levels.push((inst, u));
        }
        let study = refinement_study(&levels, None).unwrap();
        assert_eq!(study.lambda_star_order, None);
        for row in &study.rows {
            assert!(row.lambda_star_error.unwrap() < ERROR_FLOOR);
        }
        assert!(study.flags.is_empty());
    }

    #[test]
    fn report_fails_only_the_broken_check_on_halved_slope() {
        let (inst, _) = oracle_1d(64, 2.0, 0.5, 0.5).unwrap();
        let u = ScalarField::sample(*inst.grid(), Location::Node, |x| (0.5 - x[0]).max(0.0) * 0.5).unwrap();
        let opts = SuiteOptions { vx_trials: 5, ..SuiteOptions::default() };
        let rep = verify_field(&inst, &u, None, &opts);
        assert!(rep.complete, "{:?}", rep.error);
        assert_eq!(rep.checks.len(), REGISTRY.len());
        assert_eq!(rep.check("lambda_star_condition").unwrap().status, Status::Fail);
        assert_eq!(rep.check("max_principle").unwrap().status, Status::Pass);
        assert_eq!(rep.check("subharmonicity").unwrap().status, Status::Pass);
    }
}
