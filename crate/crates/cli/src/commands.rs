use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use pxfb::freeboundary::{default_tau, extract, lambda_star_condition, FreeBoundary};
use pxfb::functional::{energy_exact, EnergyBreakdown};
use pxfb::optimizer::MinimizerResult;
use pxfb::verify::{verify_field, Instance, SolveSummary, Status, VerificationReport, ARTIFACT_VERSION};
use pxfb::{Location, ScalarField};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Axis, Config};
use crate::error::{CliError, CliResult, EXIT_CHECK_FAILURE};
use crate::output::{
    atomic_write, csv_cell, energy_trace_csv, field_csv, free_boundary_csv, opt_num, read_field_csv, write_json,
};

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn tau_for(cfg: &Config, inst: &Instance) -> f64 {
    cfg.verify.tau.unwrap_or_else(|| default_tau(inst.grid(), inst.lambda_star().max()))
}

/// Runs the minimizer; a stage that hit its iteration cap counts as a
/// solver failure.
fn run_solver(inst: &Instance) -> CliResult<MinimizerResult> {
    let r = inst.solve().map_err(|e| CliError::Solver(e.to_string()))?;
    if let Some((stage, t)) = r.energy_trace.iter().enumerate().find(|(_, t)| !t.converged) {
        return Err(CliError::Solver(format!(
            "stage {stage} (eps={}, delta={}) stopped after {} iterations with projected gradient {:e}",
            t.eps, t.delta, t.iterations, t.grad_norm
        )));
    }
    Ok(r)
}

fn summarize(inst: &Instance, r: &MinimizerResult, tau: f64) -> CliResult<SolveSummary> {
    Ok(SolveSummary {
        stages: r.stages,
        converged: r.converged,
        retreats: r.retreats,
        grad_norm_final: r.grad_norm_final,
        energy_smoothed: r.energy_trace.last().map(|s| s.energy).unwrap_or_default(),
        energy_exact: energy_exact(&r.u, &inst.p, &inst.lambda, tau).map_err(|e| CliError::Solver(e.to_string()))?,
    })
}

fn free_boundary(inst: &Instance, u: &ScalarField, tau: f64) -> Option<FreeBoundary> {
    if inst.lambda.is_zero() {
        return None;
    }
    extract(u, tau, &inst.lambda_star()).ok().filter(|fb| !fb.none && !fb.is_empty())
}

#[derive(Debug, Serialize)]
struct FreeBoundarySummary {
    present: bool,
    points: usize,
    /// Polyline length in 2D, point count in 1D.
    measure: f64,
    mean_x: Option<f64>,
    lambda_star_error_max: Option<f64>,
}

impl FreeBoundarySummary {
    fn new(fb: Option<&FreeBoundary>, inst: &Instance) -> Self {
        match fb {
            None => FreeBoundarySummary {
                present: false,
                points: 0,
                measure: 0.0,
                mean_x: None,
                lambda_star_error_max: None,
            },
            Some(fb) => FreeBoundarySummary {
                present: true,
                points: fb.len(),
                measure: fb.measure(),
                mean_x: Some(fb.points.iter().map(|x| x[0]).sum::<f64>() / fb.len() as f64),
                lambda_star_error_max: lambda_star_condition(fb, inst.grid()).ok().map(|c| c.max),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct EnergySummary {
    smoothed: EnergyBreakdown,
    exact: EnergyBreakdown,
}

#[derive(Debug, Serialize)]
struct SolveResult<'a> {
    artifact_version: &'a str,
    config: serde_json::Value,
    tau: f64,
    stages: usize,
    converged: bool,
    retreats: usize,
    grad_norm_final: f64,
    energy: EnergySummary,
    free_boundary: FreeBoundarySummary,
    timestamp: u64,
}

/// Writes `u.csv`, `fb.csv`, `energy_trace.csv` and `result.json`.
fn write_solve_outputs(
    out: &Path,
    cfg: &Config,
    inst: &Instance,
    r: &MinimizerResult,
    summary: &SolveSummary,
    tau: f64,
) -> CliResult<Option<FreeBoundary>> {
    let fb = free_boundary(inst, &r.u, tau);
    let dim = inst.grid().dim();
    atomic_write(&out.join("u.csv"), field_csv(&r.u, "u").as_bytes())?;
    let empty = FreeBoundary {
        tau,
        none: true,
        points: vec![],
        normals: vec![],
        grad_trace: vec![],
        lambda_star_local: vec![],
        segments: vec![],
        probe: 0.0,
    };
    atomic_write(&out.join("fb.csv"), free_boundary_csv(fb.as_ref().unwrap_or(&empty), dim).as_bytes())?;
    atomic_write(&out.join("energy_trace.csv"), energy_trace_csv(&r.energy_trace).as_bytes())?;
    let result = SolveResult {
        artifact_version: ARTIFACT_VERSION,
        config: cfg.meta(),
        tau,
        stages: summary.stages,
        converged: summary.converged,
        retreats: summary.retreats,
        grad_norm_final: summary.grad_norm_final,
        energy: EnergySummary { smoothed: summary.energy_smoothed, exact: summary.energy_exact },
        free_boundary: FreeBoundarySummary::new(fb.as_ref(), inst),
        timestamp: timestamp(),
    };
    write_json(&out.join("result.json"), &result)?;
    Ok(fb)
}

pub fn solve(cfg: &Config, out: &Path) -> CliResult<i32> {
    let inst = cfg.instance()?;
    let r = run_solver(&inst)?;
    let tau = tau_for(cfg, &inst);
    let summary = summarize(&inst, &r, tau)?;
    let fb = write_solve_outputs(out, cfg, &inst, &r, &summary, tau)?;
    println!(
        "solved: {} stages, energy {:.10e}, free boundary points {}",
        summary.stages,
        summary.energy_exact.total,
        fb.map(|f| f.len()).unwrap_or(0)
    );
    Ok(0)
}

fn load_field(path: &Path, inst: &Instance) -> CliResult<ScalarField> {
    let grid = *inst.grid();
    let values = read_field_csv(path, &grid, Location::Node).map_err(|e| {
        if path.exists() {
            CliError::Config(format!("--load-field: {e}"))
        } else {
            CliError::Io(e)
        }
    })?;
    ScalarField::from_values(grid, Location::Node, values).map_err(|e| CliError::Config(format!("--load-field: {e}")))
}

/// Solution field plus solve summary; a loaded field has no summary.
fn field_for(
    cfg: &Config,
    inst: &Instance,
    load: Option<&Path>,
) -> CliResult<(ScalarField, Option<SolveSummary>, Option<MinimizerResult>)> {
    match load {
        Some(path) => Ok((load_field(path, inst)?, None, None)),
        None => {
            let r = run_solver(inst)?;
            let summary = summarize(inst, &r, tau_for(cfg, inst))?;
            Ok((r.u.clone(), Some(summary), Some(r)))
        }
    }
}

fn verification(cfg: &Config, inst: &Instance, u: &ScalarField, summary: Option<SolveSummary>) -> VerificationReport {
    let mut report = verify_field(inst, u, summary, &cfg.suite_options());
    report.meta.timestamp = Some(timestamp());
    report
}

fn status_label(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    }
}

fn print_summary(report: &VerificationReport) {
    for c in &report.checks {
        let values: Vec<String> = c.values.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
        let mut line = format!("[{}] {:<22} {}", status_label(c.status), c.name, values.join(" "));
        if !c.notes.is_empty() {
            line.push_str(&format!(" ({})", c.notes));
        }
        println!("{line}");
    }
    let count = |s| report.checks.iter().filter(|c| c.status == s).count();
    println!("{} passed, {} failed, {} skipped", count(Status::Pass), count(Status::Fail), count(Status::Skip));
    if let Some(e) = &report.error {
        println!("suite aborted: {e}");
    }
}

fn verdict(report: &VerificationReport) -> i32 {
    if report.all_pass() {
        0
    } else {
        EXIT_CHECK_FAILURE
    }
}

pub fn verify(cfg: &Config, out: &Path, load: Option<&Path>) -> CliResult<i32> {
    let inst = cfg.instance()?;
    let (u, summary, _) = field_for(cfg, &inst, load)?;
    let report = verification(cfg, &inst, &u, summary);
    write_json(&out.join("report.json"), &report)?;
    print_summary(&report);
    Ok(verdict(&report))
}

/// Writes the canonical config, the input fields, `lambda*` and the solution
/// (solved, or taken from `--load-field`) as CSV.
pub fn export(cfg: &Config, out: &Path, load: Option<&Path>) -> CliResult<i32> {
    let inst = cfg.instance()?;
    let (u, _, _) = field_for(cfg, &inst, load)?;
    atomic_write(&out.join("config.toml"), cfg.canonical().as_bytes())?;
    atomic_write(&out.join("phi0.csv"), field_csv(inst.phi0.field(), "phi0").as_bytes())?;
    atomic_write(&out.join("p.csv"), field_csv(inst.p.field(), "p").as_bytes())?;
    atomic_write(&out.join("lambda.csv"), field_csv(inst.lambda.field(), "lambda").as_bytes())?;
    atomic_write(&out.join("lambda_star.csv"), field_csv(&inst.lambda_star(), "lambda_star").as_bytes())?;
    atomic_write(&out.join("u.csv"), field_csv(&u, "u").as_bytes())?;
    let tau = tau_for(cfg, &inst);
    if let Some(fb) = free_boundary(&inst, &u, tau) {
        atomic_write(&out.join("fb.csv"), free_boundary_csv(&fb, inst.grid().dim()).as_bytes())?;
    }
    println!("exported to {}", out.display());
    Ok(0)
}

struct SweepRow {
    value: f64,
    status: String,
    h: Option<f64>,
    energy_exact: Option<f64>,
    fb_points: Option<usize>,
    fb_mean_x: Option<f64>,
    oracle_x: Option<f64>,
    lambda_star_error: Option<f64>,
    failed_checks: Vec<String>,
}

impl SweepRow {
    fn failed(&self) -> bool {
        self.status != "ok"
    }
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

fn sweep_one(cfg: &Config, axis: Axis, value: f64, dir: &Path) -> SweepRow {
    let mut row = SweepRow {
        value,
        status: "ok".into(),
        h: None,
        energy_exact: None,
        fb_points: None,
        fb_mean_x: None,
        oracle_x: None,
        lambda_star_error: None,
        failed_checks: Vec::new(),
    };
    let run = |row: &mut SweepRow| -> CliResult<()> {
        let c = cfg.with_axis(axis, value)?;
        row.oracle_x = c.oracle_location();
        let inst = c.instance()?;
        row.h = Some(inst.grid().h_max());
        let r = run_solver(&inst)?;
        let tau = tau_for(&c, &inst);
        let summary = summarize(&inst, &r, tau)?;
        row.energy_exact = Some(summary.energy_exact.total);
        let fb = write_solve_outputs(dir, &c, &inst, &r, &summary, tau)?;
        let fbs = FreeBoundarySummary::new(fb.as_ref(), &inst);
        row.fb_points = Some(fbs.points);
        row.fb_mean_x = fbs.mean_x;
        row.lambda_star_error = fbs.lambda_star_error_max;
        let report = verification(&c, &inst, &r.u, Some(summary));
        write_json(&dir.join("report.json"), &report)?;
        row.failed_checks = report.failures().iter().map(|s| s.to_string()).collect();
        if let Some(e) = &report.error {
            row.failed_checks.push(format!("aborted: {e}"));
        }
        if !report.all_pass() {
            row.status = "check_failure".into();
        }
        Ok(())
    };
    if let Err(e) = run(&mut row) {
        log::error!("{}={}: {e}", axis.name(), format_value(value));
        row.status = e.to_string();
    }
    row
}

/// One subdirectory `<axis>_<value>` per value (ascending), run in parallel
/// up to `jobs`, plus `summary.csv`.
pub fn sweep(cfg: &Config, out: &Path, axis: Axis, values: &[f64], jobs: usize) -> CliResult<i32> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(CliError::Config(format!("sweep value {v} is not finite")));
    }
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        values
            .par_iter()
            .map(|&v| {
                let dir = out.join(format!("{}_{}", axis.name(), format_value(v)));
                sweep_one(cfg, axis, v, &dir)
            })
            .collect()
    });
    let mut csv = String::from(
        "axis,value,status,h,energy_exact,fb_points,fb_mean_x,oracle_x,fb_error,lambda_star_error,failed_checks\n",
    );
    for r in &rows {
        let fb_error = match (r.fb_mean_x, r.oracle_x) {
            (Some(x), Some(s)) if r.fb_points == Some(1) => Some((x - s).abs()),
            _ => None,
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            axis.name(),
            format_value(r.value),
            csv_cell(&r.status),
            opt_num(r.h),
            opt_num(r.energy_exact),
            r.fb_points.map(|n| n.to_string()).unwrap_or_default(),
            opt_num(r.fb_mean_x),
            opt_num(r.oracle_x),
            opt_num(fb_error),
            opt_num(r.lambda_star_error),
            csv_cell(&r.failed_checks.join(";"))
        ));
    }
    atomic_write(&out.join("summary.csv"), csv.as_bytes())?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    println!("sweep over {}: {} runs, {} with failures", axis.name(), rows.len(), failed);
    Ok(if failed > 0 { EXIT_CHECK_FAILURE } else { 0 })
}
