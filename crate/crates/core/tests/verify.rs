use std::path::PathBuf;

use pxfb::verify::{oracle_1d, refinement_study, run_suite, verify_field, Instance, Status, SuiteOptions, REGISTRY};
use pxfb::{BoundaryData, CoefficientField, ExponentField, Grid, Location, ScalarField};
use serde_json::json;

const FREE_BOUNDARY_CHECKS: &[&str] = &[
    "nondegeneracy",
    "linear_growth",
    "density",
    "lambda_star_condition",
    "weak_identity",
    "perimeter_scaling",
    "blowup_development",
];

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/oracle_1d_n64.json")
}

#[test]
fn report_lists_checks_in_registry_order() {
    let (inst, _) = oracle_1d(64, 2.0, 0.5, 0.5).unwrap();
    let report = run_suite(&inst, &SuiteOptions::default()).unwrap();
    assert!(report.complete, "{:?}", report.error);
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    let registry: Vec<&str> = REGISTRY.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, registry);
    for c in &report.checks {
        assert!(!c.statement.is_empty());
    }
}

/// Set `PXFB_UPDATE_GOLDEN=1` to rewrite the golden file after an intended
/// schema change.
#[test]
fn report_json_matches_golden_file() {
    let (inst, _) = oracle_1d(64, 2.0, 0.5, 0.5).unwrap();
    let a = serde_json::to_string_pretty(&run_suite(&inst, &SuiteOptions::default()).unwrap()).unwrap();
    let b = serde_json::to_string_pretty(&run_suite(&inst, &SuiteOptions::default()).unwrap()).unwrap();
    assert_eq!(a, b);
    let path = golden_path();
    if std::env::var_os("PXFB_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &a).unwrap();
    }
    let golden = std::fs::read_to_string(&path).expect("golden file missing; run with PXFB_UPDATE_GOLDEN=1");
    assert_eq!(a, golden);
}

#[test]
fn halved_solution_fails_the_gradient_condition() {
    let (inst, _) = oracle_1d(128, 2.0, 0.5, 0.5).unwrap();
    let u = inst.solve().unwrap().u;
    let grid = *inst.grid();
    // keep the boundary values, halve the slope inside
    let bad: Vec<f64> = (0..grid.node_count())
        .map(|k| if grid.is_boundary_node(k) { u.values()[k] } else { 0.5 * u.values()[k] })
        .collect();
    let bad = ScalarField::from_values(grid, Location::Node, bad).unwrap();
    let report = verify_field(&inst, &bad, None, &SuiteOptions::default());
    assert_eq!(report.check("lambda_star_condition").unwrap().status, Status::Fail);
    assert!(!report.all_pass());
}

#[test]
fn zero_lambda_skips_free_boundary_checks() {
    let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [16, 16]).unwrap();
    let phi0 = BoundaryData::sample(g, |x| (0.5 - x[0]).max(0.0)).unwrap();
    let p = ExponentField::sample(g, |x| 2.0 + 0.5 * x[0]).unwrap();
    let lam = CoefficientField::zero(g).unwrap();
    let inst = Instance::new(phi0, p, lam, None, json!({"case": "lambda zero"})).unwrap();
    let report = run_suite(&inst, &SuiteOptions::default()).unwrap();
    assert!(report.complete);
    for name in FREE_BOUNDARY_CHECKS {
        assert_eq!(report.check(name).unwrap().status, Status::Skip, "{name}");
    }
    assert!(report.failures().is_empty(), "{:?}", report.failures());
}

#[test]
fn one_dimensional_refinement_is_first_order() {
    let mut levels = Vec::new();
    let mut s = 0.0;
    for n in [64, 128, 256] {
        let (inst, oracle) = oracle_1d(n, 2.0, 0.5, 0.5).unwrap();
        let u = inst.solve().unwrap().u;
        levels.push((inst, u));
        s = oracle;
    }
    let study = refinement_study(&levels, Some(&[[s, 0.0]])).unwrap();
    let fb = study.fb_order.unwrap();
    let ls = study.lambda_star_order.unwrap();
    assert!((0.7..=1.3).contains(&fb), "fb order {fb} {:?}", study.rows);
    assert!(ls >= 0.7, "lambda* order {ls} {:?}", study.rows);
    assert!(study.flags.is_empty(), "{:?}", study.flags);
}
