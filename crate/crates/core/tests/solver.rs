use pxfb::freeboundary::{default_tau, extract, lambda_star_condition};
use pxfb::optimizer::{minimize, ContinuationSchedule, Init};
use pxfb::pxharmonic::solve_dirichlet;
use pxfb::verify::{oracle_1d, oracle_free_boundary};
use pxfb::{BoundaryData, CoefficientField, ExponentField, Grid};

#[test]
fn oracle_free_boundary_and_trace_at_n256() {
    let n = 256;
    let h = 1.0 / n as f64;
    let (inst, s) = oracle_1d(n, 2.0, 0.5, 0.5).unwrap();
    let r = inst.solve().unwrap();
    assert!(r.converged);
    let ls = inst.lambda_star();
    let fb = extract(&r.u, default_tau(inst.grid(), 1.0), &ls).unwrap();
    assert_eq!(fb.len(), 1);
    assert!((fb.points[0][0] - s).abs() <= 2.0 * h, "{:?}", fb.points);
    assert_eq!(fb.normals[0], [1.0, 0.0]);
    let cond = lambda_star_condition(&fb, inst.grid()).unwrap();
    assert!(cond.max <= 0.05, "{}", cond.max);
}

#[test]
fn free_boundary_tracks_closed_form_in_lambda_and_p() {
    let n = 128;
    let h = 1.0 / n as f64;
    for (p, lambda) in [(2.0, 0.25), (2.0, 1.0), (3.0, 1.0), (2.5, 0.5)] {
        let (inst, s) = oracle_1d(n, p, lambda, 0.5).unwrap();
        let r = inst.solve().unwrap();
        let ls = inst.lambda_star();
        let fb = extract(&r.u, default_tau(inst.grid(), ls.max()), &ls).unwrap();
        assert_eq!(fb.len(), 1, "p {p} lambda {lambda}");
        // the extracted level tau = h lambda* sits about one cell inside
        assert!((fb.points[0][0] - s).abs() <= 2.0 * h, "p {p} lambda {lambda}: {} vs {s}", fb.points[0][0]);
    }
    assert!((oracle_free_boundary(2.0, 0.25, 0.5) - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn zero_lambda_reproduces_the_dirichlet_solve() {
    let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [24, 24]).unwrap();
    let phi0 = BoundaryData::sample(g, |x| (0.5 - x[0]).max(0.0) + 0.2 * x[1] * x[1]).unwrap();
    let p = ExponentField::sample(g, |x| 2.0 + 0.5 * x[0]).unwrap();
    let lam = CoefficientField::zero(g).unwrap();
    let sched = ContinuationSchedule::default_for(&g, &p, 0.0, phi0.sup());
    let r = minimize(&phi0, &p, &lam, &sched, Init::Dirichlet).unwrap();
    let d = solve_dirichlet(phi0.field(), &p, 1e-10).unwrap();
    let diff = r.u.values().iter().zip(d.v.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn zero_data_gives_zero_energy() {
    let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [16, 16]).unwrap();
    let phi0 = BoundaryData::sample(g, |_| 0.0).unwrap();
    let p = ExponentField::constant(g, 2.5).unwrap();
    let lam = CoefficientField::constant(g, 0.5).unwrap();
    let sched = ContinuationSchedule::default_for(&g, &p, 1.0, 0.0);
    let r = minimize(&phi0, &p, &lam, &sched, Init::Dirichlet).unwrap();
    assert!(r.u.values().iter().all(|&v| v == 0.0));
    assert_eq!(r.energy_trace.last().unwrap().energy.total, 0.0);
}

#[test]
fn stage_energies_follow_the_schedule_and_solutions_are_deterministic() {
    let (inst, _) = oracle_1d(64, 2.0, 0.5, 0.5).unwrap();
    let a = inst.solve().unwrap();
    let b = inst.solve().unwrap();
    assert_eq!(a.u.values(), b.u.values());
    assert_eq!(a.energy_trace, b.energy_trace);
    assert_eq!(a.stages, inst.schedule.stages().len());
    for st in &a.energy_trace {
        assert!(st.converged);
        assert!(st.energy.total.is_finite());
    }
}

#[test]
fn subquadratic_exponent_runs_with_positive_delta() {
    let g = Grid::new_1d(0.0, 1.0, 64).unwrap();
    let phi0 = BoundaryData::sample(g, |x| if x[0] == 0.0 { 0.5 } else { 0.0 }).unwrap();
    let p = ExponentField::constant(g, 1.6).unwrap();
    let lam = CoefficientField::constant(g, 0.5).unwrap();
    let ls = pxfb::field::lambda_star(&p, &lam).unwrap();
    let sched = ContinuationSchedule::default_for(&g, &p, ls.max(), 0.5);
    assert!(sched.final_delta() > 0.0);
    let r = minimize(&phi0, &p, &lam, &sched, Init::Dirichlet).unwrap();
    assert!(r.u.values().iter().all(|&v| (0.0..=0.5).contains(&v)));
    // with delta > 0 the free boundary is only approximate; it must still
    // exist inside the domain
    let fb = extract(&r.u, default_tau(&g, ls.max()), &ls).unwrap();
    assert_eq!(fb.len(), 1);
    let s = oracle_free_boundary(1.6, 0.5, 0.5);
    assert!((fb.points[0][0] - s).abs() < 0.1, "{:?} vs {s}", fb.points);
}
