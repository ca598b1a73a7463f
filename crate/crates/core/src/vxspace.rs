//! Variable-exponent Lebesgue space primitives: the modular, the Luxemburg
//! norm, the modular/norm comparison bound and a discrete Poincaré ratio.
//!
//! All integrals use cell-midpoint quadrature; node fields are brought to
//! cell centers by corner averaging.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{gradient_of, ExponentField, Location, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{norm, Grid};

const NORM_REL_TOL: f64 = 1e-12;

/// `sum_c |u(c)|^p(c) |c|` for cell values `u`.
pub(crate) fn modular_cells(cells: &[f64], p: &[f64], volume: f64) -> f64 {
    cells.iter().zip(p).map(|(&v, &pc)| v.abs().powf(pc)).sum::<f64>() * volume
}

fn cell_values(u: &ScalarField, p: &ExponentField) -> Result<Vec<f64>> {
    if u.grid() != p.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(match u.location() {
        Location::Cell => u.values().to_vec(),
        Location::Node => u.to_cells().into_values(),
    })
}

/// The modular `rho_p(u) = int |u|^p(x) dx`.
pub fn modular(u: &ScalarField, p: &ExponentField) -> Result<f64> {
    let cells = cell_values(u, p)?;
    Ok(modular_cells(&cells, p.values(), u.grid().cell_volume()))
}

/// Luxemburg norm of cell values: `inf { s > 0 : rho(u / s) <= 1 }`, found
/// by bracketing and bisection to relative tolerance 1e-12.
pub(crate) fn luxemburg_cells(cells: &[f64], p: &[f64], volume: f64) -> f64 {
    let umax = cells.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if umax == 0.0 {
        return 0.0;
    }
    let rho_at = |s: f64| -> f64 { cells.iter().zip(p).map(|(&v, &pc)| (v.abs() / s).powf(pc)).sum::<f64>() * volume };
    let rho = modular_cells(cells, p, volume);
    let mut hi = rho.max(1.0) * (1.0 + umax);
    while rho_at(hi) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    loop {
        lo *= 0.5;
        if rho_at(lo) > 1.0 {
            break;
        }
        hi = lo;
    }
    while hi - lo > NORM_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if rho_at(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

pub fn luxemburg_norm(u: &ScalarField, p: &ExponentField) -> Result<f64> {
    let cells = cell_values(u, p)?;
    Ok(luxemburg_cells(&cells, p.values(), u.grid().cell_volume()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquiBound {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Checks `||u|| <= max(rho^(1/p_min), rho^(1/p_max))`.
pub fn equi_bound_check(u: &ScalarField, p: &ExponentField) -> Result<EquiBound> {
    let cells = cell_values(u, p)?;
    Ok(equi_bound_cells(&cells, p, u.grid().cell_volume()))
}

pub(crate) fn equi_bound_cells(cells: &[f64], p: &ExponentField, volume: f64) -> EquiBound {
    let lhs = luxemburg_cells(cells, p.values(), volume);
    let rho = modular_cells(cells, p.values(), volume);
    let rhs = rho.powf(1.0 / p.p_min()).max(rho.powf(1.0 / p.p_max()));
    EquiBound { lhs, rhs, pass: lhs <= rhs * (1.0 + 1e-10) }
}

/// `||u|| / || |grad u| ||` for a node field vanishing on the boundary.
/// The zero field has ratio 0 by convention.
pub fn poincare_ratio(u: &ScalarField, p: &ExponentField) -> Result<f64> {
    if u.location() != Location::Node {
        return Err(Error::InvalidArgument("poincare_ratio needs a node field".into()));
    }
    let grid = *u.grid();
    if let Some(k) = (0..grid.node_count()).find(|&k| grid.is_boundary_node(k) && u.values()[k] != 0.0) {
        return Err(Error::BoundaryNonzero { index: k, value: u.values()[k] });
    }
    let num = luxemburg_norm(u, p)?;
    let grad: Vec<f64> = gradient_of(&grid, u.values()).iter().map(norm).collect();
    let den = luxemburg_cells(&grad, p.values(), grid.cell_volume());
    if den == 0.0 {
        // a boundary-vanishing field with zero gradient is identically zero
        assert!(num == 0.0, "nonzero field with vanishing gradient");
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Worst deviations over seeded random trials of the norm identities:
/// homogeneity, the unit-ball property, constant-exponent reduction and the
/// modular/norm bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantTrials {
    pub trials: usize,
    /// `max | ||c u|| - |c| ||u|| | / (|c| ||u||)`.
    pub homogeneity: f64,
    /// `max |rho(u / ||u||) - 1|`.
    pub unit_ball: f64,
    /// `max | ||u|| - rho(u)^(1/q) | / ||u||` for constant `q`.
    pub constant_reduction: f64,
    pub equi_failures: usize,
}

pub const HOMOGENEITY_TOL: f64 = 1e-10;
pub const UNIT_BALL_TOL: f64 = 1e-9;
pub const CONSTANT_REDUCTION_TOL: f64 = 1e-10;

impl InvariantTrials {
    pub fn pass(&self) -> bool {
        self.homogeneity <= HOMOGENEITY_TOL
            && self.unit_ball <= UNIT_BALL_TOL
            && self.constant_reduction <= CONSTANT_REDUCTION_TOL
            && self.equi_failures == 0
    }
}

/// Random cell fields with amplitudes spread over four decades. Uses `p`
/// when given, otherwise a fresh random exponent in `[1.5, 3.5]` per trial;
/// the reduction check always draws a constant `q` in `[1.5, 3.5]`.
pub fn invariant_trials(grid: &Grid, p: Option<&ExponentField>, trials: usize, seed: u64) -> Result<InvariantTrials> {
    if let Some(p) = p {
        if p.grid() != grid {
            return Err(Error::GridMismatch);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol = grid.cell_volume();
    let m = grid.cell_count();
    let mut out =
        InvariantTrials { trials, homogeneity: 0.0, unit_ball: 0.0, constant_reduction: 0.0, equi_failures: 0 };
    for _ in 0..trials {
        let amp = 10f64.powf(rng.gen_range(-2.0..2.0));
        let u: Vec<f64> = (0..m).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        let drawn;
        let pf = match p {
            Some(p) => p,
            None => {
                drawn = ExponentField::new(ScalarField::from_values(
                    *grid,
                    Location::Cell,
                    (0..m).map(|_| rng.gen_range(1.5..3.5)).collect(),
                )?)?;
                &drawn
            }
        };
        let pv = pf.values();
        let norm = luxemburg_cells(&u, pv, vol);
        let c = rng.gen_range(-5.0..5.0);
        let cu: Vec<f64> = u.iter().map(|v| c * v).collect();
        let rel = (luxemburg_cells(&cu, pv, vol) - c.abs() * norm).abs() / (c.abs() * norm);
        out.homogeneity = out.homogeneity.max(rel);
        let unit: Vec<f64> = u.iter().map(|v| v / norm).collect();
        out.unit_ball = out.unit_ball.max((modular_cells(&unit, pv, vol) - 1.0).abs());
        if !equi_bound_cells(&u, pf, vol).pass {
            out.equi_failures += 1;
        }
        let q = rng.gen_range(1.5..3.5);
        let qv = vec![q; m];
        let nq = luxemburg_cells(&u, &qv, vol);
        let reduced = modular_cells(&u, &qv, vol).powf(1.0 / q);
        out.constant_reduction = out.constant_reduction.max((nq - reduced).abs() / nq);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(n: usize) -> Grid {
        Grid::new_1d(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn modular_examples() {
        let g = unit(16);
        let p2 = ExponentField::constant(g, 2.0).unwrap();
        let two = ScalarField::constant(g, Location::Node, 2.0).unwrap();
        assert_relative_eq!(modular(&two, &p2).unwrap(), 4.0, max_relative = 1e-14);
        let zero = ScalarField::constant(g, Location::Node, 0.0).unwrap();
        assert_eq!(modular(&zero, &p2).unwrap(), 0.0);
        let pv = ExponentField::sample(g, |x| 2.0 + x[0]).unwrap();
        let one = ScalarField::constant(g, Location::Node, 1.0).unwrap();
        assert_relative_eq!(modular(&one, &pv).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn norm_examples() {
        let g = unit(32);
        let p2 = ExponentField::constant(g, 2.0).unwrap();
        let c = ScalarField::constant(g, Location::Node, -1.75).unwrap();
        assert_relative_eq!(luxemburg_norm(&c, &p2).unwrap(), 1.75, max_relative = 1e-11);
        let pv = ExponentField::sample(g, |x| 2.0 + x[0]).unwrap();
        let one = ScalarField::constant(g, Location::Node, 1.0).unwrap();
        assert_relative_eq!(luxemburg_norm(&one, &pv).unwrap(), 1.0, max_relative = 1e-11);
        // int_0^1 (3/s)^(2+x) dx = 1 holds at s = 3 for any exponent
        let three = ScalarField::constant(g, Location::Node, 3.0).unwrap();
        assert_relative_eq!(luxemburg_norm(&three, &pv).unwrap(), 3.0, max_relative = 1e-11);
        let zero = ScalarField::constant(g, Location::Node, 0.0).unwrap();
        assert_eq!(luxemburg_norm(&zero, &pv).unwrap(), 0.0);
    }

    #[test]
    fn norm_matches_quadrature_oracle() {
        // s solving int_0^1 ((1+x)/s)^(2+x) dx = 1, from adaptive quadrature
        // plus root finding at 30 digits.
        const ORACLE: f64 = 1.572_030_667_589_504_2;
        let g = unit(2000);
        let pv = ExponentField::sample(g, |x| 2.0 + x[0]).unwrap();
        let u = ScalarField::sample(g, Location::Node, |x| 1.0 + x[0]).unwrap();
        assert_relative_eq!(luxemburg_norm(&u, &pv).unwrap(), ORACLE, max_relative = 1e-6);
    }

    #[test]
    fn equi_examples() {
        let g = unit(8);
        let p2 = ExponentField::constant(g, 2.0).unwrap();
        let two = ScalarField::constant(g, Location::Node, 2.0).unwrap();
        let e = equi_bound_check(&two, &p2).unwrap();
        assert_relative_eq!(e.lhs, 2.0, max_relative = 1e-11);
        assert_relative_eq!(e.rhs, 2.0, max_relative = 1e-14);
        assert!(e.pass);
        let zero = ScalarField::constant(g, Location::Node, 0.0).unwrap();
        let e = equi_bound_check(&zero, &p2).unwrap();
        assert!(e.pass && e.lhs == 0.0 && e.rhs == 0.0);
    }

    #[test]
    fn equi_holds_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::new_2d([0.0, 0.0], [1.5, 0.7], [6, 5]).unwrap();
        for _ in 0..100 {
            let p = ExponentField::sample(g, |_| rng.gen_range(1.5..3.5)).unwrap();
            let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
            let u = ScalarField::sample(g, Location::Cell, |_| scale * rng.gen_range(-1.0..1.0)).unwrap();
            assert!(equi_bound_check(&u, &p).unwrap().pass);
        }
    }

    #[test]
    fn poincare_sine_approaches_rayleigh_quotient() {
        let expected = 1.0 / std::f64::consts::PI;
        let mut prev = f64::INFINITY;
        for n in [32, 64, 128] {
            let g = unit(n);
            let p2 = ExponentField::constant(g, 2.0).unwrap();
            let u = ScalarField::sample(g, Location::Node, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
            let u = clean_boundary(u);
            let err = (poincare_ratio(&u, &p2).unwrap() - expected).abs();
            assert!(err < 2.0 / (n * n) as f64, "n={n} err={err}");
            assert!(err < prev);
            prev = err;
        }
    }

    fn clean_boundary(u: ScalarField) -> ScalarField {
        let g = *u.grid();
        let v = u.values().iter().enumerate().map(|(k, &x)| if g.is_boundary_node(k) { 0.0 } else { x }).collect();
        ScalarField::from_values(g, Location::Node, v).unwrap()
    }

    #[test]
    fn poincare_hat_and_zero() {
        let g = unit(2);
        let p2 = ExponentField::constant(g, 2.0).unwrap();
        // corner averages 1/2 on cells of width 1/2: ||u|| = 1/2; slopes +-2: ||u'|| = 2
        let hat = ScalarField::from_values(g, Location::Node, vec![0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(poincare_ratio(&hat, &p2).unwrap(), 0.25, max_relative = 1e-11);
        let zero = ScalarField::constant(g, Location::Node, 0.0).unwrap();
        assert_eq!(poincare_ratio(&zero, &p2).unwrap(), 0.0);
        let bad = ScalarField::constant(g, Location::Node, 1.0).unwrap();
        assert!(matches!(poincare_ratio(&bad, &p2), Err(Error::BoundaryNonzero { .. })));
    }
}
