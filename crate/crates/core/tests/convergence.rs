use std::sync::Arc;

use biocon_core::basic_state::{solve_basic_state, BcMode, SuspensionParams};
use biocon_core::radiation::{RadiationParams, RefractionMode};
use biocon_core::stability::StabilityProblem;
use biocon_core::TaxisVariant;

fn problem(kappa: f64, i_d: f64, theta: f64, n_z: usize) -> StabilityProblem {
    let mut rp = RadiationParams::new(kappa, 0.4, i_d, theta);
    rp.refraction = RefractionMode::Snell { relative_index: 1.333 };
    let mut p = SuspensionParams::new(15.0, rp, TaxisVariant::A);
    p.n_z = n_z;
    p.bc_mode = BcMode::Rigid;
    StabilityProblem::new(Arc::new(solve_basic_state(&p).unwrap())).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn stationary_rayleigh_settles_under_refinement() {
    let r: Vec<f64> =
        [101, 201].iter().map(|&n| problem(0.5, 0.26, 0.0, n).solve_stationary(3.0, None).unwrap().r).collect();
    assert!(rel(r[0], r[1]) < 1e-5, "{r:?}");
}

#[test]
fn leading_eigenvalues_settle_under_refinement() {
    let spec: Vec<_> = [101, 201].iter().map(|&n| problem(0.5, 0.26, 0.0, n).eigen_oracle(3.0, 700.0, 4).unwrap()).collect();
    for (a, b) in spec[0].iter().zip(&spec[1]) {
        assert!((a - b).norm() < 1e-4 * b.norm().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn oscillatory_point_settles_under_refinement() {
    let pts: Vec<_> = [101, 201]
        .iter()
        .map(|&n| {
            let prob = problem(1.0, 0.5, 20.0, n);
            let r_s = prob.stationary_rayleigh(2.0).unwrap()[0];
            prob.seek_oscillatory(2.0, r_s).unwrap().unwrap()
        })
        .collect();
    assert!(rel(pts[0].r, pts[1].r) < 1e-4, "{} vs {}", pts[0].r, pts[1].r);
    assert!(rel(pts[0].sigma.im, pts[1].sigma.im) < 1e-4, "{} vs {}", pts[0].sigma.im, pts[1].sigma.im);
}
