use std::sync::{Arc, OnceLock};

use biocon_core::basic_state::{solve_basic_state, BasicState, BcMode, SuspensionParams};
use biocon_core::perturbation::solve_perturbed_diffuse;
use biocon_core::radiation::{RadiationParams, RefractionMode};
use biocon_core::stability::{EigenSolution, StabilityProblem};
use biocon_core::{Complex64 as C64, TaxisVariant};
use proptest::prelude::*;

fn state(v_c: f64, kappa: f64, i_d: f64, theta: f64) -> Arc<BasicState> {
    let mut rp = RadiationParams::new(kappa, 0.4, i_d, theta);
    rp.refraction = RefractionMode::Snell { relative_index: 1.333 };
    let mut p = SuspensionParams::new(v_c, rp, TaxisVariant::A);
    p.n_z = 51;
    p.bc_mode = BcMode::Rigid;
    Arc::new(solve_basic_state(&p).unwrap())
}

struct Case {
    prob: StabilityProblem,
    stationary: EigenSolution,
    oscillatory: EigenSolution,
}

fn case() -> &'static Case {
    static C: OnceLock<Case> = OnceLock::new();
    C.get_or_init(|| {
        let prob = StabilityProblem::new(state(15.0, 1.0, 0.5, 20.0)).unwrap();
        let stationary = prob.solve_stationary(3.5, None).unwrap();
        let r_s = prob.stationary_rayleigh(2.0).unwrap()[0];
        let oscillatory = prob.seek_oscillatory(2.0, r_s).unwrap().unwrap();
        Case { prob, stationary, oscillatory }
    })
}

fn scaled(s: &EigenSolution, c: C64) -> EigenSolution {
    let mut out = s.clone();
    for v in out.w.iter_mut().chain(out.phi.iter_mut()).chain(out.theta.iter_mut()) {
        *v *= c;
    }
    out
}

fn smooth_profile(bs: &BasicState, a: C64, b: C64, c: C64) -> Vec<C64> {
    bs.z_grid
        .iter()
        .map(|&z| a * (std::f64::consts::PI * z).cos() + b * (2.0 * z).sin() + c * z * z)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn neutral_point_is_invariant_under_scaling(re in -5.0f64..5.0, im in -5.0f64..5.0) {
        prop_assume!(re.hypot(im) > 1e-2);
        let c = case();
        let c0 = C64::new(re, im);
        for s in [&c.stationary, &c.oscillatory] {
            let again = c.prob.solve_neutral_point(s.k, Some(&scaled(s, c0))).unwrap();
            prop_assert!((again.r - s.r).abs() <= 1e-9 * s.r);
            prop_assert!((again.sigma.im - s.sigma.im).abs() <= 1e-9 * s.sigma.im.abs().max(1.0));
        }
    }

    #[test]
    fn oscillatory_eigenvalues_come_in_conjugate_pairs(dr in -0.2f64..0.2) {
        let c = case();
        let s = &c.oscillatory;
        let spec = c.prob.eigen_oracle(s.k, s.r * (1.0 + dr), 30).unwrap();
        for e in spec.iter().filter(|e| e.im.abs() > 1e-6) {
            let partner = spec.iter().any(|f| (f - e.conj()).norm() <= 1e-8 * e.norm());
            prop_assert!(partner, "{e} has no conjugate");
        }
    }

    #[test]
    fn perturbed_radiation_is_linear_and_hermitian(
        a in (-2.0f64..2.0, -2.0f64..2.0),
        b in (-2.0f64..2.0, -2.0f64..2.0),
        s in (-2.0f64..2.0, -2.0f64..2.0),
        k in 0.3f64..6.0,
    ) {
        static BS: OnceLock<Arc<BasicState>> = OnceLock::new();
        let bs = BS.get_or_init(|| state(15.0, 0.5, 0.26, 40.0));
        let f = smooth_profile(bs, C64::new(a.0, a.1), C64::new(b.0, b.1), C64::new(0.3, -0.1));
        let g = smooth_profile(bs, C64::new(b.1, a.0), C64::new(0.0, 1.0), C64::new(a.1, b.0));
        let s = C64::new(s.0, s.1);
        let sum: Vec<C64> = f.iter().zip(&g).map(|(x, y)| x * s + y).collect();
        let rf = solve_perturbed_diffuse(bs, &f, k, 0.0).unwrap();
        let rg = solve_perturbed_diffuse(bs, &g, k, 0.0).unwrap();
        let rs = solve_perturbed_diffuse(bs, &sum, k, 0.0).unwrap();
        for i in 0..bs.len() {
            let scale = 1.0 + rs.g1_d[i].norm() + rs.p[i].norm();
            prop_assert!((rf.g1_d[i] * s + rg.g1_d[i] - rs.g1_d[i]).norm() < 1e-9 * scale);
            prop_assert!((rf.p[i] * s + rg.p[i] - rs.p[i]).norm() < 1e-9 * scale);
        }
        let fc: Vec<C64> = f.iter().map(|v| v.conj()).collect();
        let rc = solve_perturbed_diffuse(bs, &fc, -k, 0.0).unwrap();
        for i in 0..bs.len() {
            prop_assert!((rc.g1_d[i] - rf.g1_d[i].conj()).norm() < 1e-10 * (1.0 + rf.g1_d[i].norm()));
            prop_assert!((rc.p[i] - rf.p[i].conj()).norm() < 1e-10 * (1.0 + rf.p[i].norm()));
        }
    }
}
