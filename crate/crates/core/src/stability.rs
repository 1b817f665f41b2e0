//! Linear stability of the basic state: neutral points, neutral curves and
//! the critical point.
//!
//! Unknowns are the nodal values of `W` and `Φ = DΘ` on the basic-state
//! grid, with `Θ = CΦ` from a fourth-order cumulative integral so that
//! `Θ(1) = 0` holds identically. The radiation coupling is linear in
//! `(Θ, Φ)` and enters as dense blocks, which makes the discrete problem
//! the real pencil `σ B x = (A₀ + R A₁) x`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::basic_state::{BasicState, BcMode};
use crate::error::{BioconError, Result};
use crate::fd::{cumulative_from_top, derivative_matrix};
use crate::perturbation::{
    gamma12, solve_perturbed_diffuse_with, AngularBasis, BasicCoefficients, GammaForm, RadiationResponse,
    SweepOptions,
};

/// A neutral (or trial) solution of the stability problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSolution {
    pub k: f64,
    pub r: f64,
    pub sigma: C64,
    pub w: Vec<C64>,
    pub phi: Vec<C64>,
    /// `Θ = ∫₁^z Φ`.
    pub theta: Vec<C64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchClass {
    Stationary,
    Oscillatory,
}

impl BranchClass {
    pub fn name(self) -> &'static str {
        match self {
            BranchClass::Stationary => "stationary",
            BranchClass::Oscillatory => "oscillatory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub k: f64,
    pub r: f64,
    pub im_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeutralBranch {
    pub points: Vec<BranchPoint>,
    pub branch_class: BranchClass,
    /// Wavenumber where an oscillatory branch joins the stationary one.
    pub k0: Option<f64>,
    #[serde(skip)]
    pub solutions: Vec<EigenSolution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub k_c: f64,
    pub r_c: f64,
    pub lambda_c: f64,
    pub im_sigma_c: f64,
    pub source_branch: BranchClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub bc_mode: BcMode,
    pub gamma_form: GammaForm,
    pub newton_tol: f64,
    pub max_newton: usize,
    pub polar_nodes: usize,
}

impl StabilityOptions {
    pub fn from_state(bs: &BasicState) -> Self {
        Self {
            bc_mode: bs.params.bc_mode,
            gamma_form: GammaForm::Derived,
            newton_tol: bs.params.tolerances.newton_tol,
            max_newton: 30,
            polar_nodes: bs.params.tolerances.polar_nodes,
        }
    }
}

/// Residuals of the stability equations for a trial solution.
#[derive(Debug, Clone)]
pub struct OperatorResidual {
    pub momentum: Vec<C64>,
    pub concentration: Vec<C64>,
    /// `W`, second velocity condition and cell flux at `z = 0` then `z = 1`.
    pub boundary: Vec<C64>,
    /// Largest scaled residual.
    pub norm: f64,
}

/// Real matrices of the discrete pencil at one wavenumber.
#[derive(Debug, Clone)]
pub struct Pencil {
    pub k: f64,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Pencil {
    fn at(&self, r: f64) -> DMatrix<f64> {
        &self.a0 + &self.a1 * r
    }
}

/// Stability problem around one basic state.
pub struct StabilityProblem {
    bs: Arc<BasicState>,
    opts: StabilityOptions,
    basis: AngularBasis,
    coef: BasicCoefficients,
    gamma1: Vec<f64>,
    gamma2: Vec<f64>,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    d4: DMatrix<f64>,
    cum: DMatrix<f64>,
    responses: Mutex<HashMap<u64, Arc<RadiationResponse>>>,
}

/// Index of `Φ(0)`, used for normalisation.
fn norm_index(n: usize) -> usize {
    n
}

impl StabilityProblem {
    pub fn new(bs: Arc<BasicState>) -> Result<Self> {
        let opts = StabilityOptions::from_state(&bs);
        Self::with_options(bs, opts)
    }

    pub fn with_options(bs: Arc<BasicState>, opts: StabilityOptions) -> Result<Self> {
        let n = bs.len();
        if n < 21 {
            return Err(BioconError::InvalidParams(format!("stability grid needs at least 21 points, got {n}")));
        }
        let basis = AngularBasis::new(&bs, opts.polar_nodes)?;
        let coef = BasicCoefficients::new(&bs);
        let (gamma1, gamma2) = gamma12(&coef, opts.gamma_form);
        Ok(Self {
            basis,
            coef,
            gamma1,
            gamma2,
            d1: derivative_matrix(n, 1),
            d2: derivative_matrix(n, 2),
            d4: derivative_matrix(n, 4),
            cum: cumulative_from_top(n),
            responses: Mutex::new(HashMap::new()),
            bs,
            opts,
        })
    }

    pub fn basic_state(&self) -> &BasicState {
        &self.bs
    }

    pub fn options(&self) -> &StabilityOptions {
        &self.opts
    }

    /// Same problem with a different velocity boundary condition; cached
    /// radiation maps are shared.
    pub fn with_bc_mode(&self, bc_mode: BcMode) -> Self {
        let cache = self.responses.lock().expect("cache poisoned").clone();
        Self {
            bs: self.bs.clone(),
            opts: StabilityOptions { bc_mode, ..self.opts },
            basis: self.basis.clone(),
            coef: self.coef.clone(),
            gamma1: self.gamma1.clone(),
            gamma2: self.gamma2.clone(),
            d1: self.d1.clone(),
            d2: self.d2.clone(),
            d4: self.d4.clone(),
            cum: self.cum.clone(),
            responses: Mutex::new(cache),
        }
    }

    fn n(&self) -> usize {
        self.bs.len()
    }

    pub fn response(&self, k: f64) -> Result<Arc<RadiationResponse>> {
        let key = k.to_bits();
        if let Some(r) = self.responses.lock().expect("cache poisoned").get(&key) {
            return Ok(r.clone());
        }
        let r = Arc::new(RadiationResponse::new(&self.bs, &self.basis, k)?);
        self.responses.lock().expect("cache poisoned").insert(key, r.clone());
        Ok(r)
    }

    /// Discrete pencil at wavenumber `k`, rows scaled to unit size.
    pub fn pencil(&self, k: f64) -> Result<Pencil> {
        if !(k > 0.0) {
            return Err(BioconError::InvalidParams(format!("wavenumber must be positive, got {k}")));
        }
        let n = self.n();
        let m = 2 * n;
        let resp = self.response(k)?;
        let c = &self.coef;
        let s_c = self.bs.params.s_c;
        let k2 = k * k;
        let mut a0 = DMatrix::zeros(m, m);
        let mut a1 = DMatrix::zeros(m, m);
        let mut b = DMatrix::zeros(m, m);

        // Momentum rows.
        a0[(0, 0)] = 1.0;
        a0[(n - 1, n - 1)] = 1.0;
        let (bc_lo, bc_hi) = match self.opts.bc_mode {
            BcMode::PaperEquations => (self.d2.row(0), self.d2.row(n - 1)),
            BcMode::Rigid => (self.d1.row(0), self.d1.row(n - 1)),
        };
        for j in 0..n {
            a0[(1, j)] = bc_lo[j];
            a0[(n - 2, j)] = bc_hi[j];
        }
        for i in 2..n - 2 {
            for j in 0..n {
                let id = if i == j { 1.0 } else { 0.0 };
                a0[(i, j)] = self.d4[(i, j)] - 2.0 * k2 * self.d2[(i, j)] + k2 * k2 * id;
                b[(i, j)] = (self.d2[(i, j)] - k2 * id) / s_c;
            }
            a1[(i, n + i)] = k2;
        }

        // Radiation maps as functions of Φ alone.
        let g_d = &resp.g_theta * &self.cum + &resp.g_phi;
        let dg_d = &resp.dg_theta * &self.cum + &resp.dg_phi;
        let flux = &resp.p_theta * &self.cum + &resp.p_phi;
        let v_c = c.v_c;
        for i in 0..n {
            let row = n + i;
            let mut lhs = vec![0.0; n];
            if i == 0 || i == n - 1 {
                // DΦ − V_c T_s Φ − n_s V_c T′ 𝒢₁ = 0
                let shade = c.n[i] * v_c * c.tp[i];
                for j in 0..n {
                    lhs[j] = self.d1[(i, j)] - shade * (c.collimated_factor(i) * self.cum[(i, j)] + g_d[(i, j)]);
                }
                lhs[i] -= v_c * c.t[i];
                for j in 0..n {
                    a0[(row, n + j)] = lhs[j];
                }
                continue;
            }
            let g_coef = v_c * (c.dn[i] * c.tp[i] + c.n[i] * c.tpp[i] * c.dg[i]);
            let dg_coef = v_c * c.n[i] * c.tp[i];
            let p_coef = v_c * k * c.n[i] * c.t[i] / c.q[i];
            for j in 0..n {
                lhs[j] = g_coef * g_d[(i, j)]
                    + dg_coef * dg_d[(i, j)]
                    + p_coef * flux[(i, j)]
                    + self.gamma1[i] * self.cum[(i, j)]
                    + v_c * c.t[i] * self.d1[(i, j)]
                    - self.d2[(i, j)];
            }
            lhs[i] += k2 + self.gamma2[i];
            for j in 0..n {
                a0[(row, n + j)] = -lhs[j];
            }
            a0[(row, i)] = -c.dn[i];
            b[(row, row)] = 1.0;
        }

        for r in 0..m {
            let scale = a0.row(r).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if scale > 0.0 {
                let inv = 1.0 / scale;
                a0.row_mut(r).scale_mut(inv);
                a1.row_mut(r).scale_mut(inv);
                b.row_mut(r).scale_mut(inv);
            }
        }
        Ok(Pencil { k, a0, a1, b })
    }

    fn split(&self, x: &[C64]) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let n = self.n();
        let w = x[..n].to_vec();
        let phi = x[n..].to_vec();
        let theta = (0..n).map(|i| (0..n).map(|j| phi[j] * self.cum[(i, j)]).sum()).collect();
        (w, phi, theta)
    }

    fn solution(&self, k: f64, r: f64, sigma: C64, x: &[C64], residual_norm: f64, iterations: usize) -> EigenSolution {
        let (w, phi, theta) = self.split(x);
        EigenSolution { k, r, sigma, w, phi, theta, residual_norm, iterations }
    }

    /// Leading eigenvalues `σ` of the pencil at `(k, R)`, by largest real part.
    pub fn eigen_oracle(&self, k: f64, r: f64, n_modes: usize) -> Result<Vec<C64>> {
        let p = self.pencil(k)?;
        spectrum(&p, r, n_modes)
    }

    /// Stationary neutral Rayleigh numbers at `k`, ascending, from the
    /// pencil `A₀ x = −R A₁ x`.
    pub fn stationary_rayleigh(&self, k: f64) -> Result<Vec<f64>> {
        let p = self.pencil(k)?;
        stationary_candidates(&p)
    }

    /// Stationary neutral point on the lowest branch at `k`.
    pub fn solve_stationary(&self, k: f64, init: Option<&EigenSolution>) -> Result<EigenSolution> {
        let p = self.pencil(k)?;
        let (r0, x0) = match init {
            Some(s) if s.sigma.im == 0.0 => (s.r, self.pack_real(s)),
            _ => {
                let r = *stationary_candidates(&p)?
                    .first()
                    .ok_or_else(|| BioconError::Eigen(format!("no positive stationary Rayleigh number at k = {k}")))?;
                (r, null_vector(&p.at(r))?)
            }
        };
        self.newton_stationary(&p, r0, x0)
    }

    /// Neutral point on the branch of `init`, keeping its class.
    pub fn solve_neutral_point(&self, k: f64, init: Option<&EigenSolution>) -> Result<EigenSolution> {
        match init {
            Some(s) if s.sigma.im != 0.0 => {
                let p = self.pencil(k)?;
                self.newton_oscillatory(&p, s.r, s.sigma.im, self.pack_complex(s))
            }
            _ => self.solve_stationary(k, init),
        }
    }

    fn pack_real(&self, s: &EigenSolution) -> DVector<f64> {
        let scale = if s.phi[0].norm() > 0.0 { 1.0 / s.phi[0] } else { C64::new(1.0, 0.0) };
        DVector::from_iterator(2 * self.n(), s.w.iter().chain(&s.phi).map(|v| (v * scale).re))
    }

    fn pack_complex(&self, s: &EigenSolution) -> Vec<C64> {
        s.w.iter().chain(&s.phi).copied().collect()
    }

    fn newton_stationary(&self, p: &Pencil, r0: f64, x0: DVector<f64>) -> Result<EigenSolution> {
        let m = p.a0.nrows();
        let ni = norm_index(self.n());
        if x0[ni].abs() < 1e-300 {
            return Err(BioconError::Degenerate(format!("seed vanishes at the normalisation point (k = {})", p.k)));
        }
        let mut x = &x0 / x0[ni];
        let mut r = r0;
        let mut best = f64::INFINITY;
        for it in 1..=self.opts.max_newton {
            let a = p.at(r);
            let f = &a * &x;
            let a1x = &p.a1 * &x;
            let mut jac = DMatrix::zeros(m + 1, m + 1);
            jac.view_mut((0, 0), (m, m)).copy_from(&a);
            jac.view_mut((0, m), (m, 1)).copy_from(&a1x);
            jac[(m, ni)] = 1.0;
            let mut rhs = DVector::zeros(m + 1);
            rhs.rows_mut(0, m).copy_from(&(-&f));
            rhs[m] = -(x[ni] - 1.0);
            let delta = jac.lu().solve(&rhs).ok_or_else(|| BioconError::Singular {
                context: format!("stationary Jacobian at k = {}, R = {r}", p.k),
                condition: f64::INFINITY,
            })?;
            x += delta.rows(0, m);
            r += delta[m];
            let res = (&p.at(r) * &x).amax();
            best = best.min(res);
            debug!("stationary newton k={} it={it} R={r} res={res:e}", p.k);
            if res < self.opts.newton_tol && delta[m].abs() <= 1e-8 * r.abs().max(1.0) {
                let xs: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
                return Ok(self.solution(p.k, r, C64::new(0.0, 0.0), &xs, res, it));
            }
            if !r.is_finite() {
                break;
            }
        }
        Err(BioconError::NewtonDivergence { iterations: self.opts.max_newton, residual: best, rayleigh: r })
    }

    fn newton_oscillatory(&self, p: &Pencil, r0: f64, omega0: f64, x0: Vec<C64>) -> Result<EigenSolution> {
        let m = p.a0.nrows();
        let ni = norm_index(self.n());
        if x0[ni].norm() < 1e-300 {
            return Err(BioconError::Degenerate(format!("seed vanishes at the normalisation point (k = {})", p.k)));
        }
        let scale = x0[ni];
        let mut xr = DVector::from_iterator(m, x0.iter().map(|v| (v / scale).re));
        let mut xi = DVector::from_iterator(m, x0.iter().map(|v| (v / scale).im));
        let (mut r, mut omega) = (r0, omega0);
        let mut best = f64::INFINITY;
        for it in 1..=self.opts.max_newton {
            let a = p.at(r);
            let f1 = &a * &xr + &p.b * &xi * omega;
            let f2 = &a * &xi - &p.b * &xr * omega;
            let dim = 2 * m + 2;
            let mut jac = DMatrix::zeros(dim, dim);
            let wb = &p.b * omega;
            jac.view_mut((0, 0), (m, m)).copy_from(&a);
            jac.view_mut((0, m), (m, m)).copy_from(&wb);
            jac.view_mut((m, 0), (m, m)).copy_from(&(-&wb));
            jac.view_mut((m, m), (m, m)).copy_from(&a);
            jac.view_mut((0, 2 * m), (m, 1)).copy_from(&(&p.a1 * &xr));
            jac.view_mut((m, 2 * m), (m, 1)).copy_from(&(&p.a1 * &xi));
            jac.view_mut((0, 2 * m + 1), (m, 1)).copy_from(&(&p.b * &xi));
            jac.view_mut((m, 2 * m + 1), (m, 1)).copy_from(&(-(&p.b * &xr)));
            jac[(2 * m, ni)] = 1.0;
            jac[(2 * m + 1, m + ni)] = 1.0;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, m).copy_from(&(-&f1));
            rhs.rows_mut(m, m).copy_from(&(-&f2));
            rhs[2 * m] = -(xr[ni] - 1.0);
            rhs[2 * m + 1] = -xi[ni];
            let delta = jac.lu().solve(&rhs).ok_or_else(|| BioconError::Singular {
                context: format!("oscillatory Jacobian at k = {}, R = {r}", p.k),
                condition: f64::INFINITY,
            })?;
            xr += delta.rows(0, m);
            xi += delta.rows(m, m);
            r += delta[2 * m];
            omega += delta[2 * m + 1];
            let a = p.at(r);
            let res = (&a * &xr + &p.b * &xi * omega).amax().max((&a * &xi - &p.b * &xr * omega).amax());
            best = best.min(res);
            debug!("oscillatory newton k={} it={it} R={r} w={omega} res={res:e}", p.k);
            let small_step = delta[2 * m].abs() <= 1e-8 * r.abs().max(1.0)
                && delta[2 * m + 1].abs() <= 1e-8 * omega.abs().max(1.0);
            if res < self.opts.newton_tol && small_step {
                // Report the member of the conjugate pair with Im σ > 0.
                let sign = omega.signum();
                let x: Vec<C64> = xr.iter().zip(xi.iter()).map(|(&a, &b)| C64::new(a, sign * b)).collect();
                return Ok(self.solution(p.k, r, C64::new(0.0, omega.abs()), &x, res, it));
            }
            if !r.is_finite() || !omega.is_finite() {
                break;
            }
        }
        Err(BioconError::NewtonDivergence { iterations: self.opts.max_newton, residual: best, rayleigh: r })
    }

    /// Oscillatory neutral point at `k`: the first `R` in `(0, 2 r_hint]`
    /// where a complex pair reaches the imaginary axis, found by a
    /// geometric scan in `R`.
    pub fn seek_oscillatory(&self, k: f64, r_hint: f64) -> Result<Option<EigenSolution>> {
        let p = self.pencil(k)?;
        let lead = |r: f64| -> Result<Option<C64>> {
            Ok(spectrum(&p, r, 40)?.into_iter().filter(|s| s.im > OSC_MIN_FREQ).max_by(|a, b| a.re.total_cmp(&b.re)))
        };
        let r_top = 2.0 * r_hint;
        let r_low = r_top * 1e-3;
        let mut samples: Vec<f64> = std::iter::once(0.0)
            .chain((0..=OSC_SCAN).map(|j| r_low * (r_top / r_low).powf(j as f64 / OSC_SCAN as f64)))
            .collect();
        let mut bracket = None;
        'refine: for _ in 0..4 {
            let mut prev: Option<(f64, Option<C64>)> = None;
            for &r in &samples {
                let cur = lead(r)?;
                match (prev, cur) {
                    (Some((r0, Some(s0))), Some(s1)) if s0.re < 0.0 && s1.re >= 0.0 => {
                        bracket = Some(((r0, s0), (r, s1)));
                        break 'refine;
                    }
                    // The pair appeared already unstable: look between the samples.
                    (Some((r0, None)), Some(s1)) if s1.re >= 0.0 => {
                        samples = (0..=OSC_SCAN).map(|j| r0 + (r - r0) * j as f64 / OSC_SCAN as f64).collect();
                        continue 'refine;
                    }
                    _ => {}
                }
                prev = Some((r, cur));
            }
            break;
        }
        let Some(((mut ra, mut sa), (mut rb, mut sb))) = bracket else {
            return Ok(None);
        };
        // Regula falsi on the leading complex growth rate.
        let mut guess = (rb, sb);
        for _ in 0..40 {
            let r = ra - sa.re * (rb - ra) / (sb.re - sa.re);
            let Some(s) = lead(r)? else {
                return Ok(None);
            };
            guess = (r, s);
            if s.re.abs() < 1e-7 * s.norm().max(1.0) || (rb - ra) < 1e-9 * rb {
                break;
            }
            if s.re < 0.0 {
                (ra, sa) = (r, s);
            } else {
                (rb, sb) = (r, s);
            }
        }
        let (r1, s1) = guess;
        let x = complex_null_vector(&p.at(r1), &p.b, s1)?;
        match self.newton_oscillatory(&p, r1, s1.im, x) {
            Ok(sol) if sol.sigma.im > OSC_MIN_FREQ => Ok(Some(sol)),
            Ok(_) => Ok(None),
            Err(e) => {
                debug!("oscillatory polish failed at k={k}: {e}");
                Ok(None)
            }
        }
    }

    /// Traces the lowest stationary branch over `ks` and any oscillatory
    /// branch that appears.
    pub fn trace_neutral_curve(&self, ks: &[f64]) -> Result<Vec<NeutralBranch>> {
        if ks.len() < 2 || ks.iter().any(|&k| !(k > 0.0)) {
            return Err(BioconError::InvalidParams("k grid needs at least 2 positive values".into()));
        }
        let mut stationary = NeutralBranch {
            points: Vec::new(),
            branch_class: BranchClass::Stationary,
            k0: None,
            solutions: Vec::new(),
        };
        let mut oscillatory = NeutralBranch {
            points: Vec::new(),
            branch_class: BranchClass::Oscillatory,
            k0: None,
            solutions: Vec::new(),
        };
        let mut osc_done = false;
        for &k in ks {
            let st = self.stationary_checked(k, stationary.solutions.last())?;
            let r_st = st.r;
            stationary.points.push(BranchPoint { k, r: st.r, im_sigma: 0.0 });
            stationary.solutions.push(st);
            if osc_done {
                continue;
            }
            let next = match oscillatory.solutions.last().cloned() {
                Some(prev) => self.continue_oscillatory(&prev, k, &mut oscillatory)?,
                None => self.seek_oscillatory(k, r_st)?,
            };
            match next {
                Some(sol) => {
                    oscillatory.points.push(BranchPoint { k: sol.k, r: sol.r, im_sigma: sol.sigma.im });
                    oscillatory.solutions.push(sol);
                }
                None if !oscillatory.points.is_empty() => {
                    osc_done = true;
                    oscillatory.k0 = Some(estimate_k0(&oscillatory.points, k));
                }
                None => {}
            }
        }
        let mut out = vec![stationary];
        if !oscillatory.points.is_empty() {
            if oscillatory.k0.is_none() {
                debug!("oscillatory branch persists to the end of the k range");
            }
            out.push(oscillatory);
        }
        Ok(out)
    }

    fn stationary_checked(&self, k: f64, prev: Option<&EigenSolution>) -> Result<EigenSolution> {
        let lowest = self.stationary_rayleigh(k)?;
        let r_min = *lowest.first().ok_or_else(|| BioconError::BranchLost {
            k,
            reason: "no positive stationary Rayleigh number".into(),
        })?;
        if let Some(p) = prev {
            if let Ok(sol) = self.solve_stationary(k, Some(p)) {
                if (sol.r - r_min).abs() <= 1e-6 * r_min {
                    return Ok(sol);
                }
                debug!("continuation at k={k} reached R={} above the lowest branch {r_min}", sol.r);
            }
        }
        self.solve_stationary(k, None).map_err(|e| BioconError::BranchLost { k, reason: e.to_string() })
    }

    /// Continues an oscillatory branch to `k`, halving the step on failure.
    /// Points reached on the way are appended to `branch`.
    fn continue_oscillatory(
        &self,
        prev: &EigenSolution,
        k: f64,
        branch: &mut NeutralBranch,
    ) -> Result<Option<EigenSolution>> {
        let mut from = prev.clone();
        let mut step = k - from.k;
        while from.k < k {
            let target = (from.k + step).min(k);
            let p = self.pencil(target)?;
            match self.newton_oscillatory(&p, from.r, from.sigma.im, self.pack_complex(&from)) {
                Ok(sol) if sol.sigma.im > OSC_MIN_FREQ => {
                    if target < k {
                        branch.points.push(BranchPoint { k: sol.k, r: sol.r, im_sigma: sol.sigma.im });
                        branch.solutions.push(sol.clone());
                    }
                    from = sol;
                }
                _ => {
                    step *= 0.5;
                    if step < K_STEP_FLOOR {
                        return Ok(None);
                    }
                }
            }
        }
        Ok(Some(from))
    }

    /// Global minimum over the branches, refined by golden-section search.
    pub fn find_critical(&self, branches: &[NeutralBranch]) -> Result<CriticalPoint> {
        let (bi, pi) = branches
            .iter()
            .enumerate()
            .flat_map(|(b, br)| br.points.iter().enumerate().map(move |(i, p)| (b, i, p.r)))
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(b, i, _)| (b, i))
            .ok_or_else(|| BioconError::Degenerate("no neutral points".into()))?;
        let br = &branches[bi];
        if br.points.len() < 3 {
            return Err(BioconError::Degenerate(format!("branch has only {} points", br.points.len())));
        }
        let class = br.branch_class;
        if pi == 0 || pi + 1 == br.points.len() {
            warn!("minimum of R lies at the end of the k range (k = {})", br.points[pi].k);
            let p = br.points[pi];
            return Ok(critical(p.k, p.r, p.im_sigma, class));
        }
        let (lo, hi) = (br.points[pi - 1].k, br.points[pi + 1].k);
        let seed = br.solutions.get(pi).cloned();
        let eval = |k: f64| -> Result<EigenSolution> {
            match (&seed, class) {
                (Some(s), BranchClass::Oscillatory) => {
                    let p = self.pencil(k)?;
                    self.newton_oscillatory(&p, s.r, s.sigma.im, self.pack_complex(s))
                }
                (s, _) => self.solve_stationary(k, s.as_ref()),
            }
        };
        let best = golden_section(lo, hi, 1e-4, eval)?;
        Ok(critical(best.k, best.r, best.sigma.im, class))
    }

    /// Residuals of the momentum and concentration equations for a trial
    /// `(W, Φ)`, with the radiation recomputed by source iteration.
    pub fn apply_operator(&self, k: f64, r: f64, sigma: C64, w: &[C64], phi: &[C64]) -> Result<OperatorResidual> {
        let n = self.n();
        if w.len() != n || phi.len() != n {
            return Err(BioconError::InvalidParams("profile length does not match the grid".into()));
        }
        let c = &self.coef;
        let s_c = self.bs.params.s_c;
        let theta: Vec<C64> = (0..n).map(|i| (0..n).map(|j| phi[j] * self.cum[(i, j)]).sum()).collect();
        let opts = SweepOptions { polar_nodes: self.opts.polar_nodes, tol: 1e-13, max_iter: 5000 };
        let pr = solve_perturbed_diffuse_with(&self.bs, &theta, phi, k, 0.0, &opts)?;
        let apply = |m: &DMatrix<f64>, v: &[C64]| -> Vec<C64> {
            (0..n).map(|i| (0..n).map(|j| v[j] * m[(i, j)]).sum()).collect()
        };
        let (dw, d2w, d4w) = (apply(&self.d1, w), apply(&self.d2, w), apply(&self.d4, w));
        let (dphi, d2phi) = (apply(&self.d1, phi), apply(&self.d2, phi));
        let k2 = k * k;
        let momentum: Vec<C64> = (0..n)
            .map(|i| {
                let lw = d2w[i] - w[i] * k2;
                let l2w = d4w[i] - d2w[i] * (2.0 * k2) + w[i] * (k2 * k2);
                lw * (sigma / s_c) - l2w - phi[i] * (r * k2)
            })
            .collect();
        let concentration: Vec<C64> = (0..n)
            .map(|i| {
                let gamma0 = (pr.g1_d[i] * (c.dn[i] * c.tp[i] + c.n[i] * c.tpp[i] * c.dg[i])
                    + pr.dg1_d[i] * (c.n[i] * c.tp[i]))
                    * c.v_c
                    - C64::new(0.0, 1.0) * pr.p[i] * (c.v_c * k * c.n[i] * c.t[i] / c.q[i]);
                gamma0 + theta[i] * self.gamma1[i] + phi[i] * (sigma + k2 + self.gamma2[i]) + dphi[i] * (c.v_c * c.t[i])
                    - d2phi[i]
                    + w[i] * c.dn[i]
            })
            .collect();
        let second = match self.opts.bc_mode {
            BcMode::PaperEquations => &d2w,
            BcMode::Rigid => &dw,
        };
        let wall_flux = |i: usize| {
            dphi[i] - phi[i] * (c.v_c * c.t[i]) - (pr.g1_c[i] + pr.g1_d[i]) * (c.n[i] * c.v_c * c.tp[i])
        };
        let boundary = vec![w[0], second[0], wall_flux(0), w[n - 1], second[n - 1], wall_flux(n - 1)];

        // Scale as the assembled rows so the norm matches the solver's.
        let raw = self.pencil_row_scales(k)?;
        let mut norm = 0.0f64;
        for i in 2..n - 2 {
            norm = norm.max(momentum[i].norm() / raw[i]);
        }
        for i in 1..n - 1 {
            norm = norm.max(concentration[i].norm() / raw[n + i]);
        }
        let bscale = [raw[0], raw[1], raw[n], raw[n - 1], raw[n - 2], raw[2 * n - 1]];
        for (v, s) in boundary.iter().zip(bscale) {
            norm = norm.max(v.norm() / s);
        }
        Ok(OperatorResidual { momentum, concentration, boundary, norm })
    }

    /// Row scale factors applied by [`Self::pencil`].
    fn pencil_row_scales(&self, k: f64) -> Result<Vec<f64>> {
        let n = self.n();
        let k2 = k * k;
        let resp = self.response(k)?;
        let c = &self.coef;
        let mut scales = vec![1.0; 2 * n];
        let rowmax = |f: &dyn Fn(usize) -> f64| (0..n).fold(0.0f64, |a, j| a.max(f(j).abs()));
        let bc = match self.opts.bc_mode {
            BcMode::PaperEquations => &self.d2,
            BcMode::Rigid => &self.d1,
        };
        scales[1] = rowmax(&|j| bc[(0, j)]);
        scales[n - 2] = rowmax(&|j| bc[(n - 1, j)]);
        for i in 2..n - 2 {
            scales[i] = rowmax(&|j| {
                self.d4[(i, j)] - 2.0 * k2 * self.d2[(i, j)] + if i == j { k2 * k2 } else { 0.0 }
            });
        }
        let g_d = &resp.g_theta * &self.cum + &resp.g_phi;
        let dg_d = &resp.dg_theta * &self.cum + &resp.dg_phi;
        let flux = &resp.p_theta * &self.cum + &resp.p_phi;
        for i in 0..n {
            let v_c = c.v_c;
            let mut lhs = vec![0.0; n];
            if i == 0 || i == n - 1 {
                let shade = c.n[i] * v_c * c.tp[i];
                for j in 0..n {
                    lhs[j] = self.d1[(i, j)] - shade * (c.collimated_factor(i) * self.cum[(i, j)] + g_d[(i, j)]);
                }
                lhs[i] -= v_c * c.t[i];
            } else {
                let g_coef = v_c * (c.dn[i] * c.tp[i] + c.n[i] * c.tpp[i] * c.dg[i]);
                let dg_coef = v_c * c.n[i] * c.tp[i];
                let p_coef = v_c * k * c.n[i] * c.t[i] / c.q[i];
                for j in 0..n {
                    lhs[j] = g_coef * g_d[(i, j)]
                        + dg_coef * dg_d[(i, j)]
                        + p_coef * flux[(i, j)]
                        + self.gamma1[i] * self.cum[(i, j)]
                        + v_c * c.t[i] * self.d1[(i, j)]
                        - self.d2[(i, j)];
                }
                lhs[i] += k2 + self.gamma2[i];
            }
            scales[n + i] = lhs.iter().fold(c.dn[i].abs(), |a, v| a.max(v.abs()));
        }
        Ok(scales)
    }
}

const OSC_MIN_FREQ: f64 = 1e-3;
const OSC_SCAN: usize = 24;
const K_STEP_FLOOR: f64 = 1e-3;

fn critical(k: f64, r: f64, im: f64, class: BranchClass) -> CriticalPoint {
    CriticalPoint { k_c: k, r_c: r, lambda_c: 2.0 * std::f64::consts::PI / k, im_sigma_c: im, source_branch: class }
}

/// Extrapolates `Im σ² → 0` from the last two points of a branch that
/// could not be continued to `k_fail`.
fn estimate_k0(points: &[BranchPoint], k_fail: f64) -> f64 {
    match points {
        [.., a, b] => {
            let (wa, wb) = (a.im_sigma * a.im_sigma, b.im_sigma * b.im_sigma);
            if wa > wb {
                let k0 = b.k + wb * (b.k - a.k) / (wa - wb);
                k0.clamp(b.k, k_fail)
            } else {
                b.k
            }
        }
        [a] => a.k,
        [] => k_fail,
    }
}

fn golden_section<F>(mut a: f64, mut b: f64, tol: f64, f: F) -> Result<EigenSolution>
where
    F: Fn(f64) -> Result<EigenSolution>,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol * (a + b).abs() * 0.5 {
        if fc.r < fd.r {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc.r < fd.r { fc } else { fd })
}

/// Positive stationary Rayleigh numbers, ascending.
fn stationary_candidates(p: &Pencil) -> Result<Vec<f64>> {
    let lu = p.a0.clone().lu();
    let m = lu.solve(&p.a1).ok_or_else(|| BioconError::Singular {
        context: format!("zero-Rayleigh operator at k = {}", p.k),
        condition: f64::INFINITY,
    })?;
    let eig = m.complex_eigenvalues();
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let mut rs: Vec<f64> = eig
        .iter()
        .filter(|v| v.im.abs() <= 1e-8 * scale.max(1e-300) && v.re < -1e-12 * scale)
        .map(|v| -1.0 / v.re)
        .collect();
    rs.sort_by(f64::total_cmp);
    Ok(rs)
}

/// Eigenvalues `σ` of `(A₀ + R A₁) x = σ B x`, largest real part first.
fn spectrum(p: &Pencil, r: f64, n_modes: usize) -> Result<Vec<C64>> {
    let shift = ORACLE_SHIFT;
    let lhs = p.at(r) - &p.b * shift;
    let m = lhs.lu().solve(&p.b).ok_or_else(|| BioconError::Eigen(format!("shifted pencil singular at k = {}", p.k)))?;
    let eig = m.complex_eigenvalues();
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let mut sig: Vec<C64> = eig
        .iter()
        .filter(|v| v.norm() > 1e-12 * scale.max(1e-300))
        .map(|v| C64::new(shift, 0.0) + 1.0 / v)
        .collect();
    if sig.iter().any(|s| !s.re.is_finite()) {
        return Err(BioconError::Eigen("non-finite eigenvalue".into()));
    }
    sig.sort_by(|a, b| b.re.total_cmp(&a.re));
    sig.truncate(n_modes);
    Ok(sig)
}

const ORACLE_SHIFT: f64 = 0.731;

/// Approximate null vector of a nearly singular matrix by inverse iteration.
fn null_vector(a: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = a.nrows();
    let scale = a.amax().max(1e-300);
    let shifted = a + DMatrix::identity(m, m) * (1e-13 * scale);
    let lu = shifted.lu();
    let mut x = DVector::from_fn(m, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
    for _ in 0..3 {
        x = lu.solve(&x).ok_or_else(|| BioconError::Singular { context: "inverse iteration".into(), condition: f64::INFINITY })?;
        let nrm = x.amax();
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(BioconError::Eigen("inverse iteration produced a non-finite vector".into()));
        }
        x /= nrm;
    }
    Ok(x)
}

/// Eigenvector of `(A − σB) x = 0` for a complex `σ`, by inverse iteration.
fn complex_null_vector(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: C64) -> Result<Vec<C64>> {
    let m = a.nrows();
    let shift = sigma * (1.0 + 1e-10);
    let mat = DMatrix::<C64>::from_fn(m, m, |i, j| C64::new(a[(i, j)], 0.0) - shift * b[(i, j)]);
    let lu = mat.lu();
    let mut x = DVector::<C64>::from_fn(m, |i, _| C64::new(1.0 + 0.1 * ((i * 7919) % 13) as f64, 0.0));
    for _ in 0..3 {
        x = lu.solve(&x).ok_or_else(|| BioconError::Singular { context: "complex inverse iteration".into(), condition: f64::INFINITY })?;
        let nrm = x.iter().fold(0.0f64, |acc, v| acc.max(v.norm()));
        if !(nrm > 0.0) || !nrm.is_finite() {
            return Err(BioconError::Eigen("inverse iteration produced a non-finite vector".into()));
        }
        x /= C64::new(nrm, 0.0);
    }
    Ok(x.iter().copied().collect())
}

/// Geometric grid of `steps` wavenumbers on `[k_min, k_max]`.
pub fn geometric_k_grid(k_min: f64, k_max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(k_min > 0.0 && k_max > k_min && steps >= 2) {
        return Err(BioconError::InvalidParams(format!("bad k range [{k_min}, {k_max}] with {steps} steps")));
    }
    let ratio = (k_max / k_min).powf(1.0 / (steps - 1) as f64);
    Ok((0..steps).map(|i| k_min * ratio.powi(i as i32)).collect())
}
