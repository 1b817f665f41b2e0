//! Equilibrium concentration profile and the basic-state fields.
//!
//! The pair `dτ/dz = −κ n`, `dn/dz = V_c T(I_t Λ(τ)) n` is integrated
//! downward from the top with `τ(1) = 0`, `n(1) = η`; `η` is shot so that
//! `τ(0) = κ`, which is the unit-mass condition.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{BioconError, Result};
use crate::quadrature::uniform_integral;
use crate::radiation::{
    collimated_intensity, radiative_flux, solve_intensity_fie, IntensitySolution, RadiationParams, DEFAULT_NODES,
};
use crate::taxis::{taxis_derivative, taxis_value, TaxisVariant};

/// Boundary conditions for the perturbation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum BcMode {
    /// `W = D²W = 0` on both walls with the cell-flux condition.
    #[default]
    PaperEquations,
    /// `W = DW = 0` on both walls with the cell-flux condition.
    Rigid,
}

impl BcMode {
    pub fn name(self) -> &'static str {
        match self {
            BcMode::PaperEquations => "paper_equations",
            BcMode::Rigid => "rigid",
        }
    }
}

impl std::str::FromStr for BcMode {
    type Err = BioconError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_equations" | "paper" => Ok(BcMode::PaperEquations),
            "rigid" => Ok(BcMode::Rigid),
            other => Err(BioconError::InvalidParams(format!("unknown bc mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Target for `|τ(0) − κ|`.
    pub shoot_tol: f64,
    /// Residual target for the neutral-point Newton iteration.
    pub newton_tol: f64,
    /// Gauss nodes per hemisphere for the perturbed radiation.
    pub polar_nodes: usize,
    /// Nyström nodes for the intensity equation.
    pub fie_nodes: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { shoot_tol: 1e-12, newton_tol: 1e-9, polar_nodes: 24, fie_nodes: DEFAULT_NODES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspensionParams {
    pub s_c: f64,
    pub v_c: f64,
    pub radiation: RadiationParams,
    pub taxis: TaxisVariant,
    pub n_z: usize,
    pub bc_mode: BcMode,
    pub tolerances: Tolerances,
}

impl SuspensionParams {
    pub fn new(v_c: f64, radiation: RadiationParams, taxis: TaxisVariant) -> Self {
        Self {
            s_c: 20.0,
            v_c,
            radiation,
            taxis,
            n_z: 501,
            bc_mode: BcMode::default(),
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.radiation.validate()?;
        if !(self.v_c >= 0.0) || !self.v_c.is_finite() {
            return Err(BioconError::InvalidParams(format!("V_c must be >= 0, got {}", self.v_c)));
        }
        if !(self.s_c > 0.0) {
            return Err(BioconError::InvalidParams(format!("S_c must be > 0, got {}", self.s_c)));
        }
        if self.n_z < 51 {
            return Err(BioconError::InvalidParams(format!("n_z must be >= 51, got {}", self.n_z)));
        }
        Ok(())
    }
}

/// Basic-state fields sampled on a uniform grid in `z`.
#[derive(Debug, Clone)]
pub struct BasicState {
    pub params: SuspensionParams,
    /// Top-surface concentration found by the shoot.
    pub eta: f64,
    pub z_grid: Vec<f64>,
    pub n_s: Vec<f64>,
    pub tau: Vec<f64>,
    pub g_s: Vec<f64>,
    pub g_s_c: Vec<f64>,
    pub g_s_d: Vec<f64>,
    pub q_s: Vec<f64>,
    pub t_s: Vec<f64>,
    pub dt_s_dg: Vec<f64>,
    pub dn_s_dz: Vec<f64>,
    /// `dG_s/dz`; infinite at a wall where the intensity has a
    /// logarithmic slope singularity.
    pub dg_s_dz: Vec<f64>,
    pub intensity: Arc<IntensitySolution>,
}

/// Largest internal step of the shooting integrator.
const MAX_STEP: f64 = 1.0 / 4000.0;
const ETA_BRACKET: (f64, f64) = (1e-4, 50.0);

struct Shooter<'a> {
    sol: &'a IntensitySolution,
    kappa: f64,
    v_c: f64,
    i_t: f64,
    taxis: TaxisVariant,
    steps_per_cell: usize,
    cells: usize,
}

impl Shooter<'_> {
    fn rhs(&self, tau: f64, n: f64) -> (f64, f64) {
        let g = self.i_t * self.sol.eval_fast(tau.min(self.kappa));
        (-self.kappa * n, self.v_c * taxis_value(g, self.taxis) * n)
    }

    /// Integrates from `z = 1` to `z = 0`; returns `(τ, n)` at every grid
    /// node ordered by increasing `z`.
    fn integrate(&self, eta: f64, keep: bool) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = -1.0 / (self.cells * self.steps_per_cell) as f64;
        let (mut tau, mut n) = (0.0, eta);
        let mut taus = Vec::new();
        let mut ns = Vec::new();
        if keep {
            taus.reserve(self.cells + 1);
            ns.reserve(self.cells + 1);
            taus.push(tau);
            ns.push(n);
        }
        for cell in 0..self.cells {
            for _ in 0..self.steps_per_cell {
                let (k1t, k1n) = self.rhs(tau, n);
                let (k2t, k2n) = self.rhs(tau + 0.5 * h * k1t, n + 0.5 * h * k1n);
                let (k3t, k3n) = self.rhs(tau + 0.5 * h * k2t, n + 0.5 * h * k2n);
                let (k4t, k4n) = self.rhs(tau + h * k3t, n + h * k3n);
                tau += h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
                n += h / 6.0 * (k1n + 2.0 * k2n + 2.0 * k3n + k4n);
            }
            if !(n > 0.0) {
                let z = 1.0 - (cell + 1) as f64 / self.cells as f64;
                return Err(BioconError::NonPositiveConcentration { z, value: n });
            }
            if keep {
                taus.push(tau);
                ns.push(n);
            }
        }
        if !keep {
            taus.push(tau);
            ns.push(n);
        }
        taus.reverse();
        ns.reverse();
        Ok((taus, ns))
    }

    fn residual(&self, eta: f64) -> f64 {
        match self.integrate(eta, false) {
            Ok((t, _)) if t[0].is_finite() => t[0] - self.kappa,
            _ => f64::INFINITY,
        }
    }
}

/// Solves for the equilibrium profile.
pub fn solve_basic_state(params: &SuspensionParams) -> Result<BasicState> {
    params.validate()?;
    let sol = Arc::new(solve_intensity_fie(&params.radiation, params.tolerances.fie_nodes)?);
    solve_basic_state_with(params, sol)
}

/// As [`solve_basic_state`] with a precomputed intensity solution.
pub fn solve_basic_state_with(params: &SuspensionParams, sol: Arc<IntensitySolution>) -> Result<BasicState> {
    params.validate()?;
    let kappa = params.radiation.kappa;
    let cells = params.n_z - 1;
    let h = 1.0 / cells as f64;
    let shooter = Shooter {
        sol: &sol,
        kappa,
        v_c: params.v_c,
        i_t: params.radiation.i_t,
        taxis: params.taxis,
        steps_per_cell: (h / MAX_STEP).ceil().max(1.0) as usize,
        cells,
    };
    let eta = if params.v_c == 0.0 { 1.0 } else { shoot_eta(&shooter, params.tolerances.shoot_tol)? };
    let (tau, n_s) = if params.v_c == 0.0 {
        let z: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        (z.iter().map(|&z| kappa * (1.0 - z)).collect(), vec![1.0; cells + 1])
    } else {
        shooter.integrate(eta, true)?
    };
    build_state(params, sol, eta, tau, n_s)
}

fn shoot_eta(shooter: &Shooter, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = ETA_BRACKET;
    let (mut f_lo, f_hi) = (shooter.residual(lo), shooter.residual(hi));
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(BioconError::BracketFailure { lo, hi, f_lo, f_hi });
    }
    // Bisection to a modest bracket, then secant.
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        let f = shooter.residual(mid);
        if f < 0.0 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
        }
    }
    let (mut x0, mut f0) = (lo, f_lo);
    let mut x1 = hi;
    let mut f1 = shooter.residual(hi);
    for _ in 0..60 {
        if f1.abs() <= tol || f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        x0 = x1;
        f0 = f1;
        x1 = x2;
        f1 = shooter.residual(x1);
    }
    if !(f1.abs() <= tol.max(1e-10)) {
        return Err(BioconError::BracketFailure { lo, hi, f_lo: f0, f_hi: f1 });
    }
    Ok(x1)
}

fn build_state(
    params: &SuspensionParams,
    sol: Arc<IntensitySolution>,
    eta: f64,
    tau: Vec<f64>,
    n_s: Vec<f64>,
) -> Result<BasicState> {
    let rad = &params.radiation;
    let kappa = rad.kappa;
    let cells = n_s.len() - 1;
    let z_grid: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
    let mut out = BasicState {
        params: *params,
        eta,
        z_grid,
        n_s,
        tau: tau.iter().map(|&t| t.clamp(0.0, kappa)).collect(),
        g_s: Vec::with_capacity(cells + 1),
        g_s_c: Vec::with_capacity(cells + 1),
        g_s_d: Vec::with_capacity(cells + 1),
        q_s: Vec::with_capacity(cells + 1),
        t_s: Vec::with_capacity(cells + 1),
        dt_s_dg: Vec::with_capacity(cells + 1),
        dn_s_dz: Vec::with_capacity(cells + 1),
        dg_s_dz: Vec::with_capacity(cells + 1),
        intensity: sol.clone(),
    };
    for i in 0..=cells {
        let t = out.tau[i];
        let n = out.n_s[i];
        let g = rad.i_t * sol.eval(t);
        let gc = collimated_intensity(rad, t);
        out.g_s.push(g);
        out.g_s_c.push(gc);
        out.g_s_d.push(g - gc);
        out.q_s.push(radiative_flux(&sol, rad, t)?);
        let ts = taxis_value(g, params.taxis);
        out.t_s.push(ts);
        out.dt_s_dg.push(taxis_derivative(g, params.taxis));
        out.dn_s_dz.push(params.v_c * ts * n);
        out.dg_s_dz.push(-kappa * n * rad.i_t * sol.eval_deriv(t));
    }
    Ok(out)
}

impl BasicState {
    pub fn len(&self) -> usize {
        self.z_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z_grid.is_empty()
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    /// `∫₀¹ n_s dz`.
    pub fn mass(&self) -> f64 {
        uniform_integral(&self.n_s, self.step())
    }

    /// Optical depth at arbitrary `z`, by cubic Hermite interpolation using
    /// `dτ/dz = −κ n_s`.
    pub fn tau_at(&self, z: f64) -> f64 {
        let kappa = self.params.radiation.kappa;
        let (i, s, h) = self.locate(z);
        let d0 = -kappa * self.n_s[i];
        let d1 = -kappa * self.n_s[i + 1];
        hermite(self.tau[i], self.tau[i + 1], d0, d1, s, h).clamp(0.0, kappa)
    }

    /// Concentration at arbitrary `z`, by cubic Hermite interpolation.
    pub fn n_at(&self, z: f64) -> f64 {
        let (i, s, h) = self.locate(z);
        hermite(self.n_s[i], self.n_s[i + 1], self.dn_s_dz[i], self.dn_s_dz[i + 1], s, h)
    }

    /// Total intensity at arbitrary `z`.
    pub fn g_at(&self, z: f64) -> f64 {
        self.params.radiation.i_t * self.intensity.eval(self.tau_at(z))
    }

    fn locate(&self, z: f64) -> (usize, f64, f64) {
        let h = self.step();
        let cells = self.len() - 1;
        let i = ((z / h).floor().max(0.0) as usize).min(cells - 1);
        (i, (z - self.z_grid[i]) / h, h)
    }

    /// Largest deviation of `n_s` from the profile obtained independently in
    /// the optical-depth variable, where `dn/dτ = −(V_c/κ) T` integrates to
    /// `n(τ) = η − (V_c/κ) ∫₀^τ T ds`.
    pub fn profile_residual(&self) -> f64 {
        let p = &self.params;
        let kappa = p.radiation.kappa;
        let f = TaxisPrimitive::new(&self.intensity, p.radiation.i_t, p.taxis);
        self.n_s
            .iter()
            .zip(&self.tau)
            .map(|(&n, &t)| (n - (self.eta - p.v_c / kappa * f.eval(t))).abs())
            .fold(0.0, f64::max)
    }

    /// Checks mass, positivity, the optical-depth endpoints and the profile
    /// residual.
    pub fn check_invariants(&self) -> Result<()> {
        let kappa = self.params.radiation.kappa;
        if let Some((i, &v)) = self.n_s.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(BioconError::NonPositiveConcentration { z: self.z_grid[i], value: v });
        }
        let mass = self.mass();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(BioconError::Consistency { residual: mass - 1.0, z: f64::NAN });
        }
        let top = self.tau[self.len() - 1];
        let bottom = self.tau[0];
        let tol = self.params.tolerances.shoot_tol.max(1e-10);
        if top.abs() > tol || (bottom - kappa).abs() > tol {
            return Err(BioconError::Consistency { residual: (bottom - kappa).abs().max(top.abs()), z: 0.0 });
        }
        let r = self.profile_residual();
        if r > 1e-6 {
            return Err(BioconError::Consistency { residual: r, z: f64::NAN });
        }
        Ok(())
    }
}

pub(crate) fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, s: f64, h: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1
}

/// `F(τ) = ∫₀^τ T(I_t Λ(s)) ds`, tabulated by composite Gauss–Legendre on
/// panels graded towards both faces.
struct TaxisPrimitive {
    breaks: Vec<f64>,
    cumulative: Vec<f64>,
    rule: (Vec<f64>, Vec<f64>),
    sol: IntensitySolution,
    i_t: f64,
    taxis: TaxisVariant,
}

impl TaxisPrimitive {
    fn new(sol: &IntensitySolution, i_t: f64, taxis: TaxisVariant) -> Self {
        let kappa = sol.kappa();
        let mut breaks = vec![0.0];
        let uniform = 40;
        let graded = 12;
        let mut inner = Vec::new();
        for k in (1..=graded).rev() {
            inner.push(kappa / uniform as f64 * 0.5f64.powi(k));
        }
        for i in 1..uniform {
            inner.push(kappa * i as f64 / uniform as f64);
        }
        for k in 1..=graded {
            inner.push(kappa - kappa / uniform as f64 * 0.5f64.powi(k));
        }
        inner.sort_by(f64::total_cmp);
        breaks.extend(inner);
        breaks.push(kappa);
        let rule = crate::quadrature::legendre_reference(10);
        let mut me =
            Self { breaks, cumulative: vec![0.0], rule, sol: sol.clone(), i_t, taxis };
        for w in 1..me.breaks.len() {
            let v = me.cumulative[w - 1] + me.piece(me.breaks[w - 1], me.breaks[w]);
            me.cumulative.push(v);
        }
        me
    }

    fn piece(&self, a: f64, b: f64) -> f64 {
        let (c, hw) = (0.5 * (a + b), 0.5 * (b - a));
        self.rule
            .0
            .iter()
            .zip(&self.rule.1)
            .map(|(&u, &w)| w * hw * taxis_value(self.i_t * self.sol.eval(c + hw * u), self.taxis))
            .sum()
    }

    fn eval(&self, tau: f64) -> f64 {
        let i = self.breaks.partition_point(|&b| b <= tau).saturating_sub(1).min(self.breaks.len() - 2);
        self.cumulative[i] + self.piece(self.breaks[i], tau.min(self.breaks[i + 1]))
    }
}

/// Roots of `G_s(z) = g_c`, found by sign changes on the grid and refined
/// by bisection to `1e-8` in `z`.
pub fn sublayer_locations(bs: &BasicState, g_c: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    for i in 0..bs.len() - 1 {
        let (f0, f1) = (bs.g_s[i] - g_c, bs.g_s[i + 1] - g_c);
        if f0 == 0.0 {
            roots.push(bs.z_grid[i]);
            continue;
        }
        if f0 * f1 < 0.0 {
            let (mut lo, mut hi) = (bs.z_grid[i], bs.z_grid[i + 1]);
            let mut flo = f0;
            while hi - lo > 1e-9 {
                let mid = 0.5 * (lo + hi);
                let fm = bs.g_at(mid) - g_c;
                if fm * flo <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    if let Some(&last) = bs.g_s.last() {
        if last == g_c {
            roots.push(1.0);
        }
    }
    roots
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxConcentration {
    pub z: f64,
    pub n: f64,
    /// Set when the profile is uniform; `z` is then 0.
    pub flat: bool,
}

/// Location and value of the largest concentration.
pub fn max_concentration(bs: &BasicState) -> MaxConcentration {
    let (lo, hi) = bs.n_s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        return MaxConcentration { z: 0.0, n: hi, flat: true };
    }
    let i = bs.n_s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
    let (z, n) = refine_peak(bs, i);
    MaxConcentration { z, n, flat: false }
}

fn refine_peak(bs: &BasicState, i: usize) -> (f64, f64) {
    if i == 0 || i == bs.len() - 1 {
        return (bs.z_grid[i], bs.n_s[i]);
    }
    let (y0, y1, y2) = (bs.n_s[i - 1], bs.n_s[i], bs.n_s[i + 1]);
    let denom = y0 - 2.0 * y1 + y2;
    if denom >= 0.0 {
        return (bs.z_grid[i], y1);
    }
    let s = 0.5 * (y0 - y2) / denom;
    let h = bs.step();
    (bs.z_grid[i] + s * h, y1 - 0.25 * (y0 - y2) * s)
}

/// Local maxima of `n_s`, including a wall value that exceeds its
/// neighbour. Interior peaks are refined by a quadratic fit.
pub fn local_maxima(bs: &BasicState) -> Vec<(f64, f64)> {
    let n = &bs.n_s;
    let last = n.len() - 1;
    (0..=last)
        .filter(|&i| {
            let above_left = i == 0 || n[i] > n[i - 1];
            let above_right = i == last || n[i] >= n[i + 1];
            let not_flat = (i > 0 && n[i] > n[i - 1]) || (i < last && n[i] > n[i + 1]);
            above_left && above_right && not_flat
        })
        .map(|i| refine_peak(bs, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiation::RefractionMode;

    fn params(v_c: f64, kappa: f64, omega: f64, i_d: f64, theta: f64, taxis: TaxisVariant) -> SuspensionParams {
        SuspensionParams::new(v_c, RadiationParams::new(kappa, omega, i_d, theta), taxis)
    }

    #[test]
    fn zero_swimming_is_uniform() {
        let bs = solve_basic_state(&params(0.0, 0.7, 0.4, 0.2, 0.0, TaxisVariant::A)).unwrap();
        assert!(bs.n_s.iter().all(|&n| n == 1.0));
        for (&z, &t) in bs.z_grid.iter().zip(&bs.tau) {
            assert!((t - 0.7 * (1.0 - z)).abs() < 1e-14);
        }
        let m = max_concentration(&bs);
        assert!(m.flat && m.z == 0.0);
        bs.check_invariants().unwrap();
    }

    #[test]
    fn invariants_hold() {
        let bs = solve_basic_state(&params(15.0, 0.5, 0.4, 0.26, 0.0, TaxisVariant::A)).unwrap();
        bs.check_invariants().unwrap();
        assert!(bs.profile_residual() < 1e-7, "{}", bs.profile_residual());
        assert!((bs.mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unimodal_mid_height_peak() {
        let bs = solve_basic_state(&params(10.0, 0.5, 0.4, 0.25, 0.0, TaxisVariant::A)).unwrap();
        let m = max_concentration(&bs);
        assert!(!m.flat);
        assert!((0.5..=0.6).contains(&m.z), "z_max = {}", m.z);
        assert_eq!(local_maxima(&bs).len(), 1);
        // The peak sits where the taxis changes sign.
        let roots = sublayer_locations(&bs, TaxisVariant::A.critical_intensity());
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - m.z).abs() < 0.01, "{roots:?} vs {}", m.z);
    }

    #[test]
    fn bimodal_and_unimodal_scattering_cases() {
        let bs = solve_basic_state(&params(10.0, 1.0, 1.0, 0.02, 0.0, TaxisVariant::B)).unwrap();
        assert_eq!(local_maxima(&bs).len(), 2, "{:?}", local_maxima(&bs));
        let bs = solve_basic_state(&params(10.0, 1.0, 1.0, 0.02, 50.0, TaxisVariant::B)).unwrap();
        assert_eq!(local_maxima(&bs).len(), 1);
        assert!(local_maxima(&bs)[0].0 == 1.0);
    }

    #[test]
    fn peak_locations_under_oblique_light() {
        let snell = |mut p: SuspensionParams| {
            p.radiation.refraction = RefractionMode::Snell { relative_index: 1.333 };
            p
        };
        let bs = solve_basic_state(&snell(params(15.0, 0.5, 0.4, 0.26, 40.0, TaxisVariant::A))).unwrap();
        let z = max_concentration(&bs).z;
        assert!((z - 0.72).abs() <= 0.05, "{z}");
        let bs = solve_basic_state(&snell(params(15.0, 1.0, 0.4, 0.5, 60.0, TaxisVariant::A))).unwrap();
        let z = max_concentration(&bs).z;
        assert!((z - 0.86).abs() <= 0.05, "{z}");
    }

    #[test]
    fn sublayer_roots() {
        let bs = solve_basic_state(&params(0.0, 0.5, 0.4, 0.25, 0.0, TaxisVariant::A)).unwrap();
        let r = sublayer_locations(&bs, 1.3);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.5).abs() < 0.1);
        assert!((bs.g_at(r[0]) - 1.3).abs() < 1e-7);
        let bs = solve_basic_state(&params(0.0, 1.0, 1.0, 0.02, 0.0, TaxisVariant::B)).unwrap();
        let r = sublayer_locations(&bs, 1.9);
        assert_eq!(r.len(), 2, "{r:?}");
        assert!((r[0] - 0.64).abs() < 0.05 && (r[1] - 0.96).abs() < 0.04, "{r:?}");
        assert!(sublayer_locations(&bs, 10.0).is_empty());
    }

    #[test]
    fn grid_doubling() {
        let mut p = params(15.0, 1.0, 0.4, 0.5, 20.0, TaxisVariant::A);
        let coarse = solve_basic_state(&p).unwrap();
        p.n_z = 1001;
        let fine = solve_basic_state(&p).unwrap();
        let d = coarse.n_s.iter().enumerate().map(|(i, &n)| (n - fine.n_s[2 * i]).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6, "{d:e}");
    }

    #[test]
    fn z_max_moves_up_with_incidence() {
        let mut last = 0.0;
        for &theta in &[0.0, 20.0, 40.0, 60.0, 80.0] {
            let bs = solve_basic_state(&params(15.0, 0.5, 0.4, 0.26, theta, TaxisVariant::A)).unwrap();
            let z = max_concentration(&bs).z;
            assert!(z >= last - 1e-9, "theta={theta}: {z} < {last}");
            last = z;
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut p = params(15.0, 1.0, 0.4, 0.5, 20.0, TaxisVariant::A);
        p.n_z = 20;
        assert!(solve_basic_state(&p).is_err());
        let p = params(-1.0, 1.0, 0.4, 0.5, 20.0, TaxisVariant::A);
        assert!(solve_basic_state(&p).is_err());
    }
}
