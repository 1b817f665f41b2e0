//! Basic-state radiation: the total intensity `Λ(τ) = G_s/I_t` of a uniformly
//! illuminated, isotropically scattering slab of optical thickness `κ`.
//!
//! `Λ` solves the second-kind integral equation
//!
//! ```text
//! Λ(τ) = (ω/2) ∫₀^κ Λ(τ′) E₁(|τ−τ′|) dτ′ + e^{−τ/μ₀} + 2 (I_D/I_t) E₂(τ)
//! ```
//!
//! discretized by a Nyström method on composite Gauss–Legendre panels that
//! are graded geometrically towards both faces. Kernel weights are computed
//! by product integration: the `ln|τ−τ′|` part of `Eₙ` is integrated exactly
//! against the panel interpolant, the regular remainder by Gauss quadrature
//! on each side of the singularity. The same machinery evaluates the
//! Nyström interpolant, its derivative and the diffuse flux at any depth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BioconError, Result};
use crate::quadrature::{expn_regular, expn_unchecked, legendre_reference, log_coefficient};

/// Nodes per Gauss panel.
const PANEL_ORDER: usize = 8;
/// Sub-rule used for far-field and regular-part integrals.
const FINE_ORDER: usize = 16;
/// Panels closer than this many half-widths get the singular treatment.
const NEAR_FIELD: f64 = 2.0;
/// Default Nyström node count.
pub const DEFAULT_NODES: usize = 128;
const TABLE_POINTS: usize = 2048;

/// Mapping from the incidence angle to the in-medium beam angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum RefractionMode {
    /// `θ_r = θ_i`.
    #[default]
    Identity,
    /// Snell's law with the given refractive index ratio (medium / outside).
    Snell { relative_index: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiationParams {
    /// Extinction coefficient κ (total optical depth of the layer).
    pub kappa: f64,
    /// Scattering albedo ω.
    pub omega: f64,
    /// Collimated magnitude.
    pub i_t: f64,
    /// Diffuse magnitude.
    pub i_d: f64,
    /// Angle of incidence in degrees.
    pub theta_i_deg: f64,
    pub refraction: RefractionMode,
}

impl RadiationParams {
    pub fn new(kappa: f64, omega: f64, i_d: f64, theta_i_deg: f64) -> Self {
        Self { kappa, omega, i_t: 1.0, i_d, theta_i_deg, refraction: RefractionMode::Identity }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(BioconError::InvalidParams(format!("kappa must be > 0, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(BioconError::InvalidParams(format!("omega must lie in [0, 1], got {}", self.omega)));
        }
        if !(self.i_t > 0.0) {
            return Err(BioconError::InvalidParams(format!("I_t must be > 0, got {}", self.i_t)));
        }
        if !(self.i_d >= 0.0) {
            return Err(BioconError::InvalidParams(format!("I_D must be >= 0, got {}", self.i_d)));
        }
        if !(0.0..90.0).contains(&self.theta_i_deg) {
            return Err(BioconError::InvalidParams(format!(
                "theta_i must lie in [0, 90) degrees, got {}",
                self.theta_i_deg
            )));
        }
        if let RefractionMode::Snell { relative_index } = self.refraction {
            if !(relative_index >= 1.0) {
                return Err(BioconError::InvalidParams(format!(
                    "refractive index ratio must be >= 1, got {relative_index}"
                )));
            }
        }
        if !(self.cos_theta_r() > 0.0) {
            return Err(BioconError::InvalidParams("cos(theta_r) must be positive".into()));
        }
        Ok(())
    }

    /// In-medium beam angle in radians.
    pub fn theta_r(&self) -> f64 {
        let ti = self.theta_i_deg.to_radians();
        match self.refraction {
            RefractionMode::Identity => ti,
            RefractionMode::Snell { relative_index } => (ti.sin() / relative_index).asin(),
        }
    }

    pub fn cos_theta_r(&self) -> f64 {
        self.theta_r().cos()
    }

    /// Diffuse-to-collimated ratio entering the dimensionless equation.
    fn diffuse_ratio(&self) -> f64 {
        self.i_d / self.i_t
    }
}

/// `G_s^c = I_t e^{−τ/cos θ_r}`.
pub fn collimated_intensity(params: &RadiationParams, tau: f64) -> f64 {
    params.i_t * (-tau / params.cos_theta_r()).exp()
}

/// Polynomial basis on a reference panel, as monomial coefficients in
/// `u ∈ [-1, 1]`: `basis_j(u) = Σ_r coef[j][r] u^r`.
#[derive(Debug, Clone)]
struct MonomialBasis {
    coef: Vec<Vec<f64>>,
}

impl MonomialBasis {
    fn eval(&self, j: usize, u: f64) -> f64 {
        self.coef[j].iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }
}

/// Composite graded Gauss–Legendre panels on `[0, κ]`.
#[derive(Debug, Clone)]
struct PanelGrid {
    breaks: Vec<f64>,
    nodes: Vec<f64>,
    ref_nodes: Vec<f64>,
    fine_nodes: Vec<f64>,
    fine_weights: Vec<f64>,
    lagrange: MonomialBasis,
    lagrange_deriv: MonomialBasis,
    /// Lagrange basis values at the fine nodes, `[q][j]`.
    lagrange_at_fine: Vec<Vec<f64>>,
    deriv_at_fine: Vec<Vec<f64>>,
    binomial: Vec<Vec<f64>>,
}

impl PanelGrid {
    fn new(kappa: f64, n_nodes: usize) -> Self {
        let panels = n_nodes.div_ceil(PANEL_ORDER).max(2);
        let breaks = graded_breaks(kappa, panels);
        let (ref_nodes, _) = legendre_reference(PANEL_ORDER);
        let (fine_nodes, fine_weights) = legendre_reference(FINE_ORDER);
        let lagrange = lagrange_monomials(&ref_nodes);
        let lagrange_deriv = MonomialBasis {
            coef: lagrange
                .coef
                .iter()
                .map(|c| (1..c.len()).map(|r| r as f64 * c[r]).collect())
                .collect(),
        };
        let lagrange_at_fine = fine_nodes
            .iter()
            .map(|&u| (0..PANEL_ORDER).map(|j| lagrange.eval(j, u)).collect())
            .collect();
        let deriv_at_fine = fine_nodes
            .iter()
            .map(|&u| (0..PANEL_ORDER).map(|j| lagrange_deriv.eval(j, u)).collect())
            .collect();
        let mut nodes = Vec::with_capacity(panels * PANEL_ORDER);
        for w in breaks.windows(2) {
            let (c, hw) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            nodes.extend(ref_nodes.iter().map(|&u| c + hw * u));
        }
        let mut binomial = vec![vec![0.0; PANEL_ORDER]; PANEL_ORDER];
        for r in 0..PANEL_ORDER {
            binomial[r][0] = 1.0;
            for q in 1..=r {
                binomial[r][q] = binomial[r - 1][q - 1] + if q < r { binomial[r - 1][q] } else { 0.0 };
            }
        }
        Self {
            breaks,
            nodes,
            ref_nodes,
            fine_nodes,
            fine_weights,
            lagrange,
            lagrange_deriv,
            lagrange_at_fine,
            deriv_at_fine,
            binomial,
        }
    }

    fn panels(&self) -> usize {
        self.breaks.len() - 1
    }

    /// Adds to `row` the weights `∫ K(τ−s) basis_j(s) ds` over every panel,
    /// where `K(x) = sgn(x) Eₙ(|x|)` with `sgn = left` for `s < τ` and
    /// `right` for `s > τ`.
    fn accumulate_kernel(&self, tau: f64, n: u32, left: f64, right: f64, deriv: bool, row: &mut [f64]) {
        let basis = if deriv { &self.lagrange_deriv } else { &self.lagrange };
        let at_fine = if deriv { &self.deriv_at_fine } else { &self.lagrange_at_fine };
        let deg = basis.coef[0].len();
        for p in 0..self.panels() {
            let (a, b) = (self.breaks[p], self.breaks[p + 1]);
            let hw = 0.5 * (b - a);
            let c = 0.5 * (a + b);
            // Derivative basis carries a 1/hw chain-rule factor.
            let scale = if deriv { 1.0 / hw } else { 1.0 };
            let out = &mut row[p * PANEL_ORDER..(p + 1) * PANEL_ORDER];
            let dist = if tau < a { a - tau } else if tau > b { tau - b } else { 0.0 };
            if dist > NEAR_FIELD * hw {
                for (q, (&u, &wq)) in self.fine_nodes.iter().zip(&self.fine_weights).enumerate() {
                    let s = c + hw * u;
                    let sgn = if s < tau { left } else { right };
                    let k = sgn * expn_unchecked(n, (tau - s).abs()) * wq * hw * scale;
                    for (o, &l) in out.iter_mut().zip(&at_fine[q]) {
                        *o += k * l;
                    }
                }
                continue;
            }
            if dist > 1e-3 * hw {
                let sgn = if tau >= b { left } else { right };
                self.graded_gauss(tau, n, sgn * scale, basis, (a, b), (a, b), out);
                continue;
            }
            // Regular part, split at τ.
            let mut pieces = [(a, b, 0.0); 2];
            let mut count = 0;
            if tau > a && tau < b {
                pieces[0] = (a, tau, left);
                pieces[1] = (tau, b, right);
                count = 2;
            } else {
                pieces[0] = (a, b, if tau >= b { left } else { right });
                count += 1;
            }
            for &(pa, pb, sgn) in &pieces[..count] {
                let (pc, phw) = (0.5 * (pa + pb), 0.5 * (pb - pa));
                for (&u, &wq) in self.fine_nodes.iter().zip(&self.fine_weights) {
                    let s = pc + phw * u;
                    let k = sgn * expn_regular(n, (tau - s).abs()) * wq * phw * scale;
                    let us = (s - c) / hw;
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += k * basis.eval(j, us);
                    }
                }
            }
            // Logarithmic part: basis_j in powers of y = (s − τ)/hw.
            let ut = (tau - c) / hw;
            let lead = log_coefficient(n, 1.0);
            let m0 = (n - 1) as i32;
            for (j, o) in out.iter_mut().enumerate() {
                let shifted: Vec<f64> = (0..deg)
                    .map(|q| (q..deg).map(|r| basis.coef[j][r] * self.binomial[r][q] * ut.powi((r - q) as i32)).sum())
                    .collect();
                let mut acc = 0.0;
                // s > τ: x = s − τ, y = x/hw.
                let (xlo, xhi) = ((a - tau).max(0.0), (b - tau).max(0.0));
                if xhi > xlo {
                    let mut inv = 1.0;
                    for (q, &cq) in shifted.iter().enumerate() {
                        acc += right * cq * inv * log_moment(q as i32 + m0, xlo, xhi);
                        inv /= hw;
                    }
                }
                // s < τ: x = τ − s, y = −x/hw.
                let (xlo, xhi) = ((tau - b).max(0.0), (tau - a).max(0.0));
                if xhi > xlo {
                    let mut inv = 1.0;
                    for (q, &cq) in shifted.iter().enumerate() {
                        acc += left * cq * inv * log_moment(q as i32 + m0, xlo, xhi);
                        inv /= -hw;
                    }
                }
                *o += lead * acc * scale;
            }
        }
    }

    /// Gauss quadrature on `sub ⊂ panel`, bisected until every piece is
    /// well separated from `τ`.
    #[allow(clippy::too_many_arguments)]
    fn graded_gauss(
        &self,
        tau: f64,
        n: u32,
        factor: f64,
        basis: &MonomialBasis,
        panel: (f64, f64),
        sub: (f64, f64),
        out: &mut [f64],
    ) {
        let (a, b) = sub;
        let hw = 0.5 * (b - a);
        let dist = if tau <= a { a - tau } else { tau - b };
        if dist <= NEAR_FIELD * hw {
            let m = 0.5 * (a + b);
            self.graded_gauss(tau, n, factor, basis, panel, (a, m), out);
            self.graded_gauss(tau, n, factor, basis, panel, (m, b), out);
            return;
        }
        let (pc, phw) = (0.5 * (panel.0 + panel.1), 0.5 * (panel.1 - panel.0));
        let c = 0.5 * (a + b);
        for (&u, &wq) in self.fine_nodes.iter().zip(&self.fine_weights) {
            let s = c + hw * u;
            let k = factor * expn_unchecked(n, (tau - s).abs()) * wq * hw;
            let us = (s - pc) / phw;
            for (j, o) in out.iter_mut().enumerate() {
                *o += k * basis.eval(j, us);
            }
        }
    }

    /// Values of every panel interpolant at its two ends, `(left, right)`.
    fn endpoint_basis(&self) -> (Vec<f64>, Vec<f64>) {
        let l = (0..PANEL_ORDER).map(|j| self.lagrange.eval(j, -1.0)).collect();
        let r = (0..PANEL_ORDER).map(|j| self.lagrange.eval(j, 1.0)).collect();
        (l, r)
    }

    fn interpolate(&self, values: &[f64], tau: f64) -> f64 {
        let p = match self.breaks.iter().position(|&b| b > tau) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => self.panels() - 1,
        };
        let (a, b) = (self.breaks[p], self.breaks[p + 1]);
        let u = (2.0 * tau - a - b) / (b - a);
        (0..PANEL_ORDER).map(|j| values[p * PANEL_ORDER + j] * self.lagrange.eval(j, u)).sum()
    }
}

/// `∫_{lo}^{hi} x^m ln x dx`.
fn log_moment(m: i32, lo: f64, hi: f64) -> f64 {
    let f = |x: f64| {
        if x <= 0.0 {
            0.0
        } else {
            let m1 = f64::from(m + 1);
            x.powi(m + 1) * (x.ln() / m1 - 1.0 / (m1 * m1))
        }
    };
    f(hi) - f(lo)
}

fn lagrange_monomials(nodes: &[f64]) -> MonomialBasis {
    let n = nodes.len();
    let v = DMatrix::from_fn(n, n, |i, r| nodes[i].powi(r as i32));
    let inv = v.try_inverse().expect("Vandermonde matrix of distinct nodes is invertible");
    MonomialBasis { coef: (0..n).map(|j| (0..n).map(|r| inv[(r, j)]).collect()).collect() }
}

/// Panel breakpoints: geometric (ratio 2) towards each face, uniform between.
fn graded_breaks(kappa: f64, panels: usize) -> Vec<f64> {
    let per_end = (panels / 3).max(1);
    let middle = panels - 2 * per_end;
    let growth = 2f64.powi(per_end as i32);
    let w0 = kappa / (2.0 * (growth - 1.0) + middle as f64 * growth);
    let mut breaks = vec![0.0];
    let mut w = w0;
    for _ in 0..per_end {
        breaks.push(breaks.last().unwrap() + w);
        w *= 2.0;
    }
    let wm = w0 * growth;
    for _ in 0..middle {
        breaks.push(breaks.last().unwrap() + wm);
    }
    for _ in 0..per_end {
        w *= 0.5;
        breaks.push(breaks.last().unwrap() + w);
    }
    *breaks.last_mut().unwrap() = kappa;
    breaks
}

/// Nyström solution of the total-intensity equation.
#[derive(Debug, Clone)]
pub struct IntensitySolution {
    pub params: RadiationParams,
    /// Optical depths of the Nyström nodes.
    pub tau_grid: Vec<f64>,
    /// `Λ = G_s/I_t` at the nodes.
    pub lambda: Vec<f64>,
    /// `dΛ/dτ` at the nodes.
    pub lambda_deriv: Vec<f64>,
    /// Downward diffuse flux `q_s^d/I_t` at the nodes.
    pub flux_d: Vec<f64>,
    grid: PanelGrid,
    table: std::sync::OnceLock<LambdaTable>,
}

/// Solves for `Λ` with `n_nodes` Nyström nodes (rounded up to whole panels).
pub fn solve_intensity_fie(params: &RadiationParams, n_nodes: usize) -> Result<IntensitySolution> {
    params.validate()?;
    if n_nodes < 16 {
        return Err(BioconError::InvalidParams(format!("need at least 16 Nyström nodes, got {n_nodes}")));
    }
    let grid = PanelGrid::new(params.kappa, n_nodes);
    let n = grid.nodes.len();
    let half_omega = 0.5 * params.omega;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut row = vec![0.0; n];
    for (i, &t) in grid.nodes.iter().enumerate() {
        row.iter_mut().for_each(|v| *v = 0.0);
        grid.accumulate_kernel(t, 1, 1.0, 1.0, false, &mut row);
        for (j, &w) in row.iter().enumerate() {
            a[(i, j)] -= half_omega * w;
        }
        rhs[i] = forcing(params, t);
    }
    let lu = a.clone().lu();
    let lambda = lu.solve(&rhs).ok_or_else(|| BioconError::Singular {
        context: "Nyström system for the total intensity".into(),
        condition: condition_estimate(&a),
    })?;
    let lambda: Vec<f64> = lambda.iter().copied().collect();
    let mut sol = IntensitySolution {
        params: *params,
        tau_grid: grid.nodes.clone(),
        lambda,
        lambda_deriv: Vec::new(),
        flux_d: Vec::new(),
        grid,
        table: std::sync::OnceLock::new(),
    };
    sol.lambda_deriv = sol.tau_grid.iter().map(|&t| sol.eval_deriv(t)).collect();
    sol.flux_d = sol.tau_grid.iter().map(|&t| sol.diffuse_flux(t)).collect();
    Ok(sol)
}

fn forcing(params: &RadiationParams, tau: f64) -> f64 {
    (-tau / params.cos_theta_r()).exp() + 2.0 * params.diffuse_ratio() * expn_unchecked(2, tau.max(0.0))
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl IntensitySolution {
    pub fn kappa(&self) -> f64 {
        self.params.kappa
    }

    /// `Λ(τ)` from the Nyström interpolant (re-applies the integral equation).
    pub fn eval(&self, tau: f64) -> f64 {
        let tau = tau.clamp(0.0, self.kappa());
        let mut row = vec![0.0; self.lambda.len()];
        self.grid.accumulate_kernel(tau, 1, 1.0, 1.0, false, &mut row);
        let integral: f64 = row.iter().zip(&self.lambda).map(|(w, l)| w * l).sum();
        0.5 * self.params.omega * integral + forcing(&self.params, tau)
    }

    /// Fast table lookup of `Λ(τ)`, accurate to about `1e-8`.
    pub fn eval_fast(&self, tau: f64) -> f64 {
        self.table.get_or_init(|| LambdaTable::build(self, TABLE_POINTS)).eval(tau.clamp(0.0, self.kappa()))
    }

    /// Total intensity `G_s = I_t Λ`.
    pub fn total_intensity(&self, tau: f64) -> f64 {
        self.params.i_t * self.eval(tau)
    }

    /// `dΛ/dτ`, obtained by differentiating the integral equation.
    ///
    /// The derivative diverges logarithmically at a face unless the
    /// coefficient of `E₁` there vanishes; the signed infinity is returned.
    pub fn eval_deriv(&self, tau: f64) -> f64 {
        let kappa = self.kappa();
        let tau = tau.clamp(0.0, kappa);
        let half_omega = 0.5 * self.params.omega;
        let mu0 = self.params.cos_theta_r();
        let g = &self.grid;
        let mut row = vec![0.0; self.lambda.len()];
        g.accumulate_kernel(tau, 1, 1.0, 1.0, true, &mut row);
        let mut interior: f64 = row.iter().zip(&self.lambda).map(|(w, l)| w * l).sum();
        // Jumps of the piecewise interpolant at interior panel breaks.
        let (left_basis, right_basis) = g.endpoint_basis();
        let tiny = 1e-14 * kappa;
        for p in 1..g.panels() {
            let e = g.breaks[p];
            let d = (tau - e).abs();
            if d < tiny {
                continue;
            }
            let from_left: f64 = (0..PANEL_ORDER).map(|j| self.lambda[(p - 1) * PANEL_ORDER + j] * right_basis[j]).sum();
            let from_right: f64 = (0..PANEL_ORDER).map(|j| self.lambda[p * PANEL_ORDER + j] * left_basis[j]).sum();
            interior += (from_right - from_left) * expn_unchecked(1, d);
        }
        let top = self.top_log_coefficient();
        let bottom = self.bottom_log_coefficient();
        let top_term = singular_term(top, tau);
        let bottom_term = singular_term(-bottom, kappa - tau);
        half_omega * interior + top_term + bottom_term - (-tau / mu0).exp() / mu0
    }

    /// Coefficient of `E₁(τ)` in `dΛ/dτ` near the illuminated face.
    pub fn top_log_coefficient(&self) -> f64 {
        let p0 = self.grid.interpolate(&self.lambda, 0.0);
        0.5 * self.params.omega * p0 - 2.0 * self.params.diffuse_ratio()
    }

    /// Coefficient of `−E₁(κ−τ)` in `dΛ/dτ` near the bottom.
    pub fn bottom_log_coefficient(&self) -> f64 {
        0.5 * self.params.omega * self.grid.interpolate(&self.lambda, self.kappa())
    }

    /// Downward diffuse flux `q_s^d/I_t`.
    pub fn diffuse_flux(&self, tau: f64) -> f64 {
        let tau = tau.clamp(0.0, self.kappa());
        let mut row = vec![0.0; self.lambda.len()];
        self.grid.accumulate_kernel(tau, 2, 1.0, -1.0, false, &mut row);
        let scattered: f64 = row.iter().zip(&self.lambda).map(|(w, l)| w * l).sum();
        2.0 * self.params.diffuse_ratio() * expn_unchecked(3, tau) + 0.5 * self.params.omega * scattered
    }

    /// Residual of the integral equation on a uniform probe set of `n`
    /// depths that do not coincide with the nodes, using an independent
    /// fine-grid quadrature of the interpolant.
    pub fn residual_on(&self, other: &IntensitySolution) -> f64 {
        other
            .tau_grid
            .iter()
            .map(|&t| (self.eval(t) - other.eval(t)).abs())
            .fold(0.0, f64::max)
    }

    /// Panel interpolant of the nodal values (no integral re-application).
    pub fn interpolate_nodal(&self, tau: f64) -> f64 {
        self.grid.interpolate(&self.lambda, tau)
    }

    /// Nodal positions of the Gauss panels' break points.
    pub fn panel_breaks(&self) -> &[f64] {
        &self.grid.breaks
    }

    /// Reference Gauss nodes of one panel.
    pub fn panel_reference_nodes(&self) -> &[f64] {
        &self.grid.ref_nodes
    }
}

fn singular_term(coefficient: f64, distance: f64) -> f64 {
    if coefficient == 0.0 {
        0.0
    } else if distance <= 0.0 {
        coefficient.signum() * f64::INFINITY
    } else {
        coefficient * expn_unchecked(1, distance)
    }
}

/// Vertical radiative flux magnitude `q_s = q_s^c + q_s^d` (downward positive).
pub fn radiative_flux(sol: &IntensitySolution, params: &RadiationParams, tau: f64) -> Result<f64> {
    let mu0 = params.cos_theta_r();
    let q = params.i_t * (mu0 * (-tau / mu0).exp() + sol.diffuse_flux(tau));
    if q <= 0.0 {
        return Err(BioconError::NonPositiveFlux { tau, value: q });
    }
    Ok(q)
}

/// Uniform table of the regular remainder `Λ − a₀(1 − E₂(τ)) − a_κ(1 − E₂(κ−τ))`,
/// interpolated with four-point Lagrange cubics.
#[derive(Debug, Clone, Default)]
struct LambdaTable {
    kappa: f64,
    step: f64,
    top: f64,
    bottom: f64,
    remainder: Vec<f64>,
}

impl LambdaTable {
    fn build(sol: &IntensitySolution, points: usize) -> Self {
        let kappa = sol.kappa();
        let top = sol.top_log_coefficient();
        let bottom = sol.bottom_log_coefficient();
        let step = kappa / points as f64;
        let remainder = (0..=points)
            .map(|i| {
                let t = (i as f64 * step).min(kappa);
                sol.eval(t) - singular_shape(top, bottom, kappa, t)
            })
            .collect();
        Self { kappa, step, top, bottom, remainder }
    }

    fn eval(&self, tau: f64) -> f64 {
        let n = self.remainder.len() - 1;
        let x = tau / self.step;
        let i = (x.floor() as usize).min(n - 1);
        let base = i.saturating_sub(1).min(n - 3);
        let mut acc = 0.0;
        for a in 0..4 {
            let xa = (base + a) as f64;
            let mut l = 1.0;
            for b in 0..4 {
                if a != b {
                    let xb = (base + b) as f64;
                    l *= (x - xb) / (xa - xb);
                }
            }
            acc += l * self.remainder[base + a];
        }
        acc + singular_shape(self.top, self.bottom, self.kappa, tau)
    }
}

fn singular_shape(top: f64, bottom: f64, kappa: f64, tau: f64) -> f64 {
    top * (1.0 - expn_unchecked(2, tau)) + bottom * (1.0 - expn_unchecked(2, (kappa - tau).max(0.0)))
}
