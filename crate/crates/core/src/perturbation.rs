//! Perturbed radiation and the concentration-equation coefficients.
//!
//! For a normal mode `Φ(z) e^{σt + i(lx + my)}` of the cell concentration,
//! the collimated intensity is perturbed only through its attenuation and
//! the diffuse part obeys, per direction `(ξ, η, ν)`,
//!
//! ```text
//! ν dΨ/dz + (i(lξ + mη) + κ n_s) Ψ = (ωκ/4π)(n_s 𝒢₁ + G_s Φ) − κ I_s^d Φ
//! ```
//!
//! with zero inflow at both walls. Every source term is independent of
//! azimuth, so the azimuthal integrals are done in closed form (`J₀` for
//! `𝒢₁^d`, `J₁` for the horizontal flux) and only the polar angle is
//! discretised. Along `z` the source is interpolated by cubics and the
//! attenuation factor is integrated exactly through a change of variable.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::basic_state::{hermite, BasicState};
use crate::error::{BioconError, Result};
use crate::fd::{cell_weights, fornberg_weights, stencil};
use crate::quadrature::{gauss_legendre, QuadratureRule};
use crate::taxis::taxis_second_derivative;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Attenuation (in optical path) beyond which source cells are dropped.
const PATH_CUTOFF: f64 = 40.0;
/// Largest Bessel phase advance per sub-cell.
const PHASE_PER_SUBCELL: f64 = 1.0;
const MAX_SUBCELLS: usize = 512;
const POINTS_PER_SUBCELL: usize = 8;

/// Polar quadrature with the basic diffuse intensity at each node.
#[derive(Debug, Clone)]
pub struct AngularBasis {
    /// Gauss nodes `μ ∈ (0, 1)` and weights.
    pub mu: Vec<f64>,
    pub weights: Vec<f64>,
    /// Basic diffuse intensity `[node][z]` travelling up and down.
    pub up: Vec<Vec<f64>>,
    pub down: Vec<Vec<f64>>,
}

impl AngularBasis {
    pub fn new(bs: &BasicState, polar_nodes: usize) -> Result<Self> {
        if polar_nodes < 2 {
            return Err(BioconError::InvalidParams(format!("need at least 2 polar nodes, got {polar_nodes}")));
        }
        let rule = polar_rule(polar_nodes)?;
        let builder = KernelBuilder::new(bs)?;
        let rad = &bs.params.radiation;
        let scatter = rad.omega * rad.kappa / (4.0 * PI);
        let src = DVector::from_iterator(bs.len(), bs.n_s.iter().zip(&bs.g_s).map(|(&n, &g)| scatter * n * g));
        let mut up = Vec::new();
        let mut down = Vec::new();
        for &mu in &rule.nodes {
            let k = builder.polar(mu, 0.0);
            let u = &k.up_g * &src / (2.0 * PI);
            let d = &k.down_g * &src / (2.0 * PI);
            up.push(u.iter().copied().collect());
            down.push(
                d.iter().zip(&bs.tau).map(|(&v, &t)| v + rad.i_d / PI * (-t / mu).exp()).collect(),
            );
        }
        Ok(Self { mu: rule.nodes, weights: rule.weights, up, down })
    }

    pub fn polar_nodes(&self) -> usize {
        self.mu.len()
    }

    /// `∫ I_s^d dΩ` from the polar quadrature.
    pub fn total(&self) -> Vec<f64> {
        let n = self.up[0].len();
        (0..n)
            .map(|i| (0..self.mu.len()).map(|j| 2.0 * PI * self.weights[j] * (self.up[j][i] + self.down[j][i])).sum())
            .collect()
    }
}

/// Composite Gauss rule on `(0, 1)`: four-point panels shrinking by a
/// factor of three towards `μ = 0`.
pub fn polar_rule(polar_nodes: usize) -> Result<QuadratureRule> {
    let per = 4;
    let ratio = 3.0;
    if polar_nodes < 2 * per {
        return gauss_legendre(polar_nodes, 0.0, 1.0);
    }
    let panels = polar_nodes / per;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let mut hi = 1.0;
    for p in 0..panels {
        let lo = if p + 1 == panels { 0.0 } else { hi / ratio };
        let r = gauss_legendre(per, lo, hi)?;
        nodes.extend(r.nodes);
        weights.extend(r.weights);
        hi = lo;
    }
    Ok(QuadratureRule { nodes, weights, interval: (0.0, 1.0) })
}

/// Azimuth-integrated transfer from nodal sources to nodal fields for one
/// polar angle: `up_g s = ∫Ψ dφ` over upward directions, `up_p s` the
/// `ξ`-moment divided by `−i`.
struct PolarKernels {
    up_g: DMatrix<f64>,
    up_p: DMatrix<f64>,
    down_g: DMatrix<f64>,
    down_p: DMatrix<f64>,
}

struct KernelBuilder<'a> {
    bs: &'a BasicState,
    n: usize,
    h: f64,
    rule: QuadratureRule,
}

impl<'a> KernelBuilder<'a> {
    fn new(bs: &'a BasicState) -> Result<Self> {
        if bs.len() < 5 {
            return Err(BioconError::InvalidParams(format!("grid too coarse: {} nodes", bs.len())));
        }
        Ok(Self { bs, n: bs.len(), h: bs.step(), rule: gauss_legendre(POINTS_PER_SUBCELL, 0.0, 1.0)? })
    }

    fn tau_in_cell(&self, c: usize, s: f64) -> f64 {
        let kappa = self.bs.params.radiation.kappa;
        let (t, n) = (&self.bs.tau, &self.bs.n_s);
        hermite(t[c], t[c + 1], -kappa * n[c], -kappa * n[c + 1], s, self.h)
    }

    fn polar(&self, mu: f64, k: f64) -> PolarKernels {
        let n = self.n;
        let tau = &self.bs.tau;
        let z = &self.bs.z_grid;
        let sin = (1.0 - mu * mu).sqrt();
        let rate = k * sin / mu;
        let subcells = ((rate * self.h / PHASE_PER_SUBCELL).ceil() as usize).clamp(1, MAX_SUBCELLS);
        let mut out = PolarKernels {
            up_g: DMatrix::zeros(n, n),
            up_p: DMatrix::zeros(n, n),
            down_g: DMatrix::zeros(n, n),
            down_p: DMatrix::zeros(n, n),
        };
        let mut pts = Vec::new();
        let mut offsets = Vec::new();
        for up in [true, false] {
            let (g, p) = if up { (&mut out.up_g, &mut out.up_p) } else { (&mut out.down_g, &mut out.down_p) };
            for c in 0..n - 1 {
                let near = if up { c + 1 } else { c };
                self.cell_points(c, up, mu, subcells, &mut pts, &mut offsets);
                let start = c.saturating_sub(1).min(n_minus_4(n));
                let rows: Box<dyn Iterator<Item = usize>> = if up { Box::new(c + 1..n) } else { Box::new((0..=c).rev()) };
                for i in rows {
                    let base = (tau[near] - tau[i]).abs() / mu;
                    if base > PATH_CUTOFF {
                        break;
                    }
                    let att = (-base).exp();
                    let mut rows_g = [0.0; 4];
                    let mut rows_p = [0.0; 4];
                    for (sc, &d0) in offsets.iter().enumerate() {
                        if base + d0 > PATH_CUTOFF {
                            break;
                        }
                        for pt in &pts[sc * POINTS_PER_SUBCELL..(sc + 1) * POINTS_PER_SUBCELL] {
                            let dist = (z[i] - pt.z).abs();
                            let (j0, j1) = if rate == 0.0 {
                                (1.0, 0.0)
                            } else {
                                (puruspe::Jn(0, rate * dist), puruspe::Jn(1, rate * dist))
                            };
                            for j in 0..4 {
                                rows_g[j] += pt.weight * j0 * pt.basis[j];
                                rows_p[j] += pt.weight * j1 * pt.basis[j];
                            }
                        }
                    }
                    for j in 0..4 {
                        g[(i, start + j)] += 2.0 * PI * att * rows_g[j];
                        p[(i, start + j)] += 2.0 * PI * sin * att * rows_p[j];
                    }
                }
            }
        }
        out
    }

    /// Quadrature points of cell `c` for rays leaving it towards `up`, with
    /// attenuation measured from the cell's near end; `offsets` gets the
    /// optical distance of each sub-cell start.
    fn cell_points(&self, c: usize, up: bool, mu: f64, subcells: usize, pts: &mut Vec<CellPoint>, offsets: &mut Vec<f64>) {
        pts.clear();
        offsets.clear();
        let tau = &self.bs.tau;
        let near = if up { tau[c + 1] } else { tau[c] };
        // v runs from the near end (0) to the far end (1).
        let s_of = |v: f64| if up { 1.0 - v } else { v };
        let start = c.saturating_sub(1).min(n_minus_4(self.n));
        for sc in 0..subcells {
            let v0 = sc as f64 / subcells as f64;
            let v1 = (sc + 1) as f64 / subcells as f64;
            let t0 = self.tau_in_cell(c, s_of(v0));
            let t1 = self.tau_in_cell(c, s_of(v1));
            offsets.push((t0 - near).abs() / mu);
            let lam = (t1 - t0).abs() / mu;
            let em = (-lam).exp_m1();
            for (&u, &wq) in self.rule.nodes.iter().zip(&self.rule.weights) {
                // Substitution that absorbs the linearised attenuation.
                let (local, jac) = if lam > 1e-10 { (-(u * em).ln_1p() / lam, -em / lam) } else { (u, 1.0) };
                let v = v0 + (v1 - v0) * local;
                let s = s_of(v);
                let zp = self.bs.z_grid[c] + s * self.h;
                let path = (self.tau_in_cell(c, s) - near).abs() / mu;
                let weight = wq * (v1 - v0) * (self.h / mu) * jac * (-(path - lam * local)).exp();
                pts.push(CellPoint { z: zp, weight, basis: cubic_basis((zp - self.bs.z_grid[start]) / self.h) });
            }
        }
    }
}

struct CellPoint {
    z: f64,
    weight: f64,
    basis: [f64; 4],
}

fn n_minus_4(n: usize) -> usize {
    n.saturating_sub(4)
}

/// Lagrange basis on the nodes `0, 1, 2, 3`.
fn cubic_basis(x: f64) -> [f64; 4] {
    [
        -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
        x * (x - 2.0) * (x - 3.0) / 2.0,
        -x * (x - 1.0) * (x - 3.0) / 2.0,
        x * (x - 1.0) * (x - 2.0) / 6.0,
    ]
}

/// Dense maps of the perturbed diffuse field at wavenumber `k`. With
/// `s` the isotropic source and `Φ` the concentration,
/// `𝒢₁^d = a0 s + b0 Φ`, `d𝒢₁^d/dz = da0 s + db0 Φ` and the horizontal
/// flux along the wave vector is `P = −i (ax s + bx Φ)`.
#[derive(Debug, Clone)]
struct Operators {
    a0: DMatrix<f64>,
    ax: DMatrix<f64>,
    da0: DMatrix<f64>,
    b0: DMatrix<f64>,
    bx: DMatrix<f64>,
    db0: DMatrix<f64>,
}

impl Operators {
    fn new(bs: &BasicState, basis: &AngularBasis, k: f64) -> Result<Self> {
        let n = bs.len();
        let builder = KernelBuilder::new(bs)?;
        let kappa = bs.params.radiation.kappa;
        let mut ops = Self {
            a0: DMatrix::zeros(n, n),
            ax: DMatrix::zeros(n, n),
            da0: DMatrix::zeros(n, n),
            b0: DMatrix::zeros(n, n),
            bx: DMatrix::zeros(n, n),
            db0: DMatrix::zeros(n, n),
        };
        for (j, (&mu, &w)) in basis.mu.iter().zip(&basis.weights).enumerate() {
            let pk = builder.polar(mu, k);
            let sink_up: Vec<f64> = basis.up[j].iter().map(|&v| -kappa * v).collect();
            let sink_down: Vec<f64> = basis.down[j].iter().map(|&v| -kappa * v).collect();
            for r in 0..n {
                let att = kappa * bs.n_s[r];
                for c in 0..n {
                    let (ug, up, dg, dp) = (pk.up_g[(r, c)], pk.up_p[(r, c)], pk.down_g[(r, c)], pk.down_p[(r, c)]);
                    if ug == 0.0 && dg == 0.0 {
                        continue;
                    }
                    let (su, sd) = (sink_up[c], sink_down[c]);
                    ops.a0[(r, c)] += w * (ug + dg);
                    ops.ax[(r, c)] += w * (up + dp);
                    ops.da0[(r, c)] += w * (-att * (ug - dg) - k * (up - dp)) / mu;
                    ops.b0[(r, c)] += w * (ug * su + dg * sd);
                    ops.bx[(r, c)] += w * (up * su + dp * sd);
                    ops.db0[(r, c)] += w * (-att * (ug * su - dg * sd) - k * (up * su - dp * sd)) / mu;
                }
                ops.db0[(r, r)] += w * 2.0 * PI * (sink_up[r] - sink_down[r]) / mu;
            }
        }
        Ok(ops)
    }
}

fn matvec(a: &DMatrix<f64>, x: &[C64]) -> Vec<C64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| x[j] * a[(i, j)]).sum()).collect()
}

/// Basic-state quantities needed by the perturbation problem, per node.
#[derive(Debug, Clone)]
pub(crate) struct BasicCoefficients {
    pub kappa: f64,
    pub mu0: f64,
    pub v_c: f64,
    pub scatter: f64,
    pub n: Vec<f64>,
    pub dn: Vec<f64>,
    pub g: Vec<f64>,
    pub gc: Vec<f64>,
    pub dgc: Vec<f64>,
    pub dg: Vec<f64>,
    pub t: Vec<f64>,
    pub tp: Vec<f64>,
    pub tpp: Vec<f64>,
    pub q: Vec<f64>,
}

impl BasicCoefficients {
    pub(crate) fn new(bs: &BasicState) -> Self {
        let p = &bs.params;
        let kappa = p.radiation.kappa;
        let mu0 = p.radiation.cos_theta_r();
        let dgc: Vec<f64> = bs.n_s.iter().zip(&bs.g_s_c).map(|(&n, &gc)| kappa * n * gc / mu0).collect();
        Self {
            kappa,
            mu0,
            v_c: p.v_c,
            scatter: p.radiation.omega * kappa / (4.0 * PI),
            n: bs.n_s.clone(),
            dn: bs.dn_s_dz.clone(),
            g: bs.g_s.clone(),
            gc: bs.g_s_c.clone(),
            dgc,
            dg: bs.dg_s_dz.clone(),
            t: bs.t_s.clone(),
            tp: bs.dt_s_dg.clone(),
            tpp: bs.g_s.iter().map(|&g| taxis_second_derivative(g, p.taxis)).collect(),
            q: bs.q_s.clone(),
        }
    }

    /// `𝒢₁^c / Θ`.
    pub(crate) fn collimated_factor(&self, i: usize) -> f64 {
        self.kappa * self.gc[i] / self.mu0
    }
}

/// Collimated perturbation `𝒢₁^c = G_s^c κ Θ / cos θ_r`.
pub fn perturbed_collimated(bs: &BasicState, theta: &[C64]) -> Vec<C64> {
    let kappa = bs.params.radiation.kappa;
    let mu0 = bs.params.radiation.cos_theta_r();
    theta.iter().zip(&bs.g_s_c).map(|(&t, &gc)| t * (kappa * gc / mu0)).collect()
}

/// `Θ(z) = ∫₁^z Φ dz′` on the basic-state grid, fourth order.
pub fn integrate_from_top(phi: &[C64]) -> Vec<C64> {
    let n = phi.len();
    let h = 1.0 / (n - 1) as f64;
    let mut theta = vec![C64::new(0.0, 0.0); n];
    for i in (0..n - 1).rev() {
        let cell: C64 = cell_weights(i, n).into_iter().map(|(j, w)| phi[j] * w).sum();
        theta[i] = theta[i + 1] - cell * h;
    }
    theta
}

/// Perturbed radiation fields for one concentration profile.
#[derive(Debug, Clone)]
pub struct PerturbedRadiation {
    pub theta: Vec<C64>,
    pub g1_c: Vec<C64>,
    pub g1_d: Vec<C64>,
    /// `d𝒢₁^d/dz`, from the transport equation.
    pub dg1_d: Vec<C64>,
    pub p: Vec<C64>,
    pub q: Vec<C64>,
    pub polar_nodes: usize,
    pub l: f64,
    pub m: f64,
    /// Source iterations performed.
    pub iterations: usize,
}

/// Settings for the source iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub polar_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl SweepOptions {
    pub fn from_state(bs: &BasicState) -> Self {
        Self { polar_nodes: bs.params.tolerances.polar_nodes, tol: 1e-12, max_iter: 2000 }
    }
}

/// Angular integral of the discrete-ordinates basic diffuse intensity.
pub fn discrete_basic_diffuse(bs: &BasicState, polar_nodes: usize) -> Result<Vec<f64>> {
    Ok(AngularBasis::new(bs, polar_nodes)?.total())
}

/// Solves for the perturbed diffuse field by source iteration.
pub fn solve_perturbed_diffuse(bs: &BasicState, phi: &[C64], l: f64, m: f64) -> Result<PerturbedRadiation> {
    let theta = integrate_from_top(phi);
    solve_perturbed_diffuse_with(bs, &theta, phi, l, m, &SweepOptions::from_state(bs))
}

/// As [`solve_perturbed_diffuse`] with an explicit `Θ` and options.
pub fn solve_perturbed_diffuse_with(
    bs: &BasicState,
    theta: &[C64],
    phi: &[C64],
    l: f64,
    m: f64,
    opts: &SweepOptions,
) -> Result<PerturbedRadiation> {
    let n = bs.len();
    if phi.len() != n || theta.len() != n {
        return Err(BioconError::InvalidParams(format!(
            "profile length {} / {} does not match the grid ({n})",
            phi.len(),
            theta.len()
        )));
    }
    let k = l.hypot(m);
    let basis = AngularBasis::new(bs, opts.polar_nodes)?;
    let ops = Operators::new(bs, &basis, k)?;
    let coef = BasicCoefficients::new(bs);
    let g1_c = perturbed_collimated(bs, theta);
    let sink = matvec(&ops.b0, phi);
    let iso_of = |g1_d: &[C64]| -> Vec<C64> {
        (0..n).map(|i| (g1_c[i] + g1_d[i]) * (coef.scatter * coef.n[i]) + phi[i] * (coef.scatter * coef.g[i])).collect()
    };
    let mut g1_d = vec![C64::new(0.0, 0.0); n];
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    let mut ratio = 0.0;
    loop {
        iterations += 1;
        let next: Vec<C64> = matvec(&ops.a0, &iso_of(&g1_d)).iter().zip(&sink).map(|(a, b)| a + b).collect();
        let change = next.iter().zip(&g1_d).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if !change.is_finite() {
            return Err(BioconError::SourceIteration { iterations, last_change: change, spectral_radius: ratio });
        }
        if last_change.is_finite() && last_change > 0.0 {
            ratio = change / last_change;
        }
        last_change = change;
        g1_d = next;
        if coef.scatter == 0.0 || change < opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(BioconError::SourceIteration { iterations, last_change: change, spectral_radius: ratio });
        }
    }
    let iso = iso_of(&g1_d);
    let add = |a: Vec<C64>, b: Vec<C64>| -> Vec<C64> { a.iter().zip(&b).map(|(x, y)| x + y).collect() };
    let dg1_d = add(matvec(&ops.da0, &iso), matvec(&ops.db0, phi));
    let along = add(matvec(&ops.ax, &iso), matvec(&ops.bx, phi));
    let (cl, cm) = if k > 0.0 { (l / k, m / k) } else { (0.0, 0.0) };
    Ok(PerturbedRadiation {
        theta: theta.to_vec(),
        g1_c,
        g1_d,
        dg1_d,
        p: along.iter().map(|v| -I * v * cl).collect(),
        q: along.iter().map(|v| -I * v * cm).collect(),
        polar_nodes: opts.polar_nodes,
        l,
        m,
        iterations,
    })
}

/// Dense linear maps `(Θ, Φ) ↦ (𝒢₁^d, d𝒢₁^d/dz, −iP)` at wavenumber `k`
/// (with `l = k`, `m = 0`). All three are real.
#[derive(Debug, Clone)]
pub struct RadiationResponse {
    pub k: f64,
    pub g_theta: DMatrix<f64>,
    pub g_phi: DMatrix<f64>,
    pub dg_theta: DMatrix<f64>,
    pub dg_phi: DMatrix<f64>,
    pub p_theta: DMatrix<f64>,
    pub p_phi: DMatrix<f64>,
}

impl RadiationResponse {
    pub fn new(bs: &BasicState, basis: &AngularBasis, k: f64) -> Result<Self> {
        let n = bs.len();
        let coef = BasicCoefficients::new(bs);
        let ops = Operators::new(bs, basis, k)?;
        let c0 = coef.scatter;
        let nd = DMatrix::from_diagonal(&DVector::from_vec(coef.n.clone()));
        let gd = DMatrix::from_diagonal(&DVector::from_vec(coef.g.clone()));
        let kc = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| coef.collimated_factor(i))));
        let lhs = DMatrix::identity(n, n) - &ops.a0 * &nd * c0;
        let lu = lhs.lu();
        let singular = || BioconError::Singular { context: "perturbed radiation map".into(), condition: f64::INFINITY };
        let g_theta = lu.solve(&(&ops.a0 * &nd * &kc * c0)).ok_or_else(singular)?;
        let g_phi = lu.solve(&(&ops.a0 * &gd * c0 + &ops.b0)).ok_or_else(singular)?;
        let s_theta = (&nd * (&kc + &g_theta)) * c0;
        let s_phi = (&nd * &g_phi + &gd) * c0;
        Ok(Self {
            k,
            dg_theta: &ops.da0 * &s_theta,
            dg_phi: &ops.da0 * &s_phi + &ops.db0,
            p_theta: -(&ops.ax * &s_theta),
            p_phi: -(&ops.ax * &s_phi + &ops.bx),
            g_theta,
            g_phi,
        })
    }

    /// Fields for a complex profile `(Θ, Φ)`.
    pub fn apply(&self, bs: &BasicState, theta: &[C64], phi: &[C64], polar_nodes: usize) -> PerturbedRadiation {
        let mv = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Vec<C64> {
            matvec(a, theta).iter().zip(matvec(b, phi)).map(|(x, y)| x + y).collect()
        };
        let neg_i_p = mv(&self.p_theta, &self.p_phi);
        PerturbedRadiation {
            theta: theta.to_vec(),
            g1_c: perturbed_collimated(bs, theta),
            g1_d: mv(&self.g_theta, &self.g_phi),
            dg1_d: mv(&self.dg_theta, &self.dg_phi),
            p: neg_i_p.iter().map(|v| v * I).collect(),
            q: vec![C64::new(0.0, 0.0); theta.len()],
            polar_nodes,
            l: self.k,
            m: 0.0,
            iterations: 0,
        }
    }
}


/// Which closed form of `Γ₁`, `Γ₂` to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum GammaForm {
    /// Re-derived with the `1/cos θ_r` factor of the collimated perturbation.
    #[default]
    Derived,
    /// As printed, without the `1/cos θ_r` factor.
    Printed,
}

/// Coefficients of the concentration equation. Values at a wall are not
/// finite when the basic intensity slope diverges there.
#[derive(Debug, Clone)]
pub struct GammaCoefficients {
    pub gamma0: Vec<C64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

/// `Γ₁ = (κV_c/μ₀) D(n_s G_s^c T′)` and
/// `Γ₂ = 2κV_c n_s G_s^c T′/μ₀ + V_c T′ DG_s^d`.
pub(crate) fn gamma12(c: &BasicCoefficients, form: GammaForm) -> (Vec<f64>, Vec<f64>) {
    let scale = match form {
        GammaForm::Derived => c.kappa * c.v_c / c.mu0,
        GammaForm::Printed => c.kappa * c.v_c,
    };
    let n = c.n.len();
    let g1 = (0..n)
        .map(|i| {
            if c.v_c == 0.0 {
                return 0.0;
            }
            let d = c.dn[i] * c.gc[i] * c.tp[i] + c.n[i] * c.dgc[i] * c.tp[i] + c.n[i] * c.gc[i] * c.tpp[i] * c.dg[i];
            scale * d
        })
        .collect();
    let g2 = (0..n)
        .map(|i| {
            if c.v_c == 0.0 {
                return 0.0;
            }
            2.0 * scale * c.n[i] * c.gc[i] * c.tp[i] + c.v_c * c.tp[i] * (c.dg[i] - c.dgc[i])
        })
        .collect();
    (g1, g2)
}

/// `Γ₀ = V_c D(n_s 𝒢₁^d T′) − i V_c n_s T_s (lP + mQ)/q_s`.
pub fn gamma_coefficients(bs: &BasicState, pr: &PerturbedRadiation, form: GammaForm) -> GammaCoefficients {
    let c = BasicCoefficients::new(bs);
    let (gamma1, gamma2) = gamma12(&c, form);
    let gamma0 = (0..bs.len())
        .map(|i| {
            if c.v_c == 0.0 {
                return C64::new(0.0, 0.0);
            }
            let dcoef = c.dn[i] * c.tp[i] + c.n[i] * c.tpp[i] * c.dg[i];
            let transport = (pr.g1_d[i] * dcoef + pr.dg1_d[i] * (c.n[i] * c.tp[i])) * c.v_c;
            let flux = -I * (c.v_c * c.n[i] * c.t[i] / c.q[i]) * (pr.p[i] * pr.l + pr.q[i] * pr.m);
            transport + flux
        })
        .collect();
    GammaCoefficients { gamma0, gamma1, gamma2 }
}

/// A concentration profile with its derivatives at the grid nodes.
#[derive(Debug, Clone)]
pub struct TestProfile {
    pub theta: Vec<C64>,
    pub phi: Vec<C64>,
    pub dphi: Vec<C64>,
    pub d2phi: Vec<C64>,
}

/// Largest difference between the collected form
/// `Γ₀ + Γ₁Θ + (σ + k² + Γ₂)Φ + V_c T_s DΦ − D²Φ` and the uncollected
/// operator `(σ + k² − D²)Φ + V_c D(T_sΦ + n_s 𝒢₁ T′) − ikV_c n_s T_s P/q_s`.
/// The outer derivative is expanded only as far as `D(n_s T′) 𝒢₁^d +
/// n_s T′ D𝒢₁^d`; every other product is differentiated by eighth-order
/// differences. Nodes with `z` outside `window` are skipped. Returns the
/// residual and where it occurs.
pub fn substitution_residual(
    bs: &BasicState,
    profile: &TestProfile,
    k: f64,
    sigma: C64,
    form: GammaForm,
    window: (f64, f64),
) -> Result<(f64, f64)> {
    let opts = SweepOptions { tol: 1e-12, ..SweepOptions::from_state(bs) };
    let pr = solve_perturbed_diffuse_with(bs, &profile.theta, &profile.phi, k, 0.0, &opts)?;
    Ok(residual_of(bs, profile, &pr, k, sigma, form, window))
}

/// As [`substitution_residual`] with the fields from a prebuilt response,
/// so many profiles can share one wavenumber.
pub fn substitution_residual_with(
    bs: &BasicState,
    response: &RadiationResponse,
    profile: &TestProfile,
    sigma: C64,
    form: GammaForm,
    window: (f64, f64),
) -> (f64, f64) {
    let pr = response.apply(bs, &profile.theta, &profile.phi, 0);
    residual_of(bs, profile, &pr, response.k, sigma, form, window)
}

fn residual_of(
    bs: &BasicState,
    profile: &TestProfile,
    pr: &PerturbedRadiation,
    k: f64,
    sigma: C64,
    form: GammaForm,
    window: (f64, f64),
) -> (f64, f64) {
    let gam = gamma_coefficients(bs, pr, form);
    let c = BasicCoefficients::new(bs);
    let n = bs.len();
    let h = bs.step();
    let t_phi: Vec<C64> = (0..n).map(|i| profile.phi[i] * c.t[i]).collect();
    let shading: Vec<C64> = (0..n).map(|i| pr.g1_c[i] * (c.n[i] * c.tp[i])).collect();
    let weight: Vec<C64> = (0..n).map(|i| C64::new(c.n[i] * c.tp[i], 0.0)).collect();
    let mut worst = (0.0, f64::NAN);
    for i in 0..n {
        let z = bs.z_grid[i];
        if z < window.0 || z > window.1 || i < 4 || i + 4 >= n {
            continue;
        }
        let range = stencil(i, 9, n);
        let xs: Vec<f64> = range.clone().map(|j| (j as f64 - i as f64) * h).collect();
        let w = &fornberg_weights(0.0, &xs, 1)[1];
        let d = |f: &[C64]| -> C64 { range.clone().zip(w).map(|(j, &wj)| f[j] * wj).sum() };
        let (phi, dphi, d2phi) = (profile.phi[i], profile.dphi[i], profile.d2phi[i]);
        let collected = gam.gamma0[i]
            + profile.theta[i] * gam.gamma1[i]
            + phi * (sigma + k * k + gam.gamma2[i])
            + dphi * (c.v_c * c.t[i])
            - d2phi;
        let diffuse = d(&weight) * pr.g1_d[i] + pr.dg1_d[i] * weight[i];
        let direct = phi * (sigma + k * k) - d2phi + (d(&t_phi) + d(&shading) + diffuse) * c.v_c
            - I * (c.v_c * c.n[i] * c.t[i] / c.q[i]) * pr.p[i] * k;
        let r = (collected - direct).norm();
        if r > worst.0 {
            worst = (r, z);
        }
    }
    worst
}

/// Fails with the residual and its location when the collected and
/// uncollected forms disagree by more than `tol`.
pub fn check_gamma_consistency(
    bs: &BasicState,
    profile: &TestProfile,
    k: f64,
    sigma: C64,
    tol: f64,
) -> Result<f64> {
    let (r, z) = substitution_residual(bs, profile, k, sigma, GammaForm::Derived, (0.1, 0.9))?;
    if r > tol {
        return Err(BioconError::Consistency { residual: r, z });
    }
    Ok(r)
}

/// As [`check_gamma_consistency`] with a prebuilt response at the profile's
/// wavenumber.
pub fn check_gamma_consistency_with(
    bs: &BasicState,
    response: &RadiationResponse,
    profile: &TestProfile,
    sigma: C64,
    tol: f64,
) -> Result<f64> {
    let (r, z) = substitution_residual_with(bs, response, profile, sigma, GammaForm::Derived, (0.1, 0.9));
    if r > tol {
        return Err(BioconError::Consistency { residual: r, z });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basic_state::{solve_basic_state, SuspensionParams};
    use crate::radiation::RadiationParams;
    use crate::taxis::TaxisVariant;

    fn state(v_c: f64, kappa: f64, omega: f64, i_d: f64, theta: f64, n_z: usize) -> BasicState {
        let mut p = SuspensionParams::new(v_c, RadiationParams::new(kappa, omega, i_d, theta), TaxisVariant::A);
        p.n_z = n_z;
        solve_basic_state(&p).unwrap()
    }

    fn profile(bs: &BasicState, a: C64, b: C64) -> Vec<C64> {
        bs.z_grid.iter().map(|&z| a * (PI * z).sin() + b * z * z).collect()
    }

    #[test]
    fn zero_profile_gives_zero_fields() {
        let bs = state(10.0, 0.5, 0.4, 0.25, 0.0, 101);
        let zero = vec![C64::new(0.0, 0.0); bs.len()];
        let pr = solve_perturbed_diffuse(&bs, &zero, 2.0, 0.0).unwrap();
        assert!(pr.g1_d.iter().chain(&pr.p).chain(&pr.q).chain(&pr.g1_c).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn discrete_ordinates_reproduce_basic_diffuse() {
        let bs = state(10.0, 1.0, 0.8, 0.3, 30.0, 201);
        let dom = discrete_basic_diffuse(&bs, 24).unwrap();
        for i in (10..bs.len() - 10).step_by(10) {
            let exact = bs.g_s_d[i];
            assert!((dom[i] - exact).abs() < 1e-4 * exact.abs().max(1.0), "z={}: {} vs {exact}", bs.z_grid[i], dom[i]);
        }
    }

    #[test]
    fn horizontally_uniform_perturbation_is_a_depth_shift() {
        // At k = 0 the perturbed slab is again one-dimensional: G^d(τ) is
        // unchanged as a function of optical depth, so 𝒢₁^d = −κΘ dG^d/dτ
        // when the total optical depth is held fixed.
        let bs = state(10.0, 1.0, 0.7, 0.2, 20.0, 201);
        let (a, b) = (C64::new(1.0, 0.5), C64::new(-0.4, 0.2));
        let phi: Vec<C64> = bs.z_grid.iter().map(|&z| a * (PI * z).cos() + b * (z - 0.5)).collect();
        let pr = solve_perturbed_diffuse(&bs, &phi, 0.0, 0.0).unwrap();
        assert!(pr.p.iter().chain(&pr.q).all(|v| v.norm() < 1e-14));
        let sol = &bs.intensity;
        let mu0 = bs.params.radiation.cos_theta_r();
        let kappa = bs.params.radiation.kappa;
        for i in (20..bs.len() - 20).step_by(20) {
            let t = bs.tau[i];
            let dgd = sol.eval_deriv(t) + (-t / mu0).exp() / mu0;
            let oracle = pr.theta[i] * (-kappa * dgd);
            let scale = pr.g1_d.iter().map(|v| v.norm()).fold(0.0, f64::max);
            assert!((pr.g1_d[i] - oracle).norm() < 1e-4 * scale, "z={}: {} vs {}", bs.z_grid[i], pr.g1_d[i], oracle);
        }
    }

    #[test]
    fn no_scattering_needs_one_sweep() {
        let bs = state(10.0, 1.0, 0.0, 0.2, 0.0, 101);
        let phi = profile(&bs, C64::new(1.0, 0.0), C64::new(0.3, 0.0));
        let pr = solve_perturbed_diffuse(&bs, &phi, 3.0, 0.0).unwrap();
        assert_eq!(pr.iterations, 1);
    }

    #[test]
    fn linearity_and_conjugation() {
        let bs = state(15.0, 0.5, 0.4, 0.26, 40.0, 101);
        let phi = profile(&bs, C64::new(0.7, -0.3), C64::new(0.2, 0.9));
        let a = solve_perturbed_diffuse(&bs, &phi, 2.5, 0.0).unwrap();
        let s = C64::new(-1.3, 2.1);
        let scaled: Vec<C64> = phi.iter().map(|v| v * s).collect();
        let b = solve_perturbed_diffuse(&bs, &scaled, 2.5, 0.0).unwrap();
        for i in 0..bs.len() {
            assert!((a.g1_d[i] * s - b.g1_d[i]).norm() < 1e-10 * (1.0 + b.g1_d[i].norm()));
            assert!((a.p[i] * s - b.p[i]).norm() < 1e-10 * (1.0 + b.p[i].norm()));
        }
        let conj: Vec<C64> = phi.iter().map(|v| v.conj()).collect();
        let c = solve_perturbed_diffuse(&bs, &conj, 2.5, 0.0).unwrap();
        let d = solve_perturbed_diffuse(&bs, &conj, -2.5, 0.0).unwrap();
        for i in 0..bs.len() {
            assert!((c.g1_d[i] - a.g1_d[i].conj()).norm() < 1e-10);
            assert!((d.p[i] - a.p[i].conj()).norm() < 1e-10);
        }
    }

    #[test]
    fn dense_response_matches_source_iteration() {
        let bs = state(15.0, 1.0, 0.9, 0.2, 20.0, 61);
        let basis = AngularBasis::new(&bs, 8).unwrap();
        let phi = profile(&bs, C64::new(0.7, -0.3), C64::new(0.2, 0.9));
        let theta = integrate_from_top(&phi);
        let opts = SweepOptions { polar_nodes: 8, tol: 1e-13, max_iter: 5000 };
        let it = solve_perturbed_diffuse_with(&bs, &theta, &phi, 3.0, 0.0, &opts).unwrap();
        let resp = RadiationResponse::new(&bs, &basis, 3.0).unwrap();
        let dense = resp.apply(&bs, &theta, &phi, 8);
        for i in 0..bs.len() {
            assert!((it.g1_d[i] - dense.g1_d[i]).norm() < 1e-10);
            assert!((it.dg1_d[i] - dense.dg1_d[i]).norm() < 1e-9);
            assert!((it.p[i] - dense.p[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn angular_refinement() {
        let bs = state(15.0, 1.0, 0.4, 0.5, 20.0, 101);
        let phi = profile(&bs, C64::new(1.0, 0.0), C64::new(0.5, 0.0));
        let theta = integrate_from_top(&phi);
        let run = |n: usize| {
            let opts = SweepOptions { polar_nodes: n, tol: 1e-12, max_iter: 5000 };
            solve_perturbed_diffuse_with(&bs, &theta, &phi, 3.0, 0.0, &opts).unwrap()
        };
        let (a, b) = (run(24), run(48));
        let diff = |x: &[C64], y: &[C64]| x.iter().zip(y).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max);
        assert!(diff(&a.g1_d, &b.g1_d) < 1e-5, "{}", diff(&a.g1_d, &b.g1_d));
        assert!(diff(&a.p, &b.p) < 1e-5, "{}", diff(&a.p, &b.p));
    }

    #[test]
    fn zero_swimming_gammas_vanish() {
        let bs = state(0.0, 1.0, 0.4, 0.5, 20.0, 101);
        let phi = profile(&bs, C64::new(1.0, 0.0), C64::new(0.5, 0.0));
        let pr = solve_perturbed_diffuse(&bs, &phi, 3.0, 0.0).unwrap();
        let g = gamma_coefficients(&bs, &pr, GammaForm::Derived);
        assert!(g.gamma0.iter().all(|v| v.norm() == 0.0));
        assert!(g.gamma1.iter().chain(&g.gamma2).all(|&v| v == 0.0));
    }

    fn analytic_profile(bs: &BasicState, a: C64, b: C64) -> TestProfile {
        // Θ = a (z − 1) + b sin(π(z − 1)) so that Θ(1) = 0.
        let f = |z: f64| (a * (z - 1.0) + b * (PI * (z - 1.0)).sin(), a + b * PI * (PI * (z - 1.0)).cos());
        TestProfile {
            theta: bs.z_grid.iter().map(|&z| f(z).0).collect(),
            phi: bs.z_grid.iter().map(|&z| f(z).1).collect(),
            dphi: bs.z_grid.iter().map(|&z| -b * PI * PI * (PI * (z - 1.0)).sin()).collect(),
            d2phi: bs.z_grid.iter().map(|&z| -b * PI.powi(3) * (PI * (z - 1.0)).cos()).collect(),
        }
    }

    #[test]
    fn collected_form_is_consistent() {
        let bs = state(15.0, 1.0, 0.4, 0.5, 40.0, 501);
        let prof = analytic_profile(&bs, C64::new(0.4, 0.1), C64::new(-0.3, 0.6));
        let r = check_gamma_consistency(&bs, &prof, 3.0, C64::new(0.0, 2.0), 1e-6).unwrap();
        assert!(r < 1e-6);
        // The printed coefficients lack 1/cos θ_r and fail at oblique incidence.
        let (printed, _) =
            substitution_residual(&bs, &prof, 3.0, C64::new(0.0, 2.0), GammaForm::Printed, (0.1, 0.9)).unwrap();
        assert!(printed > 1e-3);
    }

    #[test]
    fn collimated_matches_finite_difference() {
        // G_s^c = exp(−κ∫_z^1 n/μ₀); perturb n by ±εΦ.
        let bs = state(10.0, 0.5, 0.4, 0.25, 30.0, 201);
        let phi: Vec<C64> = profile(&bs, C64::new(1.0, 0.0), C64::new(0.5, 0.0));
        let theta = integrate_from_top(&phi);
        let g1 = perturbed_collimated(&bs, &theta);
        let kappa = bs.params.radiation.kappa;
        let mu0 = bs.params.radiation.cos_theta_r();
        let eps = 1e-6;
        let col = |sign: f64| -> Vec<f64> {
            let pert: Vec<C64> = bs.n_s.iter().zip(&phi).map(|(&n, p)| C64::new(n, 0.0) + p * (sign * eps)).collect();
            integrate_from_top(&pert).iter().map(|t| (kappa * t.re / mu0).exp()).collect()
        };
        let (plus, minus) = (col(1.0), col(-1.0));
        for i in 0..bs.len() {
            let fd = (plus[i] - minus[i]) / (2.0 * eps);
            assert!((fd - g1[i].re).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", g1[i].re);
        }
    }
}
