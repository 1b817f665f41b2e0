//! Exponential integrals and the quadrature rules shared by the radiation solvers.

use std::f64::consts::PI;

use crate::error::{BioconError, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments above this return exactly zero from [`exp_integral`].
pub const EXP_INTEGRAL_CUTOFF: f64 = 700.0;

const SERIES_SPLIT: f64 = 1.0;
const MAX_ITER: usize = 400;

/// Exponential integral `E_n(x) = ∫₁^∞ e^{-xt} t^{-n} dt`.
///
/// Small arguments use the power series, larger ones the modified-Lentz
/// continued fraction; both are evaluated for the requested order directly
/// so there is no recurrence error growth at large `x`.
pub fn exp_integral(n: u32, x: f64) -> Result<f64> {
    if n == 0 {
        return Err(BioconError::Domain(format!("E_n requires n >= 1, got n = {n}")));
    }
    if !(x >= 0.0) {
        return Err(BioconError::Domain(format!("E_{n}(x) requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        if n == 1 {
            return Err(BioconError::Domain("E_1 diverges at x = 0".into()));
        }
        return Ok(1.0 / f64::from(n - 1));
    }
    Ok(expn_unchecked(n, x))
}

/// `E_n(x)` without argument validation; callers guarantee `n >= 1`, `x > 0`
/// (or `n >= 2`, `x = 0`).
pub(crate) fn expn_unchecked(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0 / f64::from(n - 1);
    }
    if x > EXP_INTEGRAL_CUTOFF {
        return 0.0;
    }
    let nm1 = f64::from(n - 1);
    if x > SERIES_SPLIT {
        let mut b = x + f64::from(n);
        let mut c = 1.0 / f64::MIN_POSITIVE;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            let an = -fi * (nm1 + fi);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    } else {
        let mut ans = if n == 1 { -x.ln() - EULER_GAMMA } else { 1.0 / nm1 };
        let mut fact = 1.0;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            fact *= -x / fi;
            let del = if (i as u32) != n - 1 {
                -fact / (fi - nm1)
            } else {
                let mut psi = -EULER_GAMMA;
                for ii in 1..n {
                    psi += 1.0 / f64::from(ii);
                }
                fact * (-x.ln() + psi)
            };
            ans += del;
            if del.abs() < ans.abs() * 1e-17 {
                break;
            }
        }
        ans
    }
}

/// Regular part of `E_n`: `E_n(x) - s_n(x) ln x`, where
/// `s_n(x) = -(-x)^{n-1}/(n-1)!` is the coefficient of the logarithm.
/// Entire in `x`; evaluated by series near the origin.
pub(crate) fn expn_regular(n: u32, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 1 { -EULER_GAMMA } else { 1.0 / f64::from(n - 1) };
    }
    if x > 0.5 {
        return expn_unchecked(n, x) - log_coefficient(n, x) * x.ln();
    }
    // Series of E_n with the ln x term removed.
    let nm1 = f64::from(n - 1);
    let mut psi = -EULER_GAMMA;
    for ii in 1..n {
        psi += 1.0 / f64::from(ii);
    }
    let mut ans = if n == 1 { psi } else { 1.0 / nm1 };
    let mut fact = 1.0;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        fact *= -x / fi;
        let del = if (i as u32) != n - 1 { -fact / (fi - nm1) } else { fact * psi };
        ans += del;
        if del.abs() < 1e-18 * ans.abs().max(1e-300) {
            break;
        }
    }
    ans
}

/// Coefficient multiplying `ln x` in the expansion of `E_n(x)` at the origin.
pub(crate) fn log_coefficient(n: u32, x: f64) -> f64 {
    let mut c = -1.0;
    for k in 1..n {
        c *= -x / f64::from(k);
    }
    c
}

/// A quadrature rule `∫_a^b f ≈ Σ w_i f(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub interval: (f64, f64),
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss–Legendre rule with `n` nodes on `[a, b]` (Newton on the Legendre
/// recurrence, nodes returned in increasing order).
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(BioconError::Domain("Gauss–Legendre needs at least one node".into()));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(BioconError::Domain(format!("invalid interval [{a}, {b}]")));
    }
    let (x, w) = legendre_reference(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    Ok(QuadratureRule {
        nodes: x.iter().map(|&t| mid + half * t).collect(),
        weights: w.iter().map(|&v| half * v).collect(),
        interval: (a, b),
    })
}

/// Nodes and weights of the `n`-point rule on `[-1, 1]`, ascending.
pub(crate) fn legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Equally spaced rule on `[0, 2π)` with weights `2π/n`.
pub fn periodic_trapezoid(n: usize) -> Result<QuadratureRule> {
    if n < 4 {
        return Err(BioconError::Domain(format!("periodic trapezoid needs n >= 4, got {n}")));
    }
    let h = 2.0 * PI / n as f64;
    Ok(QuadratureRule {
        nodes: (0..n).map(|i| i as f64 * h).collect(),
        weights: vec![h; n],
        interval: (0.0, 2.0 * PI),
    })
}

/// Fourth-order composite rule (Gregory end corrections) on a uniform grid.
pub fn uniform_integral(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        3 => h / 3.0 * (values[0] + 4.0 * values[1] + values[2]),
        4 => 3.0 * h / 8.0 * (values[0] + 3.0 * values[1] + 3.0 * values[2] + values[3]),
        5..=7 => {
            // Composite Simpson with a 3/8 tail when the panel count is odd.
            let m = n - 1;
            if m % 2 == 0 {
                simpson(values, h)
            } else {
                simpson(&values[..n - 3], h)
                    + 3.0 * h / 8.0
                        * (values[n - 4] + 3.0 * values[n - 3] + 3.0 * values[n - 2] + values[n - 1])
            }
        }
        _ => {
            const C: [f64; 4] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0, 1.0];
            let mut s = 0.0;
            for (i, &v) in values.iter().enumerate() {
                let k = i.min(n - 1 - i);
                s += v * if k < 3 { C[k] } else { 1.0 };
            }
            s * h
        }
    }
}

fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    let mut s = values[0] + values[n - 1];
    for (i, &v) in values.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adaptive_simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        fn rec<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, depth)
    }

    /// E_n(x) from its defining integral, mapped to t = 1/u on (0, 1].
    fn expn_oracle(n: i32, x: f64) -> f64 {
        adaptive_simpson(|u: f64| if u <= 0.0 { 0.0 } else { (-x / u).exp() * u.powi(n - 2) }, 0.0, 1.0, 1e-14 * (-x).exp() / (1.0 + x), 40)
    }

    #[test]
    fn exact_values_at_zero() {
        assert_eq!(exp_integral(2, 0.0).unwrap(), 1.0);
        assert_eq!(exp_integral(3, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn domain_errors() {
        assert!(exp_integral(1, 0.0).is_err());
        assert!(exp_integral(2, -1e-3).is_err());
        assert!(exp_integral(0, 1.0).is_err());
        assert!(exp_integral(2, f64::NAN).is_err());
    }

    #[test]
    fn e1_at_one_matches_defining_integral() {
        let oracle = expn_oracle(1, 1.0);
        assert!((oracle - 0.219_383_934_395_520_3).abs() < 1e-12);
        let v = exp_integral(1, 1.0).unwrap();
        assert!((v - oracle).abs() < 1e-12 * oracle, "{v} vs {oracle}");
    }

    #[test]
    fn matches_oracle_on_grid() {
        for n in 1..=4 {
            for &x in &[1e-3, 0.05, 0.3, 0.99, 1.01, 2.5, 7.0, 20.0, 45.0] {
                let v = exp_integral(n, x).unwrap();
                let o = expn_oracle(n as i32, x);
                assert!(((v - o) / o).abs() < 1e-11, "n={n} x={x}: {v} vs {o}");
            }
        }
    }

    #[test]
    fn e2_identity() {
        let x = 0.25;
        let lhs = exp_integral(2, x).unwrap();
        let rhs = (-x).exp() - x * exp_integral(1, x).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn overflow_threshold_returns_zero() {
        assert_eq!(exp_integral(1, 701.0).unwrap(), 0.0);
        assert!(exp_integral(1, 699.0).unwrap() > 0.0);
    }

    #[test]
    fn regular_part_is_consistent() {
        for n in 1..=3 {
            for &x in &[1e-8, 1e-3, 0.2, 0.49, 0.51, 3.0] {
                let full = expn_unchecked(n, x);
                let rebuilt = expn_regular(n, x) + log_coefficient(n, x) * x.ln();
                assert!((full - rebuilt).abs() < 1e-13 * full.abs().max(1.0), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn gauss_legendre_examples() {
        let r = gauss_legendre(1, -1.0, 1.0).unwrap();
        assert!(r.nodes[0].abs() < 1e-15 && (r.weights[0] - 2.0).abs() < 1e-15);
        let r = gauss_legendre(16, 0.0, 1.0).unwrap();
        assert!((r.integrate(|x| x * x * x) - 0.25).abs() < 1e-13);
        let r = gauss_legendre(24, -1.0, 1.0).unwrap();
        let exact = std::f64::consts::E - 1.0 / std::f64::consts::E;
        assert!((r.integrate(f64::exp) - exact).abs() < 1e-12);
        assert!(gauss_legendre(4, 1.0, 1.0).is_err());
        assert!(gauss_legendre(0, 0.0, 1.0).is_err());
    }

    #[test]
    fn gauss_legendre_structure() {
        for n in [1, 2, 5, 8, 17, 48] {
            let r = gauss_legendre(n, -0.3, 2.1).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.4).abs() < 1e-12);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(r.nodes.iter().all(|&x| x > -0.3 && x < 2.1));
            assert!(r.weights.iter().all(|&w| w > 0.0));
            let deg = 2 * n - 1;
            let exact = (2.1f64.powi(deg as i32 + 1) - (-0.3f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
            assert!((r.integrate(|x| x.powi(deg as i32)) - exact).abs() < 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn gauss_doubling_is_stable_for_smooth_integrands() {
        let f = |x: f64| (3.0 * x).cos() * (-x * x).exp();
        for n in [12, 20, 32] {
            let a = gauss_legendre(n, 0.0, 2.0).unwrap().integrate(f);
            let b = gauss_legendre(2 * n, 0.0, 2.0).unwrap().integrate(f);
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_trapezoid_examples() {
        let r = periodic_trapezoid(8).unwrap();
        assert!(r.integrate(f64::cos).abs() < 1e-14);
        assert!((r.integrate(|p| p.cos().powi(2)) - PI).abs() < 1e-13);
        let r16 = periodic_trapezoid(16).unwrap().integrate(|p| p.cos().exp());
        let oracle = adaptive_simpson(|p: f64| p.cos().exp(), 0.0, 2.0 * PI, 1e-14, 40);
        assert!((r16 - oracle).abs() < 1e-12);
        assert!((r16 - 7.954_926_521).abs() < 1e-8);
        assert!(periodic_trapezoid(3).is_err());
    }

    #[test]
    fn uniform_integral_is_fourth_order() {
        let f = |x: f64| (2.0 * x).sin() + x.powi(3);
        let exact = (1.0 - 2.0f64.cos()) / 2.0 + 0.25;
        for n in [9, 10, 51, 101, 500] {
            let h = 1.0 / (n - 1) as f64;
            let v: Vec<f64> = (0..n).map(|i| f(i as f64 * h)).collect();
            assert!((uniform_integral(&v, h) - exact).abs() < 1e-4 * h.powi(3).max(1e-12) * 1e3, "n={n}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn recurrence_holds(x in 1e-3f64..20.0, n in 1u32..6) {
                let lhs = f64::from(n) * exp_integral(n + 1, x).unwrap();
                let rhs = (-x).exp() - x * exp_integral(n, x).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-11);
            }

            #[test]
            fn decreasing_and_log_convex(x in 1e-3f64..40.0, n in 1u32..5) {
                let h = 1e-3 * x;
                let a = exp_integral(n, x - h).unwrap();
                let b = exp_integral(n, x).unwrap();
                let c = exp_integral(n, x + h).unwrap();
                prop_assert!(a > b && b > c);
                prop_assert!(b.ln() <= 0.5 * (a.ln() + c.ln()) + 1e-12);
            }
        }
    }
}
