//! Phototaxis response `T(G)` and the mean swimming direction.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

const SATURATION: f64 = 3.8;
const MAJOR: f64 = 0.8;
const MINOR: f64 = 0.1;
const MAJOR_FREQ: f64 = 3.0 * FRAC_PI_2;
const MINOR_FREQ: f64 = FRAC_PI_2;

/// The two taxis calibrations: `A` for weakly scattering suspensions
/// (`G_c = 1.3`), `B` for the purely scattering case (`G_c = 1.9`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaxisVariant {
    A,
    B,
}

impl TaxisVariant {
    pub fn chi_exponent(self) -> f64 {
        match self {
            TaxisVariant::A => 0.252,
            TaxisVariant::B => 0.135,
        }
    }

    pub fn critical_intensity(self) -> f64 {
        match self {
            TaxisVariant::A => 1.3,
            TaxisVariant::B => 1.9,
        }
    }

    fn chi(self, g: f64) -> (f64, f64, f64) {
        let c = self.chi_exponent();
        let e = (c * (SATURATION - g)).exp();
        let chi = g / SATURATION * e;
        let d1 = e * (1.0 - c * g) / SATURATION;
        let d2 = -c * e * (2.0 - c * g) / SATURATION;
        (chi, d1, d2)
    }
}

impl std::str::FromStr for TaxisVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(TaxisVariant::A),
            "B" | "b" => Ok(TaxisVariant::B),
            other => Err(format!("unknown taxis variant '{other}' (expected A or B)")),
        }
    }
}

/// `T(G) = 0.8 sin(3πχ/2) − 0.1 sin(πχ/2)` with `χ(G) = (G/3.8) e^{c(3.8−G)}`.
pub fn taxis_value(g: f64, v: TaxisVariant) -> f64 {
    let (chi, _, _) = v.chi(g);
    MAJOR * (MAJOR_FREQ * chi).sin() - MINOR * (MINOR_FREQ * chi).sin()
}

/// `dT/dG`.
pub fn taxis_derivative(g: f64, v: TaxisVariant) -> f64 {
    let (chi, d1, _) = v.chi(g);
    (MAJOR * MAJOR_FREQ * (MAJOR_FREQ * chi).cos() - MINOR * MINOR_FREQ * (MINOR_FREQ * chi).cos()) * d1
}

/// `d²T/dG²`.
pub fn taxis_second_derivative(g: f64, v: TaxisVariant) -> f64 {
    let (chi, d1, d2) = v.chi(g);
    let outer1 = MAJOR * MAJOR_FREQ * (MAJOR_FREQ * chi).cos() - MINOR * MINOR_FREQ * (MINOR_FREQ * chi).cos();
    let outer2 = -MAJOR * MAJOR_FREQ * MAJOR_FREQ * (MAJOR_FREQ * chi).sin()
        + MINOR * MINOR_FREQ * MINOR_FREQ * (MINOR_FREQ * chi).sin();
    outer2 * d1 * d1 + outer1 * d2
}

/// Vertical component of the mean swimming direction in the basic state.
///
/// With the isotropy offset set to zero, `⟨p_s⟩ = −T_s q_s/|q_s| = T_s ẑ`
/// whenever the light travels net downward; `None` when `q_s` vanishes.
pub fn mean_swim_direction(taxis: f64, flux: f64) -> Option<f64> {
    (flux > 0.0).then_some(taxis)
}
