use serde::Deserialize;

use biocon_core::{BranchClass, RadiationParams, RefractionMode, SuspensionParams, TaxisVariant};

const GOLDEN: &str = include_str!("../data/golden_tables.toml");

/// Refractive index of water relative to air, used for every table row.
pub const WATER_INDEX: f64 = 1.333;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Note {
    R1Oscillatory,
    OscillatorySmaller,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct GoldenRow {
    pub table: u8,
    pub v_c: f64,
    pub kappa: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    pub i_d: f64,
    pub theta_i_deg: f64,
    #[serde(default = "default_taxis")]
    pub taxis: String,
    pub lambda_c: f64,
    pub r_c: f64,
    pub im_sigma: f64,
    pub note: Option<Note>,
    #[serde(default)]
    pub unreliable: bool,
}

fn default_omega() -> f64 {
    0.4
}

fn default_taxis() -> String {
    "A".into()
}

#[derive(Debug, Deserialize)]
struct GoldenFile {
    version: u32,
    row: Vec<GoldenRow>,
}

impl GoldenRow {
    pub fn branch(&self) -> BranchClass {
        if self.im_sigma != 0.0 {
            BranchClass::Oscillatory
        } else {
            BranchClass::Stationary
        }
    }

    pub fn taxis_variant(&self) -> TaxisVariant {
        crate::config::parse_taxis(&self.taxis).unwrap_or(TaxisVariant::A)
    }

    pub fn params(&self, n_z: usize) -> SuspensionParams {
        let mut rp = RadiationParams::new(self.kappa, self.omega, self.i_d, self.theta_i_deg);
        rp.refraction = RefractionMode::Snell { relative_index: WATER_INDEX };
        let mut p = SuspensionParams::new(self.v_c, rp, self.taxis_variant());
        p.n_z = n_z;
        p
    }
}

pub fn version() -> u32 {
    parse().0
}

fn parse() -> (u32, Vec<GoldenRow>) {
    let f: GoldenFile = toml::from_str(GOLDEN).expect("embedded golden data is valid");
    (f.version, f.row)
}

pub fn rows(table: u8) -> Vec<GoldenRow> {
    parse().1.into_iter().filter(|r| r.table == table).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_counts() {
        assert_eq!(version(), 1);
        assert_eq!(rows(1).len(), 10);
        assert_eq!(rows(2).len(), 20);
        assert_eq!(rows(3).len(), 18);
        assert_eq!(rows(2).iter().filter(|r| r.unreliable).count(), 5);
        assert!(rows(2).iter().filter(|r| r.unreliable).all(|r| r.v_c == 20.0 && r.kappa == 1.0));
    }

    #[test]
    fn first_row() {
        let r = &rows(1)[0];
        assert_eq!((r.v_c, r.kappa, r.i_d, r.theta_i_deg, r.r_c), (15.0, 0.5, 0.26, 0.0, 719.02));
        assert_eq!(r.branch(), BranchClass::Stationary);
        assert_eq!(r.note, Some(Note::R1Oscillatory));
        assert_eq!(rows(1)[6].branch(), BranchClass::Oscillatory);
    }
}
