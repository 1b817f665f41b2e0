//! Flat `key = value` configuration with `[run]` and `[params]` sections.
//!
//! Parameter values may be comma-separated lists; the run then covers the
//! cartesian product in file order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use biocon_core::{BcMode, RadiationParams, RefractionMode, SuspensionParams, TaxisVariant};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}, key '{k}': {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "key '{k}': {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, key: key.map(str::to_owned), message: message.into() }
}

pub const PARAM_KEYS: &[&str] = &[
    "S_c",
    "V_c",
    "kappa",
    "omega",
    "I_D",
    "I_t",
    "theta_i_deg",
    "taxis_variant",
    "bc_mode",
    "refractive_index",
    "n_z",
    "k_min",
    "k_max",
    "k_steps",
    "mu_nodes",
    "phi_nodes",
];

pub const RUN_KEYS: &[&str] = &["table_id", "formats"];

/// Keys that describe the physical problem; table runs take them from the
/// golden rows instead.
pub const PHYSICAL_KEYS: &[&str] = &["S_c", "V_c", "kappa", "omega", "I_D", "I_t", "theta_i_deg", "taxis_variant"];

/// Parameter keys that configure the run as a whole rather than one set.
const RUN_WIDE_KEYS: &[&str] = &["k_min", "k_max", "k_steps", "phi_nodes"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Formats {
    pub csv: bool,
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KGrid {
    pub k_min: f64,
    pub k_max: f64,
    pub k_steps: usize,
}

impl Default for KGrid {
    fn default() -> Self {
        Self { k_min: 0.5, k_max: 8.0, k_steps: 60 }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    values: Vec<String>,
}

/// Parsed file before command-specific interpretation.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    run: BTreeMap<String, Entry>,
    params: BTreeMap<String, Entry>,
    /// Parameter keys in order of first appearance.
    order: Vec<String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RawConfig::default();
        let mut in_run = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split(['#', ';']).next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(line), None, format!("malformed section header '{body}'")))?
                    .trim();
                in_run = match name {
                    "run" => true,
                    "params" => false,
                    other => return Err(err(Some(line), None, format!("unknown section [{other}]"))),
                };
                continue;
            }
            let (key, value) =
                body.split_once('=').ok_or_else(|| err(Some(line), None, format!("expected 'key = value', got '{body}'")))?;
            let key = key.trim();
            let value = value.trim();
            let known = if in_run { RUN_KEYS } else { PARAM_KEYS };
            if !known.contains(&key) {
                let section = if in_run { "run" } else { "params" };
                return Err(err(Some(line), Some(key), format!("unknown key in [{section}]")));
            }
            if value.is_empty() {
                return Err(err(Some(line), Some(key), "missing value"));
            }
            let values: Vec<String> = value.split(',').map(|v| v.trim().to_owned()).collect();
            if values.iter().any(String::is_empty) {
                return Err(err(Some(line), Some(key), "empty list element"));
            }
            let map = if in_run { &mut cfg.run } else { &mut cfg.params };
            if map.insert(key.to_owned(), Entry { line, values }).is_some() {
                return Err(err(Some(line), Some(key), "duplicate key"));
            }
            if !in_run {
                cfg.order.push(key.to_owned());
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(None, None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn has_param(&self, key: &str) -> bool {
        self.params.contains_key(key)
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str, default: T, run: bool) -> Result<T, ConfigError> {
        let map = if run { &self.run } else { &self.params };
        match map.get(key) {
            None => Ok(default),
            Some(e) if e.values.len() != 1 => Err(err(Some(e.line), Some(key), "expects a single value")),
            Some(e) => parse_value(&e.values[0], e.line, key),
        }
    }

    pub fn formats(&self) -> Result<Formats, ConfigError> {
        let Some(e) = self.run.get("formats") else {
            return Ok(Formats { csv: true, json: true });
        };
        let mut f = Formats { csv: false, json: false };
        for v in &e.values {
            match v.as_str() {
                "csv" => f.csv = true,
                "json" => f.json = true,
                other => return Err(err(Some(e.line), Some("formats"), format!("unknown format '{other}'"))),
            }
        }
        Ok(f)
    }

    pub fn table_id(&self) -> Result<Option<u8>, ConfigError> {
        match self.run.get("table_id") {
            None => Ok(None),
            Some(e) => {
                let id: u8 = self.scalar("table_id", 0, true)?;
                if !(1..=3).contains(&id) {
                    return Err(err(Some(e.line), Some("table_id"), "must be 1, 2 or 3"));
                }
                Ok(Some(id))
            }
        }
    }

    pub fn k_grid(&self) -> Result<KGrid, ConfigError> {
        let d = KGrid::default();
        let g = KGrid {
            k_min: self.scalar("k_min", d.k_min, false)?,
            k_max: self.scalar("k_max", d.k_max, false)?,
            k_steps: self.scalar("k_steps", d.k_steps, false)?,
        };
        if !(g.k_min > 0.0 && g.k_max > g.k_min) {
            return Err(err(None, Some("k_min"), format!("need 0 < k_min < k_max, got [{}, {}]", g.k_min, g.k_max)));
        }
        if g.k_steps < 3 {
            return Err(err(None, Some("k_steps"), "need at least 3 steps"));
        }
        Ok(g)
    }

    pub fn phi_nodes(&self) -> Result<usize, ConfigError> {
        let n: usize = self.scalar("phi_nodes", 0, false)?;
        if self.has_param("phi_nodes") && n == 0 {
            return Err(err(None, Some("phi_nodes"), "must be positive"));
        }
        Ok(n)
    }

    /// Every parameter set described by the file.
    pub fn param_sets(&self, default_n_z: usize) -> Result<Vec<SuspensionParams>, ConfigError> {
        for key in ["V_c", "kappa", "omega", "I_D"] {
            if !self.has_param(key) {
                return Err(err(None, Some(key), "required key missing"));
            }
        }
        let mut axes: Vec<(String, Vec<String>, usize)> = Vec::new();
        for key in self.order.iter().filter(|k| !RUN_WIDE_KEYS.contains(&k.as_str())) {
            let e = &self.params[key];
            axes.push((key.clone(), e.values.clone(), e.line));
        }
        let total: usize = axes.iter().map(|a| a.1.len()).product();
        let mut out = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut pick = BTreeMap::new();
            for (key, values, line) in axes.iter().rev() {
                pick.insert(key.as_str(), (values[rem % values.len()].as_str(), *line));
                rem /= values.len();
            }
            out.push(build_params(&pick, default_n_z)?);
        }
        Ok(out)
    }

    /// Applies numeric knobs of the file to a parameter set taken elsewhere.
    pub fn apply_numerics(&self, base: &mut SuspensionParams) -> Result<(), ConfigError> {
        for key in PHYSICAL_KEYS {
            if let Some(e) = self.params.get(*key) {
                return Err(err(Some(e.line), Some(key), "not accepted here; values come from the golden tables"));
            }
        }
        let mut pick = BTreeMap::new();
        for (key, e) in &self.params {
            if e.values.len() != 1 {
                return Err(err(Some(e.line), Some(key), "expects a single value"));
            }
            pick.insert(key.as_str(), (e.values[0].as_str(), e.line));
        }
        overlay_numerics(base, &pick)
    }
}

fn parse_value<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| err(Some(line), Some(key), format!("cannot parse '{v}'")))
}

type Pick<'a> = BTreeMap<&'a str, (&'a str, usize)>;

fn get<T: std::str::FromStr>(pick: &Pick<'_>, key: &str, default: T) -> Result<T, ConfigError> {
    match pick.get(key) {
        None => Ok(default),
        Some((v, line)) => parse_value(v, *line, key),
    }
}

fn build_params(pick: &Pick<'_>, default_n_z: usize) -> Result<SuspensionParams, ConfigError> {
    let taxis = match pick.get("taxis_variant") {
        None => TaxisVariant::A,
        Some((v, line)) => parse_taxis(v).ok_or_else(|| err(Some(*line), Some("taxis_variant"), "expects A or B"))?,
    };
    let mut rp = RadiationParams::new(
        get(pick, "kappa", f64::NAN)?,
        get(pick, "omega", f64::NAN)?,
        get(pick, "I_D", f64::NAN)?,
        get(pick, "theta_i_deg", 0.0)?,
    );
    rp.i_t = get(pick, "I_t", 1.0)?;
    let mut p = SuspensionParams::new(get(pick, "V_c", f64::NAN)?, rp, taxis);
    p.s_c = get(pick, "S_c", p.s_c)?;
    p.n_z = default_n_z;
    overlay_numerics(&mut p, pick)?;
    p.validate().map_err(|e| err(None, None, e.to_string()))?;
    Ok(p)
}

fn overlay_numerics(p: &mut SuspensionParams, pick: &Pick<'_>) -> Result<(), ConfigError> {
    if let Some((v, line)) = pick.get("bc_mode") {
        p.bc_mode = parse_bc_mode(v)
            .ok_or_else(|| err(Some(*line), Some("bc_mode"), "expects paper_equations or rigid"))?;
    }
    let index: f64 = get(pick, "refractive_index", 1.0)?;
    if !(index >= 1.0) {
        return Err(err(None, Some("refractive_index"), "must be >= 1"));
    }
    if pick.contains_key("refractive_index") {
        p.radiation.refraction =
            if index == 1.0 { RefractionMode::Identity } else { RefractionMode::Snell { relative_index: index } };
    }
    p.n_z = get(pick, "n_z", p.n_z)?;
    p.tolerances.polar_nodes = get(pick, "mu_nodes", p.tolerances.polar_nodes)?;
    if p.tolerances.polar_nodes < 2 {
        return Err(err(None, Some("mu_nodes"), "must be at least 2"));
    }
    Ok(())
}

pub fn parse_taxis(v: &str) -> Option<TaxisVariant> {
    match v {
        "A" | "a" => Some(TaxisVariant::A),
        "B" | "b" => Some(TaxisVariant::B),
        _ => None,
    }
}

pub fn parse_bc_mode(v: &str) -> Option<BcMode> {
    match v {
        "paper_equations" => Some(BcMode::PaperEquations),
        "rigid" => Some(BcMode::Rigid),
        _ => None,
    }
}

pub fn bc_mode_name(m: BcMode) -> &'static str {
    match m {
        BcMode::PaperEquations => "paper_equations",
        BcMode::Rigid => "rigid",
    }
}

pub fn taxis_name(t: TaxisVariant) -> &'static str {
    match t {
        TaxisVariant::A => "A",
        TaxisVariant::B => "B",
    }
}

pub fn refractive_index(p: &SuspensionParams) -> f64 {
    match p.radiation.refraction {
        RefractionMode::Identity => 1.0,
        RefractionMode::Snell { relative_index } => relative_index,
    }
}
