//! Atomic file output, number formatting and the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use biocon_core::SuspensionParams;

use crate::config::{bc_mode_name, refractive_index, taxis_name};
use crate::CliError;

/// Full double precision: 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    std::io::Write::write_all(&mut tmp, bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serialisable");
    out.push(b'\n');
    out
}

/// Parameter record written next to every result.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ParamRecord {
    #[serde(rename = "S_c")]
    pub s_c: f64,
    #[serde(rename = "V_c")]
    pub v_c: f64,
    pub kappa: f64,
    pub omega: f64,
    #[serde(rename = "I_D")]
    pub i_d: f64,
    #[serde(rename = "I_t")]
    pub i_t: f64,
    pub theta_i_deg: f64,
    pub taxis_variant: &'static str,
    pub refractive_index: f64,
    pub n_z: usize,
    pub mu_nodes: usize,
}

impl ParamRecord {
    pub fn new(p: &SuspensionParams) -> Self {
        Self {
            s_c: p.s_c,
            v_c: p.v_c,
            kappa: p.radiation.kappa,
            omega: p.radiation.omega,
            i_d: p.radiation.i_d,
            i_t: p.radiation.i_t,
            theta_i_deg: p.radiation.theta_i_deg,
            taxis_variant: taxis_name(p.taxis),
            refractive_index: refractive_index(p),
            n_z: p.n_z,
            mu_nodes: p.tolerances.polar_nodes,
        }
    }
}

/// Short stable digest of the parameters that determine a result.
pub fn params_hash(p: &SuspensionParams, extra: &str) -> String {
    let rec = ParamRecord::new(p);
    let text = format!(
        "{}|{}|{}",
        serde_json::to_string(&rec).expect("serialisable"),
        bc_mode_name(p.bc_mode),
        extra
    );
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: String,
    pub hash: Option<String>,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Manifest {
    pub command: String,
    pub golden_version: Option<u32>,
    pub files: Vec<ManifestEntry>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self { command: command.into(), ..Default::default() }
    }

    pub fn add(&mut self, file: &Path, kind: &str, hash: Option<&str>) {
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.files.push(ManifestEntry { file: name, kind: kind.into(), hash: hash.map(str::to_owned) });
    }

    /// Writes `manifest.json` and the separate `run_info.json` timestamp.
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>, CliError> {
        let m = out.join("manifest.json");
        write_atomic(&m, &json_bytes(self))?;
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let info = out.join("run_info.json");
        write_atomic(&info, &json_bytes(&serde_json::json!({ "finished_unix": stamp })))?;
        Ok(vec![m, info])
    }
}
