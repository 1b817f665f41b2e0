use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use biocon_core::basic_state::{local_maxima, sublayer_locations};
use biocon_core::radiation::DEFAULT_NODES;
use biocon_core::{
    geometric_k_grid, solve_basic_state, solve_intensity_fie, BcMode, BioconError, BranchClass, CriticalPoint,
    NeutralBranch, StabilityProblem, SuspensionParams,
};

use crate::config::{bc_mode_name, KGrid, RawConfig};
use crate::golden::{self, GoldenRow};
use crate::output::{csv_bytes, json_bytes, num, opt_num, params_hash, write_atomic, Manifest, ParamRecord};
use crate::CliError;

/// Grid size used by the stability commands unless `n_z` is set.
pub const STABILITY_N_Z: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    BasicState,
    UniformIntensity,
    NeutralCurve,
    Critical,
    Table,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::BasicState => "basic-state",
            Command::UniformIntensity => "uniform-intensity",
            Command::NeutralCurve => "neutral-curve",
            Command::Critical => "critical",
            Command::Table => "table",
            Command::Sweep => "sweep",
        }
    }

    fn default_n_z(self) -> usize {
        match self {
            Command::BasicState | Command::UniformIntensity => SuspensionParams::new(
                0.0,
                biocon_core::RadiationParams::new(1.0, 0.0, 0.0, 0.0),
                biocon_core::TaxisVariant::A,
            )
            .n_z,
            _ => STABILITY_N_Z,
        }
    }
}

pub struct RunOptions {
    pub config: RawConfig,
    pub out: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Human-readable lines for standard output.
    pub lines: Vec<String>,
}

pub fn run(cmd: Command, opts: &RunOptions) -> Result<RunReport, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(crate::config::ConfigError { line: None, key: None, message: e.to_string() }))?;
    let formats = opts.config.formats()?;
    let _ = opts.config.phi_nodes()?;
    let mut manifest = Manifest::new(cmd.name());
    let mut report = RunReport::default();
    pool.install(|| match cmd {
        Command::BasicState => basic_state(opts, &mut manifest, &mut report),
        Command::UniformIntensity => uniform_intensity(opts, &mut manifest, &mut report),
        Command::NeutralCurve => neutral_curve(opts, &mut manifest, &mut report),
        Command::Critical | Command::Sweep => critical(cmd, opts, formats, &mut manifest, &mut report),
        Command::Table => table(opts, formats, &mut manifest, &mut report),
    })?;
    report.files.extend(manifest.write(&opts.out)?);
    Ok(report)
}

fn emit(path: PathBuf, bytes: &[u8], kind: &str, hash: Option<&str>, m: &mut Manifest, r: &mut RunReport) -> Result<(), CliError> {
    write_atomic(&path, bytes)?;
    m.add(&path, kind, hash);
    r.files.push(path);
    Ok(())
}

fn basic_state(opts: &RunOptions, m: &mut Manifest, r: &mut RunReport) -> Result<(), CliError> {
    let sets = opts.config.param_sets(Command::BasicState.default_n_z())?;
    let states: Vec<_> = sets.par_iter().map(solve_basic_state).collect::<Result<_, _>>()?;
    for (p, bs) in sets.iter().zip(&states) {
        let hash = params_hash(p, "");
        let rows: Vec<Vec<String>> = (0..bs.len())
            .map(|i| {
                [bs.z_grid[i], bs.n_s[i], bs.dn_s_dz[i], bs.tau[i], bs.g_s[i], bs.g_s_c[i], bs.g_s_d[i], bs.q_s[i], bs.t_s[i]]
                    .into_iter()
                    .map(num)
                    .collect()
            })
            .collect();
        let header = ["z", "n_s", "dn_s_dz", "tau", "G_s", "G_s_c", "G_s_d", "q_s", "T_s"];
        let path = opts.out.join(format!("basic-state_{hash}.csv"));
        emit(path, &csv_bytes(&header, &rows), "basic_state", Some(&hash), m, r)?;
        let sub = sublayer_locations(bs, p.taxis.critical_intensity());
        let peaks = local_maxima(bs);
        r.lines.push(format!(
            "basic-state {hash}: eta = {:.6}, sublayers at {:?}, {} concentration peak(s)",
            bs.eta,
            sub.iter().map(|z| format!("{z:.4}")).collect::<Vec<_>>(),
            peaks.len()
        ));
    }
    Ok(())
}

fn uniform_intensity(opts: &RunOptions, m: &mut Manifest, r: &mut RunReport) -> Result<(), CliError> {
    let sets = opts.config.param_sets(Command::UniformIntensity.default_n_z())?;
    let sols: Vec<_> =
        sets.par_iter().map(|p| solve_intensity_fie(&p.radiation, DEFAULT_NODES)).collect::<Result<_, _>>()?;
    for (p, sol) in sets.iter().zip(&sols) {
        let hash = params_hash(p, "");
        let kappa = p.radiation.kappa;
        let rows: Vec<Vec<String>> = (0..p.n_z)
            .map(|i| {
                let z = i as f64 / (p.n_z - 1) as f64;
                let tau = kappa * (1.0 - z);
                vec![num(z), num(tau), num(sol.total_intensity(tau))]
            })
            .collect();
        let path = opts.out.join(format!("uniform-intensity_{hash}.csv"));
        emit(path, &csv_bytes(&["z", "tau", "G"], &rows), "uniform_intensity", Some(&hash), m, r)?;
        r.lines.push(format!("uniform-intensity {hash}: theta_i = {}", p.radiation.theta_i_deg));
    }
    Ok(())
}

/// Neutral branches and the critical point for one parameter set.
pub fn solve_critical(p: &SuspensionParams, grid: &KGrid) -> Result<(Vec<NeutralBranch>, CriticalPoint), BioconError> {
    let bs = std::sync::Arc::new(solve_basic_state(p)?);
    let prob = StabilityProblem::new(bs)?;
    critical_on(&prob, grid)
}

fn critical_on(prob: &StabilityProblem, grid: &KGrid) -> Result<(Vec<NeutralBranch>, CriticalPoint), BioconError> {
    let ks = geometric_k_grid(grid.k_min, grid.k_max, grid.k_steps)?;
    let branches = prob.trace_neutral_curve(&ks)?;
    let crit = prob.find_critical(&branches)?;
    Ok((branches, crit))
}

/// Critical points under both velocity boundary conditions, sharing the
/// radiation maps.
pub fn solve_critical_both(p: &SuspensionParams, grid: &KGrid) -> [Result<CriticalPoint, String>; 2] {
    let prob = match solve_basic_state(p).and_then(|bs| StabilityProblem::new(std::sync::Arc::new(bs))) {
        Ok(prob) => prob.with_bc_mode(BcMode::PaperEquations),
        Err(e) => return [Err(e.to_string()), Err(e.to_string())],
    };
    let first = critical_on(&prob, grid).map(|c| c.1).map_err(|e| e.to_string());
    let rigid = prob.with_bc_mode(BcMode::Rigid);
    let second = critical_on(&rigid, grid).map(|c| c.1).map_err(|e| e.to_string());
    [first, second]
}

fn branch_rows(b: &NeutralBranch) -> Vec<Vec<String>> {
    b.points
        .iter()
        .map(|p| vec![num(p.k), num(p.r), num(0.0), num(p.im_sigma), b.branch_class.name().to_owned()])
        .collect()
}

const BRANCH_HEADER: [&str; 5] = ["k", "R", "Re_sigma", "Im_sigma", "branch_class"];

fn neutral_curve(opts: &RunOptions, m: &mut Manifest, r: &mut RunReport) -> Result<(), CliError> {
    let sets = opts.config.param_sets(Command::NeutralCurve.default_n_z())?;
    let grid = opts.config.k_grid()?;
    let results: Vec<_> = sets
        .par_iter()
        .map(|p| {
            let bs = std::sync::Arc::new(solve_basic_state(p)?);
            let prob = StabilityProblem::new(bs)?;
            prob.trace_neutral_curve(&geometric_k_grid(grid.k_min, grid.k_max, grid.k_steps)?)
        })
        .collect::<Result<_, _>>()?;
    for (p, branches) in sets.iter().zip(&results) {
        let hash = params_hash(p, &format!("{grid:?}"));
        for class in [BranchClass::Stationary, BranchClass::Oscillatory] {
            match branches.iter().find(|b| b.branch_class == class) {
                Some(b) => {
                    let path = opts.out.join(format!("neutral-curve_{hash}_{}.csv", class.name()));
                    emit(path, &csv_bytes(&BRANCH_HEADER, &branch_rows(b)), class.name(), Some(&hash), m, r)?;
                    if let Some(k0) = b.k0 {
                        m.notes.push(format!("{hash}: oscillatory branch meets the stationary branch at k0 = {}", num(k0)));
                    }
                }
                None => m.notes.push(format!("{hash}: no {} branch found; file omitted", class.name())),
            }
        }
        r.lines.push(format!("neutral-curve {hash}: {} branch(es)", branches.len()));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalRecord {
    #[serde(flatten)]
    pub params: ParamRecord,
    pub k_c: Option<f64>,
    #[serde(rename = "R_c")]
    pub r_c: Option<f64>,
    pub lambda_c: Option<f64>,
    pub im_sigma: Option<f64>,
    pub branch: Option<&'static str>,
    pub bc_mode: &'static str,
    pub k0: Option<f64>,
    pub error: Option<String>,
}

impl CriticalRecord {
    fn new(p: &SuspensionParams, res: Result<(Vec<NeutralBranch>, CriticalPoint), BioconError>) -> Self {
        let mut rec = Self {
            params: ParamRecord::new(p),
            k_c: None,
            r_c: None,
            lambda_c: None,
            im_sigma: None,
            branch: None,
            bc_mode: bc_mode_name(p.bc_mode),
            k0: None,
            error: None,
        };
        match res {
            Ok((branches, c)) => {
                rec.k_c = Some(c.k_c);
                rec.r_c = Some(c.r_c);
                rec.lambda_c = Some(c.lambda_c);
                rec.im_sigma = Some(c.im_sigma_c);
                rec.branch = Some(c.source_branch.name());
                rec.k0 = branches.iter().find_map(|b| b.k0);
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }
}

fn critical(
    cmd: Command,
    opts: &RunOptions,
    formats: crate::config::Formats,
    m: &mut Manifest,
    r: &mut RunReport,
) -> Result<(), CliError> {
    let sets = opts.config.param_sets(cmd.default_n_z())?;
    let grid = opts.config.k_grid()?;
    let results: Vec<_> = sets.par_iter().map(|p| solve_critical(p, &grid)).collect();
    let mut records = Vec::with_capacity(sets.len());
    for (p, res) in sets.iter().zip(results) {
        if cmd == Command::Critical {
            if let Err(e) = res {
                return Err(e.into());
            }
        }
        records.push(CriticalRecord::new(p, res));
    }
    let stem = if cmd == Command::Sweep { "sweep" } else { "critical" };
    if formats.json {
        emit(opts.out.join(format!("{stem}.json")), &json_bytes(&records), stem, None, m, r)?;
    }
    if formats.csv {
        let header = [
            "V_c", "kappa", "omega", "I_D", "theta_i_deg", "taxis_variant", "bc_mode", "k_c", "R_c", "lambda_c",
            "im_sigma", "branch", "k0", "error",
        ];
        let rows: Vec<Vec<String>> = records
            .iter()
            .map(|c| {
                vec![
                    num(c.params.v_c),
                    num(c.params.kappa),
                    num(c.params.omega),
                    num(c.params.i_d),
                    num(c.params.theta_i_deg),
                    c.params.taxis_variant.to_owned(),
                    c.bc_mode.to_owned(),
                    opt_num(c.k_c),
                    opt_num(c.r_c),
                    opt_num(c.lambda_c),
                    opt_num(c.im_sigma),
                    c.branch.unwrap_or("").to_owned(),
                    opt_num(c.k0),
                    c.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        emit(opts.out.join(format!("{stem}.csv")), &csv_bytes(&header, &rows), stem, None, m, r)?;
    }
    for c in &records {
        r.lines.push(match (&c.error, c.r_c) {
            (None, Some(rc)) => format!(
                "V_c={} kappa={} I_D={} theta_i={}: R_c = {rc:.2}, lambda_c = {:.2}, Im sigma = {:.2} ({})",
                c.params.v_c,
                c.params.kappa,
                c.params.i_d,
                c.params.theta_i_deg,
                c.lambda_c.unwrap_or(f64::NAN),
                c.im_sigma.unwrap_or(f64::NAN),
                c.branch.unwrap_or("?")
            ),
            (e, _) => format!("V_c={} theta_i={}: failed: {}", c.params.v_c, c.params.theta_i_deg, e.clone().unwrap_or_default()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ModeResult {
    pub bc_mode: &'static str,
    pub critical: Option<CriticalPoint>,
    pub rel_err: Option<f64>,
    pub branch_match: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub table: u8,
    pub row: usize,
    pub v_c: f64,
    pub kappa: f64,
    pub omega: f64,
    pub i_d: f64,
    pub theta_i_deg: f64,
    pub taxis: String,
    pub unreliable: bool,
    pub golden_lambda: f64,
    pub golden_r_c: f64,
    pub golden_im_sigma: f64,
    pub modes: [ModeResult; 2],
}

/// Numerical settings shared by every row of a table run.
#[derive(Debug, Clone, Copy)]
pub struct Numerics {
    pub n_z: usize,
    pub polar_nodes: usize,
    pub grid: KGrid,
}

impl Default for Numerics {
    fn default() -> Self {
        Self { n_z: STABILITY_N_Z, polar_nodes: 24, grid: KGrid::default() }
    }
}

impl Numerics {
    pub fn from_config(cfg: &RawConfig) -> Result<Self, CliError> {
        let mut p = golden::rows(1)[0].params(STABILITY_N_Z);
        cfg.apply_numerics(&mut p)?;
        Ok(Self { n_z: p.n_z, polar_nodes: p.tolerances.polar_nodes, grid: cfg.k_grid()? })
    }

    pub fn params(&self, row: &GoldenRow) -> SuspensionParams {
        let mut p = row.params(self.n_z);
        p.tolerances.polar_nodes = self.polar_nodes;
        p
    }
}

pub fn reproduce_row(index: usize, row: &GoldenRow, num: &Numerics) -> TableRow {
    let p = num.params(row);
    let results = solve_critical_both(&p, &num.grid);
    let modes = [BcMode::PaperEquations, BcMode::Rigid];
    let make = |i: usize| {
        let res = &results[i];
        ModeResult {
            bc_mode: bc_mode_name(modes[i]),
            critical: res.as_ref().ok().copied(),
            rel_err: res.as_ref().ok().map(|c| (c.r_c - row.r_c).abs() / row.r_c),
            branch_match: res.as_ref().ok().map(|c| c.source_branch == row.branch()),
            error: res.as_ref().err().cloned(),
        }
    };
    TableRow {
        table: row.table,
        row: index + 1,
        v_c: row.v_c,
        kappa: row.kappa,
        omega: row.omega,
        i_d: row.i_d,
        theta_i_deg: row.theta_i_deg,
        taxis: row.taxis.clone(),
        unreliable: row.unreliable,
        golden_lambda: row.lambda_c,
        golden_r_c: row.r_c,
        golden_im_sigma: row.im_sigma,
        modes: [make(0), make(1)],
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableSummary {
    pub max_rel_err: [Option<f64>; 2],
    pub median_rel_err: [Option<f64>; 2],
    pub better_bc_mode: Option<&'static str>,
    pub rows_used: usize,
}

/// Error statistics over the rows whose golden values are considered reliable.
pub fn summarise(rows: &[TableRow]) -> TableSummary {
    let stats = |i: usize| {
        let mut errs: Vec<f64> = rows.iter().filter(|r| !r.unreliable).filter_map(|r| r.modes[i].rel_err).collect();
        errs.sort_by(f64::total_cmp);
        let max = errs.last().copied();
        let median = if errs.is_empty() {
            None
        } else if errs.len() % 2 == 1 {
            Some(errs[errs.len() / 2])
        } else {
            Some(0.5 * (errs[errs.len() / 2 - 1] + errs[errs.len() / 2]))
        };
        (max, median)
    };
    let (a, b) = (stats(0), stats(1));
    let better = match (a.1, b.1) {
        (Some(x), Some(y)) => Some(if x <= y { "paper_equations" } else { "rigid" }),
        (Some(_), None) => Some("paper_equations"),
        (None, Some(_)) => Some("rigid"),
        _ => None,
    };
    TableSummary {
        max_rel_err: [a.0, b.0],
        median_rel_err: [a.1, b.1],
        better_bc_mode: better,
        rows_used: rows.iter().filter(|r| !r.unreliable).count(),
    }
}

pub const TABLE_HEADER: [&str; 25] = [
    "table",
    "row",
    "V_c",
    "kappa",
    "omega",
    "I_D",
    "theta_i_deg",
    "taxis_variant",
    "unreliable_golden",
    "golden_lambda",
    "golden_Rc",
    "golden_Im_sigma",
    "Rc_paper_equations",
    "Rc_rigid",
    "rel_err_paper_equations",
    "rel_err_rigid",
    "lambda_paper_equations",
    "lambda_rigid",
    "Im_sigma_paper_equations",
    "Im_sigma_rigid",
    "branch_match_paper_equations",
    "branch_match_rigid",
    "median_rel_err_paper_equations",
    "median_rel_err_rigid",
    "error",
];

fn table_csv(rows: &[TableRow], s: &TableSummary) -> Vec<u8> {
    let mut out: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let c = |i: usize| r.modes[i].critical;
            let errors: Vec<String> = r
                .modes
                .iter()
                .filter_map(|m| m.error.as_ref().map(|e| format!("{}: {e}", m.bc_mode)))
                .collect();
            vec![
                r.table.to_string(),
                r.row.to_string(),
                num(r.v_c),
                num(r.kappa),
                num(r.omega),
                num(r.i_d),
                num(r.theta_i_deg),
                r.taxis.clone(),
                r.unreliable.to_string(),
                num(r.golden_lambda),
                num(r.golden_r_c),
                num(r.golden_im_sigma),
                opt_num(c(0).map(|c| c.r_c)),
                opt_num(c(1).map(|c| c.r_c)),
                opt_num(r.modes[0].rel_err),
                opt_num(r.modes[1].rel_err),
                opt_num(c(0).map(|c| c.lambda_c)),
                opt_num(c(1).map(|c| c.lambda_c)),
                opt_num(c(0).map(|c| c.im_sigma_c)),
                opt_num(c(1).map(|c| c.im_sigma_c)),
                r.modes[0].branch_match.map(|b| b.to_string()).unwrap_or_default(),
                r.modes[1].branch_match.map(|b| b.to_string()).unwrap_or_default(),
                String::new(),
                String::new(),
                errors.join("; "),
            ]
        })
        .collect();
    let mut summary = vec![String::new(); TABLE_HEADER.len()];
    summary[0] = rows.first().map(|r| r.table.to_string()).unwrap_or_default();
    summary[1] = "summary".into();
    summary[14] = opt_num(s.max_rel_err[0]);
    summary[15] = opt_num(s.max_rel_err[1]);
    summary[22] = opt_num(s.median_rel_err[0]);
    summary[23] = opt_num(s.median_rel_err[1]);
    summary[24] = format!("better bc_mode: {}", s.better_bc_mode.unwrap_or("none"));
    out.push(summary);
    csv_bytes(&TABLE_HEADER, &out)
}

fn fmt2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

fn table(opts: &RunOptions, formats: crate::config::Formats, m: &mut Manifest, r: &mut RunReport) -> Result<(), CliError> {
    let id = opts.config.table_id()?.ok_or_else(|| {
        CliError::Config(crate::config::ConfigError {
            line: None,
            key: Some("table_id".into()),
            message: "the table command needs [run] table_id".into(),
        })
    })?;
    let numerics = Numerics::from_config(&opts.config)?;
    let golden = golden::rows(id);
    info!("table {id}: {} rows", golden.len());
    let rows: Vec<TableRow> =
        golden.par_iter().enumerate().map(|(i, row)| reproduce_row(i, row, &numerics)).collect();
    for row in &rows {
        for mode in &row.modes {
            if let Some(e) = &mode.error {
                warn!("table {id} row {} ({}): {e}", row.row, mode.bc_mode);
            }
        }
    }
    let summary = summarise(&rows);
    m.golden_version = Some(golden::version());
    if formats.csv {
        emit(opts.out.join(format!("table_{id}.csv")), &table_csv(&rows, &summary), "table", None, m, r)?;
    }
    if formats.json {
        let doc = serde_json::json!({ "rows": rows, "summary": summary });
        emit(opts.out.join(format!("table_{id}.json")), &json_bytes(&doc), "table", None, m, r)?;
    }
    r.lines.push(format!(
        "{:>5} {:>6} {:>5} {:>6} | {:>8} {:>8} {:>8} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6}",
        "V_c", "kappa", "I_D", "theta", "R_ref", "R_free", "R_rigid", "l_ref", "l_free", "l_rig", "s_ref", "s_free",
        "s_rig"
    ));
    for row in &rows {
        let c = |i: usize| row.modes[i].critical;
        r.lines.push(format!(
            "{:>5} {:>6} {:>5} {:>6} | {:>8.2} {:>8} {:>8} | {:>6.2} {:>6} {:>6} | {:>6.2} {:>6} {:>6}{}",
            row.v_c,
            row.kappa,
            row.i_d,
            row.theta_i_deg,
            row.golden_r_c,
            fmt2(c(0).map(|c| c.r_c)),
            fmt2(c(1).map(|c| c.r_c)),
            row.golden_lambda,
            fmt2(c(0).map(|c| c.lambda_c)),
            fmt2(c(1).map(|c| c.lambda_c)),
            row.golden_im_sigma,
            fmt2(c(0).map(|c| c.im_sigma_c)),
            fmt2(c(1).map(|c| c.im_sigma_c)),
            if row.unreliable { "  (unreliable golden)" } else { "" }
        ));
    }
    r.lines.push(format!(
        "median rel. error: paper_equations {}, rigid {}; better: {}",
        fmt2(summary.median_rel_err[0].map(|v| 100.0 * v)),
        fmt2(summary.median_rel_err[1].map(|v| 100.0 * v)),
        summary.better_bc_mode.unwrap_or("none")
    ));
    Ok(())
}

/// Output directory default.
pub fn default_out() -> &'static Path {
    Path::new("biocon_out")
}
