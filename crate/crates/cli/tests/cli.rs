use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_biocon");

fn run(sub: &str, config: &str, dir: &Path) -> (Output, PathBuf) {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let o = Command::new(BIN)
        .args([sub, "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    (o, out)
}

fn files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    v.sort();
    v
}

fn stderr_record(o: &Output) -> serde_json::Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().last().unwrap()).unwrap()
}

#[test]
fn basic_state_writes_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run("basic-state", "V_c = 10\nkappa = 1\nomega = 0.4\nI_D = 0.1\nn_z = 101\n", dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs = files(&out, "basic-state_");
    assert_eq!(csvs.len(), 1);
    let mut rdr = csv::Reader::from_path(&csvs[0]).unwrap();
    assert_eq!(rdr.headers().unwrap().get(0), Some("z"));
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|s| s.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[0][0], 0.0);
    assert_eq!(rows[100][0], 1.0);
    assert!(rows.iter().all(|r| r[1] > 0.0));
    assert!(out.join("manifest.json").exists());
}

#[test]
fn misspelled_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run("basic-state", "V_c = 10\nkappa = 1\nomeag = 0.4\nI_D = 0.1\n", dir.path());
    assert_eq!(o.status.code(), Some(2));
    let rec = stderr_record(&o);
    assert_eq!(rec["error"], "config");
    assert!(rec["message"].as_str().unwrap().contains("omeag"));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["critical", "--config"])
        .arg(dir.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_record(&o)["error"], "io");
}

#[test]
fn theta_list_gives_one_intensity_file_each() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "V_c = 0\nkappa = 0.5\nomega = 0.4\nI_D = 0.25\ntheta_i_deg = 0, 20, 40, 60, 80\n";
    let (o, out) = run("uniform-intensity", cfg, dir.path());
    assert!(o.status.success());
    assert_eq!(files(&out, "uniform-intensity_").len(), 5);
}

#[test]
fn speed_and_angle_lists_give_product_of_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "V_c = 0, 10\nkappa = 1\nomega = 1\nI_D = 0.02\ntheta_i_deg = 0, 50\ntaxis_variant = B\n";
    let (o, out) = run("basic-state", cfg, dir.path());
    assert!(o.status.success());
    assert_eq!(files(&out, "basic-state_").len(), 4);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = "V_c = 10\nkappa = 1\nomega = 0.4\nI_D = 0.1\ntheta_i_deg = 0, 30\nn_z = 101\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, out_a) = run("basic-state", cfg, a.path());
    let (ob, out_b) = run("basic-state", cfg, b.path());
    assert!(oa.status.success() && ob.status.success());
    let fa = files(&out_a, "");
    let fb = files(&out_b, "");
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        if x.file_name().unwrap() == "run_info.json" {
            continue;
        }
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn absent_oscillatory_branch_is_noted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "V_c = 15\nkappa = 0.5\nomega = 0.4\nI_D = 0.26\nbc_mode = rigid\nrefractive_index = 1.333\n\
               n_z = 61\nk_min = 2.5\nk_max = 3.5\nk_steps = 3\n";
    let (o, out) = run("neutral-curve", cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out, "neutral-curve_").len(), 1);
    assert!(files(&out, "neutral-curve_")[0].to_string_lossy().ends_with("_stationary.csv"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let notes = manifest["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("no oscillatory branch")));
}

#[test]
fn critical_point_of_first_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "V_c = 15\nkappa = 0.5\nomega = 0.4\nI_D = 0.26\nbc_mode = rigid\nrefractive_index = 1.333\n\
               k_min = 2\nk_max = 4\nk_steps = 6\n";
    let (o, out) = run("critical", cfg, dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(out.join("critical.json")).unwrap()).unwrap();
    let r_c = doc[0]["R_c"].as_f64().unwrap();
    assert!((r_c - 719.02).abs() / 719.02 < 0.05, "R_c = {r_c}");
    assert_eq!(doc[0]["branch"], "stationary");
}

#[test]
fn table_needs_an_id() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run("table", "[run]\nformats = csv\n", dir.path());
    assert_eq!(o.status.code(), Some(2));
}
