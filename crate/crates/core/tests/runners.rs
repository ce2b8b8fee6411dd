//! End-to-end runs of each command on the shipped configs.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use parametric_photon::config::{ExperimentConfig, RunManifest, MANIFEST_FILE};
use parametric_photon::device::{fit_calibration, sweep_model, SidebandWorkingPoint};
use parametric_photon::runners::{execute, Command, RunOutput};
use parametric_photon::Error;
use serde_json::Value;
use tempfile::TempDir;

fn load(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

fn run(cmd: Command, cfg: &ExperimentConfig) -> (TempDir, RunManifest, RunOutput) {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, out) = execute(cmd, cfg, dir.path()).unwrap();
    (dir, manifest, out)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn device_calc_table_and_fit_match_direct_model() {
    let cfg = ExperimentConfig::default();
    let (dir, _, _) = run(Command::DeviceCalc, &cfg);
    let text = fs::read_to_string(dir.path().join("device_calc.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), cfg.run.calc_amplitudes.len());
    assert_eq!(rows[0][0], 0.0);
    assert!(rows[0][1..].iter().all(|&x| x == 0.0));
    assert!(rows.windows(2).all(|w| w[1][1] > w[0][1] && w[1][3] > w[0][3]));

    let p = cfg.device_params();
    let direct = fit_calibration(&sweep_model(&p, &SidebandWorkingPoint::bare(&p).unwrap(), &cfg.run.calc_amplitudes).unwrap())
        .unwrap();
    let report = read_json(dir.path().join("calibration.json"));
    let linear = report["perturbative"]["linear_coeff"].as_f64().unwrap();
    let quad = report["perturbative"]["quad_coeff"].as_f64().unwrap();
    assert!((linear - direct.linear_coeff).abs() <= 1e-12 * direct.linear_coeff.abs());
    assert!((quad - direct.quad_coeff).abs() <= 1e-12 * direct.quad_coeff.abs());
}

#[test]
fn emit_symmetry_and_empty_field_warning() {
    let s = |out: &RunOutput| out.summary["s"].as_f64().unwrap();
    let (_, _, shaped) = run(Command::Emit, &load("shaped.toml"));
    let (_, _, flattop) = run(Command::Emit, &load("unshaped.toml"));
    assert!(s(&shaped) > 0.98, "shaped s = {}", s(&shaped));
    assert!(s(&flattop) < 0.93, "flattop s = {}", s(&flattop));

    let mut vacuum = load("shaped.toml");
    vacuum.run.theta = 0.0;
    let (_, _, out) = run(Command::Emit, &vacuum);
    assert!(out.warnings.iter().any(|w| w.contains("empty")), "{:?}", out.warnings);
}

#[test]
fn emit_manifest_lists_and_verifies_every_artifact() {
    let (dir, manifest, _) = run(Command::Emit, &load("shaped.toml"));
    manifest.verify(dir.path()).unwrap();
    let on_disk: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk.run_hash, manifest.run_hash);
    let mut listed: Vec<String> = manifest.artifacts.iter().map(|a| a.path.clone()).collect();
    listed.push(MANIFEST_FILE.into());
    listed.sort();
    let mut present: Vec<String> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    present.sort();
    assert_eq!(listed, present);
}

#[test]
fn sweep_rabi_photon_number_follows_rotation() {
    let (dir, _, out) = run(Command::SweepRabi, &load("shaped.toml"));
    assert_eq!(out.summary["points"].as_u64().unwrap(), 17);
    let text = fs::read_to_string(dir.path().join("rabi.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    let (theta, n) = (|r: &Vec<f64>| r[0], |r: &Vec<f64>| r[3]);
    let peak = rows.iter().max_by(|a, b| n(a).total_cmp(&n(b))).unwrap();
    assert!((theta(peak) - std::f64::consts::PI).abs() < 0.2);
    assert!(n(&rows[0]).abs() < 1e-9);
    for r in &rows {
        assert!((n(r) - n(peak) * (0.5 * theta(r)).sin().powi(2)).abs() < 0.02 * n(peak));
    }
}

#[test]
fn tomo_state_vacuum_fidelity() {
    let (_, _, out) = run(Command::TomoState, &load("vacuum.toml"));
    let f = out.summary["fidelity_mle"].as_f64().unwrap();
    assert!(f > 0.999, "vacuum fidelity {f}");
}

#[test]
fn tomo_state_is_deterministic() {
    let mut cfg = load("single_photon.toml");
    cfg.detect.shots = 200_000;
    cfg.detect.bootstrap = 20;
    let (a_dir, a, _) = run(Command::TomoState, &cfg);
    let (b_dir, b, _) = run(Command::TomoState, &cfg);
    assert_eq!(a.run_hash, b.run_hash);
    for art in &a.artifacts {
        let x = fs::read(a_dir.path().join(&art.path)).unwrap();
        let y = fs::read(b_dir.path().join(&art.path)).unwrap();
        assert!(x == y, "{} differs", art.path);
    }
}

#[test]
fn tomo_process_lossless_and_dominant_identity() {
    let (_, _, lossless) = run(Command::TomoProcess, &load("lossless.toml"));
    let f = lossless.summary["process_fidelity"].as_f64().unwrap();
    assert!(f > 0.999, "lossless process fidelity {f}");

    let (dir, _, shaped) = run(Command::TomoProcess, &load("shaped.toml"));
    let chi = read_json(dir.path().join("chi.json"));
    let ii = shaped.summary["chi_ii"].as_f64().unwrap();
    let data = &chi["chi"]["data"];
    for k in 1..4 {
        let diag = data[k][k][0].as_f64().unwrap();
        assert!(ii > diag, "chi[{k}{k}] = {diag} vs chi_ii = {ii}");
    }
}

#[test]
fn pitch_catch_fidelity_band() {
    let (_, _, out) = run(Command::PitchCatch, &load("pitch_catch.toml"));
    let f = out.summary["process_fidelity"].as_f64().unwrap();
    assert!((f - 0.84).abs() <= 0.05, "pitch-catch process fidelity {f}");
}

#[test]
fn pitch_catch_agrees_with_closed_form() {
    let (_, _, out) = run(Command::PitchCatch, &load("pitch_catch.toml"));
    let gap = out.summary["closed_form_gap"].as_f64().unwrap();
    assert!(gap <= 0.05, "simulated vs closed-form process fidelity differ by {gap}");
}

#[test]
fn pitch_catch_requires_its_section() {
    let dir = tempfile::tempdir().unwrap();
    let err = execute(Command::PitchCatch, &load("shaped.toml"), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn thermal_pop_recovers_population() {
    let cfg = load("thermal.toml");
    let (_, _, out) = run(Command::ThermalPop, &cfg);
    let truth = out.summary["p_e_true"].as_f64().unwrap();
    let sigma = out.summary["mean_sigma"].as_f64().unwrap();
    for key in ["pe_eta", "pe_lambda"] {
        let est = out.summary[key].as_f64().unwrap();
        assert!((est - truth).abs() < 0.005, "{key} = {est}, true {truth}, sigma {sigma}");
    }
    assert!(out.summary["consistent"].as_bool().unwrap());
}

#[test]
fn invalid_config_is_a_config_error() {
    assert!(matches!(ExperimentConfig::from_toml_str("[device]\nbogus = 1\n"), Err(Error::Config(_))));
    let mut cfg = load("shaped.toml");
    cfg.run.theta = f64::NAN;
    cfg.run.phi = FRAC_PI_2;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(execute(Command::Emit, &cfg, dir.path()), Err(Error::Config(_))));
}
