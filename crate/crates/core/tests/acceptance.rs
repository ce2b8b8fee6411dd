//! Acceptance suite: each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use num_complex::Complex64 as C64;
use parametric_photon::config::{ExperimentConfig, ModelTier, ThermalSection};
use parametric_photon::dynamics::{run_protocol, EvolveOptions};
use parametric_photon::field::FieldRecord;
use parametric_photon::linalg::{embed, projector, CMatrix};
use parametric_photon::runners::{
    build_emitter, build_model, captured_state, detect, execute, invariant_check, target_state, Command,
    BOOKKEEPING_TOL,
};
use parametric_photon::tomography::{
    mle_state, state_fidelity, thermal_population, thermal_voltages, transfer_estimates, MomentSet,
};
use parametric_photon::TAU;
use serde_json::Value;

type Outcome = Result<(bool, String), String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Value, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, out) = execute(cmd, cfg, dir.path()).map_err(|e| format!("{cmd}: {e}"))?;
    Ok(out.summary)
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("missing numeric field {key}"))
}

fn within(runtime: Duration, limit_s: f64) -> bool {
    runtime.as_secs_f64() < limit_s
}

fn sideband_linearity() -> Outcome {
    let s = run(Command::DeviceCalc, &ExperimentConfig::default())?;
    let r2 = num(&s, "linear_r2_bare")?;
    let quad = num(&s, "quad_max_residual_frac_bare")?;
    let r2_d = num(&s, "linear_r2_dressed")?;
    let quad_d = num(&s, "quad_max_residual_frac_dressed")?;
    let ok = r2 > 0.999 && quad < 0.02 && r2_d > 0.999 && quad_d < 0.02;
    Ok((ok, format!("R2 {r2:.7} / {r2_d:.7}, quadratic residual {quad:.2e} / {quad_d:.2e} (bare / dressed)")))
}

fn final_field(cfg: &ExperimentConfig) -> Result<(FieldRecord, f64), String> {
    let model = build_model(cfg).map_err(|e| e.to_string())?;
    let (emitter, _) = build_emitter(cfg, model.as_ref()).map_err(|e| e.to_string())?;
    let sim = run_protocol(
        model.as_ref(),
        &emitter.sideband,
        cfg.run.protocol,
        cfg.run.theta,
        cfg.run.phi,
        &emitter.opts,
        &emitter.evolve,
    )
    .map_err(|e| e.to_string())?;
    Ok((sim.field, model.carrier()))
}

fn rwa_validation() -> Outcome {
    let flux_cfg = load("flux.toml");
    let mut eff_cfg = flux_cfg.clone();
    eff_cfg.sim.model = ModelTier::Effective;
    let (eff, _) = final_field(&eff_cfg)?;
    let (flux, carrier) = final_field(&flux_cfg)?;
    let width = (TAU / carrier / flux.dt).round() as usize;
    let stride = (eff.dt / flux.dt).round() as usize;
    let flux = flux.boxcar_decimate(width, stride);
    let n = eff.len().min(flux.len());
    // Global phase of the demodulation frame.
    let z: C64 = (0..n).map(|k| eff.amps[k] * flux.amps[k].conj()).sum();
    let rot = C64::from_polar(1.0, z.arg());
    let mse = (0..n).map(|k| (eff.amps[k] - flux.amps[k] * rot).norm_sqr()).sum::<f64>() / n as f64;
    let rel = mse.sqrt() / eff.peak_amplitude();
    Ok((rel < 0.02, format!("RMS difference {rel:.2e} of peak over {n} samples")))
}

fn emission_symmetry() -> Outcome {
    let s_of = |cfg: &ExperimentConfig| -> Result<f64, String> { num(&run(Command::Emit, cfg)?, "s") };
    let shaped = s_of(&load("shaped.toml"))?;
    let flattop = s_of(&load("unshaped.toml"))?;
    let mut off = load("shaped.toml");
    off.sim.chirp_on = false;
    let unchirped = s_of(&off)?;
    let ok = shaped > 0.98 && (0.84..=0.93).contains(&flattop) && unchirped > flattop && unchirped < shaped;
    Ok((ok, format!("s chirped {shaped:.4}, flattop {flattop:.4}, unchirped {unchirped:.4}")))
}

fn plus_state(dim: usize) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut psi = vec![C64::new(0.0, 0.0); dim];
    psi[0] = C64::new(s, 0.0);
    psi[1] = C64::new(s, 0.0);
    projector(&psi)
}

fn closed_loop_estimator() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.detect.gain = 1e4;
    cfg.detect.n_noise = 2.78;
    cfg.detect.shots = 1_000_000;
    cfg.detect.seed = 1;
    cfg.detect.estimate_gain = true;
    let rho = plus_state(3);
    let det = detect(&cfg, &rho, Some(&rho)).map_err(|e| e.to_string())?;
    let gain_err = (det.gain - cfg.detect.gain).abs() / cfg.detect.gain;

    // Spread of the gain estimate over independent seeds, for context only.
    let spread: Vec<f64> = (2..10u64)
        .map(|s| {
            let mut c = cfg.clone();
            c.detect.seed = 100 * s;
            c.detect.bootstrap = 2;
            detect(&c, &rho, Some(&rho)).map(|d| d.gain / c.detect.gain - 1.0).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let mean = spread.iter().sum::<f64>() / spread.len() as f64;
    let sigma_g = (spread.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (spread.len() - 1) as f64).sqrt();

    let exact = MomentSet::from_state(&rho);
    let z = |n: usize, m: usize| (det.moments.get(n, m) - exact.get(n, m)).norm() / det.moments.error(n, m);
    let (z_a, z_n) = (z(0, 1), z(1, 1));
    let est = mle_state(&det.moments, 3).map_err(|e| e.to_string())?;
    let fid = state_fidelity(&est.rho, &rho).map_err(|e| e.to_string())?;
    let ok = gain_err < 0.01 && z_a <= 3.0 && z_n <= 3.0 && fid >= 0.98;
    Ok((
        ok,
        format!(
            "gain error {:.2}% (seed spread sigma(G)/G {:.2}%), <a> {z_a:.2} sigma, <a^dag a> {z_n:.2} sigma, F_MLE {fid:.4}",
            100.0 * gain_err,
            100.0 * sigma_g
        ),
    ))
}

fn fidelity_band() -> Outcome {
    let cfg = load("shaped.toml");
    let f = |theta: f64, phi: f64| -> Result<f64, String> {
        let rho = captured_state(&cfg, theta, phi).map_err(|e| e.to_string())?;
        state_fidelity(&rho, &embed(&target_state(theta, phi, 2), rho.nrows())).map_err(|e| e.to_string())
    };
    let f1 = f(PI, 0.0)?;
    let fp = f(FRAC_PI_2, FRAC_PI_2)?;
    let ok = (0.85..=0.95).contains(&f1) && fp > f1;
    Ok((ok, format!("F(|1>) {f1:.4}, F(|+>) {fp:.4}")))
}

fn qpt_ordering() -> Outcome {
    let pf = |name: &str| -> Result<f64, String> { num(&run(Command::TomoProcess, &load(name))?, "process_fidelity") };
    let shaped = pf("shaped.toml")?;
    let unshaped = pf("unshaped.toml")?;
    let ok = unshaped > shaped && (unshaped - 0.9720).abs() <= 0.05 && (shaped - 0.9032).abs() <= 0.05;
    Ok((ok, format!("process fidelity unshaped {unshaped:.4}, shaped {shaped:.4}")))
}

fn transfer_closed_forms() -> Outcome {
    let t = transfer_estimates(0.8624, 0.06).map_err(|e| e.to_string())?;
    let ok = (t.eta_t - 0.699).abs() <= 1e-3 && (t.f_chi - 0.841).abs() <= 1e-3;
    Ok((ok, format!("eta_t {:.5}, F_chi {:.5}", t.eta_t, t.f_chi)))
}

fn g2_single_photon() -> Outcome {
    let s = run(Command::TomoState, &load("single_photon.toml"))?;
    let g2 = num(&s, "g2")?;
    let err = num(&s, "g2_err")?;
    let shots = s["shots"].as_u64().unwrap_or(1_000_000);
    Ok((g2.abs() <= 3.0 * err, format!("g2(0) {g2:.4} +/- {err:.4} at {shots} shots")))
}

fn thermal_round_trip() -> Outcome {
    let t = ThermalSection::default();
    let v = |p: [f64; 2]| C64::new(p[0], p[1]);
    let mut worst: f64 = 0.0;
    for pe in [0.0023, 0.0006, 0.02, 0.1] {
        let r = thermal_population(thermal_voltages(pe, v(t.v_g), v(t.v_e), v(t.v_f))).map_err(|e| e.to_string())?;
        worst = worst.max((r.pe_eta - pe).abs()).max((r.pe_lambda - pe).abs());
    }
    Ok((worst <= 1e-12, format!("max recovery error {worst:.1e} at P_e in {{0.23%, 0.06%, 2%, 10%}}")))
}

fn phase_covariance() -> Outcome {
    let cfg = load("shaped.toml");
    let mut rotated = cfg.clone();
    rotated.pulse.theta0 += FRAC_PI_2;
    let (a, _) = final_field(&cfg)?;
    let (b, _) = final_field(&rotated)?;
    let floor = 1e-3 * a.peak_amplitude();
    let mut worst_angle: f64 = 0.0;
    for (x, y) in a.amps.iter().zip(&b.amps).filter(|(x, _)| x.norm() > floor) {
        let angle = (y * x.conj()).arg().abs();
        worst_angle = worst_angle.max((angle - FRAC_PI_2).abs());
    }
    let power = (b.photon_number() - a.photon_number()).abs() / a.photon_number();
    let ok = worst_angle <= 1e-3 && power <= 1e-6 && a.len() == b.len();
    Ok((ok, format!("max rotation error {worst_angle:.1e} rad, relative power change {power:.1e}")))
}

fn invariant_suite() -> Outcome {
    let tol = EvolveOptions::default();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    entries.sort();
    let mut ok = !entries.is_empty();
    let mut notes = Vec::new();
    for path in &entries {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let cfg = load(&name);
        match invariant_check(&cfg) {
            Ok(sim) => {
                let s = sim.stats;
                let good = s.max_trace_error <= tol.trace_tol
                    && s.max_hermiticity_error <= tol.hermiticity_tol
                    && s.min_eigenvalue >= -tol.positivity_tol
                    && sim.bookkeeping_error() <= BOOKKEEPING_TOL;
                ok &= good;
                notes.push(format!("{name} {:.1e}", sim.bookkeeping_error()));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{name} error: {e}"));
            }
        }
    }
    Ok((ok, format!("{} configs, bookkeeping: {}", entries.len(), notes.join(", "))))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 11] = [
        ("sideband linearity", 60.0, sideband_linearity),
        ("RWA validation", 600.0, rwa_validation),
        ("emission symmetry bands", 300.0, emission_symmetry),
        ("estimator closed loop", 300.0, closed_loop_estimator),
        ("physical fidelity band", 300.0, fidelity_band),
        ("process tomography ordering", 600.0, qpt_ordering),
        ("transfer closed forms", 1.0, transfer_closed_forms),
        ("g2(0) of single photon", 300.0, g2_single_photon),
        ("thermal population round trip", 1.0, thermal_round_trip),
        ("phase covariance", 120.0, phase_covariance),
        ("invariant suite", 600.0, invariant_suite),
    ];
    let mut failures = 0;
    for (k, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((ok, detail)) => (ok && within(elapsed, *limit), detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.1} s, limit {limit} s]",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
