//! Command runners: each turns an [`ExperimentConfig`] into files in a run
//! directory plus a [`RunManifest`].

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ModelTier, RunManifest, MANIFEST_FILE};
use crate::detection::{default_half_width, estimate_gain, sample_into, Histogram2D, NoiseModel};
use crate::device::{
    dressed_shift, effective_coupling, fit_calibration, sweep_model, CalibrationSample, SidebandWorkingPoint,
};
use crate::dynamics::{
    evolve, pitch_catch, EffectiveModel, EvolveOptions, FluxModel, Model, PitchCatchConfig, SimResult, TimeGrid,
    NODE_SPEC,
};
use crate::error::{Error, Result};
use crate::experiments::{
    calibrate_emission, emission_qpt, mub_rotations, photonic_qubit, reference_phase, rotate_photon_phase, Emitter,
};
use crate::field::{symmetry_factor, FieldRecord, SymmetryReport};
use crate::io::write_json;
use crate::linalg::{embed, projector, trace, CMatrix, C64};
use crate::pulse::PiCalibration;
use crate::tomography::{
    chi_identity, extract_signal_moments, g2_zero, mle_state, mub_states, process_fidelity, qpt, raw_moments,
    state_fidelity, thermal_population, thermal_voltages, transfer_estimates, wigner_from_moments, wigner_from_rho,
    MomentSet, WignerGrid, WignerMap,
};
use crate::TAU;

/// Largest accepted relative excitation-bookkeeping mismatch.
pub const BOOKKEEPING_TOL: f64 = 0.01;

/// Photon number below which an emitted field counts as empty.
pub const EMPTY_FIELD: f64 = 1e-6;

/// Resolved-config file written into every run directory.
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    DeviceCalc,
    Emit,
    SweepRabi,
    TomoState,
    TomoProcess,
    PitchCatch,
    ThermalPop,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::DeviceCalc,
        Command::Emit,
        Command::SweepRabi,
        Command::TomoState,
        Command::TomoProcess,
        Command::PitchCatch,
        Command::ThermalPop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::DeviceCalc => "device-calc",
            Command::Emit => "emit",
            Command::SweepRabi => "sweep-rabi",
            Command::TomoState => "tomo-state",
            Command::TomoProcess => "tomo-process",
            Command::PitchCatch => "pitch-catch",
            Command::ThermalPop => "thermal-pop",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command '{s}'")))
    }
}

/// What a runner produced.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Files relative to the run directory.
    pub files: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    /// Headline numbers, also written to `summary.json`.
    pub summary: serde_json::Value,
    pub warnings: Vec<String>,
    /// Set when an estimator stopped without converging.
    pub non_convergence: Option<String>,
}

impl RunOutput {
    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }
}

/// Runs `cmd` into `dir` and writes the resolved config, summary and manifest.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, dir: &Path) -> Result<(RunManifest, RunOutput)> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(dir)?;
    let mut out = match cmd {
        Command::DeviceCalc => device_calc(cfg, dir)?,
        Command::Emit => emit(cfg, dir)?,
        Command::SweepRabi => sweep_rabi(cfg, dir)?,
        Command::TomoState => tomo_state(cfg, dir)?,
        Command::TomoProcess => tomo_process(cfg, dir)?,
        Command::PitchCatch => pitch_catch_run(cfg, dir)?,
        Command::ThermalPop => thermal_pop(cfg, dir)?,
    };
    write_json(&dir.join(RESOLVED_CONFIG_FILE), cfg)?;
    out.files.push(RESOLVED_CONFIG_FILE.into());
    let summary = json!({
        "command": cmd.name(),
        "results": out.summary,
        "warnings": out.warnings,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    out.files.push("summary.json".into());
    let manifest =
        RunManifest::build(cmd.name(), cfg, out.seeds.clone(), dir, &out.files, start.elapsed().as_secs_f64())?;
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok((manifest, out))
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    files.push(name.to_string());
    Ok(BufWriter::new(File::create(path)?))
}

fn json_file(dir: &Path, name: &str, value: &impl Serialize, files: &mut Vec<String>) -> Result<()> {
    write_json(&dir.join(name), value)?;
    files.push(name.to_string());
    Ok(())
}

fn check_bookkeeping(r: &SimResult) -> Result<f64> {
    let e = r.bookkeeping_error();
    if e > BOOKKEEPING_TOL {
        return Err(Error::Invariant {
            t: r.t.last().copied().unwrap_or(0.0),
            what: format!("excitation bookkeeping off by {:.3}% (limit {:.0}%)", 100.0 * e, 100.0 * BOOKKEEPING_TOL),
        });
    }
    Ok(e)
}

/// Model tier selected by the config.
pub fn build_model(cfg: &ExperimentConfig) -> Result<Box<dyn Model>> {
    let p = cfg.device_params();
    Ok(match cfg.sim.model {
        ModelTier::Effective => {
            Box::new(EffectiveModel::new(p, cfg.hilbert_spec(), cfg.sideband_model()?)?.with_dt(cfg.sim.dt_effective))
        }
        ModelTier::Flux => Box::new(FluxModel::new(p, cfg.hilbert_spec(), cfg.sim.dt_flux)?),
    })
}

/// Emitter for `model` with the configured amplitude, or one calibrated as a
/// `pi_e0g1` transfer. The flux tier is calibrated on the effective tier.
pub fn build_emitter<'a>(
    cfg: &ExperimentConfig,
    model: &'a dyn Model,
) -> Result<(Emitter<'a>, Option<PiCalibration>)> {
    let sideband = cfg.sideband_model()?;
    let evolve_opts = EvolveOptions::default();
    let (amplitude, cal) = match cfg.pulse.amplitude {
        Some(a) => (a, None),
        None => {
            let opts = cfg.protocol_options(0.0);
            let cal = match cfg.sim.model {
                ModelTier::Effective => calibrate_emission(model, &sideband, &opts, &evolve_opts)?,
                ModelTier::Flux => {
                    let eff = EffectiveModel::new(cfg.device_params(), cfg.hilbert_spec(), sideband)?
                        .with_dt(cfg.sim.dt_effective);
                    calibrate_emission(&eff, &sideband, &opts, &evolve_opts)?
                }
            };
            (cal.amplitude, Some(cal))
        }
    };
    let emitter = Emitter { model, sideband, opts: cfg.protocol_options(amplitude), evolve: evolve_opts };
    Ok((emitter, cal))
}

/// Field record as written to disk: the flux tier is averaged over one
/// carrier period and thinned.
fn output_field(cfg: &ExperimentConfig, model: &dyn Model, field: &FieldRecord) -> FieldRecord {
    match cfg.sim.model {
        ModelTier::Effective => field.clone(),
        ModelTier::Flux => {
            let width = (TAU / model.carrier() / field.dt).round() as usize;
            let stride = (cfg.sim.dt_effective / field.dt).round().max(1.0) as usize;
            field.boxcar_decimate(width, stride)
        }
    }
}

fn device_calc(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let p = cfg.device_params();
    let amps = &cfg.run.calc_amplitudes;
    let bare = SidebandWorkingPoint::bare(&p)?;
    let dressed = SidebandWorkingPoint::dressed(&p)?;
    let pert = sweep_model(&p, &bare, amps)?;
    let dres: Vec<CalibrationSample> = amps
        .iter()
        .map(|&a| {
            Ok(CalibrationSample {
                amplitude: a,
                g_eff: effective_coupling(&p, &dressed, a, 0.0)?.norm(),
                shift: dressed_shift(&p, &dressed, a)?.0,
            })
        })
        .collect::<Result<_>>()?;
    {
        let mut w = create(dir, "device_calc.csv", &mut out.files)?;
        writeln!(w, "amplitude_phi0,g_eff_bare_hz,shift_bare_hz,g_eff_dressed_hz,shift_dressed_hz")?;
        for (a, b) in pert.iter().zip(&dres) {
            writeln!(
                w,
                "{:.6},{:.9e},{:.9e},{:.9e},{:.9e}",
                a.amplitude,
                a.g_eff / TAU,
                a.shift / TAU,
                b.g_eff / TAU,
                b.shift / TAU
            )?;
        }
    }
    let fit_pert = fit_calibration(&pert)?;
    let fit_dres = fit_calibration(&dres)?;
    let sideband = cfg.sideband_model()?;
    let report = json!({
        "units": "fit coefficients in rad/s per flux quantum (linear) and rad/s per flux quantum squared (quadratic)",
        "perturbative": fit_pert,
        "dressed": fit_dres,
        "active_sideband_model": sideband,
    });
    json_file(dir, "calibration.json", &report, &mut out.files)?;
    {
        let mut w = create(dir, "plot_calibration.csv", &mut out.files)?;
        writeln!(w, "figure,series,x,y")?;
        for (label, rows) in [("bare", &pert), ("dressed", &dres)] {
            for r in rows.iter() {
                writeln!(w, "D,g_eff_{label}_hz,{:.6},{:.9e}", r.amplitude, r.g_eff / TAU)?;
            }
            for r in rows.iter() {
                writeln!(w, "D,shift_{label}_hz,{:.6},{:.9e}", r.amplitude, r.shift / TAU)?;
            }
        }
    }
    out.summary = json!({
        "linear_r2_bare": fit_pert.linear_r2,
        "quad_max_residual_frac_bare": fit_pert.quad_max_residual_frac,
        "linear_r2_dressed": fit_dres.linear_r2,
        "quad_max_residual_frac_dressed": fit_dres.quad_max_residual_frac,
    });
    Ok(out)
}

fn write_trajectory(r: &SimResult, w: &mut impl Write) -> Result<()> {
    writeln!(w, "t_ns,p_g,p_e,p_f,n_res")?;
    for k in 0..r.t.len() {
        writeln!(w, "{:.6},{:.9e},{:.9e},{:.9e},{:.9e}", r.t[k] * 1e9, r.p_g[k], r.p_e[k], r.p_f[k], r.n_res[k])?;
    }
    Ok(())
}

fn symmetry_or_warn(field: &FieldRecord, out: &mut RunOutput) -> Option<SymmetryReport> {
    if field.photon_number() < EMPTY_FIELD {
        out.warn(format!("empty output field ({:.2e} photons); symmetry undefined", field.photon_number()));
        return None;
    }
    match symmetry_factor(field) {
        Ok(s) => Some(s),
        Err(e) => {
            out.warn(format!("symmetry factor unavailable: {e}"));
            None
        }
    }
}

fn emit(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let model = build_model(cfg)?;
    let (emitter, cal) = build_emitter(cfg, model.as_ref())?;
    let sim = crate::dynamics::run_protocol(
        model.as_ref(),
        &emitter.sideband,
        cfg.run.protocol,
        cfg.run.theta,
        cfg.run.phi,
        &emitter.opts,
        &emitter.evolve,
    )?;
    let bookkeeping = check_bookkeeping(&sim)?;
    let field = output_field(cfg, model.as_ref(), &sim.field);
    field.write_csv(create(dir, "field.csv", &mut out.files)?)?;
    write_trajectory(&sim, &mut create(dir, "populations.csv", &mut out.files)?)?;
    emitter.pulse()?.write_csv(create(dir, "pulse.csv", &mut out.files)?)?;
    let symmetry = symmetry_or_warn(&field, &mut out);
    {
        let mut w = create(dir, "plot_emission.csv", &mut out.files)?;
        writeln!(w, "figure,series,t_ns,value")?;
        for (t, (a, p)) in field.times().zip(field.amps.iter().zip(&field.power)) {
            let t = t * 1e9;
            writeln!(w, "2,re_aout,{t:.6},{:.9e}\n2,im_aout,{t:.6},{:.9e}\n2,power,{t:.6},{p:.9e}", a.re, a.im)?;
        }
        for k in 0..sim.t.len() {
            let t = sim.t[k] * 1e9;
            writeln!(w, "2,p_e,{t:.6},{:.9e}\n2,n_res,{t:.6},{:.9e}", sim.p_e[k], sim.n_res[k])?;
        }
    }
    let report = json!({
        "symmetry": symmetry,
        "photons_emitted": field.photon_number(),
        "calibration": cal,
        "amplitude": emitter.opts.envelope.amplitude,
        "bookkeeping_error": bookkeeping,
        "invariants": sim.stats,
    });
    json_file(dir, "symmetry.json", &report, &mut out.files)?;
    out.summary = json!({
        "s": symmetry.as_ref().map(|s| s.s),
        "photons_emitted": field.photon_number(),
        "amplitude": emitter.opts.envelope.amplitude,
    });
    Ok(out)
}

/// Normally ordered moments `<(a^dag)^n a^m>` up to fourth order of a state.
fn state_moments(rho: &CMatrix) -> MomentSet {
    MomentSet::from_state(rho)
}

fn sweep_rabi(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let model = build_model(cfg)?;
    let (emitter, cal) = build_emitter(cfg, model.as_ref())?;
    let filter = emitter.template()?;
    let plus = emitter.capture(FRAC_PI_2, FRAC_PI_2, &filter)?;
    let phase = reference_phase(&plus);
    let phi = cfg.run.phi;
    let points = cfg
        .run
        .rabi_theta
        .par_iter()
        .map(|&theta| {
            let (mode, sim) = emitter.capture_full(theta, phi, &filter)?;
            check_bookkeeping(&sim)?;
            Ok((theta, rotate_photon_phase(&mode.rho, phase), output_field(cfg, model.as_ref(), &sim.field)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = create(dir, "rabi.csv", &mut out.files)?;
    writeln!(table, "theta,re_a,im_a,n,n2,photons_emitted")?;
    let mut rows = Vec::new();
    for (k, (theta, rho, field)) in points.iter().enumerate() {
        field.write_csv(create(dir, &format!("fields/theta_{k:03}.csv"), &mut out.files)?)?;
        let m = state_moments(rho);
        let (a, n, n2) = (m.get(0, 1), m.get(1, 1).re, m.get(2, 2).re);
        writeln!(table, "{theta:.9},{:.9e},{:.9e},{n:.9e},{n2:.9e},{:.9e}", a.re, a.im, field.photon_number())?;
        rows.push((theta, a, n, n2));
    }
    drop(table);
    {
        let mut w = create(dir, "plot_rabi.csv", &mut out.files)?;
        writeln!(w, "figure,series,theta,value")?;
        for (theta, a, n, n2) in &rows {
            writeln!(w, "3,re_a,{theta:.9},{:.9e}\n3,im_a,{theta:.9},{:.9e}", a.re, a.im)?;
            writeln!(w, "3,n,{theta:.9},{n:.9e}\n3,n2,{theta:.9},{n2:.9e}")?;
        }
    }
    out.summary = json!({
        "points": rows.len(),
        "amplitude": emitter.opts.envelope.amplitude,
        "calibration": cal,
        "max_n2": rows.iter().fold(0.0f64, |m, r| m.max(r.3.abs())),
    });
    Ok(out)
}

/// Ideal photon state after `R_ge(theta, phi)` in the reference frame.
pub fn target_state(theta: f64, phi: f64, dim: usize) -> CMatrix {
    let c1 = C64::new(0.0, -1.0) * C64::from_polar(1.0, phi) * (0.5 * theta).sin();
    let mut psi = vec![C64::new(0.0, 0.0); dim];
    psi[0] = C64::new((0.5 * theta).cos(), 0.0);
    psi[1] = c1;
    projector(&psi)
}

/// Seeds derived from the master seed for each random stream of a run.
pub fn derived_seeds(seed: u64) -> BTreeMap<String, u64> {
    let names = ["on", "off", "reference", "bootstrap_on", "bootstrap_off", "readout"];
    names.iter().enumerate().map(|(k, n)| (n.to_string(), seed.wrapping_add(1000 * k as u64))).collect()
}

/// Histograms, gain and signal moments of one detected mode.
pub struct Detection {
    pub on: Histogram2D,
    pub off: Histogram2D,
    pub gain: f64,
    pub gain_estimated: bool,
    pub moments: MomentSet,
}

/// Samples `rho` and a vacuum background through the configured chain and
/// extracts signal moments. With `reference`, the gain is estimated from a
/// sampled half-photon reference state.
pub fn detect(cfg: &ExperimentConfig, rho: &CMatrix, reference: Option<&CMatrix>) -> Result<Detection> {
    let d = &cfg.detect;
    let seeds = derived_seeds(d.seed);
    let noise = |s: &str| NoiseModel::new(d.gain, d.n_noise, seeds[s]);
    let grid = |rho: &CMatrix, s: &str| -> Result<Histogram2D> {
        let nm = noise(s);
        let n_mean = (0..rho.nrows()).map(|k| k as f64 * rho[(k, k)].re).sum::<f64>();
        let g = Histogram2D::uniform(d.bins, default_half_width(&nm, n_mean), nm.gain, nm.n_noise, nm.seed)?;
        sample_into(rho, &nm, d.shots, g)
    };
    let on = grid(rho, "on")?;
    let off = {
        let nm = noise("off");
        let g = Histogram2D::uniform(d.bins, default_half_width(&nm, 0.0), nm.gain, nm.n_noise, nm.seed)?;
        let mut vac = CMatrix::zeros(1, 1);
        vac[(0, 0)] = C64::new(1.0, 0.0);
        sample_into(&vac, &nm, d.shots, g)?
    };
    let (gain, gain_estimated) = match reference {
        Some(r) => (estimate_gain(&grid(r, "reference")?, &off)?, true),
        None => (d.gain, false),
    };
    let on_m = raw_moments(&on, gain, d.bootstrap, seeds["bootstrap_on"])?;
    let off_m = raw_moments(&off, gain, d.bootstrap, seeds["bootstrap_off"])?;
    let moments = extract_signal_moments(&on_m, &off_m)?;
    Ok(Detection { on, off, gain, gain_estimated, moments })
}

fn write_wigner_plot(maps: &[(&str, &WignerMap)], w: &mut impl Write) -> Result<()> {
    writeln!(w, "figure,series,re_alpha,im_alpha,value")?;
    for (name, m) in maps {
        for (i, x) in m.grid.re.iter().enumerate() {
            for (j, y) in m.grid.im.iter().enumerate() {
                writeln!(w, "4,{name},{x:.6},{y:.6},{:.9e}", m.at(i, j))?;
            }
        }
    }
    Ok(())
}

fn tomo_state(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    out.seeds = derived_seeds(cfg.detect.seed);
    out.seeds.insert("master".into(), cfg.detect.seed);
    let model = build_model(cfg)?;
    let (emitter, cal) = build_emitter(cfg, model.as_ref())?;
    let filter = emitter.template()?;
    let plus = emitter.capture(FRAC_PI_2, FRAC_PI_2, &filter)?;
    let phase = reference_phase(&plus);
    let (theta, phi) = (cfg.run.theta, cfg.run.phi);
    let (mode, sim) = emitter.capture_full(theta, phi, &filter)?;
    check_bookkeeping(&sim)?;
    let rho = rotate_photon_phase(&mode.rho, phase);
    let reference = cfg.detect.estimate_gain.then(|| rotate_photon_phase(&plus.rho, phase));
    let det = detect(cfg, &rho, reference.as_ref())?;

    det.on.write_binary(create(dir, "hist_on.bin", &mut out.files)?)?;
    det.off.write_binary(create(dir, "hist_off.bin", &mut out.files)?)?;
    json_file(dir, "moments.json", &det.moments, &mut out.files)?;
    json_file(dir, "moments_exact.json", &state_moments(&rho), &mut out.files)?;

    let dim = cfg.run.mle_dim;
    let est = mle_state(&det.moments, dim)?;
    json_file(dir, "density_matrix.json", &est, &mut out.files)?;
    if !est.converged {
        out.non_convergence = Some(format!("MLE stopped after {} iterations without converging", est.iterations));
    }
    let grid = WignerGrid::square(cfg.run.wigner_half_width, cfg.run.wigner_points);
    let w_mom = wigner_from_moments(&det.moments, &grid)?;
    let w_rho = wigner_from_rho(&est.rho, &grid)?;
    w_mom.write_csv(create(dir, "wigner_moments.csv", &mut out.files)?)?;
    w_rho.write_csv(create(dir, "wigner_mle.csv", &mut out.files)?)?;
    write_wigner_plot(&[("moments", &w_mom), ("mle", &w_rho)], &mut create(dir, "plot_wigner.csv", &mut out.files)?)?;

    let target = target_state(theta, phi, dim);
    let fidelity = state_fidelity(&est.rho, &target)?;
    let captured_fidelity = state_fidelity(&rho, &embed(&target, rho.nrows()))?;
    let g2 = match g2_zero(&det.moments) {
        Ok((g, e)) => Some((g, e)),
        Err(e) => {
            out.warn(format!("g2(0) unavailable: {e}"));
            None
        }
    };
    let report = json!({
        "theta": theta,
        "phi": phi,
        "gain_configured": cfg.detect.gain,
        "gain_used": det.gain,
        "gain_estimated": det.gain_estimated,
        "fidelity_mle": fidelity,
        "fidelity_captured": captured_fidelity,
        "mle_converged": est.converged,
        "mle_iterations": est.iterations,
        "g2": g2.map(|g| g.0),
        "g2_err": g2.map(|g| g.1),
        "wigner_route_sup_distance": w_mom.sup_distance(&w_rho),
        "capture_infidelity": mode.capture_infidelity,
        "calibration": cal,
    });
    json_file(dir, "report.json", &report, &mut out.files)?;
    out.summary = report;
    Ok(out)
}

fn tomo_process(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let model = build_model(cfg)?;
    let (emitter, cal) = build_emitter(cfg, model.as_ref())?;
    let filter = emitter.template()?;
    let (chi, outputs) = emission_qpt(&emitter, &filter)?;
    let fidelity = process_fidelity(&chi.chi, &chi_identity())?;
    json_file(dir, "chi.json", &chi, &mut out.files)?;
    let outputs_repr: Vec<_> = outputs.iter().map(crate::io::cmatrix_serde::to_repr).collect();
    json_file(dir, "outputs.json", &outputs_repr, &mut out.files)?;
    {
        let labels = ["I", "X", "Y", "Z"];
        let mut w = create(dir, "plot_chi.csv", &mut out.files)?;
        writeln!(w, "figure,series,row,col,value")?;
        for (part, f) in [("re", (|z: C64| z.re) as fn(C64) -> f64), ("im", |z: C64| z.im)] {
            for m in 0..4 {
                for n in 0..4 {
                    writeln!(w, "5,chi_{part},{},{},{:.9e}", labels[m], labels[n], f(chi.chi[(m, n)]))?;
                }
            }
        }
    }
    let report = json!({
        "process_fidelity": fidelity,
        "chi_ii": chi.chi[(0, 0)].re,
        "raw_min_eigenvalue": chi.raw_min_eigenvalue,
        "raw_tp_deviation": chi.raw_tp_deviation,
        "projection_distance": chi.projection_distance,
        "amplitude": emitter.opts.envelope.amplitude,
        "calibration": cal,
    });
    json_file(dir, "report.json", &report, &mut out.files)?;
    out.summary = report;
    Ok(out)
}

/// Emission efficiency of one node: photons leaving through the output port
/// after starting in `|e, 0>`.
fn emission_efficiency(model: &EffectiveModel, pulse: &crate::pulse::FluxPulse, tail: f64) -> Result<f64> {
    let sim = evolve(
        &model.generator(Some(pulse), 0.0),
        &NODE_SPEC.basis_state(1, 0),
        TimeGrid::covering(0.0, pulse.duration() + tail, model.dt()),
        &EvolveOptions::default(),
    )?;
    check_bookkeeping(&sim)?;
    Ok(sim.field.photon_number())
}

fn pitch_catch_run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let section = cfg
        .pitch_catch
        .clone()
        .ok_or_else(|| Error::Config("pitch-catch needs a [pitch_catch] section".into()))?;
    let p = cfg.device_params();
    let sideband = cfg.sideband_model()?;
    let node = EffectiveModel::new(p, NODE_SPEC, sideband)?;
    let evolve_opts = EvolveOptions::default();
    let amplitude = match cfg.pulse.amplitude {
        Some(a) => a,
        None => calibrate_emission(&node, &sideband, &cfg.protocol_options(0.0), &evolve_opts)?.amplitude,
    };
    let emitter = Emitter { model: &node, sideband, opts: cfg.protocol_options(amplitude), evolve: evolve_opts };
    let pulse = emitter.pulse()?;
    let pc = PitchCatchConfig::symmetric(p, sideband, pulse.clone(), section.channel_loss, &evolve_opts)?;
    let inputs = mub_states();
    let receivers = inputs
        .par_iter()
        .map(|q| {
            let r = pitch_catch(&pc, q, &evolve_opts)?;
            check_bookkeeping(&r.sim)?;
            Ok(r.receiver)
        })
        .collect::<Result<Vec<_>>>()?;
    // The |+> input fixes the receiver frame.
    let phase = receivers[2][(1, 0)].arg();
    let outputs: Vec<CMatrix> =
        receivers.iter().map(|r| rotate_photon_phase(r, phase)).map(|r| &r / trace(&r)).collect();
    let chi = qpt(&inputs, &outputs)?;
    let f_chi = process_fidelity(&chi.chi, &chi_identity())?;
    let efficiency = emission_efficiency(&node, &pulse, 200e-9)?;
    let filter = emitter.template()?;
    let f1 = emitter.capture(std::f64::consts::PI, 0.0, &filter)?.rho[(1, 1)].re.clamp(0.0, 1.0);
    let estimate = transfer_estimates(f1, section.channel_loss)?;
    let excited = receivers[1][(1, 1)].re;
    json_file(dir, "chi.json", &chi, &mut out.files)?;
    let receivers_repr: Vec<_> = receivers.iter().map(crate::io::cmatrix_serde::to_repr).collect();
    json_file(dir, "receiver_states.json", &receivers_repr, &mut out.files)?;
    let report = json!({
        "channel_loss": section.channel_loss,
        "process_fidelity": f_chi,
        "emission_efficiency": efficiency,
        "single_photon_fidelity": f1,
        "closed_form": estimate,
        "closed_form_gap": (f_chi - estimate.f_chi).abs(),
        "transferred_excitation": excited,
        "receiver_delay_s": pc.delay_b,
        "amplitude": amplitude,
    });
    json_file(dir, "report.json", &report, &mut out.files)?;
    out.summary = report;
    Ok(out)
}

fn thermal_pop(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let mut out = RunOutput::default();
    let t = cfg.thermal.clone().ok_or_else(|| Error::Config("thermal-pop needs a [thermal] section".into()))?;
    let seed = derived_seeds(cfg.detect.seed)["readout"];
    out.seeds.insert("readout".into(), seed);
    let c = |v: [f64; 2]| C64::new(v[0], v[1]);
    let ideal = thermal_voltages(t.p_e, c(t.v_g), c(t.v_e), c(t.v_f));
    // The mean of n shots with per-quadrature noise sigma has noise sigma / sqrt(n).
    let sigma = t.readout_sigma / (t.shots_per_sequence as f64).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParam(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let measured: [C64; 4] = ideal.map(|v| v + C64::new(normal.sample(&mut rng), normal.sample(&mut rng)));
    let result = thermal_population(measured)?;
    if !result.consistent {
        out.warn(format!(
            "thermal estimates outside [0, 1]: pe_eta = {:.4}, pe_lambda = {:.4}",
            result.pe_eta, result.pe_lambda
        ));
    }
    {
        let mut w = create(dir, "voltages.csv", &mut out.files)?;
        writeln!(w, "sequence,re_ideal,im_ideal,re_measured,im_measured")?;
        for (k, (i, m)) in ideal.iter().zip(&measured).enumerate() {
            writeln!(w, "{},{:.9e},{:.9e},{:.9e},{:.9e}", k + 1, i.re, i.im, m.re, m.im)?;
        }
    }
    json_file(dir, "thermal.json", &result, &mut out.files)?;
    out.summary = json!({
        "p_e_true": t.p_e,
        "pe_eta": result.pe_eta,
        "pe_lambda": result.pe_lambda,
        "consistent": result.consistent,
        "mean_sigma": sigma,
    });
    Ok(out)
}

/// Emission run used to check bookkeeping and invariants of a config.
pub fn invariant_check(cfg: &ExperimentConfig) -> Result<SimResult> {
    let model = build_model(cfg)?;
    let (emitter, _) = build_emitter(cfg, model.as_ref())?;
    let sim = crate::dynamics::run_protocol(
        model.as_ref(),
        &emitter.sideband,
        cfg.run.protocol,
        cfg.run.theta,
        cfg.run.phi,
        &emitter.opts,
        &emitter.evolve,
    )?;
    check_bookkeeping(&sim)?;
    Ok(sim)
}

/// Captured-mode state after `R_ge(theta, phi)` in the reference frame.
pub fn captured_state(cfg: &ExperimentConfig, theta: f64, phi: f64) -> Result<CMatrix> {
    let model = build_model(cfg)?;
    let (emitter, _) = build_emitter(cfg, model.as_ref())?;
    let filter = emitter.template()?;
    let plus = emitter.capture(FRAC_PI_2, FRAC_PI_2, &filter)?;
    let mode = emitter.capture(theta, phi, &filter)?;
    Ok(rotate_photon_phase(&mode.rho, reference_phase(&plus)))
}

/// Photonic qubit block of [`captured_state`] for each unbiased input.
pub fn captured_qubits(cfg: &ExperimentConfig) -> Result<Vec<CMatrix>> {
    let model = build_model(cfg)?;
    let (emitter, _) = build_emitter(cfg, model.as_ref())?;
    let filter = emitter.template()?;
    let modes = mub_rotations()
        .par_iter()
        .map(|&(th, ph)| emitter.capture(th, ph, &filter))
        .collect::<Result<Vec<_>>>()?;
    let phase = reference_phase(&modes[2]);
    Ok(modes.iter().map(|m| rotate_photon_phase(&photonic_qubit(m), phase)).collect())
}
