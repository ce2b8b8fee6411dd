//! Experiment configuration (TOML) and run manifests.
//!
//! Frequencies and rates in the config are ordinary Hz (the angular value
//! divided by `2 pi`); times are seconds; flux amplitudes are in flux quanta;
//! angles are radians. Every section is required, every key inside a section
//! has a default, and unknown keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detection::{NoiseModel, DEFAULT_BINS};
use crate::device::{DeviceParams, SidebandModel};
use crate::dynamics::{HilbertSpec, Protocol, ProtocolOptions};
use crate::error::{Error, Result};
use crate::pulse::{EnvelopeKind, EnvelopeSpec};
use crate::tomography::BOOTSTRAP_RESAMPLES;
use crate::{hz, TAU};

/// `[device]`: one node, frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSection {
    /// Qubit frequency at the flux sweet spot.
    pub f_q_max_hz: f64,
    /// Charging energy `E_C / h`.
    pub e_c_hz: f64,
    /// Qubit–resonator coupling `g / 2 pi`.
    pub g_qe_hz: f64,
    /// Emission-resonator frequency.
    pub f_e_hz: f64,
    pub kappa_c_hz: f64,
    pub kappa_i_hz: f64,
    pub t1_ge: f64,
    pub t1_ef: f64,
    pub t2s_ge: f64,
    pub t2s_ef: f64,
    pub phi_dc: f64,
    pub flux_scale: f64,
}

impl Default for DeviceSection {
    fn default() -> Self {
        Self::from_params(&DeviceParams::default())
    }
}

impl DeviceSection {
    pub fn from_params(p: &DeviceParams) -> Self {
        Self {
            f_q_max_hz: p.omega_q_max / TAU,
            e_c_hz: p.e_c / TAU,
            g_qe_hz: p.g_qe / TAU,
            f_e_hz: p.omega_e / TAU,
            kappa_c_hz: p.kappa_c / TAU,
            kappa_i_hz: p.kappa_i / TAU,
            t1_ge: p.t1_ge,
            t1_ef: p.t1_ef,
            t2s_ge: p.t2s_ge,
            t2s_ef: p.t2s_ef,
            phi_dc: p.phi_dc,
            flux_scale: p.flux_scale,
        }
    }

    pub fn params(&self) -> DeviceParams {
        DeviceParams {
            omega_q_max: hz(self.f_q_max_hz),
            e_c: hz(self.e_c_hz),
            g_qe: hz(self.g_qe_hz),
            omega_e: hz(self.f_e_hz),
            kappa_c: hz(self.kappa_c_hz),
            kappa_i: hz(self.kappa_i_hz),
            t1_ge: self.t1_ge,
            t1_ef: self.t1_ef,
            t2s_ge: self.t2s_ge,
            t2s_ef: self.t2s_ef,
            phi_dc: self.phi_dc,
            flux_scale: self.flux_scale,
        }
    }
}

/// `[pulse]`: emission envelope. Without `amplitude` the pulse is
/// calibrated as a `pi_e0g1` transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub kind: EnvelopeKind,
    pub amplitude: Option<f64>,
    pub length: f64,
    pub edge_sigma: f64,
    pub sech_kappa_hz: Option<f64>,
    pub custom_samples: Option<Vec<f64>>,
    /// Constant modulation phase offset.
    pub theta0: f64,
    /// Envelope sampling step.
    pub pulse_dt: f64,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            kind: EnvelopeKind::Sin2,
            amplitude: None,
            length: 400e-9,
            edge_sigma: 2e-9,
            sech_kappa_hz: None,
            custom_samples: None,
            theta0: 0.0,
            pulse_dt: 0.5e-9,
        }
    }
}

impl PulseSection {
    /// Envelope with `amplitude` (or the configured one when `None`).
    pub fn envelope(&self, amplitude: f64) -> EnvelopeSpec {
        EnvelopeSpec {
            kind: self.kind,
            amplitude,
            length: self.length,
            edge_sigma: self.edge_sigma,
            sech_kappa: self.sech_kappa_hz.map(hz),
            custom_samples: self.custom_samples.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    Effective,
    Flux,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidebandPreset {
    /// Anchored to the measured coupling and shift calibration.
    Measured,
    /// Dressed single-excitation fit of the device model.
    Dressed,
    /// Bare-basis perturbative fit of the device model.
    Perturbative,
}

/// `[sim]`: model tier, truncation and step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub model: ModelTier,
    pub sideband: SidebandPreset,
    pub dt_effective: f64,
    pub dt_flux: f64,
    pub fock_dim: usize,
    pub qubit_levels: usize,
    pub chirp_on: bool,
    /// Free evolution after the emission pulse.
    pub tail: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            model: ModelTier::Effective,
            sideband: SidebandPreset::Measured,
            dt_effective: 0.5e-9,
            dt_flux: 2e-12,
            fock_dim: 3,
            qubit_levels: 3,
            chirp_on: true,
            tail: 250e-9,
        }
    }
}

/// `[detect]`: amplifier chain and sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub gain: f64,
    pub n_noise: f64,
    /// Shots per ON and per OFF histogram.
    pub shots: u64,
    pub seed: u64,
    pub bins: usize,
    pub bootstrap: usize,
    /// Estimate the gain from a half-photon reference instead of trusting
    /// `gain`.
    pub estimate_gain: bool,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            gain: 1e4,
            n_noise: 2.78,
            shots: 1_000_000,
            seed: 1,
            bins: DEFAULT_BINS,
            bootstrap: BOOTSTRAP_RESAMPLES,
            estimate_gain: false,
        }
    }
}

/// `[run]`: what to run and where to write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub protocol: Protocol,
    /// Qubit rotation `R_ge(theta, phi)` before emission.
    pub theta: f64,
    pub phi: f64,
    /// Rotation angles swept by `sweep-rabi`.
    pub rabi_theta: Vec<f64>,
    /// Amplitudes tabulated by `device-calc`.
    pub calc_amplitudes: Vec<f64>,
    pub output_dir: PathBuf,
    /// Photon-number truncation of the reconstructed state.
    pub mle_dim: usize,
    pub wigner_half_width: f64,
    pub wigner_points: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            protocol: Protocol::SingleRail,
            theta: FRAC_PI_2,
            phi: FRAC_PI_2,
            rabi_theta: (0..=16).map(|k| k as f64 * PI / 8.0).collect(),
            calc_amplitudes: (0..=20).map(|k| 0.0025 * k as f64).collect(),
            output_dir: PathBuf::from("out"),
            mle_dim: 3,
            wigner_half_width: 2.5,
            wigner_points: 61,
        }
    }
}

/// `[pitch_catch]`: two identical nodes joined by a lossy line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchCatchSection {
    pub channel_loss: f64,
}

impl Default for PitchCatchSection {
    fn default() -> Self {
        Self { channel_loss: 0.1 }
    }
}

/// `[thermal]`: readout voltages as `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalSection {
    pub p_e: f64,
    pub v_g: [f64; 2],
    pub v_e: [f64; 2],
    pub v_f: [f64; 2],
    /// Single-shot readout noise per quadrature.
    pub readout_sigma: f64,
    pub shots_per_sequence: u64,
}

impl Default for ThermalSection {
    fn default() -> Self {
        Self {
            p_e: 0.02,
            v_g: [1.0, 0.0],
            v_e: [-0.4, 0.8],
            v_f: [-0.5, -0.7],
            readout_sigma: 0.5,
            shots_per_sequence: 100_000,
        }
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub device: DeviceSection,
    pub pulse: PulseSection,
    pub sim: SimSection,
    pub detect: DetectSection,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_catch: Option<PitchCatchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            device: DeviceSection::default(),
            pulse: PulseSection::default(),
            sim: SimSection::default(),
            detect: DetectSection::default(),
            run: RunSection::default(),
            pitch_catch: None,
            thermal: None,
        }
    }
}

impl ExperimentConfig {
    /// Strict parse followed by validation.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.device_params().validate().map_err(|e| Error::Config(format!("[device] {e}")))?;
        if let Some(a) = self.pulse.amplitude {
            self.pulse.envelope(a).validate().map_err(|e| Error::Config(format!("[pulse] {e}")))?;
        } else {
            self.pulse.envelope(0.01).validate().map_err(|e| Error::Config(format!("[pulse] {e}")))?;
        }
        if !(self.pulse.pulse_dt > 0.0 && self.pulse.pulse_dt < self.pulse.length) {
            return bad(format!("[pulse] pulse_dt must be in (0, length), got {}", self.pulse.pulse_dt));
        }
        let s = &self.sim;
        for (name, v) in [("dt_effective", s.dt_effective), ("dt_flux", s.dt_flux)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("[sim] {name} must be positive, got {v}"));
            }
        }
        if !(s.tail.is_finite() && s.tail >= 0.0) {
            return bad(format!("[sim] tail must be >= 0, got {}", s.tail));
        }
        self.hilbert_spec().validate().map_err(|e| Error::Config(format!("[sim] {e}")))?;
        self.noise_model().validate().map_err(|e| Error::Config(format!("[detect] {e}")))?;
        let d = &self.detect;
        if d.shots == 0 {
            return bad("[detect] shots must be positive".into());
        }
        if d.bins < 3 {
            return bad(format!("[detect] bins must be >= 3, got {}", d.bins));
        }
        if d.bootstrap < 2 {
            return bad(format!("[detect] bootstrap must be >= 2, got {}", d.bootstrap));
        }
        let r = &self.run;
        if !(r.theta.is_finite() && r.phi.is_finite()) || r.rabi_theta.iter().any(|t| !t.is_finite()) {
            return bad("[run] angles must be finite".into());
        }
        if r.calc_amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("[run] calc_amplitudes must be >= 0".into());
        }
        if !(2..=5).contains(&r.mle_dim) {
            return bad(format!("[run] mle_dim must be in 2..=5, got {}", r.mle_dim));
        }
        if !(r.wigner_half_width > 0.0 && r.wigner_half_width <= 3.0) || r.wigner_points < 2 {
            return bad("[run] wigner grid needs 0 < half width <= 3 and >= 2 points".into());
        }
        if let Some(pc) = &self.pitch_catch {
            if !(0.0..=1.0).contains(&pc.channel_loss) {
                return bad(format!("[pitch_catch] channel_loss must be in [0, 1], got {}", pc.channel_loss));
            }
        }
        if let Some(t) = &self.thermal {
            if !(0.0..0.5).contains(&t.p_e) {
                return bad(format!("[thermal] p_e must be in [0, 0.5), got {}", t.p_e));
            }
            if !(t.readout_sigma >= 0.0) || t.shots_per_sequence == 0 {
                return bad("[thermal] readout_sigma must be >= 0 and shots_per_sequence positive".into());
            }
        }
        Ok(())
    }

    pub fn device_params(&self) -> DeviceParams {
        self.device.params()
    }

    pub fn sideband_model(&self) -> Result<SidebandModel> {
        let p = self.device_params();
        match self.sim.sideband {
            SidebandPreset::Measured => Ok(SidebandModel::measured()),
            SidebandPreset::Dressed => SidebandModel::dressed(&p),
            SidebandPreset::Perturbative => SidebandModel::perturbative(&p),
        }
    }

    pub fn hilbert_spec(&self) -> HilbertSpec {
        HilbertSpec { qubit_levels: self.sim.qubit_levels, fock_dim: self.sim.fock_dim, node_count: 1 }
    }

    /// Protocol options with the given pulse amplitude.
    pub fn protocol_options(&self, amplitude: f64) -> ProtocolOptions {
        let mut o = ProtocolOptions::new(self.pulse.envelope(amplitude), self.sim.chirp_on);
        o.theta_m = self.pulse.theta0;
        o.pulse_dt = self.pulse.pulse_dt;
        o.tail = self.sim.tail;
        o
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::new(self.detect.gain, self.detect.n_noise, self.detect.seed)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One file written by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Provenance record written next to the artifacts of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    /// Hash of the config hash and all artifact hashes.
    pub run_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<Artifact>,
    pub versions: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

/// Name of the manifest file in a run directory.
pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    /// Hashes every listed artifact under `dir`.
    pub fn build(
        command: &str,
        config: &ExperimentConfig,
        seeds: BTreeMap<String, u64>,
        dir: &Path,
        files: &[String],
        wall_time_s: f64,
    ) -> Result<Self> {
        let config_hash = config.hash()?;
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            let data = fs::read(dir.join(f))?;
            artifacts.push(Artifact { path: f.clone(), bytes: data.len() as u64, sha256: sha256_hex(&data) });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(config_hash.as_bytes());
        for a in &artifacts {
            h.update(a.path.as_bytes());
            h.update(a.sha256.as_bytes());
        }
        let run_hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let versions = BTreeMap::from([
            ("parametric-photon".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("manifest".to_string(), "1".to_string()),
        ]);
        Ok(Self { command: command.into(), config_hash, run_hash, seeds, artifacts, versions, wall_time_s })
    }

    /// Checks that every artifact exists under `dir` with the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let data = fs::read(dir.join(&a.path))?;
            if sha256_hex(&data) != a.sha256 {
                return Err(Error::Format(format!("artifact {} does not match its manifest hash", a.path)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[device]\n[pulse]\n[sim]\n[detect]\n[run]\n";

    #[test]
    fn defaults_round_trip_device_params() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let p = cfg.device_params();
        let d = DeviceParams::default();
        assert!((p.omega_q_max - d.omega_q_max).abs() < 1e-3);
        assert!((p.kappa_c - d.kappa_c).abs() < 1e-9);
        assert_eq!(cfg.noise_model().n_noise, 2.78);
    }

    #[test]
    fn unknown_key_reports_name_and_line() {
        let text = "[device]\n[pulse]\nlenght = 4e-7\n[sim]\n[detect]\n[run]\n";
        let msg = ExperimentConfig::from_toml_str(text).unwrap_err().to_string();
        assert!(msg.contains("lenght") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn missing_section_is_a_config_error() {
        let e = ExperimentConfig::from_toml_str("[device]\n[pulse]\n[sim]\n[run]\n").unwrap_err();
        assert!(e.to_string().contains("detect"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn frequencies_are_converted_from_hz() {
        let text = "[device]\nkappa_c_hz = 1e6\n[pulse]\n[sim]\n[detect]\n[run]\n";
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!((cfg.device_params().kappa_c - TAU * 1e6).abs() < 1e-6);
    }

    #[test]
    fn toml_round_trip_and_stable_hash() {
        let cfg = ExperimentConfig { thermal: Some(ThermalSection::default()), ..Default::default() };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        let mut other = cfg.clone();
        other.detect.seed += 1;
        assert_ne!(other.hash().unwrap(), cfg.hash().unwrap());
    }
}
