//! Parametric-modulation envelopes, chirp phase tracks and pi_e0g1
//! amplitude calibration.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cumtrapz, golden_section};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeKind {
    Flattop,
    Sin2,
    Sech,
    Custom,
}

/// Envelope family and its parameters. `length` is the total support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub kind: EnvelopeKind,
    /// Peak flux amplitude `A_AC`.
    pub amplitude: f64,
    pub length: f64,
    #[serde(default = "default_edge_sigma")]
    pub edge_sigma: f64,
    /// Defaults to `4 pi / length`.
    #[serde(default)]
    pub sech_kappa: Option<f64>,
    /// Samples spanning `[0, length]` uniformly; resampled linearly.
    #[serde(default)]
    pub custom_samples: Option<Vec<f64>>,
}

fn default_edge_sigma() -> f64 {
    2e-9
}

impl EnvelopeSpec {
    pub fn sin2(amplitude: f64, length: f64) -> Self {
        Self::new(EnvelopeKind::Sin2, amplitude, length)
    }

    pub fn flattop(amplitude: f64, length: f64) -> Self {
        Self::new(EnvelopeKind::Flattop, amplitude, length)
    }

    pub fn sech(amplitude: f64, length: f64) -> Self {
        Self::new(EnvelopeKind::Sech, amplitude, length)
    }

    pub fn new(kind: EnvelopeKind, amplitude: f64, length: f64) -> Self {
        Self {
            kind,
            amplitude,
            length,
            edge_sigma: default_edge_sigma(),
            sech_kappa: None,
            custom_samples: None,
        }
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self { amplitude, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidSpec(format!("amplitude must be >= 0, got {}", self.amplitude)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidSpec(format!("length must be > 0, got {}", self.length)));
        }
        match self.kind {
            EnvelopeKind::Flattop if !(self.edge_sigma > 0.0) => {
                Err(Error::InvalidSpec("flattop edge_sigma must be > 0".into()))
            }
            EnvelopeKind::Flattop if 6.0 * self.edge_sigma >= self.length => Err(Error::InvalidSpec(
                format!("flattop length {} too short for 3-sigma edges", self.length),
            )),
            EnvelopeKind::Custom => match &self.custom_samples {
                Some(s) if s.len() >= 2 => {
                    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
                        Err(Error::InvalidSpec("custom samples must be finite and >= 0".into()))
                    } else {
                        Ok(())
                    }
                }
                _ => Err(Error::InvalidSpec("custom envelope requires >= 2 samples".into())),
            },
            _ => Ok(()),
        }
    }

    /// Unit-peak shape at time `t` in `[0, length]`.
    fn shape(&self, t: f64) -> f64 {
        let l = self.length;
        match self.kind {
            EnvelopeKind::Sin2 => (PI * t / l).sin().max(0.0),
            EnvelopeKind::Sech => {
                let k = self.sech_kappa.unwrap_or(4.0 * PI / l);
                1.0 / (k * (t - 0.5 * l)).cosh()
            }
            EnvelopeKind::Flattop => flattop_shape(t, l, self.edge_sigma),
            EnvelopeKind::Custom => {
                let s = self.custom_samples.as_deref().unwrap_or(&[]);
                let x = (t / l).clamp(0.0, 1.0) * (s.len() - 1) as f64;
                let i = (x.floor() as usize).min(s.len() - 2);
                let f = x - i as f64;
                s[i] * (1.0 - f) + s[i + 1] * f
            }
        }
    }
}

/// Unit square on `[0, L]` convolved with a unit-area Gaussian, rescaled to
/// unit peak.
fn flattop_shape(t: f64, l: f64, sigma: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * sigma;
    let raw = |t: f64| 0.5 * (libm::erf(t / s) - libm::erf((t - l) / s));
    raw(t) / raw(0.5 * l)
}

/// Number of intervals used to sample a pulse of length `l` at step `dt`.
pub fn sample_count(l: f64, dt: f64) -> usize {
    ((l / dt).round() as usize).max(1)
}

/// Sampled envelope on `[0, L]` at `N + 1` points `k L / N`, `N = round(L/dt)`.
pub fn envelope_samples(spec: &EnvelopeSpec, dt: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(dt > 0.0) || dt > spec.length / 50.0 {
        return Err(Error::InvalidSpec(format!(
            "dt = {dt:.3e} s must be positive and <= length/50 = {:.3e} s",
            spec.length / 50.0
        )));
    }
    let n = sample_count(spec.length, dt);
    let step = spec.length / n as f64;
    let mut out: Vec<f64> = (0..=n).map(|k| spec.amplitude * spec.shape(k as f64 * step)).collect();
    if spec.kind == EnvelopeKind::Sin2 {
        out[0] = 0.0;
        out[n] = 0.0;
    }
    Ok(out)
}

/// `theta(t) = theta0 - int_0^t Delta(Phi_AC(tau)) dtau` by cumulative trapezoid.
pub fn chirp_track(envelope: &[f64], dt: f64, shift: impl Fn(f64) -> f64, theta0: f64) -> Vec<f64> {
    let d: Vec<f64> = envelope.iter().map(|&a| shift(a)).collect();
    cumtrapz(&d, dt).into_iter().map(|phase| theta0 - phase).collect()
}

/// A sampled modulation waveform ready for the dynamics engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxPulse {
    pub dt: f64,
    pub envelope: Vec<f64>,
    pub omega_m: f64,
    pub theta_track: Vec<f64>,
    /// Exact `d theta / dt` at the samples when known (chirped pulses);
    /// empty means "use finite differences of `theta_track`".
    #[serde(default)]
    pub theta_rate: Vec<f64>,
    pub t0: f64,
}

impl FluxPulse {
    /// Constant-phase pulse.
    pub fn unchirped(envelope: Vec<f64>, dt: f64, omega_m: f64, theta0: f64) -> Self {
        let theta_track = vec![theta0; envelope.len()];
        let theta_rate = vec![0.0; envelope.len()];
        Self { dt, envelope, omega_m, theta_track, theta_rate, t0: 0.0 }
    }

    /// Pulse whose phase track cancels the modulation-induced shift.
    pub fn chirped(
        envelope: Vec<f64>,
        dt: f64,
        omega_m: f64,
        theta0: f64,
        shift: impl Fn(f64) -> f64,
    ) -> Self {
        let theta_track = chirp_track(&envelope, dt, &shift, theta0);
        let theta_rate = envelope.iter().map(|&a| -shift(a)).collect();
        Self { dt, envelope, omega_m, theta_track, theta_rate, t0: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.envelope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelope.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.dt * (self.envelope.len().saturating_sub(1)) as f64
    }

    /// Envelope and phase at time `t` (relative to the pulse start), linearly
    /// interpolated; zero outside the pulse.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        let n = self.envelope.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let x = t / self.dt;
        if x < 0.0 {
            return (0.0, self.theta_track[0]);
        }
        if x >= (n - 1) as f64 {
            return (if x > (n - 1) as f64 + 1e-9 { 0.0 } else { self.envelope[n - 1] }, self.theta_track[n - 1]);
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        (
            self.envelope[i] * (1.0 - f) + self.envelope[i + 1] * f,
            self.theta_track[i] * (1.0 - f) + self.theta_track[i + 1] * f,
        )
    }

    /// Phase-track derivative at sample `k`.
    pub fn theta_rate_at(&self, k: usize) -> f64 {
        if let Some(r) = self.theta_rate.get(k) {
            return *r;
        }
        let n = self.theta_track.len();
        if n < 2 {
            return 0.0;
        }
        let k = k.min(n - 1);
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
        (self.theta_track[hi] - self.theta_track[lo]) / (self.dt * (hi - lo) as f64)
    }

    /// Adds a constant offset to the whole phase track.
    pub fn with_phase_offset(&self, phi0: f64) -> Self {
        let mut p = self.clone();
        p.theta_track.iter_mut().for_each(|t| *t += phi0);
        p
    }

    pub fn validate(&self, phi_dc: f64) -> Result<()> {
        if self.envelope.len() != self.theta_track.len() {
            return Err(Error::DimensionMismatch { expected: self.envelope.len(), got: self.theta_track.len() });
        }
        if !self.theta_rate.is_empty() && self.theta_rate.len() != self.envelope.len() {
            return Err(Error::DimensionMismatch { expected: self.envelope.len(), got: self.theta_rate.len() });
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidSpec("pulse dt must be positive".into()));
        }
        if let Some(a) = self.envelope.iter().find(|a| !((phi_dc + **a).abs() < 0.5 && (phi_dc - **a).abs() < 0.5)) {
            return Err(Error::Domain(format!("flux excursion phi_dc +/- {a} leaves (-0.5, 0.5)")));
        }
        Ok(())
    }

    /// `t, envelope, theta` as CSV.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,envelope,theta")?;
        for (k, (e, th)) in self.envelope.iter().zip(&self.theta_track).enumerate() {
            writeln!(w, "{:.12e},{:.12e},{:.12e}", self.t0 + k as f64 * self.dt, e, th)?;
        }
        Ok(())
    }
}

/// Outcome of a pi_e0g1 amplitude search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiCalibration {
    pub amplitude: f64,
    pub residual: f64,
    /// `residual < PI_RESIDUAL_TARGET`.
    pub converged: bool,
    pub evaluations: usize,
}

/// Residual excited-state population accepted as a calibrated pi_e0g1.
pub const PI_RESIDUAL_TARGET: f64 = 1e-3;

/// Golden-section search over `[lo, hi]` for the amplitude minimizing the
/// residual `P_e` reported by `simulator`. The bracket must contain a single
/// minimum; otherwise a bracket error is returned.
pub fn calibrate_pi_e0g1(
    spec: &EnvelopeSpec,
    lo: f64,
    hi: f64,
    xtol: f64,
    mut simulator: impl FnMut(&EnvelopeSpec) -> Result<f64>,
) -> Result<PiCalibration> {
    if !(0.0 <= lo && lo < hi) {
        return Err(Error::InvalidParam(format!("bad bracket [{lo}, {hi}]")));
    }
    let mut evaluations = 0;
    let (amplitude, residual) = golden_section(
        |a| {
            evaluations += 1;
            simulator(&spec.with_amplitude(a))
        },
        lo,
        hi,
        xtol,
        200,
    )?;
    if residual >= PI_RESIDUAL_TARGET {
        log::warn!("pi_e0g1 calibration best residual {residual:.3e} above target {PI_RESIDUAL_TARGET:.0e}");
    }
    Ok(PiCalibration { amplitude, residual, converged: residual < PI_RESIDUAL_TARGET, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sin2_peak_and_endpoints() {
        let e = envelope_samples(&EnvelopeSpec::sin2(0.037, 400e-9), 1e-9).unwrap();
        assert_eq!(e.len(), 401);
        assert_eq!(e[0], 0.0);
        assert_eq!(e[400], 0.0);
        assert!((e[200] - 0.037).abs() < 1e-15);
    }

    #[test]
    fn sech_endpoints_bounded() {
        let e = envelope_samples(&EnvelopeSpec::sech(1.0, 300e-9), 1e-9).unwrap();
        let bound = 1.0 / (2.0 * PI).cosh();
        assert!(e[0] <= bound + 1e-15 && e[e.len() - 1] <= bound + 1e-15);
        assert!((e[150] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flattop_rise_time_matches_erf_oracle() {
        let sigma = 2e-9;
        let l = 40e-9;
        // 10-90 % rise of an isolated erf edge, centred on t = 0.
        let expected = 2.0 * 1.281_551_565_5 * sigma;
        let spec = EnvelopeSpec::flattop(1.0, l);
        let f = |t: f64| spec.shape(t);
        let cross = |level: f64| crate::numerics::bisect(|t| f(t) - level, -0.5 * l, 0.5 * l, 1e-16, 200).unwrap();
        let rise = cross(0.9) - cross(0.1);
        assert!((rise - expected).abs() < 1e-12, "{rise:e} vs {expected:e}");
        assert!(cross(0.5).abs() < 1e-12);
        let e = envelope_samples(&spec, 0.1e-9).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-9);
        assert!((e.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn custom_requires_samples() {
        let spec = EnvelopeSpec::new(EnvelopeKind::Custom, 1.0, 100e-9);
        assert!(matches!(envelope_samples(&spec, 1e-9), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn coarse_dt_rejected() {
        assert!(envelope_samples(&EnvelopeSpec::sin2(0.01, 100e-9), 3e-9).is_err());
    }

    #[test]
    fn chirp_of_constant_envelope_is_linear() {
        let env = vec![0.02; 101];
        let th = chirp_track(&env, 1e-9, |a| -1e6 * a, 0.3);
        assert!((th[100] - 0.3 - 1e6 * 0.02 * 100e-9).abs() < 1e-12);
        let zero = chirp_track(&[0.0; 5], 1e-9, |a| 5.0 * a * a, 1.0);
        assert!(zero.iter().all(|&t| t == 1.0));
    }

    #[test]
    fn calibration_inverts_analytic_rabi() {
        // P_e = cos^2(c A): minimum at A = pi / (2c).
        let c = 40.0;
        let spec = EnvelopeSpec::sin2(0.0, 400e-9);
        let cal = calibrate_pi_e0g1(&spec, 0.0, 0.06, 1e-9, |s| Ok((c * s.amplitude).cos().powi(2))).unwrap();
        assert!(((cal.amplitude - PI / (2.0 * c)) / (PI / (2.0 * c))).abs() < 1e-4);
        assert!(cal.converged);
    }
}
