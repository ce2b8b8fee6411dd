//! Flux-tunable transmon spectrum, longitudinal-field-modulation (LFM)
//! sidebands, effective sideband coupling and the modulation-induced
//! frequency shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bessel_j;
use crate::{hz, TAU};

/// Static parameters of one qubit–emission-resonator node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub omega_q_max: f64,
    pub e_c: f64,
    pub g_qe: f64,
    pub omega_e: f64,
    pub kappa_c: f64,
    pub kappa_i: f64,
    pub t1_ge: f64,
    pub t1_ef: f64,
    pub t2s_ge: f64,
    pub t2s_ef: f64,
    pub phi_dc: f64,
    pub flux_scale: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            omega_q_max: hz(5.997e9),
            e_c: hz(228e6),
            g_qe: hz(299.4e6),
            omega_e: hz(7.139e9),
            kappa_c: hz(5.2e6),
            kappa_i: hz(0.27e6),
            t1_ge: 5.539e-6,
            t1_ef: 2.829e-6,
            t2s_ge: 2.234e-6,
            t2s_ef: 1.068e-6,
            phi_dc: 0.04,
            flux_scale: 1.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("omega_q_max", self.omega_q_max),
            ("e_c", self.e_c),
            ("g_qe", self.g_qe),
            ("omega_e", self.omega_e),
            ("kappa_c", self.kappa_c),
            ("flux_scale", self.flux_scale),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.kappa_i.is_finite() && self.kappa_i >= 0.0) {
            return Err(Error::InvalidParam(format!("kappa_i must be >= 0, got {}", self.kappa_i)));
        }
        // Infinite lifetimes switch a channel off.
        let times = [
            ("t1_ge", self.t1_ge),
            ("t1_ef", self.t1_ef),
            ("t2s_ge", self.t2s_ge),
            ("t2s_ef", self.t2s_ef),
        ];
        for (name, v) in times {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::InvalidParam(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.phi_dc.abs() < 0.5) {
            return Err(Error::InvalidParam(format!("|phi_dc| must be < 0.5, got {}", self.phi_dc)));
        }
        if self.gamma_phi_ge() < 0.0 {
            return Err(Error::InvalidParam(format!(
                "T2*_ge = {:.3e} s exceeds 2 T1_ge = {:.3e} s (negative pure dephasing)",
                self.t2s_ge,
                2.0 * self.t1_ge
            )));
        }
        if self.gamma_phi_ef() < 0.0 {
            return Err(Error::InvalidParam(format!(
                "T2*_ef = {:.3e} s exceeds 2 T1_ef = {:.3e} s (negative pure dephasing)",
                self.t2s_ef,
                2.0 * self.t1_ef
            )));
        }
        Ok(())
    }

    /// Total resonator decay rate.
    pub fn kappa(&self) -> f64 {
        self.kappa_c + self.kappa_i
    }

    pub fn gamma_phi_ge(&self) -> f64 {
        1.0 / self.t2s_ge - 0.5 / self.t1_ge
    }

    pub fn gamma_phi_ef(&self) -> f64 {
        1.0 / self.t2s_ef - 0.5 / self.t1_ef
    }

    /// Total Josephson energy (as an angular frequency), back-computed from
    /// the sweet-spot frequency and the charging energy.
    pub fn josephson_energy_sum(&self) -> f64 {
        let k = self.omega_q_max + self.e_c;
        k * k / (8.0 * self.e_c)
    }

    /// Copy with internal loss, relaxation and dephasing switched off; the
    /// output coupling is kept.
    pub fn lossless(&self) -> Self {
        Self {
            kappa_i: 0.0,
            t1_ge: f64::INFINITY,
            t1_ef: f64::INFINITY,
            t2s_ge: f64::INFINITY,
            t2s_ef: f64::INFINITY,
            ..*self
        }
    }
}

fn check_flux(phi: f64) -> Result<()> {
    if !(phi.abs() < 0.5) {
        return Err(Error::Domain(format!(
            "flux {phi} outside (-0.5, 0.5): junction energy non-positive"
        )));
    }
    Ok(())
}

/// `omega_q(phi) = (omega_max + E_C) sqrt(cos(pi phi s)) - E_C`.
pub fn transmon_frequency(p: &DeviceParams, phi: f64) -> Result<f64> {
    check_flux(phi * p.flux_scale)?;
    let c = (std::f64::consts::PI * phi * p.flux_scale).cos();
    Ok((p.omega_q_max + p.e_c) * c.sqrt() - p.e_c)
}

/// Analytic `(d omega / d phi, d^2 omega / d phi^2)`.
pub fn flux_derivatives(p: &DeviceParams, phi: f64) -> Result<(f64, f64)> {
    check_flux(phi * p.flux_scale)?;
    let k = p.omega_q_max + p.e_c;
    let ps = std::f64::consts::PI * p.flux_scale;
    let u = ps * phi;
    let (s, c) = u.sin_cos();
    let sq = c.sqrt();
    let d1 = -k * ps * s / (2.0 * sq);
    let d2 = -k * ps * ps * (c / (2.0 * sq) + s * s / (4.0 * c * sq));
    Ok((d1, d2))
}

/// Fourier content of `omega_q(phi_dc + phi_ac cos t)` over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmDecomposition {
    /// Period-averaged qubit frequency.
    pub mean: f64,
    /// `mean - omega_q(phi_dc)`.
    pub delta_dc: f64,
    /// Cosine coefficients `A[1..=n]`; `harmonics[0]` is `A^1`.
    pub harmonics: Vec<f64>,
}

impl LfmDecomposition {
    /// `mean + sum_a A[a] cos(a t)`.
    pub fn resum(&self, t: f64) -> f64 {
        self.mean
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(a, &c)| c * ((a + 1) as f64 * t).cos())
                .sum::<f64>()
    }
}

/// Number of quadrature points per modulation period.
pub const LFM_POINTS: usize = 4096;

pub fn lfm_fourier(p: &DeviceParams, phi_dc: f64, phi_ac: f64, n_harmonics: usize) -> Result<LfmDecomposition> {
    lfm_fourier_with(p, phi_dc, phi_ac, n_harmonics, LFM_POINTS)
}

/// As [`lfm_fourier`] with an explicit (>= 1024) number of quadrature points.
pub fn lfm_fourier_with(
    p: &DeviceParams,
    phi_dc: f64,
    phi_ac: f64,
    n_harmonics: usize,
    points: usize,
) -> Result<LfmDecomposition> {
    if n_harmonics == 0 {
        return Err(Error::InvalidParam("n_harmonics must be >= 1".into()));
    }
    if points < 1024 {
        return Err(Error::InvalidParam(format!("need >= 1024 quadrature points, got {points}")));
    }
    check_flux((phi_dc.abs() + phi_ac.abs()) * p.flux_scale)?;
    let w0 = transmon_frequency(p, phi_dc)?;
    // Periodic trapezoid rule: all nodes carry equal weight.
    let step = TAU / points as f64;
    // Offsets from the static frequency keep round-off out of small shifts.
    let mut samples = Vec::with_capacity(points);
    for k in 0..points {
        let t = k as f64 * step;
        samples.push(transmon_frequency(p, phi_dc + phi_ac * t.cos())? - w0);
    }
    let delta_dc = samples.iter().sum::<f64>() / points as f64;
    let harmonics = (1..=n_harmonics)
        .map(|a| {
            2.0 / points as f64
                * samples
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| w * (a as f64 * k as f64 * step).cos())
                    .sum::<f64>()
        })
        .collect();
    Ok(LfmDecomposition { mean: w0 + delta_dc, delta_dc, harmonics })
}

/// Static flux point, modulation carrier and qubit–resonator detuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandWorkingPoint {
    pub phi_dc: f64,
    pub omega_m: f64,
    pub delta_qe: f64,
}

impl SidebandWorkingPoint {
    /// Carrier at the bare detuning, `omega_m = omega_E - omega_q(phi_dc)`.
    pub fn bare(p: &DeviceParams) -> Result<Self> {
        let delta_qe = transmon_frequency(p, p.phi_dc)? - p.omega_e;
        Ok(Self { phi_dc: p.phi_dc, omega_m: delta_qe.abs(), delta_qe })
    }

    /// Carrier at the vacuum-Rabi-split gap `sqrt(Delta_qE^2 + 4 g^2)`
    /// between the qubit-like and photon-like single-excitation states.
    pub fn dressed(p: &DeviceParams) -> Result<Self> {
        let delta_qe = transmon_frequency(p, p.phi_dc)? - p.omega_e;
        Ok(Self {
            phi_dc: p.phi_dc,
            omega_m: dressed_gap(delta_qe, p.g_qe),
            delta_qe,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_m > 0.0) {
            return Err(Error::InvalidParam(format!("omega_m must be positive, got {}", self.omega_m)));
        }
        Ok(())
    }
}

/// `sqrt(delta^2 + 4 g^2)`.
pub fn dressed_gap(delta: f64, g: f64) -> f64 {
    (delta * delta + 4.0 * g * g).sqrt()
}

/// `g_eff = g_qE J1(|A^1| / omega_m) e^{i theta_m}`.
///
/// `A^1` is negative above the sweet spot; its sign is a constant phase of
/// pi and is dropped so that `arg g_eff = theta_m`.
pub fn effective_coupling(
    p: &DeviceParams,
    wp: &SidebandWorkingPoint,
    phi_ac: f64,
    theta_m: f64,
) -> Result<num_complex::Complex64> {
    wp.validate()?;
    let a1 = lfm_fourier(p, wp.phi_dc, phi_ac, 1)?.harmonics[0];
    let mag = p.g_qe * bessel_j(1, a1.abs() / wp.omega_m);
    Ok(num_complex::Complex64::from_polar(mag, theta_m))
}

/// Small-amplitude form `g_qE phi_ac |d omega/d phi| / (2 omega_m)`.
pub fn linearized_coupling(p: &DeviceParams, wp: &SidebandWorkingPoint, phi_ac: f64) -> Result<f64> {
    wp.validate()?;
    let (d1, _) = flux_derivatives(p, wp.phi_dc)?;
    Ok(p.g_qe * phi_ac * d1.abs() / (2.0 * wp.omega_m))
}

/// `Delta = Delta_DC + Delta'_Lamb` with
/// `Delta'_Lamb = -(g^2 / Delta_qE) (A^1 / omega_m)^2`.
pub fn total_dynamic_shift(p: &DeviceParams, wp: &SidebandWorkingPoint, phi_ac: f64) -> Result<f64> {
    let (dc, lamb) = shift_components(p, wp, phi_ac)?;
    Ok(dc + lamb)
}

/// `(Delta_DC, Delta'_Lamb)` separately.
pub fn shift_components(p: &DeviceParams, wp: &SidebandWorkingPoint, phi_ac: f64) -> Result<(f64, f64)> {
    wp.validate()?;
    if wp.delta_qe == 0.0 {
        return Err(Error::Domain("Delta_qE = 0: Lamb-shift term diverges".into()));
    }
    let lfm = lfm_fourier(p, wp.phi_dc, phi_ac, 1)?;
    let x = lfm.harmonics[0] / wp.omega_m;
    let lamb = -(p.g_qe * p.g_qe / wp.delta_qe) * x * x;
    Ok((lfm.delta_dc, lamb))
}

/// Shift of the qubit-like and photon-like single-excitation levels.
///
/// The static exchange `g_qE` is diagonalized first; modulation then moves
/// the mean detuning by `Delta_DC` and renormalizes the static coupling by
/// `J0(A^1/omega_m)`. Returns `(delta, resonator_pull)`: `delta` is the change
/// of the qubit-like level relative to the photon-like one (sign chosen so a
/// chirp `theta_dot = -delta` cancels it), `resonator_pull` the change of the
/// photon-like level itself.
pub fn dressed_shift(p: &DeviceParams, wp: &SidebandWorkingPoint, phi_ac: f64) -> Result<(f64, f64)> {
    wp.validate()?;
    let lfm = lfm_fourier(p, wp.phi_dc, phi_ac, 1)?;
    let x = lfm.harmonics[0].abs() / wp.omega_m;
    let d0 = wp.delta_qe;
    let d = d0 + lfm.delta_dc;
    let g = p.g_qe * bessel_j(0, x);
    let omega0 = dressed_gap(d0, p.g_qe);
    let omega = dressed_gap(d, g);
    let delta = omega0 - omega;
    let pull = 0.5 * ((d + omega) - (d0 + omega0));
    Ok((delta, pull))
}

/// One row of an amplitude sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub amplitude: f64,
    pub g_eff: f64,
    pub shift: f64,
}

/// Linear `g_eff` and quadratic `Delta` calibration curves with residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub amplitudes: Vec<f64>,
    pub g_eff_values: Vec<f64>,
    pub shift_values: Vec<f64>,
    /// `g_eff = linear_coeff * A`.
    pub linear_coeff: f64,
    /// `Delta = quad_coeff * A^2`.
    pub quad_coeff: f64,
    pub linear_residuals: Vec<f64>,
    pub quad_residuals: Vec<f64>,
    pub linear_r2: f64,
    pub quad_r2: f64,
    /// Largest quadratic residual as a fraction of the shift range.
    pub quad_max_residual_frac: f64,
}

/// Least-squares fits through the origin: `g = c1 A` and `Delta = c2 A^2`.
pub fn fit_calibration(samples: &[CalibrationSample]) -> Result<CalibrationCurve> {
    if samples.len() < 3 {
        return Err(Error::Degenerate(format!("need >= 3 samples, got {}", samples.len())));
    }
    for w in samples.windows(2) {
        if !(w[1].amplitude > w[0].amplitude) {
            return Err(Error::Degenerate("amplitudes must be strictly increasing".into()));
        }
    }
    let amps: Vec<f64> = samples.iter().map(|s| s.amplitude).collect();
    let gs: Vec<f64> = samples.iter().map(|s| s.g_eff).collect();
    let ds: Vec<f64> = samples.iter().map(|s| s.shift).collect();
    let nonzero = amps.iter().filter(|a| **a != 0.0).count();
    if nonzero < 2 {
        return Err(Error::Degenerate("need >= 3 distinct amplitudes".into()));
    }

    let fit_origin = |basis: &dyn Fn(f64) -> f64, y: &[f64]| {
        let num: f64 = amps.iter().zip(y).map(|(&a, &y)| basis(a) * y).sum();
        let den: f64 = amps.iter().map(|&a| basis(a).powi(2)).sum();
        let c = num / den;
        let res: Vec<f64> = amps.iter().zip(y).map(|(&a, &y)| y - c * basis(a)).collect();
        (c, res)
    };
    let (linear_coeff, linear_residuals) = fit_origin(&|a| a, &gs);
    let (quad_coeff, quad_residuals) = fit_origin(&|a| a * a, &ds);

    let r2 = |y: &[f64], res: &[f64]| {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ss: f64 = res.iter().map(|r| r * r).sum();
        if tot == 0.0 {
            if ss == 0.0 { 1.0 } else { 0.0 }
        } else {
            1.0 - ss / tot
        }
    };
    let range = ds.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - ds.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_res = quad_residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let quad_max_residual_frac = if range > 0.0 { max_res / range } else { 0.0 };

    Ok(CalibrationCurve {
        linear_r2: r2(&gs, &linear_residuals),
        quad_r2: r2(&ds, &quad_residuals),
        amplitudes: amps,
        g_eff_values: gs,
        shift_values: ds,
        linear_coeff,
        quad_coeff,
        linear_residuals,
        quad_residuals,
        quad_max_residual_frac,
    })
}

/// Model-level amplitude sweep: `|g_eff|` and the perturbative shift.
pub fn sweep_model(p: &DeviceParams, wp: &SidebandWorkingPoint, amplitudes: &[f64]) -> Result<Vec<CalibrationSample>> {
    amplitudes
        .iter()
        .map(|&a| {
            Ok(CalibrationSample {
                amplitude: a,
                g_eff: effective_coupling(p, wp, a, 0.0)?.norm(),
                shift: total_dynamic_shift(p, wp, a)?,
            })
        })
        .collect()
}

/// Amplitude-to-rate map used by the effective sideband model:
/// `|g_eff| = coupling_slope * A`, `delta = shift_quad * A^2` and an optional
/// pull of the photon-like level `resonator_quad * A^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandModel {
    pub coupling_slope: f64,
    pub shift_quad: f64,
    #[serde(default)]
    pub resonator_quad: f64,
}

/// Amplitudes used to build fitted sideband models.
fn fit_amplitudes() -> Vec<f64> {
    (1..=10).map(|k| 0.005 * k as f64).collect()
}

impl SidebandModel {
    pub fn coupling(&self, amplitude: f64) -> f64 {
        self.coupling_slope * amplitude
    }

    pub fn shift(&self, amplitude: f64) -> f64 {
        self.shift_quad * amplitude * amplitude
    }

    pub fn resonator_pull(&self, amplitude: f64) -> f64 {
        self.resonator_quad * amplitude * amplitude
    }

    /// Fitted to the closed-form coupling and `Delta_DC + Delta'_Lamb` at the
    /// bare working point.
    pub fn perturbative(p: &DeviceParams) -> Result<Self> {
        let wp = SidebandWorkingPoint::bare(p)?;
        let curve = fit_calibration(&sweep_model(p, &wp, &fit_amplitudes())?)?;
        Ok(Self {
            coupling_slope: curve.linear_coeff,
            shift_quad: curve.quad_coeff,
            resonator_quad: 0.0,
        })
    }

    /// Fitted to the dressed single-excitation picture with the carrier at
    /// the dressed gap. This is the model that tracks the full flux
    /// simulation.
    pub fn dressed(p: &DeviceParams) -> Result<Self> {
        let wp = SidebandWorkingPoint::dressed(p)?;
        let amps = fit_amplitudes();
        let mut g = Vec::new();
        let mut pulls = Vec::new();
        for &a in &amps {
            let (delta, pull) = dressed_shift(p, &wp, a)?;
            g.push(CalibrationSample {
                amplitude: a,
                g_eff: effective_coupling(p, &wp, a, 0.0)?.norm(),
                shift: delta,
            });
            pulls.push(CalibrationSample { amplitude: a, g_eff: 0.0, shift: pull });
        }
        let curve = fit_calibration(&g)?;
        let pull_curve = fit_calibration(&pulls)?;
        Ok(Self {
            coupling_slope: curve.linear_coeff,
            shift_quad: curve.quad_coeff,
            resonator_quad: pull_curve.quad_coeff,
        })
    }

    /// Anchored to the measured calibration: about 20 MHz of coupling at
    /// 0.25 flux quanta and a -0.4 MHz shift at 0.037 flux quanta.
    pub fn measured() -> Self {
        Self {
            coupling_slope: hz(20e6) / 0.25,
            shift_quad: hz(-0.4e6) / (0.037 * 0.037),
            resonator_quad: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweet_spot_frequency_matches_table() {
        let p = DeviceParams::default();
        let w = transmon_frequency(&p, 0.0).unwrap();
        assert!((w - hz(5.997e9)).abs() < 1e-3);
        assert_eq!(flux_derivatives(&p, 0.0).unwrap().0, 0.0);
    }

    #[test]
    fn working_point_frequency_oracle() {
        // Closed form evaluated independently: (5.997+0.228) sqrt(cos(0.04 pi)) - 0.228 GHz
        let p = DeviceParams::default();
        let w = transmon_frequency(&p, 0.04).unwrap() / TAU;
        assert!((w - 5.972_408_434e9).abs() < 1e3, "{w}");
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let p = DeviceParams::default();
        let h = 1e-6;
        let phi = 0.04;
        let f = |x| transmon_frequency(&p, x).unwrap();
        let fd1 = (f(phi + h) - f(phi - h)) / (2.0 * h);
        let (d1, d2) = flux_derivatives(&p, phi).unwrap();
        assert!(((d1 - fd1) / d1).abs() < 1e-6);
        let h2 = 1e-4;
        let fd2 = (f(phi + h2) - 2.0 * f(phi) + f(phi - h2)) / (h2 * h2);
        assert!(((d2 - fd2) / d2).abs() < 1e-6);
    }

    #[test]
    fn domain_errors() {
        let p = DeviceParams::default();
        assert!(matches!(transmon_frequency(&p, 0.5), Err(Error::Domain(_))));
        assert!(matches!(lfm_fourier(&p, 0.3, 0.25, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn default_params_are_valid_and_dephasing_nonnegative() {
        let p = DeviceParams::default();
        p.validate().unwrap();
        assert!(p.gamma_phi_ge() > 0.0 && p.gamma_phi_ef() > 0.0);
        let bad = DeviceParams { t2s_ge: 20e-6, ..p };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn shift_signs_are_opposite() {
        let p = DeviceParams::default();
        let wp = SidebandWorkingPoint::bare(&p).unwrap();
        let (dc, lamb) = shift_components(&p, &wp, 0.03).unwrap();
        assert!(dc < 0.0 && lamb > 0.0);
        assert_eq!(total_dynamic_shift(&p, &wp, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn fit_recovers_exact_models() {
        let s: Vec<_> = [0.01, 0.02, 0.03, 0.05]
            .iter()
            .map(|&a| CalibrationSample { amplitude: a, g_eff: 3.0 * a, shift: -7.0 * a * a })
            .collect();
        let c = fit_calibration(&s).unwrap();
        assert!(((c.linear_coeff - 3.0) / 3.0).abs() < 1e-12);
        assert!(((c.quad_coeff + 7.0) / 7.0).abs() < 1e-10);
        assert!(c.linear_residuals.iter().all(|r| r.abs() < 1e-15));
        assert!(fit_calibration(&s[..2]).is_err());
    }

    #[test]
    fn measured_model_hits_anchors() {
        let m = SidebandModel::measured();
        assert!((m.coupling(0.25) - hz(20e6)).abs() < 1e-6);
        assert!((m.shift(0.037) - hz(-0.4e6)).abs() < 1e-6);
    }

    #[test]
    fn dressed_model_is_close_to_perturbative() {
        let p = DeviceParams::default();
        let pert = SidebandModel::perturbative(&p).unwrap();
        let dr = SidebandModel::dressed(&p).unwrap();
        let ratio = dr.coupling_slope / pert.coupling_slope;
        assert!(ratio > 0.8 && ratio < 1.0, "{ratio}");
        assert!(dr.shift_quad < 0.0 && pert.shift_quad < 0.0);
    }
}
