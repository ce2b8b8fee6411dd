//! Rotating-frame sideband model driven by the flux-pulse envelope.

use std::borrow::Cow;

use super::ops::{node_jumps, HilbertSpec, Jump, Observables};
use super::solver::Generator;
use crate::device::{DeviceParams, SidebandModel, SidebandWorkingPoint};
use crate::error::Result;
use crate::linalg::{c, CMatrix, C64};
use crate::pulse::FluxPulse;

/// Default integration step of the effective model.
pub const DEFAULT_EFFECTIVE_DT: f64 = 0.5e-9;

/// `H = delta(A) P_e + pull(A) (a^dag a + P_e) + |g_eff(A)| (e^{i theta} a sigma_+ + h.c.)`
/// with the `|f>` level as a spectator, plus the standard node dissipators.
#[derive(Debug, Clone)]
pub struct EffectiveModel {
    pub spec: HilbertSpec,
    pub device: DeviceParams,
    pub sideband: SidebandModel,
    /// Integration step.
    pub dt: f64,
    /// Nominal modulation carrier attached to generated pulses.
    pub carrier: f64,
    p_e: CMatrix,
    pull_op: CMatrix,
    exchange: CMatrix,
    jumps: Vec<Jump>,
    obs: Observables,
}

impl EffectiveModel {
    pub fn new(device: DeviceParams, spec: HilbertSpec, sideband: SidebandModel) -> Result<Self> {
        device.validate()?;
        spec.validate()?;
        let a = spec.a();
        let p_e = spec.qubit(1, 1);
        let pull_op = a.adjoint() * &a + &p_e;
        let exchange = &a * spec.qubit(1, 0);
        let jumps = node_jumps(&spec, &device, None);
        let obs = Observables::for_node(&spec, &a, device.kappa_c);
        let carrier = SidebandWorkingPoint::dressed(&device)?.omega_m;
        Ok(Self { spec, device, sideband, dt: DEFAULT_EFFECTIVE_DT, carrier, p_e, pull_op, exchange, jumps, obs })
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    /// Generator for a segment starting at `t_start`, driven by `pulse`
    /// (whose local time is `t - t_start`), or undriven.
    pub fn generator<'a>(&'a self, pulse: Option<&'a FluxPulse>, t_start: f64) -> EffectiveGenerator<'a> {
        EffectiveGenerator { model: self, pulse, t_start }
    }

    /// Residual detuning `delta(A_k) + theta_dot_k` at every pulse sample.
    pub fn detuning_track(&self, pulse: &FluxPulse) -> Vec<f64> {
        pulse
            .envelope
            .iter()
            .enumerate()
            .map(|(k, &a)| self.sideband.shift(a) + pulse.theta_rate_at(k))
            .collect()
    }

    /// Writes the Hamiltonian for envelope `amp` and phase `theta`.
    pub fn hamiltonian_at(&self, amp: f64, theta: f64, h: &mut CMatrix) {
        h.fill(C64::new(0.0, 0.0));
        if amp == 0.0 {
            return;
        }
        let sb = &self.sideband;
        let delta = c(sb.shift(amp), 0.0);
        let pull = c(sb.resonator_pull(amp), 0.0);
        let g = C64::from_polar(sb.coupling(amp), theta);
        let d = h.nrows();
        for j in 0..d {
            for i in 0..d {
                h[(i, j)] = delta * self.p_e[(i, j)]
                    + pull * self.pull_op[(i, j)]
                    + g * self.exchange[(i, j)]
                    + g.conj() * self.exchange[(j, i)].conj();
            }
        }
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn observables(&self) -> &Observables {
        &self.obs
    }
}

/// [`EffectiveModel`] bound to one pulse segment.
pub struct EffectiveGenerator<'a> {
    model: &'a EffectiveModel,
    pulse: Option<&'a FluxPulse>,
    t_start: f64,
}

impl Generator for EffectiveGenerator<'_> {
    fn dim(&self) -> usize {
        self.model.spec.node_dim()
    }

    fn hamiltonian(&self, t: f64, h: &mut CMatrix) {
        let (amp, theta) = self.pulse.map_or((0.0, 0.0), |p| p.sample(t - self.t_start));
        self.model.hamiltonian_at(amp, theta, h);
    }

    fn jumps(&self, _t: f64) -> Cow<'_, [Jump]> {
        Cow::Borrowed(&self.model.jumps)
    }

    fn observables(&self) -> &Observables {
        &self.model.obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::solver::{evolve, EvolveOptions, TimeGrid};
    use crate::hz;

    fn lossless_model() -> EffectiveModel {
        let device = DeviceParams::default().lossless();
        let sb = SidebandModel { coupling_slope: hz(2e6) / 0.01, shift_quad: 0.0, resonator_quad: 0.0 };
        EffectiveModel::new(device, HilbertSpec::default(), sb).unwrap()
    }

    #[test]
    fn zero_pulse_has_no_exchange() {
        let m = lossless_model();
        let mut h = CMatrix::zeros(9, 9);
        m.hamiltonian_at(0.0, 0.3, &mut h);
        assert_eq!(h.norm(), 0.0);
        m.hamiltonian_at(0.01, 0.3, &mut h);
        let spec = m.spec;
        let v = h[(spec.index(1, 0), spec.index(0, 1))];
        assert!((v - C64::from_polar(hz(2e6), 0.3)).norm() < 1e-6);
        assert!((&h - h.adjoint()).norm() < 1e-9);
    }

    #[test]
    fn chirp_cancels_detuning() {
        let m = EffectiveModel::new(
            DeviceParams::default(),
            HilbertSpec::default(),
            SidebandModel::measured(),
        )
        .unwrap();
        let env: Vec<f64> = (0..=400).map(|k| 0.037 * (std::f64::consts::PI * k as f64 / 400.0).sin()).collect();
        let sb = m.sideband;
        let p = FluxPulse::chirped(env, 1e-9, 1.0, 0.0, |a| sb.shift(a));
        assert!(m.detuning_track(&p).iter().all(|d| d.abs() < 1e-9));
    }

    #[test]
    fn constant_coupling_gives_analytic_rabi() {
        // Resonator decay off too: only |e0> <-> |g1> exchange remains.
        let mut device = DeviceParams::default().lossless();
        device.kappa_c = 1e-6;
        let g = hz(2e6);
        let sb = SidebandModel { coupling_slope: g / 0.01, shift_quad: 0.0, resonator_quad: 0.0 };
        let m = EffectiveModel::new(device, HilbertSpec::default(), sb).unwrap();
        let pulse = FluxPulse::unchirped(vec![0.01; 1001], 1e-9, 1.0, 0.0);
        let rho0 = m.spec.basis_state(1, 0);
        let grid = TimeGrid { t0: 0.0, dt: 0.5e-9, steps: 2000 };
        let r = evolve(&m.generator(Some(&pulse), 0.0), &rho0, grid, &EvolveOptions::default()).unwrap();
        for (t, pe) in r.t.iter().zip(&r.p_e) {
            assert!((pe - (g * t).cos().powi(2)).abs() < 1e-6, "t={t}");
        }
    }
}
