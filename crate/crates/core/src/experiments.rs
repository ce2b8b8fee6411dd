//! End-to-end runners composing the device, pulse, dynamics, detection and
//! tomography layers.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use crate::device::SidebandModel;
use crate::dynamics::{
    capture_mode, emission_pulse, evolve, run_protocol, CapturedMode, EvolveOptions, Model, Protocol,
    ProtocolOptions, Rotation, SimResult, TimeGrid,
};
use crate::error::Result;
use crate::field::template_from_halfphoton;
use crate::linalg::{CMatrix, C64};
use crate::pulse::{calibrate_pi_e0g1, FluxPulse, PiCalibration};
use crate::tomography::{mub_states, qpt, ChiMatrix};

/// Residual `P_e` at the end of the emission pulse starting from `|e, 0>`.
pub fn pi_residual(
    model: &dyn Model,
    sideband: &SidebandModel,
    opts: &ProtocolOptions,
    amplitude: f64,
    evolve_opts: &EvolveOptions,
) -> Result<f64> {
    let mut o = opts.clone();
    o.envelope.amplitude = amplitude;
    let pulse = emission_pulse(model.carrier(), sideband, &o)?;
    pulse.validate(model.device().phi_dc)?;
    let gen = model.segment(Some(&pulse), 0.0);
    let rho0 = model.prepare(&model.spec().basis_state(1, 0));
    let r = evolve(gen.as_ref(), &rho0, TimeGrid::covering(0.0, pulse.duration(), model.dt()), evolve_opts)?;
    Ok(*r.p_e.last().expect("non-empty trajectory"))
}

/// Amplitude scan for the first local residual minimum, then golden-section
/// refinement inside the neighbouring bracket.
pub fn calibrate_emission(
    model: &dyn Model,
    sideband: &SidebandModel,
    opts: &ProtocolOptions,
    evolve_opts: &EvolveOptions,
) -> Result<PiCalibration> {
    let a_max = (0.45 - model.device().phi_dc.abs()).min(0.3);
    let step = 0.0025;
    let mut prev = (0.0, 1.0);
    let mut cur = (step, pi_residual(model, sideband, opts, step, evolve_opts)?);
    let mut bracket = None;
    while cur.0 + step <= a_max {
        let a = cur.0 + step;
        let next = (a, pi_residual(model, sideband, opts, a, evolve_opts)?);
        if cur.1 <= prev.1 && cur.1 <= next.1 {
            bracket = Some((prev.0, next.0));
            break;
        }
        prev = cur;
        cur = next;
    }
    let (lo, hi) = bracket.unwrap_or((prev.0, cur.0));
    calibrate_pi_e0g1(&opts.envelope, lo, hi, 1e-7, |spec| {
        pi_residual(model, sideband, opts, spec.amplitude, evolve_opts)
    })
}

/// A calibrated emitter: model, sideband calibration and pulse settings.
pub struct Emitter<'a> {
    pub model: &'a dyn Model,
    pub sideband: SidebandModel,
    pub opts: ProtocolOptions,
    pub evolve: EvolveOptions,
}

/// Absorber truncation used when capturing single-rail emission.
pub const ABSORBER_DIM: usize = 3;

impl<'a> Emitter<'a> {
    /// Emitter whose pulse amplitude is set by [`calibrate_emission`].
    pub fn calibrated(
        model: &'a dyn Model,
        sideband: SidebandModel,
        mut opts: ProtocolOptions,
        evolve: EvolveOptions,
    ) -> Result<(Self, PiCalibration)> {
        let cal = calibrate_emission(model, &sideband, &opts, &evolve)?;
        opts.envelope.amplitude = cal.amplitude;
        Ok((Self { model, sideband, opts, evolve }, cal))
    }

    pub fn pulse(&self) -> Result<FluxPulse> {
        emission_pulse(self.model.carrier(), &self.sideband, &self.opts)
    }

    /// Single-rail emission after `R_ge(theta, phi)`.
    pub fn emit(&self, theta: f64, phi: f64) -> Result<SimResult> {
        run_protocol(self.model, &self.sideband, Protocol::SingleRail, theta, phi, &self.opts, &self.evolve)
    }

    /// Matched filter from the `(|0> + |1>)/sqrt(2)` emission.
    pub fn template(&self) -> Result<Vec<C64>> {
        template_from_halfphoton(&self.emit(FRAC_PI_2, FRAC_PI_2)?.field)
    }

    /// Emits after `R_ge(theta, phi)` and catches the mode `conj(filter)` in
    /// a cascaded absorber.
    pub fn capture(&self, theta: f64, phi: f64, filter: &[C64]) -> Result<CapturedMode> {
        Ok(self.capture_full(theta, phi, filter)?.0)
    }

    /// As [`Emitter::capture`], also returning the joint trajectory.
    pub fn capture_full(&self, theta: f64, phi: f64, filter: &[C64]) -> Result<(CapturedMode, SimResult)> {
        let pulse = self.pulse()?;
        pulse.validate(self.model.device().phi_dc)?;
        let spec = self.model.spec();
        let u = Rotation::ge(theta, phi).unitary(&spec)?;
        let g0 = spec.basis_state(0, 0);
        let rho0 = self.model.prepare(&(&u * g0 * u.adjoint()));
        let gen = self.model.segment(Some(&pulse), 0.0);
        let grid = TimeGrid::covering(0.0, pulse.duration() + self.opts.tail, self.model.dt());
        capture_mode(gen.as_ref(), &rho0, filter, grid, ABSORBER_DIM, &self.evolve)
    }
}

/// The `{|0>, |1>}` block of a captured mode.
pub fn photonic_qubit(mode: &CapturedMode) -> CMatrix {
    mode.rho.view((0, 0), (2, 2)).into_owned()
}

/// Rotation taking `|g>` to each of the six unbiased qubit states, in the
/// order of [`mub_states`].
pub fn mub_rotations() -> [(f64, f64); 6] {
    [(0.0, 0.0), (PI, 0.0), (FRAC_PI_2, FRAC_PI_2), (FRAC_PI_2, -FRAC_PI_2), (FRAC_PI_2, PI), (FRAC_PI_2, 0.0)]
}

/// Rotates a mode state by `exp(-i phase n)`.
pub fn rotate_photon_phase(rho: &CMatrix, phase: f64) -> CMatrix {
    CMatrix::from_fn(rho.nrows(), rho.ncols(), |m, n| {
        rho[(m, n)] * C64::from_polar(1.0, -phase * (m as f64 - n as f64))
    })
}

/// Photon-frame phase that maps the captured `(|0> + |1>)/sqrt(2)` coherence
/// onto the positive real axis.
pub fn reference_phase(plus: &CapturedMode) -> f64 {
    plus.rho[(1, 0)].arg()
}

/// Emission-channel process tomography: six input states, captured with
/// `filter`, expressed in the photon frame fixed by the `|+>` input.
pub fn emission_qpt(emitter: &Emitter, filter: &[C64]) -> Result<(ChiMatrix, Vec<CMatrix>)> {
    let modes = mub_rotations()
        .par_iter()
        .map(|&(theta, phi)| emitter.capture(theta, phi, filter))
        .collect::<Result<Vec<_>>>()?;
    let phase = reference_phase(&modes[2]);
    let outputs: Vec<CMatrix> = modes.iter().map(|m| rotate_photon_phase(&photonic_qubit(m), phase)).collect();
    let outputs: Vec<CMatrix> = outputs.iter().map(|r| r / crate::linalg::trace(r)).collect();
    Ok((qpt(&mub_states(), &outputs)?, outputs))
}
