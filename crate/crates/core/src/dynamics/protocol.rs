//! Gate/flux-pulse sequences and the emission protocols built from them.

use serde::{Deserialize, Serialize};

use super::effective::EffectiveModel;
use super::flux::FluxModel;
use super::ops::{conjugate, HilbertSpec};
use super::solver::{evolve, EvolveOptions, Generator, SimResult, TimeGrid};
use crate::device::{DeviceParams, SidebandModel};
use crate::error::{Error, Result};
use crate::linalg::{c, identity, kron, CMatrix, C64, I};
use crate::pulse::{envelope_samples, EnvelopeSpec, FluxPulse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Ge,
    Ef,
}

/// Instantaneous rotation `exp(-i angle/2 (cos(phase) X + sin(phase) Y))`
/// on one qubit transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub transition: Transition,
    pub angle: f64,
    pub phase: f64,
}

impl Rotation {
    pub fn ge(angle: f64, phase: f64) -> Self {
        Self { transition: Transition::Ge, angle, phase }
    }

    pub fn ef(angle: f64, phase: f64) -> Self {
        Self { transition: Transition::Ef, angle, phase }
    }

    /// Unitary on the qubit levels only.
    pub fn qubit_unitary(&self, levels: usize) -> Result<CMatrix> {
        let (i, j) = match self.transition {
            Transition::Ge => (0, 1),
            Transition::Ef => (1, 2),
        };
        if j >= levels {
            return Err(Error::InvalidParam(format!("{:?} rotation needs 3 qubit levels", self.transition)));
        }
        let (s, co) = (0.5 * self.angle).sin_cos();
        let mut u = identity(levels);
        u[(i, i)] = c(co, 0.0);
        u[(j, j)] = c(co, 0.0);
        u[(i, j)] = -I * s * C64::from_polar(1.0, -self.phase);
        u[(j, i)] = -I * s * C64::from_polar(1.0, self.phase);
        Ok(u)
    }

    /// Unitary on one node (`qubit x resonator`).
    pub fn unitary(&self, spec: &HilbertSpec) -> Result<CMatrix> {
        Ok(kron(&self.qubit_unitary(spec.qubit_levels)?, &identity(spec.fock_dim)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Rotation(Rotation),
    FluxPulse(FluxPulse),
    Delay { duration: f64 },
}

/// Ordered, back-to-back events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub events: Vec<Event>,
}

impl PulseSequence {
    pub fn push(&mut self, e: Event) -> &mut Self {
        self.events.push(e);
        self
    }

    pub fn duration(&self) -> f64 {
        self.events
            .iter()
            .map(|e| match e {
                Event::Rotation(_) => 0.0,
                Event::FluxPulse(p) => p.duration(),
                Event::Delay { duration } => *duration,
            })
            .sum()
    }

    /// Start times of the flux pulses.
    pub fn pulse_starts(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::new();
        for e in &self.events {
            match e {
                Event::Rotation(_) => {}
                Event::FluxPulse(p) => {
                    out.push(t);
                    t += p.duration();
                }
                Event::Delay { duration } => t += duration,
            }
        }
        out
    }

    pub fn validate(&self, phi_dc: f64) -> Result<()> {
        for e in &self.events {
            match e {
                Event::FluxPulse(p) => p.validate(phi_dc)?,
                Event::Delay { duration } if !(*duration >= 0.0 && duration.is_finite()) => {
                    return Err(Error::InvalidSpec(format!("delay must be finite and >= 0, got {duration}")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// A dynamics tier that can run sequences.
pub trait Model: Sync {
    fn spec(&self) -> HilbertSpec;
    fn device(&self) -> &DeviceParams;
    fn dt(&self) -> f64;
    /// Modulation carrier for generated pulses.
    fn carrier(&self) -> f64;
    fn segment<'a>(&'a self, pulse: Option<&'a FluxPulse>, t_start: f64) -> Box<dyn Generator + 'a>;
    /// Maps a labelled state to the simulation basis at `t = 0`.
    fn prepare(&self, rho: &CMatrix) -> CMatrix;
    /// Labelled ideal gate expressed in the simulation basis at time `t`.
    fn gate(&self, u: &CMatrix, t: f64) -> CMatrix;
}

impl Model for EffectiveModel {
    fn spec(&self) -> HilbertSpec {
        self.spec
    }

    fn device(&self) -> &DeviceParams {
        &self.device
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn carrier(&self) -> f64 {
        self.carrier
    }

    fn segment<'a>(&'a self, pulse: Option<&'a FluxPulse>, t_start: f64) -> Box<dyn Generator + 'a> {
        Box::new(self.generator(pulse, t_start))
    }

    fn prepare(&self, rho: &CMatrix) -> CMatrix {
        rho.clone()
    }

    fn gate(&self, u: &CMatrix, _t: f64) -> CMatrix {
        u.clone()
    }
}

impl Model for FluxModel {
    fn spec(&self) -> HilbertSpec {
        self.spec
    }

    fn device(&self) -> &DeviceParams {
        &self.device
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn carrier(&self) -> f64 {
        FluxModel::carrier(self)
    }

    fn segment<'a>(&'a self, pulse: Option<&'a FluxPulse>, t_start: f64) -> Box<dyn Generator + 'a> {
        Box::new(self.generator(pulse, t_start))
    }

    fn prepare(&self, rho: &CMatrix) -> CMatrix {
        self.to_dressed(rho)
    }

    fn gate(&self, u: &CMatrix, t: f64) -> CMatrix {
        self.gate_at(u, t)
    }
}

/// Runs `seq` from the labelled state `rho0`.
pub fn run_sequence(model: &dyn Model, seq: &PulseSequence, rho0: &CMatrix, opts: &EvolveOptions) -> Result<SimResult> {
    seq.validate(model.device().phi_dc)?;
    let spec = model.spec();
    let mut rho = model.prepare(rho0);
    let mut t = 0.0;
    let mut out: Option<SimResult> = None;
    for e in &seq.events {
        let (pulse, duration) = match e {
            Event::Rotation(r) => {
                let u = model.gate(&r.unitary(&spec)?, t);
                let n_op = model.segment(None, t).observables().excitation.clone();
                let before = n_op.expect(&rho).re;
                rho = conjugate(&u, &rho);
                if let Some(res) = out.as_mut() {
                    res.gate_injection += n_op.expect(&rho).re - before;
                }
                continue;
            }
            Event::FluxPulse(p) => (Some(p), p.duration()),
            Event::Delay { duration } => (None, *duration),
        };
        if duration <= 0.0 {
            continue;
        }
        let gen = model.segment(pulse, t);
        let grid = TimeGrid::covering(t, duration, model.dt());
        let r = evolve(gen.as_ref(), &rho, grid, opts)?;
        rho = r.final_state.clone();
        t = grid.end();
        match out.as_mut() {
            Some(acc) => {
                if (acc.field.dt - r.field.dt).abs() > 1e-9 * acc.field.dt {
                    return Err(Error::InvalidSpec(format!(
                        "segment step {:.6e} s differs from {:.6e} s; use durations that are multiples of dt",
                        r.field.dt, acc.field.dt
                    )));
                }
                acc.append(r);
            }
            None => out = Some(r),
        }
    }
    out.ok_or_else(|| Error::InvalidSpec("sequence has no timed events".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    SingleRail,
    TimeBin,
}

/// Emission-pulse settings shared by the protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub envelope: EnvelopeSpec,
    pub chirp: bool,
    /// Constant modulation phase `theta_0`.
    pub theta_m: f64,
    /// Pulse sampling step.
    pub pulse_dt: f64,
    /// Free evolution after the last pulse.
    pub tail: f64,
}

impl ProtocolOptions {
    /// Chirped sin^2 pulse of 400 ns.
    pub fn shaped(amplitude: f64) -> Self {
        Self::new(EnvelopeSpec::sin2(amplitude, 400e-9), true)
    }

    /// Unchirped 40 ns flattop.
    pub fn unshaped(amplitude: f64) -> Self {
        Self::new(EnvelopeSpec::flattop(amplitude, 40e-9), false)
    }

    pub fn new(envelope: EnvelopeSpec, chirp: bool) -> Self {
        Self { envelope, chirp, theta_m: 0.0, pulse_dt: 0.5e-9, tail: 250e-9 }
    }
}

/// The emission pulse described by `opts`, chirped with `sideband` if asked.
pub fn emission_pulse(carrier: f64, sideband: &SidebandModel, opts: &ProtocolOptions) -> Result<FluxPulse> {
    let env = envelope_samples(&opts.envelope, opts.pulse_dt)?;
    let dt = opts.envelope.length / (env.len() - 1) as f64;
    Ok(if opts.chirp {
        FluxPulse::chirped(env, dt, carrier, opts.theta_m, |a| sideband.shift(a))
    } else {
        FluxPulse::unchirped(env, dt, carrier, opts.theta_m)
    })
}

/// Control sequence of a protocol after the qubit rotation `R_ge(theta, phi)`.
///
/// `single_rail`: rotate, emit. `time_bin`: rotate, `pi_ef`, `pi_ge`, emit,
/// `pi_ef`, emit, so the early and late bins carry the `|g>` and `|e>`
/// amplitudes.
pub fn build_protocol(
    carrier: f64,
    sideband: &SidebandModel,
    protocol: Protocol,
    theta: f64,
    phi: f64,
    opts: &ProtocolOptions,
) -> Result<PulseSequence> {
    let pulse = emission_pulse(carrier, sideband, opts)?;
    let pi = std::f64::consts::PI;
    let mut seq = PulseSequence::default();
    seq.push(Event::Rotation(Rotation::ge(theta, phi)));
    if protocol == Protocol::TimeBin {
        seq.push(Event::Rotation(Rotation::ef(pi, 0.0)));
        seq.push(Event::Rotation(Rotation::ge(pi, 0.0)));
        seq.push(Event::FluxPulse(pulse.clone()));
        seq.push(Event::Rotation(Rotation::ef(pi, 0.0)));
    }
    seq.push(Event::FluxPulse(pulse));
    if opts.tail > 0.0 {
        seq.push(Event::Delay { duration: opts.tail });
    }
    Ok(seq)
}

/// Runs a protocol from `|g, 0>`.
pub fn run_protocol(
    model: &dyn Model,
    sideband: &SidebandModel,
    protocol: Protocol,
    theta: f64,
    phi: f64,
    opts: &ProtocolOptions,
    evolve_opts: &EvolveOptions,
) -> Result<SimResult> {
    let seq = build_protocol(model.carrier(), sideband, protocol, theta, phi, opts)?;
    let rho0 = model.spec().basis_state(0, 0);
    run_sequence(model, &seq, &rho0, evolve_opts)
}

/// Photons emitted before and after `t_split`.
pub fn bin_photons(r: &SimResult, t_split: f64) -> (f64, f64) {
    let k = (((t_split - r.field.t0) / r.field.dt).round() as usize).min(r.field.len().saturating_sub(1));
    let trapz = |p: &[f64]| crate::numerics::trapz(p, r.field.dt);
    (trapz(&r.field.power[..=k]), trapz(&r.field.power[k..]))
}
