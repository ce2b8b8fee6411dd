//! Full flux-modulated Jaynes–Cummings model in the frame rotating at the
//! emission-resonator frequency.

use std::borrow::Cow;
use std::f64::consts::PI;

use super::ops::{node_jumps, HilbertSpec, Jump, Observables};
use super::solver::Generator;
use crate::device::{transmon_frequency, DeviceParams};
use crate::error::{Error, Result};
use crate::linalg::{c, eigh, CMatrix, C64};
use crate::pulse::FluxPulse;

/// Bare Hamiltonian, its dressed eigenbasis and dressed-state dissipators.
///
/// Dressed states carry the label of the bare state they connect to
/// adiabatically, so `dressed.column(index(q, n))` is `|q, n>~`. Output
/// field, populations and collapse operators act on dressed labels; the
/// recorded field is demodulated at the photon-like level `|g, 1>~`.
#[derive(Debug, Clone)]
pub struct FluxModel {
    pub spec: HilbertSpec,
    pub device: DeviceParams,
    pub dt: f64,
    h0: CMatrix,
    modulation: Vec<f64>,
    dressed: CMatrix,
    energies: Vec<f64>,
    omega_q_dc: f64,
    jumps: Vec<Jump>,
    obs: Observables,
}

impl FluxModel {
    pub fn new(device: DeviceParams, spec: HilbertSpec, dt: f64) -> Result<Self> {
        device.validate()?;
        spec.validate()?;
        let wq = transmon_frequency(&device, device.phi_dc)?;
        let det = wq - device.omega_e;
        let a = spec.a();
        let sm = spec.sigma_minus(true);
        let mut h0 = a.adjoint() * &sm + a * sm.adjoint();
        h0 *= c(device.g_qe, 0.0);
        h0 += spec.qubit(1, 1) * c(det, 0.0);
        let mut modulation = vec![0.0; spec.node_dim()];
        for n in 0..spec.fock_dim {
            modulation[spec.index(1, n)] = 1.0;
        }
        if spec.qubit_levels > 2 {
            h0 += spec.qubit(2, 2) * c(2.0 * det - device.e_c, 0.0);
            for n in 0..spec.fock_dim {
                modulation[spec.index(2, n)] = 2.0;
            }
        }
        let (dressed, energies) = label_eigenbasis(&h0)?;
        let jumps = node_jumps(&spec, &device, Some(&dressed));
        let a_dressed = &dressed * spec.a() * dressed.adjoint();
        let mut obs = Observables::for_node(&spec, &a_dressed, device.kappa_c);
        for (q, level) in obs.levels.iter_mut().enumerate().take(spec.qubit_levels) {
            *level = super::ops::SparseOp::from_dense(&(&dressed * spec.qubit(q, q) * dressed.adjoint()));
        }
        let model = Self { spec, device, dt, h0, modulation, dressed, energies, omega_q_dc: wq, jumps, obs };
        if !(dt > 0.0) || dt > model.dt_limit() {
            return Err(Error::TimestepTooCoarse { dt, limit: model.dt_limit() });
        }
        Ok(model)
    }

    /// Gap between the qubit-like `|e,0>~` and photon-like `|g,1>~` levels,
    /// the resonant modulation carrier.
    pub fn carrier(&self) -> f64 {
        let s = &self.spec;
        self.energies[s.index(0, 1)] - self.energies[s.index(1, 0)]
    }

    /// Frame frequency of the photon-like level.
    pub fn demodulation(&self) -> f64 {
        self.energies[self.spec.index(0, 1)]
    }

    /// Largest step resolving the carrier: `2 pi / (40 omega_m)`.
    pub fn dt_limit(&self) -> f64 {
        2.0 * PI / (40.0 * self.carrier())
    }

    /// Columns are the labelled dressed states in the bare basis.
    pub fn dressed_basis(&self) -> &CMatrix {
        &self.dressed
    }

    /// Dressed energies indexed by bare label.
    pub fn dressed_energies(&self) -> &[f64] {
        &self.energies
    }

    /// Maps a bare-label operator or state to the dressed basis.
    pub fn to_dressed(&self, m: &CMatrix) -> CMatrix {
        &self.dressed * m * self.dressed.adjoint()
    }

    /// Ideal gate `u` (in labels, interaction frame) applied at lab time `t`.
    pub fn gate_at(&self, u: &CMatrix, t: f64) -> CMatrix {
        let d = self.energies.len();
        let mut m = u.clone();
        for j in 0..d {
            for i in 0..d {
                m[(i, j)] *= C64::from_polar(1.0, -(self.energies[i] - self.energies[j]) * t);
            }
        }
        self.to_dressed(&m)
    }

    pub fn generator<'a>(&'a self, pulse: Option<&'a FluxPulse>, t_start: f64) -> FluxGenerator<'a> {
        FluxGenerator { model: self, pulse, t_start }
    }

    pub fn observables(&self) -> &Observables {
        &self.obs
    }

    /// Qubit frequency shift from the working point at flux `phi`.
    fn frequency_offset(&self, phi: f64) -> f64 {
        let p = &self.device;
        let k = p.omega_q_max + p.e_c;
        k * (PI * phi * p.flux_scale).cos().sqrt() - p.e_c - self.omega_q_dc
    }
}

/// Eigenvectors of `h`, each assigned to the bare basis state it overlaps
/// most, with phases fixed so the labelled component is real positive.
fn label_eigenbasis(h: &CMatrix) -> Result<(CMatrix, Vec<f64>)> {
    let (vals, vecs) = eigh(h);
    let d = vals.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(d * d);
    for k in 0..d {
        for i in 0..d {
            pairs.push((vecs[(i, k)].norm_sqr(), i, k));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut label_of = vec![usize::MAX; d];
    let mut used = vec![false; d];
    for (w, i, k) in pairs {
        if label_of[k] == usize::MAX && !used[i] {
            if w < 0.5 {
                return Err(Error::Degenerate(format!(
                    "dressed state {k} has no dominant bare component (max weight {w:.3})"
                )));
            }
            label_of[k] = i;
            used[i] = true;
        }
    }
    let mut dressed = CMatrix::zeros(d, d);
    let mut energies = vec![0.0; d];
    for k in 0..d {
        let i = label_of[k];
        let ph = vecs[(i, k)].conj() / vecs[(i, k)].norm();
        for r in 0..d {
            dressed[(r, i)] = vecs[(r, k)] * ph;
        }
        energies[i] = vals[k];
    }
    Ok((dressed, energies))
}

/// [`FluxModel`] bound to one segment.
pub struct FluxGenerator<'a> {
    model: &'a FluxModel,
    pulse: Option<&'a FluxPulse>,
    t_start: f64,
}

impl Generator for FluxGenerator<'_> {
    fn dim(&self) -> usize {
        self.model.spec.node_dim()
    }

    fn hamiltonian(&self, t: f64, h: &mut CMatrix) {
        let m = self.model;
        h.copy_from(&m.h0);
        if let Some(p) = self.pulse {
            let (amp, theta) = p.sample(t - self.t_start);
            if amp != 0.0 {
                let phi = m.device.phi_dc + amp * (p.omega_m * t + theta).cos();
                let dw = m.frequency_offset(phi);
                for (i, w) in m.modulation.iter().enumerate() {
                    h[(i, i)] += c(w * dw, 0.0);
                }
            }
        }
    }

    fn jumps(&self, _t: f64) -> Cow<'_, [Jump]> {
        Cow::Borrowed(&self.model.jumps)
    }

    fn observables(&self) -> &Observables {
        &self.model.obs
    }

    fn field_phase(&self, t: f64) -> C64 {
        C64::from_polar(1.0, self.model.demodulation() * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{dressed_gap, SidebandWorkingPoint};
    use crate::dynamics::solver::{evolve, EvolveOptions, TimeGrid};

    #[test]
    fn carrier_is_dressed_gap() {
        let p = DeviceParams::default();
        let m = FluxModel::new(p, HilbertSpec::default(), 2e-12).unwrap();
        let wp = SidebandWorkingPoint::dressed(&p).unwrap();
        assert!((m.carrier() - wp.omega_m).abs() < 1e-9 * wp.omega_m);
        assert!((m.carrier() - dressed_gap(wp.delta_qe, p.g_qe)).abs() < 1.0);
        let v = m.dressed_basis();
        assert!((v.adjoint() * v - CMatrix::identity(9, 9)).norm() < 1e-10);
    }

    #[test]
    fn coarse_step_rejected() {
        let r = FluxModel::new(DeviceParams::default(), HilbertSpec::default(), 50e-12);
        assert!(matches!(r, Err(Error::TimestepTooCoarse { .. })));
    }

    #[test]
    fn static_flux_decays_at_t1() {
        let p = DeviceParams::default();
        let m = FluxModel::new(p, HilbertSpec::default(), 10e-12).unwrap();
        let rho0 = m.to_dressed(&m.spec.basis_state(1, 0));
        let grid = TimeGrid::covering(0.0, 100e-9, 10e-12);
        let r = evolve(&m.generator(None, 0.0), &rho0, grid, &EvolveOptions::default()).unwrap();
        let t = r.t.last().unwrap();
        assert!((r.p_e.last().unwrap() - (-t / p.t1_ge).exp()).abs() < 1e-6);
        let g = p.g_qe / (transmon_frequency(&p, p.phi_dc).unwrap() - p.omega_e);
        let bare_a = m.spec.a();
        let n_bare = crate::linalg::expect(&r.final_state, &(bare_a.adjoint() * &bare_a)).re;
        assert!(n_bare < g * g + 0.01);
    }
}
