//! Temporal-mode capture with a cascaded, time-dependently coupled absorber.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::ops::{Jump, Observables, SparseOp};
use super::solver::{evolve, EvolveOptions, Generator, SimResult, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{destroy, identity, kron, ptrace_first, validate_density, CMatrix, C64, I};

/// Floor on the absorbed fraction `int_0^t |u|^2` in the absorber coupling.
pub const CAPTURE_EPSILON: f64 = 1e-3;

/// Absorber state after catching mode `f`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapturedMode {
    pub filter: Vec<C64>,
    pub dt: f64,
    /// Reduced absorber density matrix as `[re, im]` rows.
    #[serde(with = "crate::io::cmatrix_serde")]
    pub rho: CMatrix,
    /// Photons that left the source through the output port.
    pub emitted: f64,
    /// Fraction of the emitted photons not held by the absorber.
    pub capture_infidelity: f64,
    pub epsilon: f64,
}

impl CapturedMode {
    pub fn mean_photons(&self) -> f64 {
        (0..self.rho.nrows()).map(|n| n as f64 * self.rho[(n, n)].re).sum()
    }
}

struct CaptureGenerator<'a> {
    source: &'a dyn Generator,
    d_src: usize,
    n_abs: usize,
    b: CMatrix,
    /// Source output operator lifted to the joint space.
    l1: CMatrix,
    src_jumps: Vec<Jump>,
    mode: Vec<C64>,
    absorbed: Vec<f64>,
    t0: f64,
    dt: f64,
    epsilon: f64,
    obs: Observables,
    h_src: std::sync::Mutex<CMatrix>,
}

impl CaptureGenerator<'_> {
    /// Absorber coupling `lambda(t) = -u(t) / sqrt(max(int_0^t |u|^2, eps))`.
    fn coupling(&self, t: f64) -> C64 {
        let x = ((t - self.t0) / self.dt).max(0.0);
        let n = self.mode.len();
        if x >= (n - 1) as f64 {
            let last = self.mode[n - 1];
            return -last / self.absorbed[n - 1].max(self.epsilon).sqrt();
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        let u = self.mode[i] * (1.0 - f) + self.mode[i + 1] * f;
        let w = self.absorbed[i] * (1.0 - f) + self.absorbed[i + 1] * f;
        -u / w.max(self.epsilon).sqrt()
    }

    fn joint_output(&self, t: f64) -> CMatrix {
        &self.l1 + &self.b * self.coupling(t)
    }
}

impl Generator for CaptureGenerator<'_> {
    fn dim(&self) -> usize {
        self.d_src * self.n_abs
    }

    fn hamiltonian(&self, t: f64, h: &mut CMatrix) {
        let mut hs = self.h_src.lock().expect("source buffer");
        self.source.hamiltonian(t, &mut hs);
        h.copy_from(&kron(&hs, &identity(self.n_abs)));
        // (L2^dag L1 - L1^dag L2) / (2i)
        let l2 = &self.b * self.coupling(t);
        let x = l2.adjoint() * &self.l1;
        *h += (&x - x.adjoint()) * (-0.5 * I);
    }

    fn jumps(&self, t: f64) -> Cow<'_, [Jump]> {
        let mut j = self.src_jumps.clone();
        j.push(Jump { op: SparseOp::from_dense(&self.joint_output(t)), label: "output".into(), quanta: 1.0 });
        Cow::Owned(j)
    }

    fn time_dependent_jumps(&self) -> bool {
        true
    }

    fn observables(&self) -> &Observables {
        &self.obs
    }
}

/// Runs `source` from `rho0` over `grid` with an absorber catching the mode
/// `u = conj(f)` of the output field; `f` is sampled on `grid` and must be
/// normalized (`int |f|^2 dt = 1`).
pub fn capture_mode(
    source: &dyn Generator,
    rho0: &CMatrix,
    filter: &[C64],
    grid: TimeGrid,
    absorber_dim: usize,
    opts: &EvolveOptions,
) -> Result<(CapturedMode, SimResult)> {
    if filter.len() != grid.steps + 1 {
        return Err(Error::DimensionMismatch { expected: grid.steps + 1, got: filter.len() });
    }
    let norm = crate::numerics::trapz(&filter.iter().map(|x| x.norm_sqr()).collect::<Vec<_>>(), grid.dt);
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParam(format!("filter not normalized: int |f|^2 = {norm:.8}")));
    }
    if absorber_dim < 2 {
        return Err(Error::InvalidParam("absorber needs at least 2 levels".into()));
    }
    let d = source.dim();
    let n = absorber_dim;
    let id_abs = identity(n);
    let lift = |m: &CMatrix| kron(m, &id_abs);
    let src_obs = source.observables();
    let l1 = lift(&src_obs.field.to_dense());
    let b = kron(&identity(d), &destroy(n));
    let src_jumps: Vec<Jump> = source
        .jumps(grid.t0)
        .iter()
        .filter(|j| j.label != "kappa_c")
        .map(|j| Jump { op: SparseOp::from_dense(&lift(&j.op.to_dense())), label: j.label.clone(), quanta: j.quanta })
        .collect();
    if source.time_dependent_jumps() {
        return Err(Error::InvalidParam("capture requires a source with static jumps".into()));
    }
    let mode: Vec<C64> = filter.iter().map(|x| x.conj()).collect();
    let absorbed = crate::numerics::cumtrapz(&mode.iter().map(|x| x.norm_sqr()).collect::<Vec<_>>(), grid.dt);
    let levels = src_obs.levels.clone().map(|l| SparseOp::from_dense(&lift(&l.to_dense())));
    let excitation = lift(&src_obs.excitation.to_dense()) + b.adjoint() * &b;
    let obs = Observables {
        field: SparseOp::from_dense(&l1),
        number: SparseOp::from_dense(&(b.adjoint() * &b)),
        levels,
        excitation: SparseOp::from_dense(&excitation),
    };
    let gen = CaptureGenerator {
        source,
        d_src: d,
        n_abs: n,
        b,
        l1,
        src_jumps,
        mode,
        absorbed,
        t0: grid.t0,
        dt: grid.dt,
        epsilon: CAPTURE_EPSILON,
        obs,
        h_src: std::sync::Mutex::new(CMatrix::zeros(d, d)),
    };
    let mut vac = CMatrix::zeros(n, n);
    vac[(0, 0)] = C64::new(1.0, 0.0);
    let joint0 = kron(rho0, &vac);
    let sim = evolve(&gen, &joint0, grid, opts)?;
    let rho = ptrace_first(&sim.final_state, d, n);
    validate_density(&rho, 1e-6)?;
    let emitted = sim.field.photon_number();
    let captured: f64 = (0..n).map(|k| k as f64 * rho[(k, k)].re).sum();
    let capture_infidelity = if emitted > 1e-12 { (1.0 - captured / emitted).max(0.0) } else { 0.0 };
    Ok((
        CapturedMode { filter: filter.to_vec(), dt: grid.dt, rho, emitted, capture_infidelity, epsilon: CAPTURE_EPSILON },
        sim,
    ))
}
