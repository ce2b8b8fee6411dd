use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::ops::{Jump, Observables};
use crate::error::{Error, Result};
use crate::field::FieldRecord;
use crate::linalg::{hermiticity_error, min_eigenvalue, trace, CMatrix, C64, I, ONE};

/// Time-dependent Lindblad generator.
pub trait Generator: Sync {
    fn dim(&self) -> usize;

    /// Writes `H(t)` (rad/s) into `h`, overwriting it.
    fn hamiltonian(&self, t: f64, h: &mut CMatrix);

    /// Jump operators at time `t`.
    fn jumps(&self, t: f64) -> Cow<'_, [Jump]>;

    /// Whether [`Generator::jumps`] depends on `t`.
    fn time_dependent_jumps(&self) -> bool {
        false
    }

    fn observables(&self) -> &Observables;

    /// Phase applied to the recorded output field (demodulation).
    fn field_phase(&self, _t: f64) -> C64 {
        ONE
    }
}

/// Uniform time grid `t0 + k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Grid covering `[t0, t0 + duration]` with step close to `dt_max`.
    pub fn covering(t0: f64, duration: f64, dt_max: f64) -> Self {
        let steps = ((duration / dt_max - 1e-9).ceil() as usize).max(1);
        Self { t0, dt: duration / steps as f64, steps }
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.dt * self.steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Invariant check interval in steps (the final step is always checked).
    pub check_every: usize,
    /// Store `rho` every this many steps.
    pub store_every: Option<usize>,
    pub trace_tol: f64,
    pub hermiticity_tol: f64,
    pub positivity_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            check_every: 250,
            store_every: None,
            trace_tol: 1e-6,
            hermiticity_tol: 1e-8,
            positivity_tol: 1e-6,
        }
    }
}

/// Worst invariant deviations seen at the checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InvariantStats {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub checks: usize,
}

impl InvariantStats {
    fn merge(&mut self, o: &Self) {
        self.max_trace_error = self.max_trace_error.max(o.max_trace_error);
        self.max_hermiticity_error = self.max_hermiticity_error.max(o.max_hermiticity_error);
        self.min_eigenvalue = self.min_eigenvalue.min(o.min_eigenvalue);
        self.checks += o.checks;
    }
}

/// Integrated `<L^dag L>` of one dissipation channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelIntegral {
    pub label: String,
    pub quanta: f64,
    pub integral: f64,
}

/// Trajectory of one simulation run.
#[derive(Debug, Clone)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub field: FieldRecord,
    pub p_g: Vec<f64>,
    pub p_e: Vec<f64>,
    pub p_f: Vec<f64>,
    pub n_res: Vec<f64>,
    pub excitation: Vec<f64>,
    pub channels: Vec<ChannelIntegral>,
    pub final_state: CMatrix,
    pub trajectory: Vec<(f64, CMatrix)>,
    pub stats: InvariantStats,
    /// Net excitation added by instantaneous gates.
    pub gate_injection: f64,
}

impl SimResult {
    /// Appends a later segment; the shared boundary sample is kept once.
    pub fn append(&mut self, mut o: SimResult) {
        let skip = usize::from(!self.t.is_empty());
        self.t.extend(o.t.drain(..).skip(skip));
        self.field.amps.extend(o.field.amps.drain(..).skip(skip));
        self.field.power.extend(o.field.power.drain(..).skip(skip));
        self.p_g.extend(o.p_g.drain(..).skip(skip));
        self.p_e.extend(o.p_e.drain(..).skip(skip));
        self.p_f.extend(o.p_f.drain(..).skip(skip));
        self.n_res.extend(o.n_res.drain(..).skip(skip));
        self.excitation.extend(o.excitation.drain(..).skip(skip));
        for ch in o.channels {
            match self.channels.iter_mut().find(|c| c.label == ch.label) {
                Some(c) => c.integral += ch.integral,
                None => self.channels.push(ch),
            }
        }
        self.trajectory.extend(o.trajectory);
        self.stats.merge(&o.stats);
        self.gate_injection += o.gate_injection;
        self.final_state = o.final_state;
    }

    /// Relative mismatch of the excitation balance
    /// `N(0) + gates = N(T) + sum quanta * int <L^dag L>`.
    pub fn bookkeeping_error(&self) -> f64 {
        let n0 = self.excitation.first().copied().unwrap_or(0.0);
        let n1 = self.excitation.last().copied().unwrap_or(0.0);
        let lost: f64 = self.channels.iter().map(|c| c.quanta * c.integral).sum();
        let input = n0 + self.gate_injection;
        let err = (input - n1 - lost).abs();
        if input.abs() > 1e-12 { err / input.abs() } else { err }
    }

    pub fn channel(&self, label: &str) -> f64 {
        self.channels.iter().find(|c| c.label == label).map_or(0.0, |c| c.integral)
    }

    pub fn duration(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

struct Workspace {
    h: CMatrix,
    k: CMatrix,
    kr: CMatrix,
    static_ldl: Option<CMatrix>,
    static_jumps: Option<Vec<Jump>>,
}

impl Workspace {
    fn new(g: &dyn Generator) -> Self {
        let d = g.dim();
        let (static_ldl, static_jumps) = if g.time_dependent_jumps() {
            (None, None)
        } else {
            let jumps = g.jumps(0.0).into_owned();
            (Some(sum_ldl(d, &jumps)), Some(jumps))
        };
        Self {
            h: CMatrix::zeros(d, d),
            k: CMatrix::zeros(d, d),
            kr: CMatrix::zeros(d, d),
            static_ldl,
            static_jumps,
        }
    }

    /// `out = L(rho)` at time `t`.
    fn rhs(&mut self, g: &dyn Generator, t: f64, rho: &CMatrix, out: &mut CMatrix) {
        g.hamiltonian(t, &mut self.h);
        let dyn_jumps;
        let (ldl, jumps): (Cow<CMatrix>, &[Jump]) = match (&self.static_ldl, &self.static_jumps) {
            (Some(l), Some(j)) => (Cow::Borrowed(l), j.as_slice()),
            _ => {
                dyn_jumps = g.jumps(t).into_owned();
                (Cow::Owned(sum_ldl(g.dim(), &dyn_jumps)), dyn_jumps.as_slice())
            }
        };
        // K = H - (i/2) sum L^dag L; d rho = -i K rho + i (K rho)^dag + sum L rho L^dag
        self.k.copy_from(&self.h);
        self.k.zip_apply(ldl.as_ref(), |k, l| *k -= I * l * 0.5);
        self.k.mul_to(rho, &mut self.kr);
        let d = rho.nrows();
        for j in 0..d {
            for i in 0..d {
                out[(i, j)] = -I * self.kr[(i, j)] + I * self.kr[(j, i)].conj();
            }
        }
        for jump in jumps {
            jump.op.sandwich_add(rho, out);
        }
    }
}

fn sum_ldl(d: usize, jumps: &[Jump]) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for j in jumps {
        m += j.op.dag_mul_self();
    }
    m
}

fn check_invariants(t: f64, rho: &CMatrix, opts: &EvolveOptions, stats: &mut InvariantStats) -> Result<()> {
    let tr = trace(rho);
    let terr = (tr - ONE).norm();
    let herr = hermiticity_error(rho);
    let lmin = min_eigenvalue(rho);
    stats.max_trace_error = stats.max_trace_error.max(terr);
    stats.max_hermiticity_error = stats.max_hermiticity_error.max(herr);
    stats.min_eigenvalue = stats.min_eigenvalue.min(lmin);
    stats.checks += 1;
    if !terr.is_finite() || terr > opts.trace_tol {
        return Err(Error::Invariant { t, what: format!("trace drift {terr:.3e}") });
    }
    if herr > opts.hermiticity_tol {
        return Err(Error::Invariant { t, what: format!("Hermiticity deviation {herr:.3e}") });
    }
    if lmin < -opts.positivity_tol {
        return Err(Error::Invariant { t, what: format!("negative eigenvalue {lmin:.3e}") });
    }
    Ok(())
}

struct Recorder {
    result: SimResult,
    ldl_cache: Vec<(String, f64, CMatrix)>,
    last_rates: Vec<f64>,
    dt: f64,
}

impl Recorder {
    fn record(&mut self, g: &dyn Generator, t: f64, rho: &CMatrix) {
        let obs = g.observables();
        let r = &mut self.result;
        r.t.push(t);
        let field = obs.field.expect(rho) * g.field_phase(t);
        r.field.amps.push(field);
        let fdf = {
            let mut s = C64::new(0.0, 0.0);
            for &(a, b, x) in &obs.field.entries {
                for &(cc, d, y) in &obs.field.entries {
                    if a == cc {
                        s += x.conj() * y * rho[(d, b)];
                    }
                }
            }
            s.re
        };
        r.field.power.push(fdf);
        r.p_g.push(obs.levels[0].expect(rho).re);
        r.p_e.push(obs.levels[1].expect(rho).re);
        r.p_f.push(obs.levels[2].expect(rho).re);
        r.n_res.push(obs.number.expect(rho).re);
        r.excitation.push(obs.excitation.expect(rho).re);

        if g.time_dependent_jumps() || self.ldl_cache.is_empty() {
            self.ldl_cache = g
                .jumps(t)
                .iter()
                .map(|j| (j.label.clone(), j.quanta, j.op.dag_mul_self()))
                .collect();
        }
        let rates: Vec<f64> = self
            .ldl_cache
            .iter()
            .map(|(_, _, m)| crate::linalg::expect(rho, m).re)
            .collect();
        if r.channels.is_empty() {
            r.channels = self
                .ldl_cache
                .iter()
                .map(|(l, q, _)| ChannelIntegral { label: l.clone(), quanta: *q, integral: 0.0 })
                .collect();
        } else {
            for (k, rate) in rates.iter().enumerate() {
                let prev = self.last_rates.get(k).copied().unwrap_or(*rate);
                if let Some(ch) = r.channels.get_mut(k) {
                    ch.integral += 0.5 * self.dt * (prev + rate);
                }
            }
        }
        self.last_rates = rates;
    }
}

/// `out = x + a y`.
fn axpy_to(out: &mut CMatrix, x: &CMatrix, a: C64, y: &CMatrix) {
    for ((o, x), y) in out.iter_mut().zip(x.iter()).zip(y.iter()) {
        *o = x + a * y;
    }
}

/// Fixed-step RK4 integration of the Lindblad equation.
pub fn evolve(g: &dyn Generator, rho0: &CMatrix, grid: TimeGrid, opts: &EvolveOptions) -> Result<SimResult> {
    let d = g.dim();
    if rho0.nrows() != d || rho0.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: rho0.nrows() });
    }
    if !(grid.dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be positive, got {}", grid.dt)));
    }
    let mut stats = InvariantStats { min_eigenvalue: f64::INFINITY, ..Default::default() };
    check_invariants(grid.t0, rho0, opts, &mut stats)?;

    let mut rec = Recorder {
        result: SimResult {
            t: Vec::with_capacity(grid.steps + 1),
            field: FieldRecord::empty(grid.t0, grid.dt),
            p_g: Vec::new(),
            p_e: Vec::new(),
            p_f: Vec::new(),
            n_res: Vec::new(),
            excitation: Vec::new(),
            channels: Vec::new(),
            final_state: rho0.clone(),
            trajectory: Vec::new(),
            stats: InvariantStats::default(),
            gate_injection: 0.0,
        },
        ldl_cache: Vec::new(),
        last_rates: Vec::new(),
        dt: grid.dt,
    };

    let mut ws = Workspace::new(g);
    let mut rho = rho0.clone();
    let mut k1 = CMatrix::zeros(d, d);
    let mut k2 = CMatrix::zeros(d, d);
    let mut k3 = CMatrix::zeros(d, d);
    let mut k4 = CMatrix::zeros(d, d);
    let mut tmp = CMatrix::zeros(d, d);
    let h = grid.dt;
    let half = C64::new(0.5 * h, 0.0);

    rec.record(g, grid.t0, &rho);
    if opts.store_every.is_some() {
        rec.result.trajectory.push((grid.t0, rho.clone()));
    }
    for step in 0..grid.steps {
        let t = grid.t0 + step as f64 * h;
        ws.rhs(g, t, &rho, &mut k1);
        axpy_to(&mut tmp, &rho, half, &k1);
        ws.rhs(g, t + 0.5 * h, &tmp, &mut k2);
        axpy_to(&mut tmp, &rho, half, &k2);
        ws.rhs(g, t + 0.5 * h, &tmp, &mut k3);
        axpy_to(&mut tmp, &rho, C64::new(h, 0.0), &k3);
        ws.rhs(g, t + h, &tmp, &mut k4);
        let w = h / 6.0;
        for ((((r, a), b), cc), dd) in rho.iter_mut().zip(k1.iter()).zip(k2.iter()).zip(k3.iter()).zip(k4.iter()) {
            *r += (a + (b + cc) * 2.0 + dd) * w;
        }
        let t_next = grid.t0 + (step + 1) as f64 * h;
        rec.record(g, t_next, &rho);
        if (step + 1) % opts.check_every.max(1) == 0 || step + 1 == grid.steps {
            check_invariants(t_next, &rho, opts, &mut stats)?;
        }
        if let Some(every) = opts.store_every {
            if (step + 1) % every.max(1) == 0 || step + 1 == grid.steps {
                rec.result.trajectory.push((t_next, rho.clone()));
            }
        }
    }
    let mut result = rec.result;
    result.final_state = rho;
    result.stats = stats;
    Ok(result)
}
