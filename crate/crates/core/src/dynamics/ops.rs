use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::linalg::{c, destroy, identity, ket_bra, kron, CMatrix, C64};

/// Truncation of the qubit ⊗ resonator space (per node).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertSpec {
    pub qubit_levels: usize,
    pub fock_dim: usize,
    pub node_count: usize,
}

impl Default for HilbertSpec {
    fn default() -> Self {
        Self { qubit_levels: 3, fock_dim: 3, node_count: 1 }
    }
}

/// Largest total dimension accepted.
pub const MAX_DIM: usize = 64;

impl HilbertSpec {
    pub fn node_dim(&self) -> usize {
        self.qubit_levels * self.fock_dim
    }

    pub fn dim(&self) -> usize {
        self.node_dim().pow(self.node_count as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.qubit_levels) {
            return Err(Error::InvalidParam(format!("qubit_levels must be 2 or 3, got {}", self.qubit_levels)));
        }
        if self.fock_dim < 2 {
            return Err(Error::InvalidParam(format!("fock_dim must be >= 2, got {}", self.fock_dim)));
        }
        if !(1..=2).contains(&self.node_count) {
            return Err(Error::InvalidParam(format!("node_count must be 1 or 2, got {}", self.node_count)));
        }
        if self.dim() > MAX_DIM {
            return Err(Error::InvalidParam(format!("total dimension {} exceeds {MAX_DIM}", self.dim())));
        }
        Ok(())
    }

    /// Basis index of `|q, n>` within one node.
    pub fn index(&self, q: usize, n: usize) -> usize {
        q * self.fock_dim + n
    }

    /// Qubit operator `|i><j|` lifted to the node space.
    pub fn qubit(&self, i: usize, j: usize) -> CMatrix {
        kron(&ket_bra(self.qubit_levels, i, j), &identity(self.fock_dim))
    }

    /// Resonator annihilation operator lifted to the node space.
    pub fn a(&self) -> CMatrix {
        kron(&identity(self.qubit_levels), &destroy(self.fock_dim))
    }

    /// Ladder lowering operator `|g><e| + sqrt2 |e><f|` (without the
    /// `sqrt2` when `ladder_factor` is false).
    pub fn sigma_minus(&self, ladder_factor: bool) -> CMatrix {
        let mut s = self.qubit(0, 1);
        if self.qubit_levels > 2 {
            let w = if ladder_factor { 2f64.sqrt() } else { 1.0 };
            s += self.qubit(1, 2) * c(w, 0.0);
        }
        s
    }

    /// Excitation number `a^dag a + P_e + 2 P_f`.
    pub fn excitation_number(&self) -> CMatrix {
        let a = self.a();
        let mut n = a.adjoint() * &a + self.qubit(1, 1);
        if self.qubit_levels > 2 {
            n += self.qubit(2, 2) * c(2.0, 0.0);
        }
        n
    }

    /// Pure product state `|q, n>` as a density matrix.
    pub fn basis_state(&self, q: usize, n: usize) -> CMatrix {
        let d = self.node_dim();
        ket_bra(d, self.index(q, n), self.index(q, n))
    }
}

/// Sparse complex operator stored as `(row, col, value)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        let scale = m.iter().fold(0.0f64, |s, v| s.max(v.norm()));
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.norm() > 1e-14 * scale {
                    entries.push((i, j, v));
                }
            }
        }
        Self { dim: m.nrows(), entries }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|&(i, j, v)| (i, j, v * s)).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Tr(rho O)`.
    pub fn expect(&self, rho: &CMatrix) -> C64 {
        self.entries.iter().map(|&(i, j, v)| v * rho[(j, i)]).sum()
    }

    /// `out += O rho O^dag`.
    pub fn sandwich_add(&self, rho: &CMatrix, out: &mut CMatrix) {
        for &(a, b, x) in &self.entries {
            for &(cc, d, y) in &self.entries {
                out[(a, cc)] += x * rho[(b, d)] * y.conj();
            }
        }
    }

    /// `O^dag O` as a dense matrix.
    pub fn dag_mul_self(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &(a, b, x) in &self.entries {
            for &(cc, d, y) in &self.entries {
                if a == cc {
                    m[(b, d)] += x.conj() * y;
                }
            }
        }
        m
    }
}

/// A Lindblad jump operator with a bookkeeping label. `quanta` is the number
/// of excitations one jump removes from the system.
#[derive(Debug, Clone, PartialEq)]
pub struct Jump {
    pub op: SparseOp,
    pub label: String,
    pub quanta: f64,
}

impl Jump {
    /// `sqrt(rate) * m`, or `None` for a vanishing rate.
    pub fn new(label: &str, rate: f64, m: &CMatrix, quanta: f64) -> Option<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return None;
        }
        Some(Self { op: SparseOp::from_dense(&(m * c(rate.sqrt(), 0.0))), label: label.into(), quanta })
    }
}

/// Operators recorded along a trajectory.
#[derive(Debug, Clone)]
pub struct Observables {
    /// Output field operator, e.g. `sqrt(kappa_c) a`.
    pub field: SparseOp,
    /// Resonator photon number.
    pub number: SparseOp,
    /// Qubit level projectors `P_g, P_e, P_f` (missing levels are zero).
    pub levels: [SparseOp; 3],
    pub excitation: SparseOp,
}

impl Observables {
    /// Standard single-node observables for a given output operator.
    pub fn for_node(spec: &HilbertSpec, a: &CMatrix, kappa_c: f64) -> Self {
        let d = spec.node_dim();
        let zero = SparseOp { dim: d, entries: Vec::new() };
        let level = |q: usize| if q < spec.qubit_levels { SparseOp::from_dense(&spec.qubit(q, q)) } else { zero.clone() };
        Self {
            field: SparseOp::from_dense(&(a * c(kappa_c.sqrt(), 0.0))),
            number: SparseOp::from_dense(&(a.adjoint() * a)),
            levels: [level(0), level(1), level(2)],
            excitation: SparseOp::from_dense(&spec.excitation_number()),
        }
    }
}

/// Node dissipators: output and internal resonator loss, `T1` relaxation
/// of both qubit rungs and pure dephasing of `|e>` and `|f>`.
///
/// With `basis = Some(v)` every operator `O` is replaced by `v O v^dag`
/// (dressed-state dissipators).
pub fn node_jumps(spec: &HilbertSpec, p: &DeviceParams, basis: Option<&CMatrix>) -> Vec<Jump> {
    let tr = |m: CMatrix| match basis {
        Some(v) => v * m * v.adjoint(),
        None => m,
    };
    let a = tr(spec.a());
    let mut ops = vec![
        ("kappa_c", p.kappa_c, a.clone(), 1.0),
        ("kappa_i", p.kappa_i, a, 1.0),
        ("t1_ge", 1.0 / p.t1_ge, tr(spec.qubit(0, 1)), 1.0),
        ("phi_ge", 2.0 * p.gamma_phi_ge(), tr(spec.qubit(1, 1)), 0.0),
    ];
    if spec.qubit_levels > 2 {
        ops.push(("t1_ef", 1.0 / p.t1_ef, tr(spec.qubit(1, 2)), 1.0));
        ops.push(("phi_ef", 2.0 * p.gamma_phi_ef(), tr(spec.qubit(2, 2)), 0.0));
    }
    ops.into_iter().filter_map(|(l, r, m, q)| Jump::new(l, r, &m, q)).collect()
}

/// `U rho U^dag`.
pub fn conjugate(u: &CMatrix, rho: &CMatrix) -> CMatrix {
    u * rho * u.adjoint()
}
