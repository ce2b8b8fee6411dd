//! Dense complex linear algebra helpers for small Hilbert spaces.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Bosonic annihilation operator truncated to `dim` Fock levels.
pub fn destroy(dim: usize) -> CMatrix {
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    a
}

/// `|i><j|` in a `dim`-dimensional space.
pub fn ket_bra(dim: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(i, j)] = ONE;
    m
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn dag(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// `Tr(rho * op)` without forming the product.
pub fn expect(rho: &CMatrix, op: &CMatrix) -> C64 {
    let n = rho.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += rho[(i, k)] * op[(k, i)];
        }
    }
    acc
}

/// Pure-state projector `|psi><psi|`.
pub fn projector(psi: &[C64]) -> CMatrix {
    let n = psi.len();
    CMatrix::from_fn(n, n, |i, j| psi[i] * psi[j].conj())
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Largest elementwise deviation from Hermiticity.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut err: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            err = err.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    err
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = hermitian_part(m);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    eigh(m).0.first().copied().unwrap_or(0.0)
}

/// Rebuild `V diag(f(lambda)) V^dagger`.
pub fn spectral_map(vals: &[f64], vecs: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = vecs.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &lam) in vals.iter().enumerate() {
        let w = f(lam);
        if w == 0.0 {
            continue;
        }
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += col[i] * col[j].conj() * w;
            }
        }
    }
    out
}

/// Principal square root of a positive semidefinite matrix.
pub fn sqrtm_psd(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = eigh(m);
    spectral_map(&vals, &vecs, |x| x.max(0.0).sqrt())
}

/// Euclidean projection of a real vector onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Closest density matrix (Frobenius norm) to a Hermitian matrix: the
/// eigenvalues are projected onto the simplex, so negative weight is
/// redistributed instead of merely clipped.
pub fn project_density(m: &CMatrix) -> CMatrix {
    let (vals, vecs) = eigh(m);
    let p = project_simplex(&vals);
    let n = vecs.nrows();
    let mut out = CMatrix::zeros(n, n);
    for (k, &w) in p.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += col[i] * col[j].conj() * w;
            }
        }
    }
    out
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
pub fn uhlmann_fidelity(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    if rho.nrows() != sigma.nrows() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            got: sigma.nrows(),
        });
    }
    let sr = sqrtm_psd(rho);
    let inner = &sr * sigma * &sr;
    let (vals, _) = eigh(&inner);
    let t: f64 = vals.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok((t * t).clamp(0.0, 1.0))
}

/// Checks that `rho` is a density matrix within `tol`.
pub fn validate_density(rho: &CMatrix, tol: f64) -> Result<()> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            got: rho.ncols(),
        });
    }
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::InvalidParam(format!("trace {tr} is not 1")));
    }
    let herm = hermiticity_error(rho);
    if herm > tol {
        return Err(Error::InvalidParam(format!("not Hermitian (deviation {herm:.3e})")));
    }
    let lmin = min_eigenvalue(rho);
    if lmin < -tol {
        return Err(Error::InvalidParam(format!("negative eigenvalue {lmin:.3e}")));
    }
    Ok(())
}

/// Partial trace over the second factor of a `d1 x d2` bipartite operator.
pub fn ptrace_second(m: &CMatrix, d1: usize, d2: usize) -> CMatrix {
    CMatrix::from_fn(d1, d1, |i, j| {
        (0..d2).map(|k| m[(i * d2 + k, j * d2 + k)]).sum()
    })
}

/// Partial trace over the first factor of a `d1 x d2` bipartite operator.
pub fn ptrace_first(m: &CMatrix, d1: usize, d2: usize) -> CMatrix {
    CMatrix::from_fn(d2, d2, |i, j| {
        (0..d1).map(|k| m[(k * d2 + i, k * d2 + j)]).sum()
    })
}

/// Embed a density matrix into a larger Fock space (zero padding).
pub fn embed(rho: &CMatrix, dim: usize) -> CMatrix {
    let n = rho.nrows().min(dim);
    let mut out = CMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = rho[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn destroy_commutator_is_identity_below_cutoff() {
        let a = destroy(5);
        let comm = &a * dag(&a) - dag(&a) * &a;
        for n in 0..4 {
            assert!((comm[(n, n)] - ONE).norm() < 1e-14);
        }
    }

    #[test]
    fn simplex_projection_properties() {
        let p = project_simplex(&[0.7, 0.5, -0.2]);
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        assert!(p.iter().all(|&x| x >= 0.0));
        // Already on the simplex: unchanged.
        let q = project_simplex(&[0.2, 0.3, 0.5]);
        assert!((q[0] - 0.2).abs() < 1e-15 && (q[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fidelity_of_plus_with_mixed_is_half() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = projector(&[c(s, 0.0), c(s, 0.0)]);
        let mixed = identity(2) * c(0.5, 0.0);
        let f = uhlmann_fidelity(&plus, &mixed).unwrap();
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_traces_of_product_state() {
        let a = projector(&[ONE, ZERO]);
        let b = projector(&[ZERO, ONE, ZERO]);
        let ab = kron(&a, &b);
        assert!((ptrace_second(&ab, 2, 3) - &a).norm() < 1e-15);
        assert!((ptrace_first(&ab, 2, 3) - &b).norm() < 1e-15);
    }
}
