//! Moment-based state and process tomography: histogram moments, noise
//! deconvolution, Wigner functions, maximum-likelihood density matrices,
//! fidelities, `g2(0)`, chi-matrix process tomography and the closed-form
//! transfer and thermal-population estimates.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::Histogram2D;
use crate::error::{Error, Result};
use crate::linalg::{
    dag, destroy, expect, hermitian_part, identity, min_eigenvalue, project_density,
    uhlmann_fidelity, validate_density, CMatrix, C64, I, ONE, ZERO,
};
use crate::numerics::{gauss_legendre, laguerre};

/// Highest total order `n + m` of the moments `<(a^dag)^n a^m>`.
pub const MOMENT_ORDER: usize = 4;
/// Bootstrap resamples used for moment standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Lower bound on the moment errors entering the likelihood.
pub const DELTA_FLOOR: f64 = 1e-4;

/// Index of `(n, m)` in moment arrays, ordered by total order then `n`.
pub fn moment_index(n: usize, m: usize) -> usize {
    let k = n + m;
    k * (k + 1) / 2 + n
}

/// All `(n, m)` with `n + m <= MOMENT_ORDER`, in storage order.
pub fn moment_pairs() -> Vec<(usize, usize)> {
    (0..=MOMENT_ORDER).flat_map(|k| (0..=k).map(move |n| (n, k - n))).collect()
}

fn moment_count() -> usize {
    moment_index(0, MOMENT_ORDER + 1)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Moments `<(X^dag)^n X^m>` of one mode with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    /// `(n, m)` label of each entry.
    pub pairs: Vec<(usize, usize)>,
    pub values: Vec<C64>,
    pub errors: Vec<f64>,
    pub shots: u64,
    /// Bootstrap replicates of `values`, when available.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicates: Vec<Vec<C64>>,
}

impl MomentSet {
    /// Moments of the state `rho` (exact, zero errors).
    pub fn from_state(rho: &CMatrix) -> Self {
        let d = rho.nrows();
        let values = moment_pairs().iter().map(|&(n, m)| expect(rho, &normal_op(d, n, m))).collect();
        Self::exact(values)
    }

    fn exact(values: Vec<C64>) -> Self {
        Self { pairs: moment_pairs(), errors: vec![0.0; values.len()], values, shots: 0, replicates: Vec::new() }
    }

    pub fn get(&self, n: usize, m: usize) -> C64 {
        self.values[moment_index(n, m)]
    }

    pub fn error(&self, n: usize, m: usize) -> f64 {
        self.errors[moment_index(n, m)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != moment_count() || self.errors.len() != moment_count() || self.pairs != moment_pairs() {
            return Err(Error::Format(format!("moment set must hold all orders n + m <= {MOMENT_ORDER}")));
        }
        if self.errors.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Format("moment errors must be >= 0".into()));
        }
        Ok(())
    }

    /// Same data with the stored amplitude scale divided by `sqrt(gain)`.
    pub fn rescaled(&self, gain: f64) -> Self {
        let f = |k: usize| gain.powf(-0.5 * (self.pairs[k].0 + self.pairs[k].1) as f64);
        let scale = |v: &[C64]| v.iter().enumerate().map(|(k, z)| z * f(k)).collect::<Vec<_>>();
        Self {
            pairs: self.pairs.clone(),
            values: scale(&self.values),
            errors: self.errors.iter().enumerate().map(|(k, e)| e * f(k)).collect(),
            shots: self.shots,
            replicates: self.replicates.iter().map(|r| scale(r)).collect(),
        }
    }
}

/// Truncated `(a^dag)^n a^m` in dimension `d`.
pub fn normal_op(d: usize, n: usize, m: usize) -> CMatrix {
    let a = destroy(d);
    let ad = dag(&a);
    let mut out = identity(d);
    for _ in 0..m {
        out = &a * out;
    }
    for _ in 0..n {
        out = &ad * out;
    }
    out
}

/// Per-cell monomials `conj(z)^n z^m` for `n <= m` and cell weights.
fn cell_monomials(hist: &Histogram2D) -> (Vec<[C64; 15]>, Vec<u64>) {
    let pairs = moment_pairs();
    let mut mono = Vec::new();
    let mut counts = Vec::new();
    for i in 0..hist.n_re() {
        for j in 0..hist.n_im() {
            let c = hist.counts[i * hist.n_im() + j];
            if c == 0 {
                continue;
            }
            let z = hist.center(i, j);
            let mut row = [ZERO; 15];
            for (k, &(n, m)) in pairs.iter().enumerate() {
                if n <= m {
                    row[k] = z.conj().powu(n as u32) * z.powu(m as u32);
                }
            }
            mono.push(row);
            counts.push(c);
        }
    }
    (mono, counts)
}

fn weighted_moments(mono: &[[C64; 15]], weights: impl Iterator<Item = u64>) -> Vec<C64> {
    let pairs = moment_pairs();
    let mut acc = [ZERO; 15];
    let mut total = 0u64;
    for (row, w) in mono.iter().zip(weights) {
        if w == 0 {
            continue;
        }
        total += w;
        for k in 0..15 {
            acc[k] += row[k] * w as f64;
        }
    }
    let mut out = vec![ZERO; 15];
    for (k, &(n, m)) in pairs.iter().enumerate() {
        if n <= m {
            out[k] = acc[k] / total as f64;
            out[moment_index(m, n)] = out[k].conj();
        }
    }
    out
}

/// Bin-centre moments of `sqrt(G) S` scaled by `G^{-(n+m)/2}`, without errors.
/// Off-grid samples are excluded.
pub fn histogram_moments(hist: &Histogram2D, gain: f64) -> Result<MomentSet> {
    let (mono, counts) = cell_monomials(hist);
    if counts.is_empty() {
        return Err(Error::Degenerate("empty histogram".into()));
    }
    let mut m = MomentSet::exact(weighted_moments(&mono, counts.iter().copied()));
    m.shots = hist.shots;
    Ok(m.rescaled(gain))
}

/// Histogram moments with multinomial-bootstrap standard errors
/// (`resamples` replicates, each from its own ChaCha20 stream of `seed`).
pub fn raw_moments(hist: &Histogram2D, gain: f64, resamples: usize, seed: u64) -> Result<MomentSet> {
    let (mono, counts) = cell_monomials(hist);
    if counts.is_empty() {
        return Err(Error::Degenerate("empty histogram".into()));
    }
    let total: u64 = counts.iter().sum();
    let replicates: Vec<Vec<C64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut left = total;
            let mut mass = total;
            let draws = counts.iter().map(|&c| {
                let k = if left == 0 {
                    0
                } else if c == mass {
                    left
                } else {
                    Binomial::new(left, c as f64 / mass as f64).expect("valid probability").sample(&mut rng)
                };
                left -= k;
                mass -= c;
                k
            });
            let draws: Vec<u64> = draws.collect();
            weighted_moments(&mono, draws.into_iter())
        })
        .collect();
    let values = weighted_moments(&mono, counts.iter().copied());
    let errors = spread(&values, &replicates);
    let m = MomentSet { pairs: moment_pairs(), values, errors, shots: hist.shots, replicates };
    Ok(m.rescaled(gain))
}

/// Sample standard deviation of the replicates around their own mean.
fn spread(values: &[C64], replicates: &[Vec<C64>]) -> Vec<f64> {
    let r = replicates.len();
    if r < 2 {
        return vec![0.0; values.len()];
    }
    (0..values.len())
        .map(|k| {
            let mean: C64 = replicates.iter().map(|v| v[k]).sum::<C64>() / r as f64;
            (replicates.iter().map(|v| (v[k] - mean).norm_sqr()).sum::<f64>() / (r - 1) as f64).sqrt()
        })
        .collect()
}

/// Solves `<(S^dag)^n S^m> = sum C(n,i) C(m,j) <(a^dag)^i a^j> <h^{n-i} (h^dag)^{m-j}>`
/// for the signal moments, with noise moments read from `off`.
pub fn solve_signal_moments(on: &MomentSet, off: &MomentSet) -> MomentSet {
    MomentSet::exact(invert_noise(&on.values, &off.values))
}

fn invert_noise(on: &[C64], off: &[C64]) -> Vec<C64> {
    let mut a = vec![ZERO; on.len()];
    a[0] = ONE;
    for k in 1..=MOMENT_ORDER {
        for n in 0..=k / 2 {
            let m = k - n;
            let mut s = on[moment_index(n, m)];
            for i in 0..=n {
                for j in 0..=m {
                    if i == n && j == m {
                        continue;
                    }
                    s -= binom(n, i) * binom(m, j) * a[moment_index(i, j)] * off[moment_index(n - i, m - j)];
                }
            }
            a[moment_index(n, m)] = s;
            a[moment_index(m, n)] = s.conj();
        }
    }
    a
}

/// Signal moments from ON and OFF moments. Errors come from applying the
/// inversion to paired bootstrap replicates when both sets carry them, and
/// from first-order propagation of independent errors otherwise.
pub fn extract_signal_moments(on: &MomentSet, off: &MomentSet) -> Result<MomentSet> {
    on.validate()?;
    off.validate()?;
    let values = invert_noise(&on.values, &off.values);
    let (errors, replicates) = if !on.replicates.is_empty() && on.replicates.len() == off.replicates.len() {
        let reps: Vec<Vec<C64>> = on.replicates.iter().zip(&off.replicates).map(|(a, b)| invert_noise(a, b)).collect();
        (spread(&values, &reps), reps)
    } else {
        (propagate_errors(on, off, &values), Vec::new())
    };
    Ok(MomentSet { pairs: moment_pairs(), values, errors, shots: on.shots, replicates })
}

fn propagate_errors(on: &MomentSet, off: &MomentSet, a: &[C64]) -> Vec<f64> {
    let mut var = vec![0.0; a.len()];
    for k in 1..=MOMENT_ORDER {
        for n in 0..=k {
            let m = k - n;
            let mut v = on.errors[moment_index(n, m)].powi(2);
            for i in 0..=n {
                for j in 0..=m {
                    if i == n && j == m {
                        continue;
                    }
                    let c2 = (binom(n, i) * binom(m, j)).powi(2);
                    let h = moment_index(n - i, m - j);
                    let s = moment_index(i, j);
                    v += c2 * (off.values[h].norm_sqr() * var[s] + a[s].norm_sqr() * off.errors[h].powi(2));
                }
            }
            var[moment_index(n, m)] = v;
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

/// Rectangular phase-space grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl WignerGrid {
    /// `points` equally spaced values per axis on `[-half, half]`.
    pub fn square(half: f64, points: usize) -> Self {
        let axis: Vec<f64> = (0..points).map(|k| -half + 2.0 * half * k as f64 / (points - 1) as f64).collect();
        Self { re: axis.clone(), im: axis }
    }

    fn validate(&self) -> Result<()> {
        let bound = |v: &[f64]| v.iter().all(|x| x.abs() <= 3.0 + 1e-12);
        if self.re.is_empty() || self.im.is_empty() || !bound(&self.re) || !bound(&self.im) {
            return Err(Error::InvalidParam("Wigner grid must be non-empty with |alpha| components <= 3".into()));
        }
        Ok(())
    }
}

/// Wigner function sampled on a grid, `values[i_re * n_im + i_im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WignerMap {
    pub grid: WignerGrid,
    pub values: Vec<f64>,
}

impl WignerMap {
    pub fn at(&self, i_re: usize, i_im: usize) -> f64 {
        self.values[i_re * self.grid.im.len() + i_im]
    }

    /// Trapezoid integral over the grid (requires uniform axes).
    pub fn integral(&self) -> f64 {
        let (nr, ni) = (self.grid.re.len(), self.grid.im.len());
        if nr < 2 || ni < 2 {
            return 0.0;
        }
        let dx = self.grid.re[1] - self.grid.re[0];
        let dy = self.grid.im[1] - self.grid.im[0];
        let w = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let mut s = 0.0;
        for i in 0..nr {
            for j in 0..ni {
                s += w(i, nr) * w(j, ni) * self.at(i, j);
            }
        }
        s * dx * dy
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Long-format CSV `re,im,w`.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> Result<()> {
        writeln!(w, "re,im,w")?;
        for (i, x) in self.grid.re.iter().enumerate() {
            for (j, y) in self.grid.im.iter().enumerate() {
                writeln!(w, "{x:?},{y:?},{:?}", self.at(i, j))?;
            }
        }
        Ok(())
    }
}

/// Half width of the characteristic-function integration domain.
const LAMBDA_CUTOFF: f64 = 6.0;

fn wigner_quadrature(moments: &MomentSet, grid: &WignerGrid, nodes: usize) -> Vec<f64> {
    let (x, w) = gauss_legendre(nodes);
    let x: Vec<f64> = x.iter().map(|t| t * LAMBDA_CUTOFF).collect();
    let w: Vec<f64> = w.iter().map(|t| t * LAMBDA_CUTOFF).collect();
    let pairs = moment_pairs();
    let coef: Vec<C64> = pairs.iter().map(|&(n, m)| moments.get(n, m) / (factorial(n) * factorial(m))).collect();
    // Weighted Wigner characteristic function at the nodes, c[j, k] at lambda = x_j + i x_k.
    let c = CMatrix::from_fn(nodes, nodes, |j, k| {
        let lam = C64::new(x[j], x[k]);
        let mut s = ZERO;
        for (&(n, m), a) in pairs.iter().zip(&coef) {
            s += a * (-lam.conj()).powu(m as u32) * lam.powu(n as u32);
        }
        s * (-0.5 * lam.norm_sqr()).exp() * w[j] * w[k]
    });
    // exp(alpha lambda^* - alpha^* lambda) = exp(2i (Im(alpha) x - Re(alpha) y)).
    let ex = CMatrix::from_fn(grid.im.len(), nodes, |b, j| C64::from_polar(1.0, 2.0 * grid.im[b] * x[j]));
    let ey = CMatrix::from_fn(grid.re.len(), nodes, |a, k| C64::from_polar(1.0, -2.0 * grid.re[a] * x[k]));
    let t = &ex * &c; // [b, k]
    let wmat = &ey * t.transpose(); // [a, b]
    let mut out = Vec::with_capacity(grid.re.len() * grid.im.len());
    for a in 0..grid.re.len() {
        for b in 0..grid.im.len() {
            out.push(wmat[(a, b)].re / (PI * PI));
        }
    }
    out
}

/// Wigner function from normally ordered moments by Gauss-Legendre quadrature
/// of the characteristic-function integral over `|lambda| <= 6`.
/// Normalized so that `int W d^2 alpha = 1` and `W_vac(0) = 2 / pi`.
pub fn wigner_from_moments(moments: &MomentSet, grid: &WignerGrid) -> Result<WignerMap> {
    moments.validate()?;
    grid.validate()?;
    let coarse = wigner_quadrature(moments, grid, 64);
    let fine = wigner_quadrature(moments, grid, 128);
    let change = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if change > 1e-3 {
        log::warn!("Wigner quadrature not converged: doubling nodes changed values by {change:.2e}");
    }
    Ok(WignerMap { grid: grid.clone(), values: fine })
}

/// Wigner function of a density matrix from the displaced-parity matrix
/// elements of `|m><n|` (Laguerre form).
pub fn wigner_from_rho(rho: &CMatrix, grid: &WignerGrid) -> Result<WignerMap> {
    grid.validate()?;
    let d = rho.nrows();
    let mut values = Vec::with_capacity(grid.re.len() * grid.im.len());
    for &xr in &grid.re {
        for &xi in &grid.im {
            let alpha = C64::new(xr, xi);
            let r2 = alpha.norm_sqr();
            let g = (-2.0 * r2).exp();
            let mut s = ZERO;
            for m in 0..d {
                for n in 0..=m {
                    let k = m - n;
                    let elem = (2.0 / PI)
                        * if n % 2 == 0 { 1.0 } else { -1.0 }
                        * (factorial(n) / factorial(m)).sqrt()
                        * g
                        * laguerre(n, k as f64, 4.0 * r2);
                    let wmn = (2.0 * alpha.conj()).powu(k as u32) * elem;
                    s += rho[(m, n)] * wmn;
                    if m != n {
                        s += rho[(n, m)] * wmn.conj();
                    }
                }
            }
            values.push(s.re);
        }
    }
    Ok(WignerMap { grid: grid.clone(), values })
}

/// Maximum-likelihood density matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixEstimate {
    #[serde(with = "crate::io::cmatrix_serde")]
    pub rho: CMatrix,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub delta_floor: f64,
}

const MLE_MAX_ITER: usize = 100_000;

/// Maximizes `L = -sum |M_nm - Tr(rho (a^dag)^n a^m)|^2 / delta_nm^2` over
/// density matrices of dimension `dim` by projected gradient ascent with
/// adaptive (halving / growing) steps.
pub fn mle_state(moments: &MomentSet, dim: usize) -> Result<DensityMatrixEstimate> {
    moments.validate()?;
    if !(1..=5).contains(&dim) {
        return Err(Error::InvalidParam(format!("MLE dimension {dim} outside 1..=5")));
    }
    let terms: Vec<(CMatrix, C64, f64)> = moment_pairs()
        .into_iter()
        .filter(|&p| p != (0, 0))
        .map(|(n, m)| {
            let d = moments.error(n, m).max(DELTA_FLOOR);
            (normal_op(dim, n, m), moments.get(n, m), 1.0 / (d * d))
        })
        .collect();
    let loglik = |rho: &CMatrix| -> f64 {
        terms.iter().map(|(op, v, w)| w * (v - expect(rho, op)).norm_sqr()).sum::<f64>() * -1.0
    };
    let gradient = |rho: &CMatrix| -> CMatrix {
        let mut g = CMatrix::zeros(dim, dim);
        for (op, v, w) in &terms {
            let r = v - expect(rho, op);
            g += (op * r.conj() + op.adjoint() * r) * C64::new(*w, 0.0);
        }
        g
    };
    let lipschitz: f64 = terms.iter().map(|(op, _, w)| 2.0 * w * op.norm_squared()).sum();
    let mut step = 1.0 / lipschitz.max(1e-300);
    let mut rho = identity(dim) / C64::new(dim as f64, 0.0);
    let mut l = loglik(&rho);
    let mut small = 0;
    let mut rejected = 0;
    let mut last_change = f64::INFINITY;
    for it in 1..=MLE_MAX_ITER {
        let trial = project_density(&hermitian_part(&(&rho + gradient(&rho) * C64::new(step, 0.0))));
        let lt = loglik(&trial);
        if lt >= l {
            last_change = lt - l;
            rho = trial;
            l = lt;
            step *= 1.5;
            rejected = 0;
            small = if last_change < 1e-10 { small + 1 } else { 0 };
        } else {
            step *= 0.5;
            rejected += 1;
        }
        if small >= 10 || rejected >= 60 {
            return Ok(DensityMatrixEstimate { rho, log_likelihood: l, iterations: it, converged: true, delta_floor: DELTA_FLOOR });
        }
    }
    log::warn!("MLE did not converge in {MLE_MAX_ITER} iterations (last |dL| = {last_change:.3e})");
    Ok(DensityMatrixEstimate { rho, log_likelihood: l, iterations: MLE_MAX_ITER, converged: false, delta_floor: DELTA_FLOOR })
}

/// `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2` for two density matrices.
pub fn state_fidelity(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    if rho.nrows() != sigma.nrows() {
        return Err(Error::DimensionMismatch { expected: rho.nrows(), got: sigma.nrows() });
    }
    validate_density(rho, 1e-6)?;
    validate_density(sigma, 1e-6)?;
    uhlmann_fidelity(rho, sigma)
}

/// `g2(0) = <a^dag a^dag a a> / <a^dag a>^2` with propagated standard error.
pub fn g2_zero(moments: &MomentSet) -> Result<(f64, f64)> {
    let n = moments.get(1, 1).re;
    if !(n > 0.0) {
        return Err(Error::Degenerate(format!("g2 requires <a^dag a> > 0, got {n:e}")));
    }
    let n2 = moments.get(2, 2).re;
    let g = n2 / (n * n);
    let err = ((moments.error(2, 2) / (n * n)).powi(2) + (2.0 * n2 * moments.error(1, 1) / n.powi(3)).powi(2)).sqrt();
    Ok((g, err))
}

/// Operator basis `{I, X, Y, Z}`.
pub fn pauli_basis() -> [CMatrix; 4] {
    let m = |a: [C64; 4]| CMatrix::from_row_slice(2, 2, &a);
    [
        identity(2),
        m([ZERO, ONE, ONE, ZERO]),
        m([ZERO, -I, I, ZERO]),
        m([ONE, ZERO, ZERO, -ONE]),
    ]
}

/// The six mutually unbiased qubit states `|0>, |1>, |+>, |->, |+i>, |-i>`.
pub fn mub_states() -> [CMatrix; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let ket = |a: C64, b: C64| crate::linalg::projector(&[a, b]);
    let r = |x: f64| C64::new(x, 0.0);
    [
        ket(ONE, ZERO),
        ket(ZERO, ONE),
        ket(r(s), r(s)),
        ket(r(s), r(-s)),
        ket(r(s), I * s),
        ket(r(s), -I * s),
    ]
}

/// `E(rho) = sum chi_mn A_m rho A_n^dag`.
pub fn apply_chi(chi: &CMatrix, rho: &CMatrix) -> CMatrix {
    let p = pauli_basis();
    let mut out = CMatrix::zeros(2, 2);
    for m in 0..4 {
        for n in 0..4 {
            out += &p[m] * rho * p[n].adjoint() * chi[(m, n)];
        }
    }
    out
}

/// Process chi matrix with projection diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiMatrix {
    #[serde(with = "crate::io::cmatrix_serde")]
    pub chi: CMatrix,
    /// Smallest eigenvalue of the unconstrained inversion.
    pub raw_min_eigenvalue: f64,
    /// `|| sum chi_mn A_n^dag A_m - I ||_F` before projection.
    pub raw_tp_deviation: f64,
    /// Frobenius distance moved by the projection.
    pub projection_distance: f64,
}

fn tp_deviation(chi: &CMatrix) -> f64 {
    let p = pauli_basis();
    let mut s = CMatrix::zeros(2, 2);
    for m in 0..4 {
        for n in 0..4 {
            s += p[n].adjoint() * &p[m] * chi[(m, n)];
        }
    }
    (s - identity(2)).norm()
}

/// Least-squares chi matrix from input/output qubit density matrices,
/// followed by projection onto positive, unit-trace chi.
pub fn qpt(inputs: &[CMatrix], outputs: &[CMatrix]) -> Result<ChiMatrix> {
    if inputs.len() != outputs.len() || inputs.is_empty() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: outputs.len() });
    }
    for r in inputs.iter().chain(outputs) {
        if r.nrows() != 2 || r.ncols() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: r.nrows() });
        }
    }
    for r in outputs {
        validate_density(r, 1e-6)?;
    }
    let p = pauli_basis();
    let rows = 4 * inputs.len();
    let mut a = CMatrix::zeros(rows, 16);
    let mut b = CMatrix::zeros(rows, 1);
    for (k, (rin, rout)) in inputs.iter().zip(outputs).enumerate() {
        for m in 0..4 {
            for n in 0..4 {
                let t = &p[m] * rin * p[n].adjoint();
                for e in 0..4 {
                    a[(4 * k + e, 4 * m + n)] = t[(e / 2, e % 2)];
                }
            }
        }
        for e in 0..4 {
            b[(4 * k + e, 0)] = rout[(e / 2, e % 2)];
        }
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank < 16 {
        return Err(Error::Degenerate(format!("inputs are not informationally complete (rank {rank} < 16)")));
    }
    let x = svd.solve(&b, 1e-12 * smax).map_err(|e| Error::Degenerate(e.to_string()))?;
    let raw = CMatrix::from_fn(4, 4, |m, n| x[(4 * m + n, 0)]);
    let herm = hermitian_part(&raw);
    let chi = project_density(&herm);
    Ok(ChiMatrix {
        raw_min_eigenvalue: min_eigenvalue(&herm),
        raw_tp_deviation: tp_deviation(&raw),
        projection_distance: (&chi - &raw).norm(),
        chi,
    })
}

/// Identity-process chi matrix `diag(1, 0, 0, 0)`.
pub fn chi_identity() -> CMatrix {
    let mut m = CMatrix::zeros(4, 4);
    m[(0, 0)] = ONE;
    m
}

/// Fidelity between chi matrices, same form as the state fidelity.
pub fn process_fidelity(chi: &CMatrix, chi_ideal: &CMatrix) -> Result<f64> {
    for c in [chi, chi_ideal] {
        if c.nrows() != 4 || c.ncols() != 4 {
            return Err(Error::DimensionMismatch { expected: 4, got: c.nrows() });
        }
        validate_density(c, 1e-6).map_err(|e| Error::InvalidParam(format!("invalid chi matrix: {e}")))?;
    }
    uhlmann_fidelity(chi, chi_ideal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferEstimate {
    pub eta_t: f64,
    pub f_chi: f64,
}

/// `eta_t = F1^2 (1 - loss)` and `F_chi = (1 + sqrt(eta_t))^2 / 4`.
pub fn transfer_estimates(f1: f64, channel_loss: f64) -> Result<TransferEstimate> {
    for (name, v) in [("emission efficiency", f1), ("channel loss", channel_loss)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} must be in [0, 1], got {v}")));
        }
    }
    let eta_t = f1 * f1 * (1.0 - channel_loss);
    Ok(TransferEstimate { eta_t, f_chi: (1.0 + eta_t.sqrt()).powi(2) / 4.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalPopResult {
    pub eta: f64,
    pub lambda: f64,
    pub pe_eta: f64,
    pub pe_lambda: f64,
    /// Both estimates lie in `[0, 1]`.
    pub consistent: bool,
}

/// Mean readout voltages of the four sequences (none, pi_ge, pi_ge + pi_ef,
/// pi_ef) for an initial thermal population `pe` of `|e>` and none in `|f>`.
pub fn thermal_voltages(pe: f64, vg: C64, ve: C64, vf: C64) -> [C64; 4] {
    let pg = 1.0 - pe;
    [pg * vg + pe * ve, pe * vg + pg * ve, pe * vg + pg * vf, pg * vg + pe * vf]
}

/// Thermal `|e>` population from the four sequence voltages, by the two
/// linear-combination routes.
pub fn thermal_population(v: [C64; 4]) -> Result<ThermalPopResult> {
    let [v1, v2, v3, v4] = v;
    let den = ((v2 - v1).conj() * (v3 - v4)).im;
    let scale = (v2 - v1).norm() * (v3 - v4).norm();
    if !(den.abs() > 1e-12 * scale) || scale == 0.0 {
        return Err(Error::Degenerate("readout voltages are collinear".into()));
    }
    let eta = ((v3 - v4).conj() * v1 + v4.conj() * v3).im / den;
    let lambda = -((v2 - v1).conj() * v4 + v1.conj() * v2).im / den;
    let pe_eta = eta / (2.0 * eta - 1.0);
    let pe_lambda = lambda / (2.0 * lambda - 1.0);
    let ok = |p: f64| (0.0..=1.0).contains(&p);
    Ok(ThermalPopResult { eta, lambda, pe_eta, pe_lambda, consistent: ok(pe_eta) && ok(pe_lambda) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::projector;

    fn plus(d: usize) -> CMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut psi = vec![ZERO; d];
        psi[0] = C64::new(s, 0.0);
        psi[1] = C64::new(s, 0.0);
        projector(&psi)
    }

    fn fock(d: usize, n: usize) -> CMatrix {
        let mut psi = vec![ZERO; d];
        psi[n] = ONE;
        projector(&psi)
    }

    #[test]
    fn moment_indexing_is_dense() {
        let pairs = moment_pairs();
        assert_eq!(pairs.len(), 15);
        for (k, &(n, m)) in pairs.iter().enumerate() {
            assert_eq!(moment_index(n, m), k);
        }
    }

    #[test]
    fn noiseless_inversion_is_identity() {
        let sig = MomentSet::from_state(&fock(3, 1));
        let vac = MomentSet::from_state(&fock(3, 0));
        // Vacuum h gives anti-normal moments <h^n (h^dag)^m> = n! delta_nm.
        let mut off = vac.clone();
        for (k, &(n, m)) in moment_pairs().iter().enumerate() {
            off.values[k] = if n == m { C64::new(factorial(n), 0.0) } else { ZERO };
        }
        // Forward model.
        let mut on = sig.clone();
        for (k, &(n, m)) in moment_pairs().iter().enumerate() {
            let mut s = ZERO;
            for i in 0..=n {
                for j in 0..=m {
                    s += binom(n, i) * binom(m, j) * sig.get(i, j) * off.get(n - i, m - j);
                }
            }
            on.values[k] = s;
        }
        let back = extract_signal_moments(&on, &off).unwrap();
        for k in 0..15 {
            assert!((back.values[k] - sig.values[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn wigner_vacuum_and_fock_one() {
        let grid = WignerGrid::square(3.0, 61);
        let vac = wigner_from_moments(&MomentSet::from_state(&fock(2, 0)), &grid).unwrap();
        assert!((vac.at(30, 30) - 2.0 / PI).abs() < 1e-8);
        let one = wigner_from_rho(&fock(2, 1), &grid).unwrap();
        assert!((one.at(30, 30) + 2.0 / PI).abs() < 1e-12);
        assert!((vac.integral() - 1.0).abs() < 0.03);
    }

    #[test]
    fn wigner_routes_agree() {
        let grid = WignerGrid::square(3.0, 41);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let rho = projector(&[C64::new(s, 0.0), C64::new(0.0, s), ZERO]);
        let a = wigner_from_moments(&MomentSet::from_state(&rho), &grid).unwrap();
        let b = wigner_from_rho(&rho, &grid).unwrap();
        assert!(a.sup_distance(&b) < 1e-6, "{}", a.sup_distance(&b));
    }

    #[test]
    fn mle_recovers_exact_states() {
        for rho in [fock(2, 1), plus(2)] {
            let est = mle_state(&MomentSet::from_state(&rho), 2).unwrap();
            assert!((&est.rho - &rho).norm() < 1e-6, "{}", est.rho);
            assert!(est.converged);
        }
    }

    #[test]
    fn g2_limits() {
        let (g, _) = g2_zero(&MomentSet::from_state(&fock(3, 1))).unwrap();
        assert!(g.abs() < 1e-12);
        let vac = MomentSet::from_state(&fock(2, 0));
        assert!(matches!(g2_zero(&vac), Err(Error::Degenerate(_))));
    }

    #[test]
    fn qpt_identity_and_depolarizing() {
        let ins = mub_states();
        let id = qpt(&ins, &ins).unwrap();
        assert!((&id.chi - chi_identity()).norm() < 1e-10);
        let mixed = vec![identity(2) * C64::new(0.5, 0.0); 6];
        let dep = qpt(&ins, &mixed).unwrap();
        assert!((&dep.chi - identity(4) * C64::new(0.25, 0.0)).norm() < 1e-10);
        assert!((process_fidelity(&chi_identity(), &dep.chi).unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn transfer_closed_forms() {
        let t = transfer_estimates(1.0, 0.0).unwrap();
        assert_eq!((t.eta_t, t.f_chi), (1.0, 1.0));
        assert!(transfer_estimates(1.2, 0.0).is_err());
    }

    #[test]
    fn thermal_round_trip() {
        let (vg, ve, vf) = (C64::new(1.0, 0.2), C64::new(-0.4, 0.9), C64::new(-0.7, -0.8));
        for pe in [0.0, 0.1] {
            let r = thermal_population(thermal_voltages(pe, vg, ve, vf)).unwrap();
            assert!((r.pe_eta - pe).abs() < 1e-12 && (r.pe_lambda - pe).abs() < 1e-12);
        }
        let v = C64::new(1.0, 1.0);
        assert!(thermal_population(thermal_voltages(0.1, v, v * 2.0, v * 3.0)).is_err());
    }
}
