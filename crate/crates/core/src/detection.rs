//! Heterodyne detection chain: `S = a + h^dag` sampled shot by shot from the
//! Husimi-Q function of the captured mode convolved with thermal amplifier
//! noise, accumulated into 2D histograms.

use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, validate_density, CMatrix, C64};

/// Largest mode dimension accepted by the sampler.
pub const MAX_MODE_DIM: usize = 6;
/// Default bins per histogram axis.
pub const DEFAULT_BINS: usize = 201;
/// Shots per independently seeded sampling partition.
const BATCH: u64 = 1 << 16;
/// Candidate per-axis variances of the Gaussian proposal.
const PROPOSAL_VARIANCES: [f64; 9] = [0.6, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0];

/// Phase-insensitive amplification chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub gain: f64,
    /// Mean thermal occupation of the added-noise mode `h`.
    #[serde(default = "default_n_noise")]
    pub n_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_noise() -> f64 {
    2.78
}

impl NoiseModel {
    pub fn new(gain: f64, n_noise: f64, seed: u64) -> Self {
        Self { gain, n_noise, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 1.0 && self.gain.is_finite()) {
            return Err(Error::InvalidParam(format!("gain must be >= 1, got {}", self.gain)));
        }
        if !(self.n_noise >= 0.0 && self.n_noise.is_finite()) {
            return Err(Error::InvalidParam(format!("n_noise must be >= 0, got {}", self.n_noise)));
        }
        if self.gain < 100.0 {
            log::warn!("gain {} is not >> 1; S = a + h^dag is a poor approximation", self.gain);
        }
        Ok(())
    }

    pub fn quantum_efficiency(&self) -> f64 {
        quantum_efficiency(self.n_noise)
    }
}

/// `eta = 1 / (1 + n_noise)`.
pub fn quantum_efficiency(n_noise: f64) -> f64 {
    1.0 / (1.0 + n_noise)
}

/// Shot counts over a rectangular grid of `sqrt(G) S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    pub edges_re: Vec<f64>,
    pub edges_im: Vec<f64>,
    /// Row-major: `counts[i_re * n_im + i_im]`.
    pub counts: Vec<u64>,
    /// Samples outside the grid; included in `shots`.
    pub out_of_range: u64,
    pub shots: u64,
    pub gain: f64,
    pub n_noise: f64,
    pub seed: u64,
}

impl Histogram2D {
    /// Empty square histogram with `bins` per axis on `[-half_width, half_width]`.
    pub fn uniform(bins: usize, half_width: f64, gain: f64, n_noise: f64, seed: u64) -> Result<Self> {
        if bins == 0 || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidParam(format!("bad histogram grid: {bins} bins, half width {half_width}")));
        }
        let edges: Vec<f64> =
            (0..=bins).map(|k| -half_width + 2.0 * half_width * k as f64 / bins as f64).collect();
        Ok(Self {
            edges_re: edges.clone(),
            edges_im: edges,
            counts: vec![0; bins * bins],
            out_of_range: 0,
            shots: 0,
            gain,
            n_noise,
            seed,
        })
    }

    pub fn n_re(&self) -> usize {
        self.edges_re.len() - 1
    }

    pub fn n_im(&self) -> usize {
        self.edges_im.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let inc = |e: &[f64]| e.len() >= 2 && e.windows(2).all(|w| w[1] > w[0]) && e.iter().all(|x| x.is_finite());
        if !inc(&self.edges_re) || !inc(&self.edges_im) {
            return Err(Error::Format("histogram edges must be finite and strictly increasing".into()));
        }
        if self.counts.len() != self.n_re() * self.n_im() {
            return Err(Error::DimensionMismatch { expected: self.n_re() * self.n_im(), got: self.counts.len() });
        }
        let total: u64 = self.counts.iter().sum::<u64>() + self.out_of_range;
        if total != self.shots {
            return Err(Error::Format(format!("counts sum to {total} but shots = {}", self.shots)));
        }
        Ok(())
    }

    fn locate(edges: &[f64], x: f64) -> Option<usize> {
        if !(x >= edges[0] && x < edges[edges.len() - 1]) {
            return None;
        }
        Some(edges.partition_point(|&e| e <= x) - 1)
    }

    /// Records one stored sample `z = sqrt(G) S`.
    pub fn add(&mut self, z: C64) {
        self.shots += 1;
        match (Self::locate(&self.edges_re, z.re), Self::locate(&self.edges_im, z.im)) {
            (Some(i), Some(j)) => {
                let k = i * self.n_im() + j;
                self.counts[k] += 1;
            }
            _ => self.out_of_range += 1,
        }
    }

    /// Bin-centre coordinate of cell `(i, j)`.
    pub fn center(&self, i: usize, j: usize) -> C64 {
        C64::new(
            0.5 * (self.edges_re[i] + self.edges_re[i + 1]),
            0.5 * (self.edges_im[j] + self.edges_im[j + 1]),
        )
    }

    /// Fraction of shots that landed on the grid.
    pub fn coverage(&self) -> f64 {
        if self.shots == 0 {
            return 1.0;
        }
        1.0 - self.out_of_range as f64 / self.shots as f64
    }

    /// Sum of two histograms accumulated on the same grid and chain.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.edges_re != other.edges_re
            || self.edges_im != other.edges_im
            || self.gain != other.gain
            || self.n_noise != other.n_noise
            || self.seed != other.seed
        {
            return Err(Error::InvalidParam("cannot merge histograms with different grids or metadata".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        out.out_of_range += other.out_of_range;
        out.shots += other.shots;
        Ok(out)
    }

    /// CSV: `key,value` header lines, edge rows, then one row of counts per
    /// real-axis bin.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        writeln!(w, "format,pphist-csv-1")?;
        writeln!(w, "shots,{}", self.shots)?;
        writeln!(w, "out_of_range,{}", self.out_of_range)?;
        writeln!(w, "gain,{:?}", self.gain)?;
        writeln!(w, "n_noise,{:?}", self.n_noise)?;
        writeln!(w, "seed,{}", self.seed)?;
        writeln!(w, "edges_re,{}", join(&self.edges_re))?;
        writeln!(w, "edges_im,{}", join(&self.edges_im))?;
        for row in self.counts.chunks(self.n_im()) {
            writeln!(w, "{}", row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("histogram csv: {what}"));
        let mut lines = r.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))??;
            line.strip_prefix(&format!("{key},")).map(str::to_owned).ok_or_else(|| bad(&format!("expected {key}")))
        };
        if field("format")? != "pphist-csv-1" {
            return Err(bad("unknown format tag"));
        }
        let num = |s: String| s.parse::<f64>().map_err(|_| bad("bad number"));
        let int = |s: String| s.parse::<u64>().map_err(|_| bad("bad integer"));
        let shots = int(field("shots")?)?;
        let out_of_range = int(field("out_of_range")?)?;
        let gain = num(field("gain")?)?;
        let n_noise = num(field("n_noise")?)?;
        let seed = int(field("seed")?)?;
        let floats = |s: String| s.split(',').map(|x| x.parse::<f64>().map_err(|_| bad("bad edge"))).collect::<Result<Vec<_>>>();
        let edges_re = floats(field("edges_re")?)?;
        let edges_im = floats(field("edges_im")?)?;
        let mut counts = Vec::new();
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            for x in line.split(',') {
                counts.push(x.parse::<u64>().map_err(|_| bad("bad count"))?);
            }
        }
        let h = Self { edges_re, edges_im, counts, out_of_range, shots, gain, n_noise, seed };
        h.validate()?;
        Ok(h)
    }

    /// Little-endian binary: magic `PPHIST01`, `shots, out_of_range, seed`
    /// (u64), `gain, n_noise` (f64), axis lengths (u64), edges (f64), counts (u64).
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"PPHIST01")?;
        for v in [self.shots, self.out_of_range, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [self.gain, self.n_noise] {
            w.write_all(&v.to_le_bytes())?;
        }
        for e in [&self.edges_re, &self.edges_im] {
            w.write_all(&(e.len() as u64).to_le_bytes())?;
            for v in e {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for c in &self.counts {
            w.write_all(&c.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"PPHIST01" {
            return Err(Error::Format("not a binary histogram".into()));
        }
        let mut word = || -> Result<[u8; 8]> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let shots = u64::from_le_bytes(word()?);
        let out_of_range = u64::from_le_bytes(word()?);
        let seed = u64::from_le_bytes(word()?);
        let gain = f64::from_le_bytes(word()?);
        let n_noise = f64::from_le_bytes(word()?);
        let mut edges = [Vec::new(), Vec::new()];
        for e in edges.iter_mut() {
            let n = u64::from_le_bytes(word()?) as usize;
            if n > 1 << 24 {
                return Err(Error::Format("edge array too long".into()));
            }
            for _ in 0..n {
                e.push(f64::from_le_bytes(word()?));
            }
        }
        let [edges_re, edges_im] = edges;
        let cells = edges_re.len().saturating_sub(1) * edges_im.len().saturating_sub(1);
        let counts = (0..cells).map(|_| Ok(u64::from_le_bytes(word()?))).collect::<Result<Vec<_>>>()?;
        let h = Self { edges_re, edges_im, counts, out_of_range, shots, gain, n_noise, seed };
        h.validate()?;
        Ok(h)
    }
}

/// `<alpha| rho |alpha>` for a truncated Fock-space `rho`.
fn coherent_expectation(rho: &CMatrix, alpha: C64) -> f64 {
    let d = rho.nrows();
    let mut c = [C64::new(0.0, 0.0); MAX_MODE_DIM];
    let norm = (-0.5 * alpha.norm_sqr()).exp();
    c[0] = C64::new(norm, 0.0);
    for n in 1..d {
        c[n] = c[n - 1] * alpha / (n as f64).sqrt();
    }
    let mut s = C64::new(0.0, 0.0);
    for m in 0..d {
        let mut row = C64::new(0.0, 0.0);
        for n in 0..d {
            row += rho[(m, n)] * c[n];
        }
        s += c[m].conj() * row;
    }
    s.re
}

/// `sup_x 2 s^2 exp(-x (1 - 1 / (2 s^2))) sum_{n<d} x^n / n!`: bound on
/// `Q / g` per unit `lambda_max` for a Gaussian proposal `g` of per-axis
/// variance `s^2`, using `<alpha|rho|alpha> <= lambda_max ||P_d |alpha>||^2`.
fn envelope_constant(d: usize, s2: f64) -> f64 {
    let c = 1.0 - 0.5 / s2;
    let h = |x: f64| {
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..d {
            term *= x / n as f64;
            sum += term;
        }
        2.0 * s2 * (-c * x).exp() * sum
    };
    // Each term peaks at x = n / c, so the supremum lies below (d - 1) / c.
    let x_max = (d as f64 - 1.0) / c + 1.0;
    let steps = 20_000;
    let best = (0..=steps).map(|k| h(x_max * k as f64 / steps as f64)).fold(0.0, f64::max);
    // Grid refinement margin.
    best * 1.001
}

/// Rejection sampler for `Q(alpha) = <alpha|rho|alpha> / pi` from a centred
/// Gaussian proposal, plus Gaussian amplifier noise.
struct ShotSampler {
    rho: CMatrix,
    /// `M` with `Q <= M g` everywhere.
    envelope: f64,
    proposal_sigma: f64,
    noise_sigma: f64,
    scale: f64,
}

impl ShotSampler {
    fn new(rho: &CMatrix, noise: &NoiseModel) -> Result<Self> {
        let d = rho.nrows();
        let lambda_max = eigh(rho).0.last().copied().unwrap_or(1.0).max(1e-300);
        let (s2, m) = PROPOSAL_VARIANCES
            .iter()
            .map(|&s2| (s2, lambda_max * envelope_constant(d, s2)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty candidate list");
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Rejection(format!("invalid envelope constant {m}")));
        }
        Ok(Self {
            rho: rho.clone(),
            envelope: m,
            proposal_sigma: s2.sqrt(),
            noise_sigma: (0.5 * noise.n_noise).sqrt(),
            scale: noise.gain.sqrt(),
        })
    }

    fn shot(&self, rng: &mut impl Rng) -> C64 {
        let s2 = self.proposal_sigma * self.proposal_sigma;
        let alpha = loop {
            let zr: f64 = rng.sample(StandardNormal);
            let zi: f64 = rng.sample(StandardNormal);
            let z = C64::new(zr, zi) * self.proposal_sigma;
            // Q / g = 2 s^2 exp(|z|^2 / (2 s^2)) <z|rho|z>
            let ratio = 2.0 * s2 * (0.5 * z.norm_sqr() / s2).exp() * coherent_expectation(&self.rho, z);
            if rng.random::<f64>() * self.envelope < ratio {
                break z;
            }
        };
        let nr: f64 = rng.sample(StandardNormal);
        let ni: f64 = rng.sample(StandardNormal);
        (alpha + C64::new(nr, ni) * self.noise_sigma) * self.scale
    }
}

/// Half width of the default grid (in stored units `sqrt(G) S`) for a mode
/// with mean photon number `n_mean`.
pub fn default_half_width(noise: &NoiseModel, n_mean: f64) -> f64 {
    6.0 * ((1.0 + noise.n_noise) / 2.0 + n_mean.max(0.0)).sqrt() * noise.gain.sqrt()
}

/// Samples `shots` heterodyne outcomes of the mode `rho_a` on the default grid.
pub fn sample_heterodyne(rho_a: &CMatrix, noise: &NoiseModel, shots: u64) -> Result<Histogram2D> {
    let d = rho_a.nrows();
    let a = crate::linalg::destroy(d.max(1));
    let n_mean = crate::linalg::expect(rho_a, &(crate::linalg::dag(&a) * &a)).re;
    let grid = Histogram2D::uniform(DEFAULT_BINS, default_half_width(noise, n_mean), noise.gain, noise.n_noise, noise.seed)?;
    sample_into(rho_a, noise, shots, grid)
}

/// Samples into an empty histogram `grid`. Shots are split into fixed-size
/// partitions, each drawn from its own ChaCha20 stream of `noise.seed`, so
/// results do not depend on the number of worker threads.
pub fn sample_into(rho_a: &CMatrix, noise: &NoiseModel, shots: u64, grid: Histogram2D) -> Result<Histogram2D> {
    noise.validate()?;
    let d = rho_a.nrows();
    if d == 0 || d > MAX_MODE_DIM {
        return Err(Error::InvalidParam(format!("mode dimension {d} outside 1..={MAX_MODE_DIM}")));
    }
    validate_density(rho_a, 1e-8)?;
    if grid.shots != 0 {
        return Err(Error::InvalidParam("target histogram must be empty".into()));
    }
    let sampler = ShotSampler::new(rho_a, noise)?;
    let batches = shots.div_ceil(BATCH);
    let parts: Vec<Histogram2D> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
            rng.set_stream(b);
            let mut h = grid.clone();
            let n = BATCH.min(shots - b * BATCH);
            for _ in 0..n {
                h.add(sampler.shot(&mut rng));
            }
            h
        })
        .collect();
    let mut out = grid;
    for p in &parts {
        out = out.merge(p)?;
    }
    if out.coverage() < 0.999 {
        log::warn!("histogram coverage {:.5} below 0.999", out.coverage());
    }
    Ok(out)
}

/// Background histogram: the same chain with the signal mode in vacuum.
pub fn off_histogram(noise: &NoiseModel, shots: u64) -> Result<Histogram2D> {
    let mut vac = CMatrix::zeros(1, 1);
    vac[(0, 0)] = C64::new(1.0, 0.0);
    sample_heterodyne(&vac, noise, shots)
}

/// Gain solving `<a^dag a>(G) = |<a>(G)|` for an ON histogram of a nominal
/// `(|0> + |1>)/sqrt(2)` emission, to relative tolerance `1e-6`.
pub fn estimate_gain(on: &Histogram2D, off: &Histogram2D) -> Result<f64> {
    let on_m = crate::tomography::histogram_moments(on, 1.0)?;
    let off_m = crate::tomography::histogram_moments(off, 1.0)?;
    let unit = crate::tomography::solve_signal_moments(&on_m, &off_m);
    if !(unit.get(1, 1).re > 0.0 && unit.get(0, 1).norm() > 0.0) {
        return Err(Error::NoRoot("gain equation has no root: ON histogram shows no signal above OFF".into()));
    }
    let residual = |g: f64| -> f64 {
        let s = crate::tomography::solve_signal_moments(&on_m.rescaled(g), &off_m.rescaled(g));
        s.get(1, 1).re - s.get(0, 1).norm()
    };
    // The residual is N / G - A / sqrt(G); bisect in log G.
    let f = |x: f64| residual(x.exp());
    let (lo, hi) = (0.0, (1e16f64).ln());
    let x = crate::numerics::bisect(f, lo, hi, 1e-7, 400)
        .map_err(|_| Error::NoRoot("gain equation has no root: ON histogram shows no signal above OFF".into()))?;
    Ok(x.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::projector;

    fn fock(d: usize, n: usize) -> CMatrix {
        let mut psi = vec![C64::new(0.0, 0.0); d];
        psi[n] = C64::new(1.0, 0.0);
        projector(&psi)
    }

    #[test]
    fn vacuum_heterodyne_variance() {
        let noise = NoiseModel::new(1.0, 0.0, 7);
        let shots = 200_000u64;
        let h = sample_heterodyne(&fock(1, 0), &noise, shots).unwrap();
        let m = crate::tomography::histogram_moments(&h, 1.0).unwrap();
        let sqrt_n = (shots as f64).sqrt();
        assert!(m.get(0, 1).norm() < 3.0 / sqrt_n);
        assert!((m.get(1, 1).re - 1.0).abs() < 5.0 / sqrt_n);
    }

    #[test]
    fn coherent_state_mean() {
        let d = 6;
        let alpha = C64::new(0.4, -0.3);
        let mut psi: Vec<C64> = (0..d)
            .map(|n| {
                let f: f64 = (1..=n).map(|k| k as f64).product();
                alpha.powu(n as u32) / f.sqrt()
            })
            .collect();
        let norm = psi.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|c| *c /= norm);
        let h = sample_heterodyne(&projector(&psi), &NoiseModel::new(1.0, 0.0, 3), 200_000).unwrap();
        let m = crate::tomography::histogram_moments(&h, 1.0).unwrap();
        assert!((m.get(0, 1) - alpha).norm() < 0.01);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let noise = NoiseModel::new(100.0, 2.78, 11);
        let a = sample_heterodyne(&fock(2, 1), &noise, 100_000).unwrap();
        let b = sample_heterodyne(&fock(2, 1), &noise, 100_000).unwrap();
        assert_eq!(a, b);
        let c = sample_heterodyne(&fock(2, 1), &NoiseModel { seed: 12, ..noise }, 100_000).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let h = sample_heterodyne(&fock(2, 1), &NoiseModel::new(1e4, 2.78, 5), 10_000).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(Histogram2D::read_csv(buf.as_slice()).unwrap(), h);
        let mut bin = Vec::new();
        h.write_binary(&mut bin).unwrap();
        assert_eq!(Histogram2D::read_binary(bin.as_slice()).unwrap(), h);
    }

    #[test]
    fn quantum_efficiency_of_reported_noise() {
        assert!((quantum_efficiency(2.78) - 0.2646).abs() < 1e-4);
    }

    #[test]
    fn identical_on_off_has_no_gain_root() {
        let off = off_histogram(&NoiseModel::new(1e4, 2.78, 1), 20_000).unwrap();
        assert!(matches!(estimate_gain(&off, &off), Err(Error::NoRoot(_))));
    }
}
