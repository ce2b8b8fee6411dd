//! Output-field records and temporal-profile metrics: symmetry factor,
//! matched filtering and template extraction.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Sampled `<a_out(t)>` and output power on a uniform grid `t0 + k dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub t0: f64,
    pub dt: f64,
    pub amps: Vec<C64>,
    pub power: Vec<f64>,
}

impl FieldRecord {
    pub fn empty(t0: f64, dt: f64) -> Self {
        Self { t0, dt, amps: Vec::new(), power: Vec::new() }
    }

    pub fn new(t0: f64, dt: f64, amps: Vec<C64>, power: Vec<f64>) -> Result<Self> {
        if amps.len() != power.len() {
            return Err(Error::DimensionMismatch { expected: amps.len(), got: power.len() });
        }
        if let Some(p) = power.iter().find(|p| **p < -1e-12) {
            return Err(Error::InvalidParam(format!("negative power sample {p:e}")));
        }
        Ok(Self { t0, dt, amps, power })
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.amps.len()).map(move |k| self.t0 + k as f64 * self.dt)
    }

    /// `int |<a_out>|^2 dt` (trapezoid).
    pub fn field_energy(&self) -> f64 {
        trapz_weights(self.amps.len())
            .zip(&self.amps)
            .map(|(w, a)| w * a.norm_sqr())
            .sum::<f64>()
            * self.dt
    }

    /// `int <a_out^dag a_out> dt` (trapezoid): emitted photon number.
    pub fn photon_number(&self) -> f64 {
        trapz_weights(self.power.len()).zip(&self.power).map(|(w, p)| w * p).sum::<f64>() * self.dt
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.amps.iter().fold(0.0, |m, a| m.max(a.norm()))
    }

    /// Copy with every amplitude multiplied by `z`.
    pub fn scaled(&self, z: C64) -> Self {
        Self { amps: self.amps.iter().map(|a| a * z).collect(), ..self.clone() }
    }

    pub fn time_reversed(&self) -> Self {
        let mut r = self.clone();
        r.amps.reverse();
        r.power.reverse();
        r
    }

    /// Moving average over `width` samples followed by keeping every
    /// `stride`-th sample.
    pub fn boxcar_decimate(&self, width: usize, stride: usize) -> Self {
        let width = width.max(1);
        let stride = stride.max(1);
        let n = self.amps.len();
        let mut ca = vec![C64::new(0.0, 0.0); n + 1];
        let mut cp = vec![0.0; n + 1];
        for k in 0..n {
            ca[k + 1] = ca[k] + self.amps[k];
            cp[k + 1] = cp[k] + self.power[k];
        }
        let half = width / 2;
        let mut amps = Vec::new();
        let mut power = Vec::new();
        let mut k = 0;
        while k < n {
            let lo = k.saturating_sub(half);
            let hi = (lo + width).min(n);
            let lo = hi.saturating_sub(width);
            let m = (hi - lo) as f64;
            amps.push((ca[hi] - ca[lo]) / m);
            power.push((cp[hi] - cp[lo]) / m);
            k += stride;
        }
        Self { t0: self.t0, dt: self.dt * stride as f64, amps, power }
    }

    /// Long-format CSV: `t_ns, re_aout, im_aout, power`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t_ns,re_aout,im_aout,power")?;
        for (t, (a, p)) in self.times().zip(self.amps.iter().zip(&self.power)) {
            writeln!(w, "{:.6},{:.12e},{:.12e},{:.12e}", t * 1e9, a.re, a.im, p)?;
        }
        Ok(())
    }
}

fn trapz_weights(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if n > 1 && (k == 0 || k == n - 1) { 0.5 } else { 1.0 })
}

/// Temporal symmetry of a field record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub s: f64,
    /// Same metric evaluated on `|amps|` (phase discarded).
    pub s_abs: f64,
    pub t0_opt: f64,
    pub method: String,
}

/// `max_{t0} |int a*(t0 - t) a(t) dt| / int |a|^2 dt`, maximized on the
/// sample grid and refined by a three-point parabola.
pub fn symmetry_factor(record: &FieldRecord) -> Result<SymmetryReport> {
    let (s, m) = symmetry_of(&record.amps)?;
    let abs: Vec<C64> = record.amps.iter().map(|a| C64::new(a.norm(), 0.0)).collect();
    let (s_abs, _) = symmetry_of(&abs)?;
    Ok(SymmetryReport {
        s: s.min(s_abs),
        s_abs,
        t0_opt: 2.0 * record.t0 + m * record.dt,
        method: "grid search over all overlaps + parabolic refinement; modulus of the overlap".into(),
    })
}

/// Returns `(s, t0 index)` with fractional refinement.
fn symmetry_of(a: &[C64]) -> Result<(f64, f64)> {
    let n = a.len();
    let energy: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    if n == 0 || !(energy > 0.0) {
        return Err(Error::Degenerate("zero field energy".into()));
    }
    let overlap = |m: usize| -> f64 {
        // sum_k conj(a[m - k]) a[k] over valid k
        let lo = m.saturating_sub(n - 1);
        let hi = m.min(n - 1);
        let mut s = C64::new(0.0, 0.0);
        for k in lo..=hi {
            s += a[m - k].conj() * a[k];
        }
        s.norm()
    };
    let vals: Vec<f64> = (0..2 * n - 1).map(overlap).collect();
    let (mbest, &vbest) = vals
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    let mut peak = vbest;
    let mut pos = mbest as f64;
    if mbest > 0 && mbest + 1 < vals.len() {
        let (l, c, r) = (vals[mbest - 1], vbest, vals[mbest + 1]);
        let curv = l - 2.0 * c + r;
        if curv < 0.0 {
            let off = 0.5 * (l - r) / curv;
            if off.abs() <= 1.0 {
                pos += off;
                peak = c - 0.125 * (r - l) * (r - l) / curv;
            }
        }
    }
    Ok(((peak / energy).clamp(0.0, 1.0 + 1e-12), pos))
}

/// `int f(t) <a_out(t)> dt` with trapezoid weights; `f` must be normalized.
pub fn matched_filter(record: &FieldRecord, f: &[C64]) -> Result<C64> {
    if f.len() != record.amps.len() {
        return Err(Error::DimensionMismatch { expected: record.amps.len(), got: f.len() });
    }
    let norm: f64 = trapz_weights(f.len()).zip(f).map(|(w, x)| w * x.norm_sqr()).sum::<f64>() * record.dt;
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParam(format!("filter not normalized: int |f|^2 = {norm:.8}")));
    }
    Ok(trapz_weights(f.len())
        .zip(f.iter().zip(&record.amps))
        .map(|(w, (x, a))| x * a * w)
        .sum::<C64>()
        * record.dt)
}

/// Normalized matched-filter template `conj(amps) / sqrt(int |amps|^2)`.
///
/// The conjugate makes the self-projection `int f a dt` real and positive.
pub fn template_from_halfphoton(record: &FieldRecord) -> Result<Vec<C64>> {
    let e = record.field_energy();
    if !(e > 0.0) {
        return Err(Error::Degenerate("zero field energy".into()));
    }
    let s = e.sqrt();
    Ok(record.amps.iter().map(|a| a.conj() / s).collect())
}

/// The mode function `u(t) = conj(f(t))` associated with a filter `f`.
pub fn mode_from_filter(f: &[C64]) -> Vec<C64> {
    f.iter().map(|x| x.conj()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(n: usize, dt: f64, phase: impl Fn(f64) -> f64) -> FieldRecord {
        let mid = 0.5 * (n - 1) as f64 * dt;
        let sig = 0.1 * n as f64 * dt;
        let amps: Vec<C64> = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                C64::from_polar((-(t - mid).powi(2) / (2.0 * sig * sig)).exp(), phase(t))
            })
            .collect();
        let power = amps.iter().map(|a| a.norm_sqr()).collect();
        FieldRecord::new(0.0, dt, amps, power).unwrap()
    }

    #[test]
    fn symmetric_gaussian_has_unit_symmetry() {
        let r = gaussian(401, 1e-9, |_| 0.0);
        let s = symmetry_factor(&r).unwrap();
        assert!((s.s - 1.0).abs() < 1e-6 && (s.s_abs - 1.0).abs() < 1e-6);
        assert!((s.t0_opt - 400e-9).abs() < 1e-12);
    }

    #[test]
    fn time_dependent_phase_lowers_s_only() {
        let r = gaussian(401, 1e-9, |t| 3e14 * (t - 150e-9).powi(2) + 1e7 * t);
        let s = symmetry_factor(&r).unwrap();
        assert!(s.s < s.s_abs - 1e-3);
        assert!((s.s_abs - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_sided_exponential_matches_bruteforce() {
        // Continuum oracle: the overlap is t0 e^{-k t0}, maximal at t0 = 1/k,
        // over an energy of 1/(2k), so s = 2/e.
        let k = 1.0 / 50e-9;
        let make = |n: usize, dt: f64| {
            let amps: Vec<C64> = (0..n).map(|i| C64::new((-k * i as f64 * dt).exp(), 0.0)).collect();
            let power = amps.iter().map(|a| a.norm_sqr()).collect();
            FieldRecord::new(0.0, dt, amps, power).unwrap()
        };
        let coarse = symmetry_factor(&make(600, 1e-9)).unwrap();
        let fine = symmetry_factor(&make(6000, 0.1e-9)).unwrap();
        assert!((coarse.s - fine.s).abs() < 2e-2, "{} {}", coarse.s, fine.s);
        assert!((fine.s - 2.0 / std::f64::consts::E).abs() < 5e-3, "{}", fine.s);
    }

    #[test]
    fn matched_filter_self_projection_is_energy() {
        let r = gaussian(201, 1e-9, |t| 2e6 * t);
        let f = template_from_halfphoton(&r).unwrap();
        let z = matched_filter(&r, &f).unwrap();
        assert!(z.im.abs() < 1e-12 && z.re > 0.0);
        assert!((z.re - r.field_energy().sqrt()).abs() < 1e-9 * z.re);
    }

    #[test]
    fn unnormalized_filter_rejected() {
        let r = gaussian(51, 1e-9, |_| 0.0);
        assert!(matched_filter(&r, &vec![C64::new(1.0, 0.0); 51]).is_err());
        let zero = FieldRecord::new(0.0, 1e-9, vec![C64::new(0.0, 0.0); 5], vec![0.0; 5]).unwrap();
        assert!(symmetry_factor(&zero).is_err());
    }
}
