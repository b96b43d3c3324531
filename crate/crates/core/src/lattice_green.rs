//! Periodic lattice potentials, the constant `c_E`, and configuration energies.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::EULER_GAMMA;

/// Largest torus side handled by the FFT path.
pub const MAX_FFT_SIDE: usize = 4096;

/// Torus `Λ` of side `L^R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    #[serde(rename = "L")]
    pub l: u32,
    #[serde(rename = "R")]
    pub r: u32,
    pub side: usize,
    pub volume: usize,
}

impl LatticeSpec {
    pub fn new(l: u32, r: u32) -> Result<Self> {
        if l < 3 {
            return Err(Error::Spec(format!("block size L={l} must be at least 3")));
        }
        if l % 2 == 0 {
            return Err(Error::Spec(format!("block size L={l} must be odd")));
        }
        if r < 1 {
            return Err(Error::Spec("number of scales R must be at least 1".into()));
        }
        let side = (l as u64)
            .checked_pow(r)
            .filter(|s| *s <= 1 << 20)
            .ok_or_else(|| Error::Resource(format!("side L^R = {l}^{r} is too large")))? as usize;
        Ok(LatticeSpec { l, r, side, volume: side * side })
    }

    /// Centered representative of a coordinate, in `(−side/2, side/2)`.
    pub fn centered(&self, x: i64) -> i64 {
        let n = self.side as i64;
        let m = x.rem_euclid(n);
        if m > n / 2 {
            m - n
        } else {
            m
        }
    }

    /// Row-major index of a point after periodic wrap.
    pub fn index(&self, x: [i64; 2]) -> usize {
        let n = self.side as i64;
        (x[0].rem_euclid(n) * n + x[1].rem_euclid(n)) as usize
    }

    /// Lattice point of a row-major index, in centered coordinates.
    pub fn point(&self, idx: usize) -> [i64; 2] {
        [self.centered((idx / self.side) as i64), self.centered((idx % self.side) as i64)]
    }

    /// `−Δ̂(k) = 2Σ_i (1 − cos k_i)` at the momentum with integer labels `(a, b)`.
    pub fn laplacian_symbol(&self, a: usize, b: usize) -> f64 {
        let n = self.side as f64;
        let k0 = 2.0 * PI * a as f64 / n;
        let k1 = 2.0 * PI * b as f64 / n;
        2.0 * ((1.0 - k0.cos()) + (1.0 - k1.cos()))
    }
}

/// Sampled potential on the whole torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub spec: LatticeSpec,
    /// Inverse screening length; 0 for the Coulomb table.
    pub mass: f64,
    /// Row-major values over `[0, side)²`.
    pub values: Vec<f64>,
}

impl PotentialTable {
    /// Value at a lattice point (periodic).
    pub fn get(&self, x: [i64; 2]) -> f64 {
        self.values[self.spec.index(x)]
    }

    pub fn is_coulomb(&self) -> bool {
        self.mass == 0.0
    }

    /// CSV with columns `x0,x1,W` over the centered box.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x0,x1,W\n");
        let h = (self.spec.side / 2) as i64;
        for x0 in -h..=h {
            for x1 in -h..=h {
                s.push_str(&format!("{x0},{x1},{:.17e}\n", self.get([x0, x1])));
            }
        }
        s
    }
}

/// Yukawa potential `W_Λ(x;m) = |Λ|^{−1} Σ_k e^{ikx}/(m² − Δ̂(k))`.
pub fn yukawa_potential(spec: LatticeSpec, m: f64) -> Result<PotentialTable> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::Domain(format!("Yukawa mass must be positive, got {m}")));
    }
    let m2 = m * m;
    let values = spectral_table(spec, |a, b| 1.0 / (m2 + spec.laplacian_symbol(a, b)))?;
    Ok(PotentialTable { spec, mass: m, values })
}

/// Coulomb potential `W_Λ(x|0) = |Λ|^{−1} Σ_{k≠0} (e^{ikx} − 1)/(−Δ̂(k))`.
pub fn coulomb_potential(spec: LatticeSpec) -> Result<PotentialTable> {
    let mut values =
        spectral_table(spec, |a, b| if a == 0 && b == 0 { 0.0 } else { 1.0 / spec.laplacian_symbol(a, b) })?;
    let g0 = values[0];
    values.par_iter_mut().for_each(|v| *v -= g0);
    values[0] = 0.0;
    Ok(PotentialTable { spec, mass: 0.0, values })
}

/// Coulomb potential at selected points by a direct momentum sum.
///
/// Memory is `O(side)`, so this covers tori too large for the FFT grid.
pub fn coulomb_potential_direct(spec: LatticeSpec, points: &[[i64; 2]]) -> Vec<f64> {
    let n = spec.side;
    let cos: Vec<f64> = (0..n).map(|a| (2.0 * PI * a as f64 / n as f64).cos()).collect();
    let sin: Vec<f64> = (0..n).map(|a| (2.0 * PI * a as f64 / n as f64).sin()).collect();
    let lam: Vec<f64> = cos.iter().map(|c| 2.0 * (1.0 - c)).collect();
    points
        .par_iter()
        .map(|x| {
            let x0 = x[0].rem_euclid(n as i64) as usize;
            let x1 = x[1].rem_euclid(n as i64) as usize;
            let mut total = 0.0;
            for a in 0..n {
                let ca = cos[(a * x0) % n];
                let sa = sin[(a * x0) % n];
                let mut row = 0.0;
                for b in 0..n {
                    if a == 0 && b == 0 {
                        continue;
                    }
                    // cos(k·x) = Re e^{ik₀x₀}e^{ik₁x₁}; the sine part cancels between ±k
                    let cxy = ca * cos[(b * x1) % n] - sa * sin[(b * x1) % n];
                    row += (cxy - 1.0) / (lam[a] + lam[b]);
                }
                total += row;
            }
            total / (n * n) as f64
        })
        .collect()
}

/// Inverse 2D DFT of a real even multiplier `f(a, b)`, divided by `|Λ|`.
fn spectral_table(spec: LatticeSpec, f: impl Fn(usize, usize) -> f64 + Sync) -> Result<Vec<f64>> {
    let n = spec.side;
    if n > MAX_FFT_SIDE {
        return Err(Error::Resource(format!(
            "torus side {n} exceeds the FFT limit {MAX_FFT_SIDE}; use coulomb_potential_direct"
        )));
    }
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n * n];
    buf.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
        for (b, v) in row.iter_mut().enumerate() {
            *v = Complex64::new(f(a, b), 0.0);
        }
    });
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let rows = |buf: &mut Vec<Complex64>| {
        buf.par_chunks_mut(n * 64.min(n)).for_each(|chunk| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
    };
    rows(&mut buf);
    transpose_square(&mut buf, n);
    rows(&mut buf);
    transpose_square(&mut buf, n);
    let norm = 1.0 / (n * n) as f64;
    let mut max_im: f64 = 0.0;
    let values: Vec<f64> = buf
        .iter()
        .map(|c| {
            max_im = max_im.max(c.im.abs() * norm);
            c.re * norm
        })
        .collect();
    if max_im > 1e-12 {
        return Err(Error::Numeric(format!("inverse transform left imaginary part {max_im:e}")));
    }
    Ok(values)
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// `c_E = −(2γ_E + ln 8)/(4π)`.
pub fn euler_constant() -> f64 {
    -(2.0 * EULER_GAMMA + 8f64.ln()) / (4.0 * PI)
}

/// Result of fitting `W(x|0) + ln|x|/(2π)` to a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeFit {
    pub c_e: f64,
    /// Largest deviation of a window point from the fitted constant.
    pub max_deviation: f64,
    pub points: usize,
    pub r_lo: f64,
    pub r_hi: f64,
}

/// Least-squares constant over all lattice points with `r_lo ≤ |x| ≤ r_hi`.
pub fn fit_c_e(table: &PotentialTable, r_lo: f64, r_hi: f64) -> Result<CeFit> {
    if !table.is_coulomb() {
        return Err(Error::Domain("c_E is defined from the Coulomb table".into()));
    }
    let h = (table.spec.side / 2) as i64;
    if r_hi > h as f64 || r_lo <= 0.0 || r_lo >= r_hi {
        return Err(Error::Domain(format!("fit window [{r_lo}, {r_hi}] does not fit in the torus")));
    }
    let ri = r_hi.ceil() as i64;
    let mut vals = Vec::new();
    for x0 in -ri..=ri {
        for x1 in -ri..=ri {
            let r = ((x0 * x0 + x1 * x1) as f64).sqrt();
            if r >= r_lo && r <= r_hi {
                vals.push(table.get([x0, x1]) + r.ln() / (2.0 * PI));
            }
        }
    }
    if vals.is_empty() {
        return Err(Error::Fit("empty c_E fit window".into()));
    }
    let c = crate::special::kahan_sum(vals.iter().copied()) / vals.len() as f64;
    let dev = vals.iter().map(|v| (v - c).abs()).fold(0.0, f64::max);
    Ok(CeFit { c_e: c, max_deviation: dev, points: vals.len(), r_lo, r_hi })
}

/// Default window `[side/128, side/16]`.
pub fn fit_c_e_default(table: &PotentialTable) -> Result<CeFit> {
    let s = table.spec.side as f64;
    fit_c_e(table, s / 128.0, s / 16.0)
}

/// A charge at a lattice site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub pos: [i64; 2],
    pub charge: f64,
}

/// Unit charges plus optional fractional probes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub particles: Vec<Particle>,
    pub probes: Vec<Particle>,
}

impl ParticleConfig {
    pub fn new(particles: Vec<Particle>, probes: Vec<Particle>) -> Result<Self> {
        for p in &particles {
            if p.charge != 1.0 && p.charge != -1.0 {
                return Err(Error::Domain(format!("particle charge {} is not ±1", p.charge)));
            }
        }
        for p in &probes {
            let a = p.charge.abs();
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Domain(format!("probe charge {} is not in ±(0,1)", p.charge)));
            }
        }
        Ok(ParticleConfig { particles, probes })
    }

    /// Sum of the unit charges.
    pub fn net_charge(&self) -> f64 {
        self.particles.iter().map(|p| p.charge).sum()
    }

    pub fn is_neutral(&self) -> bool {
        self.net_charge() == 0.0
    }

    pub fn translated(&self, d: [i64; 2]) -> Self {
        let sh = |p: &Particle| Particle { pos: [p.pos[0] + d[0], p.pos[1] + d[1]], charge: p.charge };
        ParticleConfig {
            particles: self.particles.iter().map(sh).collect(),
            probes: self.probes.iter().map(sh).collect(),
        }
    }

    pub fn conjugated(&self) -> Self {
        let fl = |p: &Particle| Particle { pos: p.pos, charge: -p.charge };
        ParticleConfig {
            particles: self.particles.iter().map(fl).collect(),
            probes: self.probes.iter().map(fl).collect(),
        }
    }
}

/// `Σ_{i<j} q_i q_j W(x_i − x_j|0)` over particles and probes.
pub fn energy(config: &ParticleConfig, table: &PotentialTable) -> Result<f64> {
    if !table.is_coulomb() {
        return Err(Error::Domain("energy requires the Coulomb table".into()));
    }
    let all: Vec<&Particle> = config.particles.iter().chain(&config.probes).collect();
    let mut e = 0.0;
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            let d = [all[i].pos[0] - all[j].pos[0], all[i].pos[1] - all[j].pos[1]];
            e += all[i].charge * all[j].charge * table.get(d);
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(matches!(LatticeSpec::new(4, 2), Err(Error::Spec(_))));
        assert!(matches!(LatticeSpec::new(3, 0), Err(Error::Spec(_))));
        let s = LatticeSpec::new(5, 2).unwrap();
        assert_eq!((s.side, s.volume), (25, 625));
        assert_eq!(s.centered(13), -12);
        assert_eq!(s.centered(-13), 12);
        assert_eq!(s.index([-1, 26]), 24 * 25 + 1);
    }

    #[test]
    fn yukawa_rejects_non_positive_mass() {
        let s = LatticeSpec::new(3, 1).unwrap();
        assert!(matches!(yukawa_potential(s, 0.0), Err(Error::Domain(_))));
        assert!(matches!(yukawa_potential(s, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn coulomb_is_zero_at_origin() {
        let t = coulomb_potential(LatticeSpec::new(3, 2).unwrap()).unwrap();
        assert_eq!(t.get([0, 0]), 0.0);
        assert!(t.get([1, 0]) < 0.0);
    }

    #[test]
    fn direct_sum_matches_fft() {
        let s = LatticeSpec::new(7, 2).unwrap();
        let t = coulomb_potential(s).unwrap();
        let pts = [[1, 0], [3, -5], [24, 17], [0, 0]];
        let d = coulomb_potential_direct(s, &pts);
        for (p, v) in pts.iter().zip(d) {
            assert!((t.get(*p) - v).abs() < 1e-13, "{p:?}");
        }
    }

    #[test]
    fn euler_constant_value() {
        assert!((euler_constant() + 0.2573).abs() < 5e-5);
    }

    #[test]
    fn energy_of_empty_and_dipole() {
        let t = coulomb_potential(LatticeSpec::new(9, 1).unwrap()).unwrap();
        assert_eq!(energy(&ParticleConfig::default(), &t).unwrap(), 0.0);
        let c = ParticleConfig::new(
            vec![Particle { pos: [0, 0], charge: 1.0 }, Particle { pos: [1, 0], charge: -1.0 }],
            vec![],
        )
        .unwrap();
        assert!((energy(&c, &t).unwrap() + t.get([1, 0])).abs() < 1e-15);
    }
}
