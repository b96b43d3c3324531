//! Scale-indexed covariance family `Γ_j` built from a radial cutoff `u`.
//!
//! `Γ̃_j(x) = ∫ d²p/(2π)² e^{ipx} [u(L^j p) − u(L^{j+1} p)]/p²`, sampled on ℤ².
//! For the default cutoff `u(p) = e^{−p²}` every kernel is a difference of
//! exponential integrals and partial sums over scales telescope.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{e1, ein, integrate_breaks, log_breaks, one_minus_j0, GaussLegendre, EULER_GAMMA};

const FOUR_PI: f64 = 4.0 * PI;

type CutoffFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Radial momentum cutoff `p ↦ u(p)` with a provenance label.
#[derive(Clone)]
pub struct CutoffFunction {
    label: String,
    kind: CutoffKind,
}

#[derive(Clone)]
enum CutoffKind {
    Gaussian,
    Custom(CutoffFn),
}

impl fmt::Debug for CutoffFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CutoffFunction").field("label", &self.label).finish()
    }
}

impl CutoffFunction {
    /// Default cutoff `u(p) = e^{−p²}`, evaluated through closed forms.
    pub fn gaussian() -> Self {
        CutoffFunction { label: "gaussian".into(), kind: CutoffKind::Gaussian }
    }

    /// Any radial cutoff, evaluated through Hankel quadrature.
    pub fn custom(label: impl Into<String>, u: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        CutoffFunction { label: label.into(), kind: CutoffKind::Custom(Arc::new(u)) }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, CutoffKind::Gaussian)
    }

    pub fn eval(&self, p: f64) -> f64 {
        match &self.kind {
            CutoffKind::Gaussian => (-p * p).exp(),
            CutoffKind::Custom(f) => f(p),
        }
    }
}

/// A unit lattice vector in `û = {±e₀, ±e₁}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub axis: u8,
    pub positive: bool,
}

impl Direction {
    pub const E0: Direction = Direction { axis: 0, positive: true };
    pub const E1: Direction = Direction { axis: 1, positive: true };
    pub const MINUS_E0: Direction = Direction { axis: 0, positive: false };
    pub const MINUS_E1: Direction = Direction { axis: 1, positive: false };

    pub fn all() -> [Direction; 4] {
        [Self::E0, Self::E1, Self::MINUS_E0, Self::MINUS_E1]
    }

    /// Lattice displacement `±e_axis`.
    pub fn shift(self) -> [i64; 2] {
        let s = if self.positive { 1 } else { -1 };
        if self.axis == 0 {
            [s, 0]
        } else {
            [0, s]
        }
    }

    /// `∂^μφ_x = sign·(φ_{x+shift} − φ_x)`: forward for `+e`, backward for `−e`.
    pub fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    pub fn reversed(self) -> Direction {
        Direction { axis: self.axis, positive: !self.positive }
    }
}

/// Sidecar header of an on-disk kernel cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    #[serde(rename = "L")]
    pub l: u32,
    pub j: usize,
    pub radius: u64,
    pub half_width: u64,
    pub cutoff_label: String,
    pub tol: f64,
    pub format_version: u32,
}

const CACHE_FORMAT_VERSION: u32 = 1;
const CACHE_HALF_WIDTH_CAP: u64 = 256;

/// Values of all scale kernels at one radius, `m = 0..=top`.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    /// `Γ_m(r)`.
    pub gamma: Vec<f64>,
    /// `Γ_m(0|r) = Γ_m(0) − Γ_m(r)`.
    pub zero_minus: Vec<f64>,
    /// `Γ_{∞,top+1}(0|r)`.
    pub tail_zero_minus: f64,
}

impl RadialProfile {
    /// `Γ_{j,n}(r) = Σ_{m=n}^{j} Γ_m(r)` (zero when `j < n`).
    pub fn partial(&self, j: isize, n: isize) -> f64 {
        if j < n {
            return 0.0;
        }
        self.gamma[n as usize..=j as usize].iter().sum()
    }

    /// `Γ_{j,n}(0|r)`.
    pub fn partial_zero_minus(&self, j: isize, n: isize) -> f64 {
        if j < n {
            return 0.0;
        }
        self.zero_minus[n as usize..=j as usize].iter().sum()
    }

    /// `Γ_{∞,n}(0|r)`.
    pub fn infinite_zero_minus(&self, n: usize) -> f64 {
        let top = self.zero_minus.len();
        if n >= top {
            // only the precomputed tail is available beyond the profile
            return self.tail_zero_minus;
        }
        self.zero_minus[n..].iter().sum::<f64>() + self.tail_zero_minus
    }
}

/// The family `{Γ_j}` for one block size `L` and cutoff.
#[derive(Debug, Clone)]
pub struct CovarianceFamily {
    l: u32,
    lf: f64,
    ln_l: f64,
    j_max: usize,
    cutoff: CutoffFunction,
    tol: f64,
    gamma0: f64,
    radii: Vec<u64>,
    c_tilde: f64,
    p_cut: f64,
}

impl CovarianceFamily {
    /// Build and validate a family with scales `0..=j_max`.
    pub fn build(l: u32, j_max: usize, cutoff: CutoffFunction, tol: f64) -> Result<Self> {
        if l < 2 {
            return Err(Error::Domain(format!("block size L={l} must be at least 2")));
        }
        if j_max < 1 {
            return Err(Error::Domain("j_max must be at least 1".into()));
        }
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::Domain(format!("tolerance {tol} must lie in (0,1)")));
        }
        let p_cut = validate_cutoff(&cutoff)?;
        let lf = l as f64;
        let ln_l = lf.ln();
        let mut fam = CovarianceFamily {
            l,
            lf,
            ln_l,
            j_max,
            cutoff,
            tol,
            gamma0: ln_l / (2.0 * PI),
            radii: Vec::new(),
            c_tilde: f64::NAN,
            p_cut,
        };
        fam.radii = (0..=j_max).map(|j| fam.find_radius(j)).collect::<Result<_>>()?;
        fam.c_tilde = fit_c_tilde(&fam)?;
        Ok(fam)
    }

    /// Default family: Gaussian cutoff, `tol = 1e−12`.
    pub fn gaussian(l: u32, j_max: usize) -> Result<Self> {
        Self::build(l, j_max, CutoffFunction::gaussian(), 1e-12)
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn l_f64(&self) -> f64 {
        self.lf
    }

    pub fn ln_l(&self) -> f64 {
        self.ln_l
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn cutoff(&self) -> &CutoffFunction {
        &self.cutoff
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// `Γ_j(0) = ln L/(2π)`, identical for every scale.
    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// `Γ_{j,n}(0) = (j − n + 1) ln L/(2π)`.
    pub fn partial_at_zero(&self, j: isize, n: isize) -> f64 {
        if j < n {
            0.0
        } else {
            (j - n + 1) as f64 * self.gamma0
        }
    }

    /// The constant `c̃_E` of this family.
    pub fn c_tilde_e(&self) -> f64 {
        self.c_tilde
    }

    /// Radius beyond which `|Γ_j| < tol·Γ(0)`.
    pub fn radius(&self, j: usize) -> u64 {
        if j < self.radii.len() {
            self.radii[j]
        } else {
            // beyond the built range the radius follows exact scaling
            (self.radii[0] as f64 * self.lf.powi(j as i32)).ceil() as u64
        }
    }

    /// `L^{2m}` in floating point.
    pub fn l2(&self, m: usize) -> f64 {
        self.lf.powi(2 * m as i32)
    }

    /// Continuum kernel `Γ̃_j(r)` at a real radius.
    pub fn continuum(&self, j: usize, r: f64) -> f64 {
        match self.cutoff.kind {
            CutoffKind::Gaussian => {
                let a = r * r / (4.0 * self.l2(j));
                gaussian_gamma(a, self.lf * self.lf, self.ln_l)
            }
            CutoffKind::Custom(_) => self.hankel(r / self.lf.powi(j as i32), false),
        }
    }

    /// Continuum `Γ̃_j(0|r) = Γ̃_j(0) − Γ̃_j(r)`, accurate at small `r`.
    pub fn continuum_zero_minus(&self, j: usize, r: f64) -> f64 {
        match self.cutoff.kind {
            CutoffKind::Gaussian => {
                let a = r * r / (4.0 * self.l2(j));
                gaussian_zero_minus(a, self.lf * self.lf, self.ln_l)
            }
            CutoffKind::Custom(_) => self.hankel(r / self.lf.powi(j as i32), true),
        }
    }

    /// `Γ̃_{∞,n}(0|r) = Σ_{m≥n} Γ̃_m(0|r)`.
    pub fn infinite_zero_minus(&self, n: usize, r: f64) -> f64 {
        match self.cutoff.kind {
            CutoffKind::Gaussian => ein(r * r / (4.0 * self.l2(n))) / FOUR_PI,
            CutoffKind::Custom(_) => {
                let mut s = 0.0;
                let mut m = n;
                loop {
                    let t = self.continuum_zero_minus(m, r);
                    s += t;
                    if t.abs() <= 1e-17 * s.abs().max(1e-300) || m > n + 200 {
                        break;
                    }
                    m += 1;
                }
                s
            }
        }
    }

    /// `Γ_j(x)` on the lattice; errors outside the truncation radius.
    pub fn kernel(&self, j: usize, x: [i64; 2]) -> Result<f64> {
        self.check_point(j, x)?;
        Ok(self.continuum(j, norm(x)))
    }

    /// `Γ_j(0|x)` on the lattice.
    pub fn kernel_zero_minus(&self, j: usize, x: [i64; 2]) -> Result<f64> {
        self.check_point(j, x)?;
        Ok(self.continuum_zero_minus(j, norm(x)))
    }

    fn check_point(&self, j: usize, x: [i64; 2]) -> Result<()> {
        if j > self.j_max {
            return Err(Error::Domain(format!("scale {j} exceeds j_max={}", self.j_max)));
        }
        let r = self.radius(j) as f64 + 2.0;
        if norm(x) > r {
            return Err(Error::Domain(format!(
                "point ({},{}) lies outside radius {} of scale {j}",
                x[0],
                x[1],
                self.radius(j)
            )));
        }
        Ok(())
    }

    /// Kernels of every scale `0..=top` at one radius.
    pub fn radial_profile(&self, r: f64, top: usize) -> RadialProfile {
        match self.cutoff.kind {
            CutoffKind::Gaussian => {
                let c0 = r * r / 4.0;
                let cs: Vec<f64> = (0..=top + 1).map(|m| c0 / self.l2(m)).collect();
                let mut e1s: Vec<f64> = vec![f64::NAN; top + 2];
                let eins: Vec<f64> = cs
                    .iter()
                    .enumerate()
                    .map(|(m, &c)| {
                        if c > 3.0 {
                            e1s[m] = e1(c);
                            e1s[m] + EULER_GAMMA + c.ln()
                        } else {
                            ein(c)
                        }
                    })
                    .collect();
                let mut e1_at = |m: usize| {
                    if e1s[m].is_nan() {
                        e1s[m] = if cs[m] > 0.0 { e1(cs[m]) } else { f64::INFINITY };
                    }
                    e1s[m]
                };
                let mut gamma = Vec::with_capacity(top + 1);
                let mut zero_minus = Vec::with_capacity(top + 1);
                for m in 0..=top {
                    let d = eins[m] - eins[m + 1];
                    zero_minus.push(d / FOUR_PI);
                    let g = if cs[m] <= 2.0 {
                        (2.0 * self.ln_l - d) / FOUR_PI
                    } else {
                        (e1_at(m + 1) - e1_at(m)) / FOUR_PI
                    };
                    gamma.push(g);
                }
                RadialProfile { gamma, zero_minus, tail_zero_minus: eins[top + 1] / FOUR_PI }
            }
            CutoffKind::Custom(_) => {
                let gamma = (0..=top).map(|m| self.continuum(m, r)).collect();
                let zero_minus = (0..=top).map(|m| self.continuum_zero_minus(m, r)).collect();
                RadialProfile { gamma, zero_minus, tail_zero_minus: self.infinite_zero_minus(top + 1, r) }
            }
        }
    }

    /// Fourier multiplier `φ_m(p) = [u(L^m p) − u(L^{m+1} p)]/p²`.
    pub fn fourier(&self, m: usize, p: f64) -> f64 {
        let lo = self.l2(m);
        match self.cutoff.kind {
            CutoffKind::Gaussian => {
                let hi = lo * self.lf * self.lf;
                if p == 0.0 {
                    return hi - lo;
                }
                let p2 = p * p;
                (-lo * p2).exp() * -(-(hi - lo) * p2).exp_m1() / p2
            }
            CutoffKind::Custom(_) => {
                if p == 0.0 {
                    // u(p) = 1 − κp² + …; second-order finite difference estimate
                    let h = 1e-4;
                    let kappa = (1.0 - self.cutoff.eval(h)) / (h * h);
                    return kappa * (self.l2(m + 1) - lo);
                }
                let lm = self.lf.powi(m as i32);
                (self.cutoff.eval(lm * p) - self.cutoff.eval(lm * self.lf * p)) / (p * p)
            }
        }
    }

    /// Momentum beyond which `φ_m` is negligible (capped at π).
    pub fn fourier_cutoff(&self, m: usize) -> f64 {
        (self.p_cut / self.lf.powi(m as i32)).min(PI)
    }

    /// Lattice differences of `Γ_j` at `x` along one or two directions.
    pub fn lattice_derivative(&self, j: usize, x: [i64; 2], dirs: &[Direction]) -> Result<f64> {
        if dirs.is_empty() || dirs.len() > 2 {
            return Err(Error::Domain("lattice_derivative takes one or two directions".into()));
        }
        self.check_point(j, x)?;
        if self.cutoff.is_gaussian() {
            return Ok(self.gaussian_difference(j, x, dirs));
        }
        let sign: f64 = dirs.iter().map(|d| d.sign()).product();
        let k = |dx: [i64; 2]| self.continuum(j, norm([x[0] + dx[0], x[1] + dx[1]]));
        let a = dirs[0].shift();
        let v = if dirs.len() == 1 {
            k(a) - k([0, 0])
        } else {
            let b = dirs[1].shift();
            k([a[0] + b[0], a[1] + b[1]]) - k(a) - k(b) + k([0, 0])
        };
        Ok(sign * v)
    }

    /// Heat-kernel form of lattice differences; no cancellation at large `|x|`.
    fn gaussian_difference(&self, j: usize, x: [i64; 2], dirs: &[Direction]) -> f64 {
        let sq = |d: [i64; 2]| {
            let a = (x[0] + d[0]) as f64;
            let b = (x[1] + d[1]) as f64;
            0.25 * (a * a + b * b)
        };
        let a0 = sq([0, 0]);
        let sign: f64 = dirs.iter().map(|d| d.sign()).product();
        let wa = dirs[0].shift();
        let da = sq(wa) - a0;
        if dirs.len() == 1 {
            let rates = [a0, a0 + da];
            let v = self.heat_integral(j, &rates, |s| (-a0 * s).exp() * (-da * s).exp_m1());
            return sign * v;
        }
        let wb = dirs[1].shift();
        let db = sq(wb) - a0;
        let ab = 0.5 * (wa[0] * wb[0] + wa[1] * wb[1]) as f64;
        let rates = [a0, a0 + da, a0 + db, a0 + da + db + ab];
        let v = self.heat_integral(j, &rates, |s| {
            (-a0 * s).exp() * ((-da * s).exp_m1() * (-db * s).exp_m1() + (-(da + db) * s).exp() * (-ab * s).exp_m1())
        });
        sign * v
    }

    /// `(1/4π)∫ dv f(e^{−v})` over `v ∈ [2m ln L, (2m+2) ln L]`, with panels
    /// adapted to the fastest decay rate among `rates`.
    fn heat_integral(&self, m: usize, rates: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let v0 = 2.0 * m as f64 * self.ln_l;
        let v1 = v0 + 2.0 * self.ln_l;
        let bmax = rates.iter().cloned().fold(0.0, f64::max);
        let bmin = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut v = v0;
        if bmin > 0.0 {
            v = v.max((bmin / 60.0).ln());
        }
        if v >= v1 {
            return 0.0;
        }
        let rule = GaussLegendre::g12();
        let mut acc = 0.0;
        while v < v1 {
            let x = bmax * (-v).exp();
            let step = if x > 1.0 { (1.5 / x).min(0.5) } else { 0.5 };
            let next = (v + step).min(v1);
            acc += rule.integrate(v, next, |t| f((-t).exp()));
            v = next;
        }
        acc / FOUR_PI
    }

    /// `max |Γ_j(x)|` for `|x| ≥ L^{j+1}/2`: the finite-range violation.
    pub fn max_beyond_range(&self, j: usize) -> f64 {
        let r = 0.5 * self.lf.powi(j as i32 + 1);
        // kernels are radially decreasing beyond the origin for admissible cutoffs
        self.continuum(j, r).abs()
    }

    /// Fourier positivity `u(L^j p) − u(L^{j+1} p) ≥ 0` on a momentum grid.
    pub fn fourier_positive(&self, j: usize) -> bool {
        let lj = self.lf.powi(j as i32);
        (0..2000).all(|i| {
            let p = 1e-3 * (i as f64 * 0.01).exp() / lj;
            self.cutoff.eval(lj * p) - self.cutoff.eval(lj * self.lf * p) >= -1e-15
        })
    }

    fn find_radius(&self, j: usize) -> Result<u64> {
        let target = self.tol * self.gamma0;
        let lj = self.lf.powi(j as i32 + 1);
        let mut hi = lj;
        let mut iters = 0;
        while self.continuum(j, hi).abs() >= target {
            hi *= 2.0;
            iters += 1;
            if iters > 60 {
                return Err(Error::Numeric(format!("kernel of scale {j} does not decay below {target:e}")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.continuum(j, mid).abs() >= target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 0.5 {
                break;
            }
        }
        Ok(hi.ceil() as u64)
    }

    /// Hankel transform at scale 0: `Γ̃_0(r)` or `Γ̃_0(0|r)`.
    fn hankel(&self, r: f64, zero_minus: bool) -> f64 {
        let u = &self.cutoff;
        let l = self.lf;
        let weight = |p: f64| (u.eval(p) - u.eval(l * p)) / p;
        let kern = |p: f64| {
            if zero_minus {
                one_minus_j0(p * r)
            } else {
                libm::j0(p * r)
            }
        };
        if zero_minus && r == 0.0 {
            return 0.0;
        }
        let p_hi = self.p_cut;
        let p_lo = 1e-6 / l;
        let rule = GaussLegendre::g20();
        let head = rule.integrate(0.0, p_lo, |p| kern(p) * weight(p));
        let mut breaks = log_breaks(p_lo, p_hi, 0.1);
        if r > 0.0 {
            let max_w = PI / (2.0 * r);
            let mut refined = vec![breaks[0]];
            for w in breaks.windows(2) {
                let n = ((w[1] - w[0]) / max_w).ceil().max(1.0) as usize;
                for i in 1..=n {
                    refined.push(w[0] + (w[1] - w[0]) * i as f64 / n as f64);
                }
            }
            breaks = refined;
        }
        let body = integrate_breaks(rule, &breaks, |p| kern(p) * weight(p));
        (head + body) / (2.0 * PI)
    }

    /// Write the kernel of scale `j` on `[−h, h]²` as little-endian f64 with a JSON sidecar.
    pub fn write_cache(&self, j: usize, dir: &Path) -> Result<PathBuf> {
        let h = self.radius(j).min(CACHE_HALF_WIDTH_CAP);
        let hi = h as i64;
        let mut bytes = Vec::with_capacity(((2 * h + 1) * (2 * h + 1) * 8) as usize);
        for x0 in -hi..=hi {
            for x1 in -hi..=hi {
                bytes.extend_from_slice(&self.continuum(j, norm([x0, x1])).to_le_bytes());
            }
        }
        std::fs::create_dir_all(dir)?;
        let stem = cache_stem(self.l, j, self.cutoff.label());
        let bin = dir.join(format!("{stem}.bin"));
        std::fs::write(&bin, bytes)?;
        let header = CacheHeader {
            l: self.l,
            j,
            radius: self.radius(j),
            half_width: h,
            cutoff_label: self.cutoff.label().to_string(),
            tol: self.tol,
            format_version: CACHE_FORMAT_VERSION,
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
        Ok(bin)
    }

    /// Read a cache written by [`write_cache`](Self::write_cache), verifying its header.
    pub fn read_cache(&self, j: usize, dir: &Path) -> Result<(CacheHeader, Vec<f64>)> {
        let stem = cache_stem(self.l, j, self.cutoff.label());
        let header: CacheHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if header.format_version != CACHE_FORMAT_VERSION
            || header.l != self.l
            || header.j != j
            || header.cutoff_label != self.cutoff.label()
            || header.tol != self.tol
        {
            return Err(Error::Io(format!("cache header mismatch for {stem}")));
        }
        let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
        let side = 2 * header.half_width + 1;
        if bytes.len() as u64 != side * side * 8 {
            return Err(Error::Io(format!("cache {stem} has {} bytes, expected {}", bytes.len(), side * side * 8)));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((header, values))
    }

    /// CSV dump `j,x0,x1,gamma` of one scale on `[−h, h]²`.
    pub fn kernel_csv(&self, j: usize, half_width: i64) -> String {
        let mut s = String::from("j,x0,x1,gamma\n");
        for x0 in -half_width..=half_width {
            for x1 in -half_width..=half_width {
                s.push_str(&format!("{j},{x0},{x1},{:.17e}\n", self.continuum(j, norm([x0, x1]))));
            }
        }
        s
    }
}

fn cache_stem(l: u32, j: usize, label: &str) -> String {
    let clean: String = label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    format!("gamma_v{CACHE_FORMAT_VERSION}_L{l}_j{j}_{clean}")
}

/// Euclidean norm of a lattice point.
pub fn norm(x: [i64; 2]) -> f64 {
    ((x[0] * x[0] + x[1] * x[1]) as f64).sqrt()
}

/// `4πΓ = E₁(a/L²) − E₁(a)` with `a = r²/(4L^{2j})`.
fn gaussian_gamma(a: f64, l2: f64, ln_l: f64) -> f64 {
    let b = a / l2;
    if a <= 2.0 {
        (2.0 * ln_l - (ein(a) - ein(b))) / FOUR_PI
    } else {
        (e1(b) - e1(a)) / FOUR_PI
    }
}

fn gaussian_zero_minus(a: f64, l2: f64, ln_l: f64) -> f64 {
    let b = a / l2;
    if a <= 40.0 {
        (ein(a) - ein(b)) / FOUR_PI
    } else {
        ln_l / (2.0 * PI) - gaussian_gamma(a, l2, ln_l)
    }
}

/// Check `u(0)=1`, monotonicity and decay; returns the momentum beyond which `u` is negligible.
fn validate_cutoff(cutoff: &CutoffFunction) -> Result<f64> {
    if cutoff.is_gaussian() {
        return Ok(6.5);
    }
    let u0 = cutoff.eval(0.0);
    if (u0 - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("cutoff '{}' has u(0) = {u0}, expected 1", cutoff.label())));
    }
    let mut prev = u0;
    let mut p_cut = None;
    for i in 1..=4000 {
        let p = 1e-3 * (i as f64 * 0.005).exp();
        let v = cutoff.eval(p);
        if !v.is_finite() {
            return Err(Error::Domain(format!("cutoff '{}' is not finite at p={p}", cutoff.label())));
        }
        if v > prev + 1e-14 {
            return Err(Error::Domain(format!("cutoff '{}' increases near p={p}", cutoff.label())));
        }
        prev = v;
        if p_cut.is_none() && v.abs() < 1e-15 {
            p_cut = Some(p);
        }
    }
    p_cut.ok_or_else(|| {
        Error::Numeric(format!(
            "cutoff '{}' does not fall below 1e-15 for p ≤ {:.3e}; Hankel quadrature would not converge",
            cutoff.label(),
            1e-3 * 20f64.exp()
        ))
    })
}

/// Closed form of `c̃_E` for the Gaussian cutoff: `(ln 4 − γ_E)/(4π)`.
pub fn c_tilde_gaussian() -> f64 {
    (4f64.ln() - EULER_GAMMA) / FOUR_PI
}

/// Fitted `c̃_E`: `Σ_{j≤J}[Γ_j(x) − Γ_j(0)] + ln|x|/(2π)` on a geometric
/// window, with the finite-`J` tail (∝ |x|²) removed by a two-parameter fit.
pub fn fit_c_tilde(family: &CovarianceFamily) -> Result<f64> {
    let r_lo: f64 = 20.0;
    let r_hi: f64 = 1000.0;
    // tail Γ_{∞,J+1}(0|r) ≈ r²/(4L^{2J+2}) kept below 1e−6 at r_hi
    let needed = (r_hi * r_hi / 4.0 / 1e-6).ln() / (2.0 * family.ln_l());
    let top = (needed.ceil() as usize).max(1);
    let n = 24;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let r = r_lo * (r_hi / r_lo).powf(i as f64 / (n - 1) as f64);
        let prof = family.radial_profile(r, top);
        let sum: f64 = -prof.zero_minus.iter().sum::<f64>();
        xs.push(r * r);
        ys.push(sum + r.ln() / (2.0 * PI));
    }
    // least squares for y = c + d·x
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let d = sxy / sxx;
    let c = my - d * mx;
    let resid = xs.iter().zip(&ys).map(|(x, y)| (y - c - d * x).abs()).fold(0.0, f64::max);
    if resid > 1e-7 {
        return Err(Error::Numeric(format!("c̃_E fit residual {resid:e} exceeds 1e-7")));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_origin_is_log_l_over_two_pi() {
        let f = CovarianceFamily::gaussian(16, 8).unwrap();
        for j in 0..=8 {
            assert!((f.kernel(j, [0, 0]).unwrap() - 16f64.ln() / (2.0 * PI)).abs() < 1e-14);
        }
        assert!((f.gamma0() - 0.441271).abs() < 1e-6);
    }

    #[test]
    fn profile_matches_pointwise_kernels() {
        let f = CovarianceFamily::gaussian(8, 4).unwrap();
        for &r in &[0.0, 0.7, 3.0, 11.0, 47.0, 300.0, 5000.0] {
            let p = f.radial_profile(r, 5);
            for m in 0..=5 {
                let g = f.continuum(m, r);
                let z = f.continuum_zero_minus(m, r);
                assert!((p.gamma[m] - g).abs() < 1e-15, "r={r} m={m}");
                assert!((p.zero_minus[m] - z).abs() < 1e-13 * z.abs().max(1e-3), "r={r} m={m}");
            }
            let inf = f.infinite_zero_minus(0, r);
            assert!((p.infinite_zero_minus(0) - inf).abs() < 1e-14 * inf.max(1e-3));
        }
    }

    #[test]
    fn radius_bounds_the_kernel() {
        let f = CovarianceFamily::gaussian(8, 3).unwrap();
        for j in 0..=3 {
            let r = f.radius(j) as f64;
            assert!(f.continuum(j, r) < 1e-12 * f.gamma0());
            assert!(f.continuum(j, r - 1.0) >= 1e-12 * f.gamma0());
        }
    }

    #[test]
    fn kernel_outside_radius_is_a_domain_error() {
        let f = CovarianceFamily::gaussian(8, 2).unwrap();
        let r = f.radius(1) as i64;
        assert!(matches!(f.kernel(1, [r + 10, 0]), Err(Error::Domain(_))));
        assert!(matches!(f.kernel(3, [0, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn c_tilde_matches_closed_form() {
        for l in [8, 16, 32] {
            let f = CovarianceFamily::gaussian(l, 2).unwrap();
            assert!((f.c_tilde_e() - c_tilde_gaussian()).abs() < 1e-9, "L={l}");
        }
    }

    #[test]
    fn stable_differences_agree_with_naive_ones() {
        let f = CovarianceFamily::gaussian(8, 3).unwrap();
        for j in 0..=2 {
            for &x in &[[0, 0], [1, 0], [-1, 0], [3, -2], [17, 5], [-40, 33]] {
                for d in Direction::all() {
                    let s = f.lattice_derivative(j, x, &[d]).unwrap();
                    let sh = d.shift();
                    let naive =
                        d.sign() * (f.continuum(j, norm([x[0] + sh[0], x[1] + sh[1]])) - f.continuum(j, norm(x)));
                    assert!((s - naive).abs() < 1e-14, "j={j} x={x:?} d={d:?}: {s} vs {naive}");
                    for e in Direction::all() {
                        let s2 = f.lattice_derivative(j, x, &[d, e]).unwrap();
                        let se = e.shift();
                        let k = |a: [i64; 2]| f.continuum(j, norm([x[0] + a[0], x[1] + a[1]]));
                        let n2 = d.sign() * e.sign() * (k([sh[0] + se[0], sh[1] + se[1]]) - k(sh) - k(se) + k([0, 0]));
                        assert!((s2 - n2).abs() < 1e-14, "j={j} x={x:?} {d:?} {e:?}: {s2} vs {n2}");
                    }
                }
            }
        }
    }

    #[test]
    fn custom_gaussian_cutoff_reproduces_closed_form() {
        let quad = CovarianceFamily::build(8, 2, CutoffFunction::custom("gauss-quadrature", |p| (-p * p).exp()), 1e-10)
            .unwrap();
        let exact = CovarianceFamily::gaussian(8, 2).unwrap();
        for &r in &[0.0, 0.5, 1.0, 2.5, 7.0, 15.0, 40.0] {
            for j in 0..=1 {
                let a = quad.continuum(j, r);
                let b = exact.continuum(j, r);
                assert!((a - b).abs() < 1e-10, "r={r} j={j}: {a} vs {b}");
                let a = quad.continuum_zero_minus(j, r);
                let b = exact.continuum_zero_minus(j, r);
                assert!((a - b).abs() < 1e-10, "r={r} j={j}: {a} vs {b}");
            }
        }
        assert!((quad.c_tilde_e() - c_tilde_gaussian()).abs() < 1e-8);
    }

    #[test]
    fn increasing_cutoff_is_rejected() {
        let bad = CutoffFunction::custom("bump", |p: f64| (-p * p).exp() * (1.0 + 0.5 * (p * 3.0).sin().powi(2)));
        assert!(matches!(CovarianceFamily::build(8, 2, bad, 1e-12), Err(Error::Domain(_))));
        let slow = CutoffFunction::custom("slow", |p: f64| 1.0 / (1.0 + p * p));
        assert!(matches!(CovarianceFamily::build(8, 2, slow, 1e-12), Err(Error::Numeric(_))));
    }

    #[test]
    fn cache_round_trip() {
        let f = CovarianceFamily::gaussian(3, 2).unwrap();
        let dir = std::env::temp_dir().join(format!("bktrg-cache-{}", std::process::id()));
        f.write_cache(1, &dir).unwrap();
        let (h, v) = f.read_cache(1, &dir).unwrap();
        let hw = h.half_width as i64;
        let side = 2 * hw + 1;
        let idx = |x0: i64, x1: i64| ((x0 + hw) * side + (x1 + hw)) as usize;
        assert_eq!(v[idx(0, 0)], f.gamma0());
        assert_eq!(v[idx(2, -1)], f.kernel(1, [2, -1]).unwrap());
        std::fs::remove_dir_all(dir).ok();
    }
}
