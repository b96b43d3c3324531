//! Per-scale flow coefficients as lattice sums over the covariance family.
//!
//! Two evaluation engines are used:
//!
//! * bilinear sums of lattice differences, `Σ_y (∂F)(∂G)`, are computed in
//!   momentum space as radial integrals of `φ_F φ_G` against the angular
//!   average of the difference symbols. This is exact by Parseval whenever
//!   one factor is supported inside the Brillouin zone, which holds for every
//!   scale `j ≥ 1` (the `j = 0` sums are done directly in real space);
//! * sums of radial non-linear functions `Σ_y F(|y|)` are split with a smooth
//!   erfc partition of unity: lattice shells inside, a radial integral outside.
//!   Because the outer piece is smooth on the lattice scale, replacing its sum
//!   by an integral commits an exponentially small (Poisson) error.
//!
//! A sum over `μ ∈ û` counts each of `±e₀, ±e₁` with weight one half, so it
//! equals the sum over `e₀, e₁`.
//!
//! `a_j` is assembled from the telescoping form
//! `α² Σ_y |y|² [Σ_{n≤j} R^{(j)}_n − Σ_{n<j} R^{(j−1)}_n]` with half-weighted
//! `R_n`, which equals `(α²/2) Σ_y |y|² [2 w₀,b,j (e^{−α²Γ_j(0|y)} − 1) + local]`.
//! This is the normalisation under which `a_j → 8π² e^{8π c̃_E} ln L`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{norm, CovarianceFamily, Direction, RadialProfile};
use crate::error::{Error, Result};
use crate::output::{self, Metadata};
use crate::special::{
    angular_first, angular_second_diag, angular_second_mixed, integrate_breaks, lattice_shells, log_breaks,
    GaussLegendre, NeumaierSum,
};

/// Truncation parameters of the two summation engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SumControl {
    /// Centre `r₀` of the lattice/integral partition.
    pub inner_radius: f64,
    /// Width `σ` of the erfc blend.
    pub blend_width: f64,
    /// Radial integrals stop at `outer_factor · radius(j)`.
    pub outer_factor: f64,
    /// Momentum integrals stop at `momentum_factor · p_cut / L^j` (capped at π).
    pub momentum_factor: f64,
    /// Panel width in `ln r` / `ln k`.
    pub panel_width: f64,
}

impl Default for SumControl {
    fn default() -> Self {
        SumControl { inner_radius: 48.0, blend_width: 4.0, outer_factor: 2.0, momentum_factor: 1.0, panel_width: 0.125 }
    }
}

impl SumControl {
    /// Every truncation radius doubled.
    pub fn doubled(&self) -> Self {
        SumControl {
            inner_radius: 2.0 * self.inner_radius,
            outer_factor: 2.0 * self.outer_factor,
            momentum_factor: 2.0 * self.momentum_factor,
            ..*self
        }
    }

    /// Blend half-width in units of `σ`; erfc(6.2) < 1e−17.
    const BLEND_SIGMAS: f64 = 6.2;

    fn chi(&self, r: f64) -> f64 {
        0.5 * libm::erfc((r - self.inner_radius) / self.blend_width)
    }

    fn lattice_limit(&self) -> f64 {
        self.inner_radius + Self::BLEND_SIGMAS * self.blend_width
    }

    fn integral_start(&self) -> f64 {
        (self.inner_radius - Self::BLEND_SIGMAS * self.blend_width).max(1.0)
    }
}

/// Coefficients of one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleCoefficients {
    pub j: usize,
    pub a: f64,
    pub b: f64,
    pub m11: f64,
    pub m22: f64,
    pub m12: f64,
    pub m21: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    #[serde(rename = "E3")]
    pub e3: f64,
    #[serde(rename = "E4")]
    pub e4: f64,
}

/// Evaluator bound to one family, coupling and truncation policy.
pub struct CoefficientEngine<'a> {
    fam: &'a CovarianceFamily,
    alpha2: f64,
    control: SumControl,
    shells: Vec<(f64, f64)>,
}

impl<'a> CoefficientEngine<'a> {
    pub fn new(fam: &'a CovarianceFamily, alpha2: f64, control: SumControl) -> Result<Self> {
        if !(alpha2 > 0.0 && alpha2.is_finite()) {
            return Err(Error::Domain(format!("alpha^2 must be positive, got {alpha2}")));
        }
        if fam.l() < 3 {
            return Err(Error::Domain("coefficient sums need L >= 3".into()));
        }
        let rmax = control.lattice_limit();
        let shells = lattice_shells((rmax * rmax).floor() as u64)
            .into_iter()
            .map(|(n, c)| ((n as f64).sqrt(), c as f64))
            .collect();
        Ok(CoefficientEngine { fam, alpha2, control, shells })
    }

    pub fn family(&self) -> &CovarianceFamily {
        self.fam
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn control(&self) -> SumControl {
        self.control
    }

    fn check_scale(&self, j: usize) -> Result<()> {
        if j > self.fam.j_max() {
            return Err(Error::Range(format!("scale {j} exceeds the family's j_max={}", self.fam.j_max())));
        }
        Ok(())
    }

    /// `Σ_{y∈ℤ²} F(|y|)` where `F` reads the profile `Γ_0..Γ_top` at `|y|`.
    pub fn radial_sum(&self, top: usize, j_range: usize, f: impl Fn(f64, &RadialProfile) -> f64 + Sync) -> f64 {
        let c = &self.control;
        let inner: f64 = self
            .shells
            .par_iter()
            .map(|&(r, mult)| {
                let w = c.chi(r);
                if w == 0.0 {
                    return 0.0;
                }
                mult * w * f(r, &self.fam.radial_profile(r, top))
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<NeumaierSum>()
            .value();
        let start = c.integral_start();
        let end = (c.outer_factor * self.fam.radius(j_range) as f64).max(4.0 * c.lattice_limit());
        let breaks = log_breaks(start, end, c.panel_width);
        let rule = GaussLegendre::g20();
        let outer: f64 = breaks
            .par_windows(2)
            .map(|w| {
                rule.integrate(w[0], w[1], |r| {
                    let g = 1.0 - c.chi(r);
                    if g == 0.0 {
                        return 0.0;
                    }
                    2.0 * PI * r * g * f(r, &self.fam.radial_profile(r, top))
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<NeumaierSum>()
            .value();
        inner + outer
    }

    /// `(1/2π)∫₀^K k f(k) dk` with `K` set by the finest scale `m` present.
    pub fn momentum_integral(&self, m: usize, f: impl Fn(f64) -> f64 + Sync) -> f64 {
        let k_max = (self.fam.fourier_cutoff(m) * self.control.momentum_factor).min(PI);
        let k_min = k_max * 1e-7;
        let breaks = log_breaks(k_min, k_max, self.control.panel_width);
        let rule = GaussLegendre::g20();
        // integrand vanishes like k³ at the origin; [0, k_min] is below 1e−28 relative
        let v: f64 = breaks
            .par_windows(2)
            .map(|w| rule.integrate(w[0], w[1], |k| k * f(k)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<NeumaierSum>()
            .value();
        v / (2.0 * PI)
    }

    /// `Σ_y (∂^{e₀}Γ₀)(y)²`, summed directly on the lattice.
    pub fn gradient_square_scale0(&self) -> f64 {
        let rr = (self.control.outer_factor * self.fam.radius(0) as f64).ceil() as i64 + 2;
        let w = (2 * rr + 2) as usize;
        let g: Vec<f64> = (0..w * w)
            .into_par_iter()
            .map(|i| {
                let x0 = (i / w) as i64 - rr;
                let x1 = (i % w) as i64 - rr;
                self.fam.continuum(0, norm([x0, x1]))
            })
            .collect();
        let rows: Vec<f64> = (0..w - 1)
            .into_par_iter()
            .map(|a| {
                let mut s = NeumaierSum::default();
                for b in 0..w {
                    let d = g[(a + 1) * w + b] - g[a * w + b];
                    s.add(d * d);
                }
                s.value()
            })
            .collect();
        rows.into_iter().collect::<NeumaierSum>().value()
    }

    /// `w₀,b,j(r)` from a profile with `top ≥ j − 1`.
    pub fn w0b_radial(&self, j: usize, p: &RadialProfile) -> f64 {
        let a2 = self.alpha2;
        let g0 = self.fam.gamma0();
        let mut s = 0.0;
        for n in 1..j {
            let damp = -a2 * p.partial_zero_minus(j as isize - 1, n as isize + 1);
            s += (damp - a2 * g0).exp() * (a2 * p.gamma[n]).exp_m1() * self.fam.l2(n).powi(-2);
        }
        0.5 * s
    }

    /// `w₁,c,j(r)` at charge parameter `t` (`t = η`; `t = −η̄` gives `w̄₁,c`).
    pub fn w1c_radial(&self, j: usize, t: f64, p: &RadialProfile) -> f64 {
        let a2 = self.alpha2;
        let mut s = 0.0;
        for n in 0..j {
            let w = -0.5 * a2 * self.fam.partial_at_zero(j as isize - 1, n as isize)
                + t * a2 * p.partial(j as isize - 1, n as isize + 1);
            s += w.exp() * (t * a2 * p.gamma[n]).exp_m1() / self.fam.l2(n);
        }
        s
    }

    /// `a_j` (zero at `j = 0`).
    pub fn a(&self, j: usize) -> Result<f64> {
        self.check_scale(j)?;
        if j == 0 {
            return Ok(0.0);
        }
        let a2 = self.alpha2;
        let local = (-a2 * self.fam.gamma0()).exp() * self.fam.l2(j).powi(-2);
        // each w₀,b term enters as a difference of two half-weighted scale
        // products, so the kernel is counted twice (see the module docs)
        let s = self.radial_sum(j, j, |r, p| {
            let wb = 2.0 * self.w0b_radial(j, p);
            r * r * (wb * (-a2 * p.zero_minus[j]).exp_m1() + local * (a2 * p.gamma[j]).exp_m1())
        });
        Ok(0.5 * a2 * s)
    }

    /// `b_j` (zero at `j = 0`).
    pub fn b(&self, j: usize) -> Result<f64> {
        self.check_scale(j)?;
        if j == 0 {
            return Ok(0.0);
        }
        let a2 = self.alpha2;
        let weights: Vec<f64> = (0..j)
            .map(|n| (-0.5 * a2 * self.fam.partial_at_zero(j as isize - 1, n as isize)).exp() * self.fam.l2(j - n))
            .collect();
        let v = self.momentum_integral(j, |k| {
            let pj = self.fam.fourier(j, k);
            let mix: f64 = (0..j).map(|n| weights[n] * self.fam.fourier(n, k)).sum();
            angular_first(k) * pj * (pj + 2.0 * mix)
        });
        Ok(a2 * v)
    }

    /// `Σ_y[(∂Γ_j)² + 2(∂Γ_{j−1,0})(∂Γ_j)]`, summed over `e₀, e₁`.
    fn gradient_form(&self, j: usize) -> f64 {
        if j == 0 {
            return 2.0 * self.gradient_square_scale0();
        }
        2.0 * self.momentum_integral(j, |k| {
            let pj = self.fam.fourier(j, k);
            let below: f64 = (0..j).map(|n| self.fam.fourier(n, k)).sum();
            angular_first(k) * pj * (pj + 2.0 * below)
        })
    }

    /// `m₂,₁,j` at charge parameter `t` (`t = η`; `t = 1 − η` gives `m₁,₂,j`).
    fn m_offdiag(&self, j: usize, t: f64) -> f64 {
        let a2 = self.alpha2;
        let local = (-t * a2 * self.fam.gamma0()).exp() / self.fam.l2(j);
        self.radial_sum(j, j, |_, p| {
            let w = self.w1c_radial(j, t, p);
            w * (-t * a2 * p.zero_minus[j]).exp_m1() + local * (t * a2 * p.gamma[j]).exp_m1()
        })
    }

    /// `(m11, m22, m12, m21)` for charge `η ∈ (0,1)`.
    pub fn m(&self, eta: f64, j: usize) -> Result<(f64, f64, f64, f64)> {
        self.check_scale(j)?;
        check_eta(eta)?;
        let etab = eta - 1.0;
        let g = self.gradient_form(j);
        let m11 = self.alpha2 * eta * eta * 0.5 * g;
        let m22 = self.alpha2 * etab * etab * 0.5 * g;
        let m21 = self.m_offdiag(j, eta);
        let m12 = if eta == 0.5 { m21 } else { self.m_offdiag(j, -etab) };
        Ok((m11, m22, m12, m21))
    }

    /// `(E2, E3, E4)`; `E3_0 = E4_0 = 0`.
    pub fn energy(&self, j: usize) -> Result<(f64, f64, f64)> {
        self.check_scale(j)?;
        let fam = self.fam;
        let l2j = fam.l2(j);
        let g_e0 = fam.continuum_zero_minus(j, 1.0);
        let e2 = 2.0 * l2j * g_e0;
        if j == 0 {
            return Ok((e2, 0.0, 0.0));
        }
        let e3 = 0.5
            * l2j
            * self.momentum_integral(j, |k| {
                let pj = fam.fourier(j, k);
                let mid: f64 = (1..j).map(|n| fam.fourier(n, k)).sum();
                (angular_second_diag(k) + angular_second_mixed(k)) * pj * (pj + 2.0 * mid)
            });
        let a2 = self.alpha2;
        // Σ_μ (∂^{−μ}∂^μ Γ_j)(0) = −4 Γ_j(0|e₀)
        let lap0 = -4.0 * g_e0;
        let first = self.radial_sum(j, j, |r, p| {
            let wb = self.w0b_radial(j, p);
            wb * ((-a2 * p.zero_minus[j]).exp_m1() - 0.5 * a2 * r * r * lap0)
        });
        let local = self.radial_sum(j, j, |_, p| (a2 * p.gamma[j]).exp_m1());
        let e4 = 2.0 * l2j * first + (-a2 * fam.gamma0()).exp() * local / l2j;
        Ok((e2, e3, e4))
    }

    /// All coefficients of one scale.
    pub fn scale(&self, eta: f64, j: usize) -> Result<ScaleCoefficients> {
        let (m11, m22, m12, m21) = self.m(eta, j)?;
        let (e2, e3, e4) = self.energy(j)?;
        Ok(ScaleCoefficients { j, a: self.a(j)?, b: self.b(j)?, m11, m22, m12, m21, e2, e3, e4 })
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("charge eta={eta} must lie in (0,1)")));
    }
    Ok(())
}

/// `a_j` with default truncation.
pub fn compute_a(family: &CovarianceFamily, alpha2: f64, j: usize) -> Result<f64> {
    CoefficientEngine::new(family, alpha2, SumControl::default())?.a(j)
}

/// `b_j` with default truncation.
pub fn compute_b(family: &CovarianceFamily, alpha2: f64, j: usize) -> Result<f64> {
    CoefficientEngine::new(family, alpha2, SumControl::default())?.b(j)
}

/// `(m11, m22, m12, m21)` with default truncation.
pub fn compute_m(family: &CovarianceFamily, alpha2: f64, eta: f64, j: usize) -> Result<(f64, f64, f64, f64)> {
    CoefficientEngine::new(family, alpha2, SumControl::default())?.m(eta, j)
}

/// `(E2, E3, E4)` with default truncation.
pub fn compute_energy_coeffs(family: &CovarianceFamily, alpha2: f64, j: usize) -> Result<(f64, f64, f64)> {
    CoefficientEngine::new(family, alpha2, SumControl::default())?.energy(j)
}

/// Labels of the kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelLabel {
    W0a {
        mu: Direction,
        nu: Direction,
    },
    W0b,
    W0c,
    W0d {
        mu: Direction,
    },
    W0e,
    W1b,
    W1bBar,
    W1c,
    W1cBar,
    /// Coefficient of `i` in `w₁,d`.
    W1d {
        nu: Direction,
    },
    /// Coefficient of `i` in `w̄₁,d`.
    W1dBar {
        nu: Direction,
    },
    W2a {
        eps: i8,
    },
    W2aBar {
        eps: i8,
    },
    W2b {
        eps: i8,
    },
}

/// Pointwise evaluator of the `w` kernels at one scale.
pub struct KernelFamily<'a> {
    fam: &'a CovarianceFamily,
    alpha2: f64,
    eta: f64,
    j: usize,
    /// `(Z_n, Z̄_n)` for `n < j`, needed only by the `w₂` kernels.
    charges: Option<(Vec<f64>, Vec<f64>)>,
}

/// The `w₀` kernels of scale `j`.
pub fn compute_w0(family: &CovarianceFamily, alpha2: f64, j: usize) -> Result<KernelFamily<'_>> {
    KernelFamily::new(family, alpha2, 0.5, j, None)
}

/// The `w₁` kernels of scale `j` at charge `η`.
pub fn compute_w1(family: &CovarianceFamily, alpha2: f64, eta: f64, j: usize) -> Result<KernelFamily<'_>> {
    KernelFamily::new(family, alpha2, eta, j, None)
}

/// The `w₂` kernels of scale `j`, given the charge constants `Z_n, Z̄_n` for `n < j`.
pub fn compute_w2<'a>(
    family: &'a CovarianceFamily,
    alpha2: f64,
    eta: f64,
    j: usize,
    z: Vec<f64>,
    zbar: Vec<f64>,
) -> Result<KernelFamily<'a>> {
    if z.len() < j || zbar.len() < j {
        return Err(Error::Range(format!("w2 kernels at scale {j} need Z_n for n < {j}")));
    }
    KernelFamily::new(family, alpha2, eta, j, Some((z, zbar)))
}

impl<'a> KernelFamily<'a> {
    fn new(
        fam: &'a CovarianceFamily,
        alpha2: f64,
        eta: f64,
        j: usize,
        charges: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        check_eta(eta)?;
        if j > fam.j_max() {
            return Err(Error::Range(format!("scale {j} exceeds the family's j_max={}", fam.j_max())));
        }
        Ok(KernelFamily { fam, alpha2, eta, j, charges })
    }

    pub fn scale(&self) -> usize {
        self.j
    }

    /// Radius beyond which every kernel of this scale is below the family tolerance.
    /// Every kernel of scale `j` involves `Γ_n` with `n < j` only.
    pub fn truncation_radius(&self) -> u64 {
        self.fam.radius(self.j.saturating_sub(1)) + 2
    }

    fn diff(&self, n: usize, y: [i64; 2], dirs: &[Direction]) -> f64 {
        if norm(y) > self.fam.radius(n) as f64 + 2.0 {
            return 0.0;
        }
        self.fam.lattice_derivative(n, y, dirs).unwrap_or(0.0)
    }

    fn partial_diff(&self, top: isize, n: isize, y: [i64; 2], d: Direction) -> f64 {
        (n.max(0)..=top).map(|m| self.diff(m as usize, y, &[d])).sum()
    }

    /// Kernel value at a lattice point.
    pub fn eval(&self, label: KernelLabel, y: [i64; 2]) -> Result<f64> {
        let j = self.j;
        let ji = j as isize;
        let a2 = self.alpha2;
        let fam = self.fam;
        let r = norm(y);
        let p = fam.radial_profile(r, j);
        let g0 = fam.gamma0();
        let eta = self.eta;
        let etab = eta - 1.0;
        let alpha = a2.sqrt();
        let v = match label {
            KernelLabel::W0a { mu, nu } => 0.5 * (1..j).map(|n| self.diff(n, y, &[mu.reversed(), nu])).sum::<f64>(),
            KernelLabel::W0b => {
                let prof = &p;
                let mut s = 0.0;
                for n in 1..j {
                    s += (-a2 * prof.partial_zero_minus(ji - 1, n as isize + 1) - a2 * g0).exp()
                        * (a2 * prof.gamma[n]).exp_m1()
                        * fam.l2(n).powi(-2);
                }
                0.5 * s
            }
            KernelLabel::W0c => {
                let mut s = 0.0;
                for n in 1..j {
                    let ni = n as isize + 1;
                    let e = -a2 * (fam.partial_at_zero(ji - 1, ni) + p.partial(ji - 1, ni)) - a2 * g0;
                    s += e.exp() * (-a2 * p.gamma[n]).exp_m1() * fam.l2(n).powi(-2);
                }
                0.5 * s
            }
            KernelLabel::W0d { mu } => {
                let mut s = 0.0;
                for n in 1..j {
                    s += (-0.5 * a2 * fam.partial_at_zero(ji - 1, n as isize)).exp() * self.diff(n, y, &[mu])
                        / fam.l2(n);
                }
                0.5 * alpha * s
            }
            KernelLabel::W0e => {
                let mut s = 0.0;
                for n in 1..j {
                    let ni = n as isize;
                    let mut grad = 0.0;
                    for d in [Direction::E0, Direction::E1] {
                        let full = self.partial_diff(ji - 1, ni, y, d);
                        let upper = self.partial_diff(ji - 1, ni + 1, y, d);
                        grad += full * full - upper * upper;
                    }
                    s += (-0.5 * a2 * fam.partial_at_zero(ji - 1, ni)).exp() * grad / fam.l2(n);
                }
                0.25 * a2 * s
            }
            KernelLabel::W1b | KernelLabel::W1bBar | KernelLabel::W1c | KernelLabel::W1cBar => {
                // w₁,b: t = −η; w̄₁,b: t = η̄; w₁,c: t = η; w̄₁,c: t = −η̄
                let t = match label {
                    KernelLabel::W1b => -eta,
                    KernelLabel::W1bBar => etab,
                    KernelLabel::W1c => eta,
                    _ => -etab,
                };
                let mut s = 0.0;
                for n in 0..j {
                    let w = -0.5 * a2 * fam.partial_at_zero(ji - 1, n as isize)
                        + t * a2 * p.partial(ji - 1, n as isize + 1);
                    s += w.exp() * (t * a2 * p.gamma[n]).exp_m1() / fam.l2(n);
                }
                s
            }
            KernelLabel::W1d { nu } => alpha * eta * (0..j).map(|n| self.diff(n, y, &[nu])).sum::<f64>(),
            KernelLabel::W1dBar { nu } => alpha * etab * (0..j).map(|n| self.diff(n, y, &[nu])).sum::<f64>(),
            KernelLabel::W2a { eps } | KernelLabel::W2aBar { eps } | KernelLabel::W2b { eps } => {
                let (z, zb) = self
                    .charges
                    .as_ref()
                    .ok_or_else(|| Error::Domain("w2 kernels need charge constants (use compute_w2)".into()))?;
                if eps != 1 && eps != -1 {
                    return Err(Error::Domain(format!("sign eps={eps} must be ±1")));
                }
                let e = eps as f64;
                let mut s = 0.0;
                for n in 0..j {
                    let ni = n as isize + 1;
                    let at0 = fam.partial_at_zero(ji - 1, ni);
                    // Γ_{j−1,n+1}(y|0) = −Γ_{j−1,n+1}(0|y)
                    let ymz = -p.partial_zero_minus(ji - 1, ni);
                    let l4 = fam.l2(n).powi(-2);
                    s += match label {
                        KernelLabel::W2a { .. } | KernelLabel::W2aBar { .. } => {
                            let (zz, c) = if matches!(label, KernelLabel::W2a { .. }) {
                                (z[n] * z[n], eta * eta)
                            } else {
                                (zb[n] * zb[n], etab * etab)
                            };
                            zz * l4
                                * (-c * (1.0 + e) * a2 * at0 - c * a2 * e * ymz - c * a2 * g0).exp()
                                * (-c * a2 * e * p.gamma[n]).exp_m1()
                        }
                        _ => {
                            let q = eta + e * etab;
                            let c = eta * etab;
                            z[n] * zb[n]
                                * l4
                                * (-q * q * 0.5 * a2 * at0
                                    - c * a2 * e * ymz
                                    - (eta * eta + etab * etab) * 0.5 * a2 * g0)
                                    .exp()
                                * (-c * a2 * e * p.gamma[n]).exp_m1()
                        }
                    };
                }
                0.5 * s
            }
        };
        Ok(v)
    }
}

/// Continuum limits `(a, b, m₂,₁)` of the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuumLimits {
    pub a_limit: f64,
    pub b_limit: f64,
    /// Defined for `η = 1/2` only.
    pub m21_limit: Option<f64>,
}

/// One-dimensional radial integrals for the large-`j` coefficient limits.
pub fn compute_asymptotic_continuum(family: &CovarianceFamily, alpha2: f64, eta: f64) -> Result<ContinuumLimits> {
    check_eta(eta)?;
    let lf = family.l_f64();
    let rule = GaussLegendre::g20();
    let cut = family.cutoff();
    // b: (α²/2)(1/2π)∫ dp/p [u(p)² − u(Lp)²]
    let p_hi = {
        let mut p = 1.0;
        while cut.eval(p) > 1e-18 {
            p *= 1.5;
        }
        p
    };
    let p_lo = 1e-9 / lf;
    let bi = integrate_breaks(rule, &log_breaks(p_lo, p_hi, 0.125), |p| {
        let u1 = cut.eval(p);
        let u2 = cut.eval(lf * p);
        (u1 * u1 - u2 * u2) / p
    });
    let b_limit = 0.5 * alpha2 * bi / (2.0 * PI);
    // w(r) = r⁴ e^{−α² Γ̃_{∞,0}(0|r)}
    let w = |r: f64, c: f64| r.powi(4) * (-alpha2 * c * family.infinite_zero_minus(0, r)).exp();
    let r_lo = 1e-6;
    let r_hi = 60.0 * lf;
    let breaks = log_breaks(r_lo, r_hi, 0.0625);
    let pa = lf.powf(4.0 - alpha2 / (2.0 * PI));
    let ai = integrate_breaks(rule, &breaks, |r| (w(r, 1.0) - w(r / lf, 1.0) * pa) / r);
    let a_limit = 0.5 * alpha2 * 2.0 * PI * ai;
    let m21_limit = if eta == 0.5 {
        let pm = lf.powf(2.0 - alpha2 / (4.0 * PI));
        let mi = integrate_breaks(rule, &breaks, |r| (w(r, 1.0).sqrt() - w(r / lf, 1.0).sqrt() * pm) / r);
        Some(2.0 * PI * mi)
    } else {
        None
    };
    Ok(ContinuumLimits { a_limit, b_limit, m21_limit })
}

/// Per-scale coefficients with a metadata block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    #[serde(rename = "L")]
    pub l: u32,
    pub alpha2: f64,
    pub eta: f64,
    pub eta_bar: f64,
    pub cutoff_label: String,
    /// Scales beyond the last row reuse it.
    pub rows: Vec<ScaleCoefficients>,
}

impl CoefficientTable {
    /// Scales `0..=j_top`, evaluated in parallel.
    pub fn build(family: &CovarianceFamily, alpha2: f64, eta: f64, j_top: usize) -> Result<Self> {
        Self::build_with(family, alpha2, eta, j_top, SumControl::default())
    }

    pub fn build_with(
        family: &CovarianceFamily,
        alpha2: f64,
        eta: f64,
        j_top: usize,
        control: SumControl,
    ) -> Result<Self> {
        check_eta(eta)?;
        let engine = CoefficientEngine::new(family, alpha2, control)?;
        let rows = (0..=j_top).into_par_iter().map(|j| engine.scale(eta, j)).collect::<Result<Vec<_>>>()?;
        for r in &rows {
            let vals = [r.a, r.b, r.m11, r.m22, r.m12, r.m21, r.e2, r.e3, r.e4];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite coefficient at scale {}", r.j)));
            }
        }
        Ok(CoefficientTable {
            l: family.l(),
            alpha2,
            eta,
            eta_bar: eta - 1.0,
            cutoff_label: family.cutoff().label().to_string(),
            rows,
        })
    }

    /// Coefficients used at scale `j`; frozen at the last computed scale.
    pub fn at(&self, j: usize) -> &ScaleCoefficients {
        &self.rows[j.min(self.rows.len() - 1)]
    }

    /// Last computed scale.
    pub fn j_freeze(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn metadata(&self) -> Metadata {
        Metadata::new()
            .with("L", self.l)
            .with("alpha2", output::fmt_f64(self.alpha2))
            .with("eta", output::fmt_f64(self.eta))
            .with("cutoff_label", &self.cutoff_label)
            .with("code_version", crate::CODE_VERSION)
    }

    pub fn to_csv(&self) -> String {
        let f = output::fmt_f64;
        output::csv(
            &self.metadata(),
            &["j", "a", "b", "m11", "m22", "m12", "m21", "E2", "E3", "E4"],
            self.rows.iter().map(|r| {
                vec![r.j.to_string(), f(r.a), f(r.b), f(r.m11), f(r.m22), f(r.m12), f(r.m21), f(r.e2), f(r.e3), f(r.e4)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ALPHA2_BKT;

    fn fam16() -> CovarianceFamily {
        CovarianceFamily::gaussian(16, 8).unwrap()
    }

    #[test]
    fn scale_zero_conventions() {
        let f = fam16();
        let e = CoefficientEngine::new(&f, ALPHA2_BKT, SumControl::default()).unwrap();
        assert_eq!(e.a(0).unwrap(), 0.0);
        assert_eq!(e.b(0).unwrap(), 0.0);
        let (_, e3, e4) = e.energy(0).unwrap();
        assert_eq!((e3, e4), (0.0, 0.0));
    }

    #[test]
    fn w0_vanishes_at_low_scales() {
        let f = fam16();
        for j in [0, 1] {
            let k = compute_w0(&f, ALPHA2_BKT, j).unwrap();
            for lab in [KernelLabel::W0b, KernelLabel::W0c, KernelLabel::W0e] {
                assert_eq!(k.eval(lab, [1, 2]).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn half_charge_symmetry() {
        let f = fam16();
        let (m11, m22, m12, m21) = compute_m(&f, ALPHA2_BKT, 0.5, 3).unwrap();
        assert!((m11 - m22).abs() <= 1e-12 * m11.abs());
        assert!((m12 - m21).abs() <= 1e-12 * m21.abs());
    }

    #[test]
    fn m11_equals_eta2_b_at_marginal_coupling() {
        let f = fam16();
        let b = compute_b(&f, ALPHA2_BKT, 4).unwrap();
        let (m11, ..) = compute_m(&f, ALPHA2_BKT, 0.3, 4).unwrap();
        assert!((m11 / (0.09 * b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn b_limit_is_two_ln_l() {
        let f = fam16();
        let c = compute_asymptotic_continuum(&f, ALPHA2_BKT, 0.5).unwrap();
        assert!((c.b_limit - 2.0 * 16f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn energy_e2_positive() {
        let f = fam16();
        for j in 0..4 {
            assert!(compute_energy_coeffs(&f, ALPHA2_BKT, j).unwrap().0 > 0.0);
        }
    }
}
