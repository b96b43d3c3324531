//! Fractional-charge correlation `ρ_η(x)` from the charge flow, its closed
//! asymptotic form and exponent fits.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charge_flow::{c_eta, ChargeTrajectory};
use crate::covariance::CovarianceFamily;
use crate::error::{Error, Result};
use crate::output::{self, Metadata};

/// Relative size below which the tail of a scale series is dropped.
const SERIES_TOL: f64 = 1e-15;

/// Where a profile came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Series,
    Asymptotic,
    Free,
    Oracle,
}

impl ProfileSource {
    pub fn label(&self) -> &'static str {
        match self {
            ProfileSource::Series => "series",
            ProfileSource::Asymptotic => "asymptotic",
            ProfileSource::Free => "free",
            ProfileSource::Oracle => "oracle",
        }
    }
}

/// One sample of `ρ_η` with its two branches (`ρ = ρ_a + ρ_ā`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub x: f64,
    pub rho: f64,
    pub rho_a: f64,
    pub rho_abar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub points: Vec<ProfilePoint>,
    pub eta: f64,
    pub z: f64,
    #[serde(rename = "L")]
    pub l: u32,
    pub source: ProfileSource,
}

impl CorrelationProfile {
    /// Checks `ρ > 0` and increasing radii.
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].x <= w[0].x {
                return Err(Error::Domain(format!("profile radii not increasing at x={}", w[1].x)));
            }
        }
        if let Some(p) = self.points.iter().find(|p| !(p.rho > 0.0)) {
            return Err(Error::Numeric(format!("non-positive correlation {} at x={}", p.rho, p.x)));
        }
        Ok(())
    }

    /// Restriction to `lo ≤ x ≤ hi`.
    pub fn window(&self, lo: f64, hi: f64) -> CorrelationProfile {
        CorrelationProfile {
            points: self.points.iter().filter(|p| p.x >= lo && p.x <= hi).copied().collect(),
            ..self.clone()
        }
    }

    /// Rows `x,rho,branch` with branches `total`, `a` and `abar`.
    pub fn to_csv(&self, meta: &Metadata) -> String {
        let f = output::fmt_f64;
        let meta =
            meta.clone().with("eta", self.eta).with("z", self.z).with("L", self.l).with("source", self.source.label());
        output::csv(
            &meta,
            &["x", "rho", "branch"],
            self.points.iter().flat_map(|p| {
                [
                    vec![f(p.x), f(p.rho), "total".to_string()],
                    vec![f(p.x), f(p.rho_a), "a".to_string()],
                    vec![f(p.x), f(p.rho_abar), "abar".to_string()],
                ]
            }),
        )
    }
}

/// Geometric grid `x = round(L^{k/2})` for `k_lo ≤ k ≤ k_hi`, duplicates removed.
pub fn geometric_grid(l: u32, k_lo: u32, k_hi: u32) -> Vec<f64> {
    let mut xs: Vec<f64> = (k_lo..=k_hi).map(|k| (l as f64).powf(k as f64 / 2.0).round()).collect();
    xs.dedup();
    xs
}

/// Log-spaced grid with `per_decade` points per decade on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let n = (((hi / lo).log10() * per_decade as f64).ceil() as usize).max(1);
    (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect()
}

/// Which renormalization constant enters the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    A,
    ABar,
}

fn w2_series(x: f64, traj: &ChargeTrajectory, family: &CovarianceFamily, alpha2: f64, branch: Branch) -> Result<f64> {
    if !(x >= 1.0) {
        return Err(Error::Domain(format!("correlation radius must be >= 1, got {x}")));
    }
    let charge2 = match branch {
        Branch::A => traj.eta * traj.eta,
        Branch::ABar => (traj.eta - 1.0) * (traj.eta - 1.0),
    };
    let k = charge2 * alpha2;
    let ln_l = family.ln_l();
    let n0 = (x.ln() / ln_l).floor() as usize;
    let avail = traj.states.len();
    if avail <= n0 + 2 {
        return Err(Error::Range(format!(
            "charge trajectory has {avail} scales, radius {x} needs more than {}",
            n0 + 2
        )));
    }
    let top = avail - 1;
    let prof = family.radial_profile(x, top);
    // suffix sums give Γ_{∞,n}(0|x) for every n ≤ top
    let mut tails = vec![prof.tail_zero_minus; top + 2];
    for n in (0..=top).rev() {
        tails[n] = tails[n + 1] + prof.zero_minus[n];
    }
    let g0 = family.gamma0();
    let mut sum = 0.0;
    for n in 0..top {
        let st = &traj.states[n];
        let lz = match branch {
            Branch::A => st.z,
            Branch::ABar => st.zbar,
        };
        // a vanishing Z (Z̄ at zero activity) contributes exact zeros
        let t = if lz.sign == 0.0 {
            0.0
        } else {
            let ln_w = 2.0 * lz.ln_abs - 4.0 * n as f64 * ln_l - k * tails[n + 1] - k * g0;
            0.5 * ln_w.exp() * (k * prof.gamma[n]).exp_m1()
        };
        sum += t;
        if n > n0 + 1 && t.abs() <= SERIES_TOL * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::Range(format!("w2 series at x={x} not converged within {avail} scales")))
}

/// `w⁻_{2,a}(x) = ½ Σ_n Z_n² L^{−4n} e^{η²α²Γ_{∞,n+1}(x|0)} e^{−η²α²Γ_n(0)} (e^{η²α²Γ_n(x)} − 1)`.
///
/// Terms with `n < n₀ = ⌊log_L x⌋` are kept; they are below `e^{−L²/4}`
/// relative for the Gaussian cutoff and make the `z = 0` telescoping exact.
pub fn w2a_series(x: f64, traj: &ChargeTrajectory, family: &CovarianceFamily, alpha2: f64) -> Result<f64> {
    w2_series(x, traj, family, alpha2, Branch::A)
}

/// `w⁻_{2,ā}`: as [`w2a_series`] with `(Z̄, η̄)`.
pub fn w2abar_series(x: f64, traj: &ChargeTrajectory, family: &CovarianceFamily, alpha2: f64) -> Result<f64> {
    w2_series(x, traj, family, alpha2, Branch::ABar)
}

/// Leading term `½ Z_{n₀}² L^{−4n₀} e^{η²α²Γ_{n₀−1,0}(0)} e^{η²α²Γ_{∞,0}(x|0)}` of the telescoped series.
pub fn w2a_leading(x: f64, traj: &ChargeTrajectory, family: &CovarianceFamily, alpha2: f64) -> Result<f64> {
    let n0 = (x.ln() / family.ln_l()).floor() as usize;
    if n0 >= traj.states.len() {
        return Err(Error::Range(format!("charge trajectory too short for radius {x}")));
    }
    let k = traj.eta * traj.eta * alpha2;
    let st = &traj.states[n0];
    let ln_w = 2.0 * st.z.ln_abs - 4.0 * n0 as f64 * family.ln_l() + k * family.partial_at_zero(n0 as isize - 1, 0)
        - k * family.infinite_zero_minus(0, x);
    Ok(0.5 * ln_w.exp())
}

/// `ρ_η(x) = 2 w⁻_{2,a}(x) + 2 w⁻_{2,ā}(x)`; `w_{2,b}` and `w_{2,c}` are dropped.
pub fn rho_eta(x: f64, traj: &ChargeTrajectory, family: &CovarianceFamily, alpha2: f64) -> Result<ProfilePoint> {
    let a = 2.0 * w2a_series(x, traj, family, alpha2)?;
    let b = 2.0 * w2abar_series(x, traj, family, alpha2)?;
    Ok(ProfilePoint { x, rho: a + b, rho_a: a, rho_abar: b })
}

/// Series profile on the radii `xs`, evaluated in parallel.
pub fn series_profile(
    xs: &[f64],
    traj: &ChargeTrajectory,
    family: &CovarianceFamily,
    alpha2: f64,
    z: f64,
) -> Result<CorrelationProfile> {
    let points = xs.par_iter().map(|&x| rho_eta(x, traj, family, alpha2)).collect::<Result<Vec<_>>>()?;
    let source = if z == 0.0 { ProfileSource::Free } else { ProfileSource::Series };
    Ok(CorrelationProfile { points, eta: traj.eta, z, l: traj.l, source })
}

/// Constants entering the closed asymptotic formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConstants {
    /// Continuum-family constant `c̃_E`.
    pub c_tilde: f64,
    pub gamma0: f64,
    #[serde(rename = "L")]
    pub l: u32,
    /// `c(η)` (for `η > 1/2` the mirrored value `c(1 − η)`); unused at `η = 1/2`.
    pub c_eta: Option<f64>,
}

impl AsymptoticConstants {
    pub fn from_family(family: &CovarianceFamily, alpha2: f64, eta: f64) -> Result<Self> {
        let c = if (eta - 0.5).abs() < 1e-12 {
            None
        } else if eta < 0.5 {
            Some(c_eta(family, alpha2, eta)?.value)
        } else {
            Some(c_eta(family, alpha2, 1.0 - eta)?.value)
        };
        Ok(AsymptoticConstants { c_tilde: family.c_tilde_e(), gamma0: family.gamma0(), l: family.l(), c_eta: c })
    }

    /// `f = 4π e^{4πc̃_E} L² e^{−4πΓ₀(0)} z`.
    pub fn f(&self, z: f64) -> f64 {
        4.0 * PI * (4.0 * PI * self.c_tilde).exp() * (self.l as f64).powi(2) * (-4.0 * PI * self.gamma0).exp() * z
    }
}

/// Closed asymptotic `ρ_η(x)` at `α² = 8π` with the remainder-dependent
/// constants set to zero. Returns `(ρ_a, ρ_ā)`; at `η = 1/2` the total is in
/// the first slot.
pub fn asymptotic_branches(x: f64, z: f64, eta: f64, k: &AsymptoticConstants) -> (f64, f64) {
    let lf = 1.0 + k.f(z) * x.ln();
    if (eta - 0.5).abs() < 1e-12 {
        return (0.5 * (2.0 * PI * k.c_tilde).exp() / x * lf.sqrt(), 0.0);
    }
    let e2 = eta * eta;
    let eb2 = (eta - 1.0) * (eta - 1.0);
    let a = (8.0 * PI * e2 * k.c_tilde).exp() * x.powf(-4.0 * e2) * lf.powf(-2.0 * e2);
    let c = k.c_eta.unwrap_or(0.0);
    let b = c * c * z * z * (8.0 * PI * eb2 * k.c_tilde).exp() * x.powf(-4.0 * eb2) * lf.powf(-2.0 * eb2);
    (a, b)
}

pub fn asymptotic_formula(x: f64, z: f64, eta: f64, k: &AsymptoticConstants) -> f64 {
    let (a, b) = asymptotic_branches(x, z, eta, k);
    a + b
}

pub fn asymptotic_profile(xs: &[f64], z: f64, eta: f64, k: &AsymptoticConstants) -> CorrelationProfile {
    let points = xs
        .iter()
        .map(|&x| {
            let (a, b) = asymptotic_branches(x, z, eta, k);
            ProfilePoint { x, rho: a + b, rho_a: a, rho_abar: b }
        })
        .collect();
    CorrelationProfile { points, eta, z, l: k.l, source: ProfileSource::Asymptotic }
}

/// Regression model for `ln ρ` against `ln x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FitModel {
    /// `ln ρ = c − p ln x`.
    PurePower,
    /// `ln ρ = c − p ln x + q ln(1 + f ln x)` with `f` fixed.
    PowerLog { f: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFit {
    pub power: f64,
    pub logexp: f64,
    pub prefactor: f64,
    /// RMS residual of `ln ρ`.
    pub residual: f64,
    #[serde(flatten)]
    pub model: FitModel,
}

/// Least squares via modified Gram–Schmidt; errors when a column is
/// numerically dependent on the previous ones.
fn least_squares(cols: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let k = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = vec![vec![0.0; k]; k];
    for (j, c) in cols.iter().enumerate() {
        let mut v = c.clone();
        let orig: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, qi) in q.iter().enumerate() {
            let d: f64 = qi.iter().zip(&v).map(|(a, b)| a * b).sum();
            r[i][j] = d;
            v.iter_mut().zip(qi).for_each(|(a, b)| *a -= d * b);
        }
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(nv > 1e-10 * orig) {
            return Err(Error::Fit(format!("design matrix is ill-conditioned (column {j})")));
        }
        r[j][j] = nv;
        v.iter_mut().for_each(|a| *a /= nv);
        q.push(v);
    }
    let qty: Vec<f64> = q.iter().map(|qi| qi.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = ((i + 1)..k).map(|m| r[i][m] * beta[m]).sum();
        beta[i] = (qty[i] - s) / r[i][i];
    }
    Ok(beta)
}

/// Fits the profile in log-log coordinates.
pub fn fit_exponents(profile: &CorrelationProfile, model: FitModel) -> Result<AsymptoticFit> {
    let pts = &profile.points;
    if pts.len() < 8 {
        return Err(Error::Fit(format!("need at least 8 points, got {}", pts.len())));
    }
    profile.validate()?;
    let span = (pts[pts.len() - 1].x / pts[0].x).log10();
    if span < 1.5 {
        return Err(Error::Fit(format!("profile spans {span:.2} decades, need 1.5")));
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.x.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.rho.ln()).collect();
    let mut cols = vec![vec![1.0; pts.len()], lx.iter().map(|v| -v).collect::<Vec<_>>()];
    if let FitModel::PowerLog { f } = model {
        cols.push(lx.iter().map(|v| (1.0 + f * v).ln()).collect());
    }
    let beta = least_squares(&cols, &y)?;
    let fitted = |i: usize| (0..cols.len()).map(|c| beta[c] * cols[c][i]).sum::<f64>();
    let rss: f64 = (0..pts.len()).map(|i| (y[i] - fitted(i)).powi(2)).sum();
    Ok(AsymptoticFit {
        power: beta[1],
        logexp: beta.get(2).copied().unwrap_or(0.0),
        prefactor: beta[0].exp(),
        residual: (rss / pts.len() as f64).sqrt(),
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charge_flow::{LogReal, RenormState};
    use crate::ALPHA2_BKT;

    /// Exact `z = 0` renormalization constants `Z_n = L^{2n} e^{−η²(α²/2)Γ_{n−1,0}(0)}`.
    pub(crate) fn free_trajectory(f: &CovarianceFamily, eta: f64, len: usize) -> ChargeTrajectory {
        let k = 2.0 * f.ln_l() - eta * eta * 0.5 * ALPHA2_BKT * f.gamma0();
        let states = (0..len)
            .map(|n| RenormState { j: n, z: LogReal { sign: 1.0, ln_abs: k * n as f64 }, zbar: LogReal::ZERO, g: 0.0 })
            .collect();
        ChargeTrajectory { eta, states, q: vec![0.0; len], q1: 0.0, l: f.l() }
    }

    #[test]
    fn free_series_telescopes() {
        let f = CovarianceFamily::gaussian(16, 4).unwrap();
        for eta in [0.3, 0.5] {
            let t = free_trajectory(&f, eta, 200);
            for x in [1.0, 7.5, 50.0, 3.1e3, 2.0e7] {
                let got = 2.0 * w2a_series(x, &t, &f, ALPHA2_BKT).unwrap();
                let exact = (-eta * eta * ALPHA2_BKT * f.infinite_zero_minus(0, x)).exp();
                assert!((got / exact - 1.0).abs() < 1e-12, "eta={eta} x={x}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn round_trip_fit() {
        let k = AsymptoticConstants { c_tilde: 0.01, gamma0: 16f64.ln() / (2.0 * PI), l: 16, c_eta: None };
        let xs = log_grid(1e3, 1e8, 6);
        let prof = asymptotic_profile(&xs, 1e-3, 0.5, &k);
        let fit = fit_exponents(&prof, FitModel::PowerLog { f: k.f(1e-3) }).unwrap();
        assert!((fit.power - 1.0).abs() < 1e-6);
        assert!((fit.logexp - 0.5).abs() < 1e-6);
        let fit = fit_exponents(&prof.window(1e3, 1e4), FitModel::PurePower);
        assert!(fit.is_err());
    }

    #[test]
    fn ill_conditioned_design() {
        let xs = log_grid(10.0, 1e4, 4);
        let prof = CorrelationProfile {
            points: xs.iter().map(|&x| ProfilePoint { x, rho: 1.0 / x, rho_a: 1.0 / x, rho_abar: 0.0 }).collect(),
            eta: 0.5,
            z: 0.0,
            l: 16,
            source: ProfileSource::Free,
        };
        assert!(matches!(fit_exponents(&prof, FitModel::PowerLog { f: 0.0 }), Err(Error::Fit(_))));
    }
}
