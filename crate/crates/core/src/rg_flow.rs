//! Second-order coupling flow, separatrix shooting, free energy and the
//! continuum Kosterlitz equations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceFamily;
use crate::error::{Error, Result};
use crate::lattice_green::euler_constant;
use crate::output::{self, Metadata};
use crate::rg_coefficients::CoefficientTable;

/// Which side of the separatrix a trajectory falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Undecided,
    PlasmaSide,
    DipoleSide,
    OnSeparatrix,
}

/// `(s_j, z_j, E_j)` at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingState {
    pub j: usize,
    pub s: f64,
    pub z: f64,
    #[serde(rename = "E")]
    pub e: f64,
    /// Low-order word of the compensated `E` accumulator.
    #[serde(skip)]
    pub e_lo: f64,
    pub tag: Classification,
}

impl CouplingState {
    pub fn initial(s: f64, z: f64) -> Self {
        CouplingState { j: 0, s, z, e: 0.0, e_lo: 0.0, tag: Classification::Undecided }
    }

    /// `E_j` including the compensation word.
    pub fn energy(&self) -> f64 {
        self.e + self.e_lo
    }
}

/// One flow step with remainders set to zero.
pub fn flow_step(
    state: &CouplingState,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
) -> CouplingState {
    let j = state.j;
    let c = coeffs.at(j);
    let (s, z) = (state.s, state.z);
    let pref = family.l2(1) * (-0.5 * alpha2 * family.gamma0()).exp();
    let de = (s * c.e2 + s * s * c.e3 + z * z * c.e4) / family.l2(j);
    // two-sum keeps the tiny late increments of E
    let t = state.e + de;
    let err = if state.e.abs() >= de.abs() { (state.e - t) + de } else { (de - t) + state.e };
    CouplingState {
        j: j + 1,
        s: s - c.a * z * z,
        z: pref * (z - c.b * s * z),
        e: t,
        e_lo: state.e_lo + err,
        tag: state.tag,
    }
}

/// `q_j = q₁/(1 + |q₁|(j − 1))`.
pub fn q_sequence(q1: f64, len: usize) -> Vec<f64> {
    (0..len).map(|j| q1 / (1.0 + q1.abs() * (j as f64 - 1.0))).collect()
}

/// Thresholds used to classify a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowTolerances {
    /// `s_j < −δ` marks the plasma side.
    pub delta: f64,
    /// `z_j < ε_z` (with `s_j > ε_s`) marks the dipole side.
    pub eps_z: f64,
    pub eps_s: f64,
}

/// A coupling trajectory with its reference sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrajectory {
    pub states: Vec<CouplingState>,
    /// `q_j` for every recorded scale.
    pub q: Vec<f64>,
    pub q1: f64,
    /// Frozen limits used for `q₁ = √(ab) z₁`.
    pub a: f64,
    pub b: f64,
    pub tolerances: FlowTolerances,
    pub classification: Classification,
}

impl CouplingTrajectory {
    pub fn s0(&self) -> f64 {
        self.states[0].s
    }

    pub fn z0(&self) -> f64 {
        self.states[0].z
    }

    pub fn to_csv(&self, meta: &Metadata) -> String {
        let f = output::fmt_f64;
        output::csv(
            meta,
            &["j", "s", "z", "E", "q"],
            self.states
                .iter()
                .zip(&self.q)
                .map(|(st, q)| vec![st.j.to_string(), f(st.s), f(st.z), f(st.energy()), f(*q)]),
        )
    }
}

fn frozen_ab(coeffs: &CoefficientTable) -> (f64, f64) {
    let c = coeffs.at(coeffs.j_freeze());
    (c.a, c.b)
}

/// Runs the flow from `(s₀, z₀)` for at most `j_max` steps, stopping early once
/// the trajectory is classified.
pub fn run_flow(
    s0: f64,
    z0: f64,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
    j_max: usize,
    stop_when_classified: bool,
) -> CouplingTrajectory {
    let (a, b) = frozen_ab(coeffs);
    let q1 = (a * b).sqrt() * z0 * family.l2(1) * (-0.5 * alpha2 * family.gamma0()).exp();
    let q_end = q1 / (1.0 + q1.abs() * (j_max as f64 - 1.0));
    let tol = FlowTolerances { delta: 1e-12, eps_z: 1e-15 * z0.abs(), eps_s: q_end.abs() / (10.0 * b) };
    let mut states = vec![CouplingState::initial(s0, z0)];
    let mut class = Classification::Undecided;
    if z0 == 0.0 {
        class = Classification::OnSeparatrix;
    }
    while states.len() <= j_max {
        let next = flow_step(states.last().unwrap(), coeffs, family, alpha2);
        states.push(next);
        if !next.s.is_finite() || !next.z.is_finite() {
            class = Classification::PlasmaSide;
            break;
        }
        if class == Classification::Undecided {
            if next.s < -tol.delta {
                class = Classification::PlasmaSide;
            } else if next.z.abs() < tol.eps_z && next.s > tol.eps_s {
                class = Classification::DipoleSide;
            }
            if class != Classification::Undecided && stop_when_classified {
                break;
            }
        }
    }
    if class == Classification::Undecided {
        // end of the run: the side follows from the sign of b s² − a z²
        let last = states.last().unwrap();
        let inv = b * last.s * last.s - a * last.z * last.z;
        class = if last.s < 0.0 || inv < 0.0 { Classification::PlasmaSide } else { Classification::DipoleSide };
    }
    for st in states.iter_mut() {
        st.tag = class;
    }
    let q = q_sequence(q1, states.len());
    CouplingTrajectory { states, q, q1, a, b, tolerances: tol, classification: class }
}

/// Outcome of the separatrix search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatrixResult {
    pub z: f64,
    pub s_of_z: f64,
    pub iterations: usize,
    pub bracket_width: f64,
    pub trajectory: CouplingTrajectory,
}

/// Bisection for the initial `s₀` whose trajectory stays on the separatrix.
pub fn shoot_separatrix(
    z0: f64,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
    j_max: usize,
    tol: f64,
) -> Result<SeparatrixResult> {
    if !(z0 >= 0.0 && z0.is_finite()) {
        return Err(Error::Domain(format!("activity z={z0} must be non-negative")));
    }
    if j_max < 50 {
        return Err(Error::Domain(format!("J_max={j_max} must be at least 50")));
    }
    if z0 == 0.0 {
        let mut t = run_flow(0.0, 0.0, coeffs, family, alpha2, j_max, false);
        t.classification = Classification::OnSeparatrix;
        return Ok(SeparatrixResult { z: 0.0, s_of_z: 0.0, iterations: 0, bracket_width: 0.0, trajectory: t });
    }
    let b_max = coeffs.rows.iter().map(|r| r.b).fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = 1.0 / b_max;
    let cls = |s: f64| run_flow(s, z0, coeffs, family, alpha2, j_max, true).classification;
    let (c_lo, c_hi) = (cls(lo), cls(hi));
    if c_lo != Classification::PlasmaSide || c_hi != Classification::DipoleSide {
        return Err(Error::Search {
            message: "no sign change in the shooting bracket".into(),
            low: format!("s0={lo:e} classified {c_lo:?}"),
            high: format!("s0={hi:e} classified {c_hi:?}"),
        });
    }
    let mut it = 0;
    while hi - lo > tol && it < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match cls(mid) {
            Classification::PlasmaSide => lo = mid,
            _ => hi = mid,
        }
        it += 1;
    }
    let s = 0.5 * (lo + hi);
    let mut trajectory = run_flow(s, z0, coeffs, family, alpha2, j_max, false);
    trajectory.classification = Classification::OnSeparatrix;
    for st in trajectory.states.iter_mut() {
        st.tag = Classification::OnSeparatrix;
    }
    Ok(SeparatrixResult { z: z0, s_of_z: s, iterations: it, bracket_width: hi - lo, trajectory })
}

/// `β = α²/(1 − s)`.
pub fn beta_from_s(s: f64, alpha2: f64) -> Result<f64> {
    if s >= 1.0 {
        return Err(Error::Domain(format!("s={s} must be below 1")));
    }
    Ok(alpha2 / (1.0 - s))
}

/// `β_α(z)` from a fresh separatrix search.
pub fn beta_bkt(
    z: f64,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
    j_max: usize,
    tol: f64,
) -> Result<f64> {
    let r = shoot_separatrix(z, coeffs, family, alpha2, j_max, tol)?;
    beta_from_s(r.s_of_z, alpha2)
}

/// `p(β,z) = −(1/2β) ln(1 − s) − (1/β) Σ_j (E_{j+1} − E_j)`.
pub fn free_energy(trajectory: &CouplingTrajectory, beta: f64) -> Result<f64> {
    if trajectory.classification == Classification::PlasmaSide {
        return Err(Error::Domain("free energy needs a dipole-side or separatrix trajectory".into()));
    }
    let s = trajectory.s0();
    if s >= 1.0 {
        return Err(Error::Domain(format!("s={s} must be below 1")));
    }
    let st = &trajectory.states;
    let incs: Vec<f64> = st.windows(2).map(|w| w[1].energy() - w[0].energy()).collect();
    // the tail must decay: compare the last few non-zero increments
    let tail: Vec<f64> = incs.iter().rev().filter(|d| **d != 0.0).take(4).map(|d| d.abs()).collect();
    if tail.len() >= 2 && tail.windows(2).any(|w| w[0] > w[1] && w[0] > 1e-300) {
        return Err(Error::Numeric("E increments do not decrease: divergent free-energy series".into()));
    }
    let total = st.last().map(|x| x.energy()).unwrap_or(0.0) - st[0].energy();
    Ok(-(1.0 - s).ln() / (2.0 * beta) - total / beta)
}

/// State of the continuum flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ODEState {
    pub ell: f64,
    pub s: f64,
    pub z: f64,
    pub invariant: f64,
}

/// `4π² e^{8π c_E}` with the lattice constant.
fn kosterlitz_k() -> f64 {
    4.0 * PI * PI * (8.0 * PI * euler_constant()).exp()
}

/// RK4 for `ṡ = −8π² e^{8πc_E} z²`, `ż = −2sz`.
pub fn kosterlitz_integrate(s0: f64, z0: f64, ell_end: f64, h: f64) -> Result<Vec<ODEState>> {
    if !(h > 0.0) || !(ell_end >= 0.0) {
        return Err(Error::Domain(format!("need h > 0 and ell_end >= 0 (h={h}, ell_end={ell_end})")));
    }
    let k = kosterlitz_k();
    let rhs = |s: f64, z: f64| (-2.0 * k * z * z, -2.0 * s * z);
    let n = (ell_end / h).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let (mut s, mut z) = (s0, z0);
    out.push(ODEState { ell: 0.0, s, z, invariant: s * s - k * z * z });
    for i in 1..=n {
        let (k1s, k1z) = rhs(s, z);
        let (k2s, k2z) = rhs(s + 0.5 * h * k1s, z + 0.5 * h * k1z);
        let (k3s, k3z) = rhs(s + 0.5 * h * k2s, z + 0.5 * h * k2z);
        let (k4s, k4z) = rhs(s + h * k3s, z + h * k3z);
        s += h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
        if !s.is_finite() || !z.is_finite() {
            return Err(Error::Numeric(format!("Kosterlitz flow overflowed at ell={}", i as f64 * h)));
        }
        out.push(ODEState { ell: i as f64 * h, s, z, invariant: s * s - k * z * z });
    }
    Ok(out)
}

/// `s₀ = 2π e^{4π c_E} z₀`, the separatrix of the continuum flow.
pub fn kosterlitz_separatrix_s(z0: f64) -> f64 {
    2.0 * PI * (4.0 * PI * euler_constant()).exp() * z0
}

/// ODE orbit CSV (`ell,s,z,invariant`).
pub fn ode_csv(meta: &Metadata, states: &[ODEState]) -> String {
    let f = output::fmt_f64;
    output::csv(
        meta,
        &["ell", "s", "z", "invariant"],
        states.iter().map(|x| vec![f(x.ell), f(x.s), f(x.z), f(x.invariant)]),
    )
}

/// Critical exponent of the `±η` correlation at effective inverse temperature `β_eff`.
pub fn exponent_table(beta_eff: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("eta={eta} must lie in (0,1]")));
    }
    Ok(if eta == 1.0 {
        4.0
    } else if eta <= 0.5 {
        beta_eff / (4.0 * PI) * eta * eta
    } else {
        beta_eff / (4.0 * PI) * (1.0 - eta) * (1.0 - eta)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rg_coefficients::ScaleCoefficients;
    use crate::ALPHA2_BKT;

    fn constant_table(a: f64, b: f64) -> CoefficientTable {
        let row = |j| ScaleCoefficients { j, a, b, m11: 0.0, m22: 0.0, m12: 0.0, m21: 0.0, e2: 0.0, e3: 0.0, e4: 0.0 };
        CoefficientTable {
            l: 16,
            alpha2: ALPHA2_BKT,
            eta: 0.5,
            eta_bar: -0.5,
            cutoff_label: "test".into(),
            rows: vec![row(0), row(1)],
        }
    }

    #[test]
    fn single_step_by_hand() {
        let f = CovarianceFamily::gaussian(16, 2).unwrap();
        let t = constant_table(3.0, 5.0);
        let st = CouplingState { j: 1, ..CouplingState::initial(0.01, 0.001) };
        let n = flow_step(&st, &t, &f, ALPHA2_BKT);
        assert!((n.s - (0.01 - 3.0 * 1e-6)).abs() < 1e-16);
        assert!((n.z - 0.001 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn fixed_line_and_conjugation() {
        let f = CovarianceFamily::gaussian(16, 2).unwrap();
        let t = constant_table(3.0, 5.0);
        let st = CouplingState::initial(0.02, 0.0);
        let n = flow_step(&st, &t, &f, ALPHA2_BKT);
        assert_eq!((n.s, n.z), (0.02, 0.0));
        let p = flow_step(&CouplingState { j: 1, ..CouplingState::initial(0.02, 0.003) }, &t, &f, ALPHA2_BKT);
        let m = flow_step(&CouplingState { j: 1, ..CouplingState::initial(0.02, -0.003) }, &t, &f, ALPHA2_BKT);
        assert_eq!((p.s, p.z), (m.s, -m.z));
    }

    #[test]
    fn q_recursion_matches_closed_form() {
        let q = q_sequence(0.07, 300);
        for j in 1..299 {
            let step = q[j] / (1.0 + q[j].abs());
            assert!((q[j + 1] - step).abs() <= 1e-15 * q[j + 1]);
        }
    }

    #[test]
    fn exponents() {
        assert!((exponent_table(8.0 * PI, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(exponent_table(3.0, 1.0).unwrap(), 4.0);
        assert!((exponent_table(8.0 * PI, 0.3).unwrap() - 0.18).abs() < 1e-15);
        assert!(exponent_table(1.0, 0.0).is_err());
    }

    #[test]
    fn kosterlitz_fixed_point() {
        let t = kosterlitz_integrate(0.0, 0.0, 1.0, 1e-2).unwrap();
        assert!(t.iter().all(|x| x.s == 0.0 && x.z == 0.0));
    }

    #[test]
    fn beta_rejects_large_s() {
        assert!(beta_from_s(1.0, ALPHA2_BKT).is_err());
        assert_eq!(beta_from_s(0.0, ALPHA2_BKT).unwrap(), ALPHA2_BKT);
    }
}
