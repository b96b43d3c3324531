//! Fractional-charge renormalization constants `(Z_j, Z̄_j)`, the jump-process
//! matrix `Q(j, j₀)` and the constant `c(η)`.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceFamily;
use crate::error::{Error, Result};
use crate::output::{self, Metadata};
use crate::rg_coefficients::{CoefficientEngine, CoefficientTable, ScaleCoefficients, SumControl};
use crate::rg_flow::{CouplingState, CouplingTrajectory};

/// A real number stored as `sign · e^{ln_abs}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogReal {
    /// −1, 0 or +1.
    pub sign: f64,
    pub ln_abs: f64,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal { sign: 0.0, ln_abs: f64::NEG_INFINITY };

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogReal { sign: x.signum(), ln_abs: x.abs().ln() }
        }
    }

    /// Linear value; may overflow to ±∞.
    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }

    /// `ln_scale + ln|c₁x + c₂y|` evaluated without overflow.
    pub fn combine(c1: f64, x: LogReal, c2: f64, y: LogReal, ln_scale: f64) -> LogReal {
        let m = x.ln_abs.max(y.ln_abs);
        if m == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        let xs = if x.sign == 0.0 { 0.0 } else { x.sign * (x.ln_abs - m).exp() };
        let ys = if y.sign == 0.0 { 0.0 } else { y.sign * (y.ln_abs - m).exp() };
        let v = c1 * xs + c2 * ys;
        if v == 0.0 {
            return Self::ZERO;
        }
        LogReal { sign: v.signum(), ln_abs: ln_scale + m + v.abs().ln() }
    }
}

/// `(Z_j, Z̄_j)` at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenormState {
    pub j: usize,
    pub z: LogReal,
    pub zbar: LogReal,
    /// `g_j = −π Σ_{k=1}^{j} [Γ_k(0) − ln L/(2π)]`.
    pub g: f64,
}

impl RenormState {
    pub fn initial() -> Self {
        RenormState { j: 0, z: LogReal::from_f64(1.0), zbar: LogReal::ZERO, g: 0.0 }
    }

    /// `Z⁺ = Z + Z̄`.
    pub fn plus(&self) -> LogReal {
        LogReal::combine(1.0, self.z, 1.0, self.zbar, 0.0)
    }

    /// `Z⁻ = Z − Z̄`.
    pub fn minus(&self) -> LogReal {
        LogReal::combine(1.0, self.z, -1.0, self.zbar, 0.0)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("charge eta={eta} must lie in (0,1)")));
    }
    Ok(())
}

/// `ln(L² e^{−c(α²/2)Γ_j(0)})` for charge-squared `c`.
fn ln_scaling(family: &CovarianceFamily, alpha2: f64, c: f64) -> f64 {
    2.0 * family.ln_l() - c * 0.5 * alpha2 * family.gamma0()
}

/// One step of the matrix recursion with remainders set to zero.
pub fn charge_step(
    state: &RenormState,
    coupling: &CouplingState,
    coeffs: &ScaleCoefficients,
    family: &CovarianceFamily,
    alpha2: f64,
    eta: f64,
) -> Result<RenormState> {
    if coupling.j != state.j {
        return Err(Error::Domain(format!("scale mismatch: charge state j={}, coupling j={}", state.j, coupling.j)));
    }
    let etab = eta - 1.0;
    let (s, z) = (coupling.s, coupling.z);
    let zn = LogReal::combine(
        1.0 - s * coeffs.m11,
        state.z,
        z * coeffs.m12,
        state.zbar,
        ln_scaling(family, alpha2, eta * eta),
    );
    let zb = LogReal::combine(
        1.0 - s * coeffs.m22,
        state.zbar,
        z * coeffs.m21,
        state.z,
        ln_scaling(family, alpha2, etab * etab),
    );
    let g = state.g - std::f64::consts::PI * (family.gamma0() - family.ln_l() / (2.0 * std::f64::consts::PI));
    Ok(RenormState { j: state.j + 1, z: zn, zbar: zb, g })
}

/// Charge-flow trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeTrajectory {
    pub eta: f64,
    pub states: Vec<RenormState>,
    /// `q_j` of the driving coupling trajectory.
    pub q: Vec<f64>,
    pub q1: f64,
    #[serde(rename = "L")]
    pub l: u32,
}

impl ChargeTrajectory {
    /// `ln Z_j` (the flows here keep `Z_j > 0`).
    pub fn ln_z(&self, j: usize) -> f64 {
        self.states[j].z.ln_abs
    }

    pub fn ln_zbar(&self, j: usize) -> f64 {
        self.states[j].zbar.ln_abs
    }

    /// `Z_j / Z_{j+1}` computed from the logarithms.
    pub fn z_ratio(&self, j: usize) -> f64 {
        let (a, b) = (self.states[j].z, self.states[j + 1].z);
        a.sign * b.sign * (a.ln_abs - b.ln_abs).exp()
    }

    /// `ln Z⁺_{j+1} − (3/2) j ln L − g_j`, the normalised observable at `η = 1/2`.
    pub fn normalised_plus(&self, j: usize) -> f64 {
        let ln_l = (self.l as f64).ln();
        self.states[j + 1].plus().ln_abs - 1.5 * j as f64 * ln_l - self.states[j].g
    }

    /// `ln Z⁻_{j+1} − (3/2) j ln L − g_j`.
    pub fn normalised_minus(&self, j: usize) -> f64 {
        let ln_l = (self.l as f64).ln();
        self.states[j + 1].minus().ln_abs - 1.5 * j as f64 * ln_l - self.states[j].g
    }

    /// Drift sequences with the logarithmic corrections removed:
    /// `(normalised_plus − ¼ ln(1+|q₁|j), normalised_minus + ¾ ln(1+|q₁|j))`.
    pub fn drift(&self, j: usize) -> (f64, f64) {
        let lq = (1.0 + self.q1.abs() * j as f64).ln();
        (self.normalised_plus(j) - 0.25 * lq, self.normalised_minus(j) + 0.75 * lq)
    }

    pub fn to_csv(&self, meta: &Metadata) -> String {
        let f = output::fmt_f64;
        output::csv(
            meta,
            &["j", "lnZ", "lnZbar", "lnZplus", "lnZminus", "q"],
            self.states.iter().map(|st| {
                let q = self.q.get(st.j).copied().unwrap_or(f64::NAN);
                vec![
                    st.j.to_string(),
                    f(st.z.ln_abs),
                    f(st.zbar.ln_abs),
                    f(st.plus().ln_abs),
                    f(st.minus().ln_abs),
                    f(q),
                ]
            }),
        )
    }
}

/// Coefficients of the mirrored problem `η ↔ 1 − η`.
fn mirrored(c: &ScaleCoefficients) -> ScaleCoefficients {
    ScaleCoefficients { m11: c.m22, m22: c.m11, m12: c.m21, m21: c.m12, ..*c }
}

fn check_table(coeffs: &CoefficientTable, eta: f64) -> Result<()> {
    check_eta(eta)?;
    if (coeffs.eta - eta).abs() > 1e-14 {
        return Err(Error::Domain(format!("coefficient table is for eta={}, flow requested eta={eta}", coeffs.eta)));
    }
    Ok(())
}

/// Iterates the charge flow for `J` steps from `(Z₀, Z̄₀) = (1, 0)`.
///
/// For `η > 1/2` the mirrored problem (`η → 1 − η`, `Z ↔ Z̄`) is iterated and
/// the result swapped back.
pub fn run_charge_flow(
    coupling: &CouplingTrajectory,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
    eta: f64,
    j_steps: usize,
) -> Result<ChargeTrajectory> {
    run_charge_flow_from(coupling, coeffs, family, alpha2, eta, j_steps, RenormState::initial())
}

/// As [`run_charge_flow`] with explicit initial data.
pub fn run_charge_flow_from(
    coupling: &CouplingTrajectory,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
    eta: f64,
    j_steps: usize,
    init: RenormState,
) -> Result<ChargeTrajectory> {
    check_table(coeffs, eta)?;
    if coupling.states.len() < j_steps {
        return Err(Error::Range(format!(
            "coupling trajectory has {} states, charge flow needs {j_steps}",
            coupling.states.len()
        )));
    }
    let mirror = eta > 0.5;
    let e = if mirror { 1.0 - eta } else { eta };
    let swap = |st: RenormState| RenormState { z: st.zbar, zbar: st.z, ..st };
    let mut st = if mirror { swap(init) } else { init };
    let mut states = vec![st];
    for j in 0..j_steps {
        let c = coeffs.at(j);
        let c = if mirror { mirrored(c) } else { *c };
        st = charge_step(&st, &coupling.states[j], &c, family, alpha2, e)?;
        states.push(st);
    }
    if mirror {
        states = states.into_iter().map(swap).collect();
    }
    Ok(ChargeTrajectory { eta, states, q: coupling.q.clone(), q1: coupling.q1, l: family.l() })
}

/// Per-scale inputs `ℓ_n, m_{±,n}, m_n` of the jump-process form, for `η < 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpInputs {
    pub ell: Vec<f64>,
    pub m_minus: Vec<f64>,
    pub m_plus: Vec<f64>,
    /// Logarithmic correction of the (1,1) entry.
    pub m: Vec<f64>,
    /// `L² e^{−η²(α²/2)Γ_n(0) − η²|q_n| + m_n}`.
    pub prefactor: Vec<f64>,
}

/// Assembles `ℓ_n, m_{±,n}` for `n < len` from the coefficients and couplings.
pub fn jump_inputs(
    coupling: &CouplingTrajectory,
    coeffs: &CoefficientTable,
    family: &CovarianceFamily,
    alpha2: f64,
    eta: f64,
    len: usize,
) -> Result<JumpInputs> {
    check_table(coeffs, eta)?;
    if coupling.states.len() < len || coupling.q.len() < len {
        return Err(Error::Range(format!("coupling trajectory shorter than {len}")));
    }
    let etab = eta - 1.0;
    let (e2, eb2) = (eta * eta, etab * etab);
    let gap = 0.5 * alpha2 * (eb2 - e2) * family.gamma0();
    let mut out = JumpInputs {
        ell: Vec::with_capacity(len),
        m_minus: Vec::with_capacity(len),
        m_plus: Vec::with_capacity(len),
        m: Vec::with_capacity(len),
        prefactor: Vec::with_capacity(len),
    };
    for n in 0..len {
        let c = coeffs.at(n);
        let st = &coupling.states[n];
        let q = coupling.q[n].abs();
        let m = (1.0 - c.m11 * st.s).ln() + e2 * q;
        let k = (e2 * q - m).exp();
        out.ell.push((-gap).exp() * k * (1.0 - c.m22 * st.s));
        out.m_minus.push(k * c.m12 * st.z);
        out.m_plus.push((-gap).exp() * k * c.m21 * st.z);
        out.m.push(m);
        out.prefactor.push((ln_scaling(family, alpha2, e2) - e2 * q + m).exp());
    }
    Ok(out)
}

/// `Q(j, j₀)`: ordered product of the scale matrices, later scales on the left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QMatrix {
    pub entries: [[f64; 2]; 2],
    pub j0: usize,
    pub j: usize,
}

impl QMatrix {
    pub fn identity(j0: usize) -> Self {
        QMatrix { entries: [[1.0, 0.0], [0.0, 1.0]], j0, j: j0.saturating_sub(1) }
    }

    pub fn mul(&self, rhs: &QMatrix) -> [[f64; 2]; 2] {
        let a = &self.entries;
        let b = &rhs.entries;
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for k in 0..2 {
                c[i][k] = a[i][0] * b[0][k] + a[i][1] * b[1][k];
            }
        }
        c
    }
}

/// `Q(j, j₀) = Π_{n=j₀}^{j} [diag(1, ℓ_n) + offdiag(m_{−,n}, m_{+,n})]`.
pub fn q_matrix(j: usize, j0: usize, inputs: &JumpInputs) -> Result<QMatrix> {
    if j0 < 1 || j0 > j + 1 {
        return Err(Error::Domain(format!("need 1 <= j0 <= j+1 (j0={j0}, j={j})")));
    }
    if j >= inputs.ell.len() {
        return Err(Error::Range(format!("jump inputs cover n < {}, requested j={j}", inputs.ell.len())));
    }
    let mut q = QMatrix::identity(j0);
    for n in j0..=j {
        let m = QMatrix { entries: [[1.0, inputs.m_minus[n]], [inputs.m_plus[n], inputs.ell[n]]], j0: n, j: n };
        q.entries = m.mul(&q);
        q.j = n;
    }
    Ok(q)
}

/// First `n ≥ 1` with `ℓ_n ≤ L^{−(η̄² − η²)}`.
pub fn adaptive_j0(inputs: &JumpInputs, family: &CovarianceFamily, eta: f64) -> Option<usize> {
    let etab = eta - 1.0;
    let thr = family.l_f64().powf(-(etab * etab - eta * eta));
    (1..inputs.ell.len()).find(|&n| inputs.ell[n] <= thr)
}

/// Result of the `c(η)` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEta {
    pub value: f64,
    pub terms: Vec<f64>,
}

/// `c(η) = Σ_{n≥0} L^{−2n} e^{−(α²/2)(η̄²−η²)Γ_{n−1,0}(0)} Σ_y e^{−η̄α²Γ_{∞,n+1}(y|0)}
/// e^{η̄α²Γ_n(0)} (e^{−η̄α²Γ_n(y)} − 1)`, for `η ∈ (0, 1/2)`.
pub fn c_eta(family: &CovarianceFamily, alpha2: f64, eta: f64) -> Result<CEta> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::Domain(format!("c(eta) is defined for eta in (0,1/2), got {eta}")));
    }
    let etab = eta - 1.0;
    let engine = CoefficientEngine::new(family, alpha2, SumControl::default())?;
    let g0 = family.gamma0();
    let gap = 0.5 * alpha2 * (etab * etab - eta * eta);
    let mut terms = Vec::new();
    let mut total = 0.0;
    for n in 0..400 {
        let pre = (-gap * family.partial_at_zero(n as isize - 1, 0)).exp() / family.l2(n);
        let lattice = engine.radial_sum(n, n, |_, p| {
            // Γ_{∞,n+1}(y|0) = −Γ_{∞,n+1}(0|y)
            let tail = p.infinite_zero_minus(n + 1);
            (etab * alpha2 * tail + etab * alpha2 * g0).exp() * (-etab * alpha2 * p.gamma[n]).exp_m1()
        });
        let t = pre * lattice;
        if !t.is_finite() {
            return Err(Error::Numeric(format!("c(eta) term {n} is not finite")));
        }
        terms.push(t);
        total += t;
        if t.abs() < 1e-15 * total.abs() {
            return Ok(CEta { value: total, terms });
        }
    }
    Err(Error::Numeric("c(eta) series did not converge in 400 terms".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_real_combination() {
        let x = LogReal::from_f64(3.0);
        let y = LogReal::from_f64(-5.0);
        let v = LogReal::combine(2.0, x, 1.0, y, 0.5f64.ln());
        assert!((v.value() - 0.5).abs() < 1e-15);
        assert_eq!(LogReal::combine(2.0, x, -2.0, x, 0.0), LogReal::ZERO);
        let big = LogReal { sign: 1.0, ln_abs: 5000.0 };
        let w = LogReal::combine(1.0, big, 1.0, big, 0.0);
        assert!((w.ln_abs - 5000.0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pure_scaling_without_couplings() {
        let f = CovarianceFamily::gaussian(16, 2).unwrap();
        let c = ScaleCoefficients {
            j: 0,
            a: 0.0,
            b: 0.0,
            m11: 1.0,
            m22: 2.0,
            m12: 3.0,
            m21: 4.0,
            e2: 0.0,
            e3: 0.0,
            e4: 0.0,
        };
        let s = charge_step(&RenormState::initial(), &CouplingState::initial(0.0, 0.0), &c, &f, crate::ALPHA2_BKT, 0.3)
            .unwrap();
        let expect = 16f64.powf(2.0 - 2.0 * 0.09);
        assert!((s.z.value() / expect - 1.0).abs() < 1e-13);
        assert_eq!(s.zbar, LogReal::ZERO);
    }

    #[test]
    fn factorization_of_q() {
        let n = 12;
        let inputs = JumpInputs {
            ell: (0..n).map(|i| 0.3 + 0.01 * i as f64).collect(),
            m_minus: (0..n).map(|i| 0.02 / (1.0 + i as f64)).collect(),
            m_plus: (0..n).map(|i| -0.03 / (2.0 + i as f64)).collect(),
            m: vec![0.0; n],
            prefactor: vec![1.0; n],
        };
        for j0 in 2..10 {
            let full = q_matrix(10, 1, &inputs).unwrap();
            let a = q_matrix(10, j0, &inputs).unwrap();
            let b = q_matrix(j0 - 1, 1, &inputs).unwrap();
            let prod = a.mul(&b);
            for (row, full_row) in prod.iter().zip(&full.entries) {
                for (p, q) in row.iter().zip(full_row) {
                    assert!((p - q).abs() < 1e-13);
                }
            }
        }
    }

    fn synthetic_inputs(n: usize) -> JumpInputs {
        JumpInputs {
            ell: (0..n).map(|i| 0.2 + 0.05 * (i % 3) as f64).collect(),
            m_minus: (0..n).map(|i| 0.07 - 0.01 * i as f64).collect(),
            m_plus: (0..n).map(|i| 0.03 + 0.02 * (i % 2) as f64).collect(),
            m: vec![0.0; n],
            prefactor: vec![1.0; n],
        }
    }

    /// Sum over all state paths `A₁/A₂` of the jump process.
    fn path_sum(j: usize, j0: usize, inp: &JumpInputs, from: usize, to: usize) -> f64 {
        let steps = j + 1 - j0;
        let mut total = 0.0;
        for mask in 0..(1u32 << steps) {
            let mut state = from;
            let mut w = 1.0;
            for (k, n) in (j0..=j).enumerate() {
                let next = ((mask >> k) & 1) as usize;
                w *= match (state, next) {
                    (0, 0) => 1.0,
                    (1, 1) => inp.ell[n],
                    (0, 1) => inp.m_plus[n],
                    _ => inp.m_minus[n],
                };
                state = next;
            }
            if state == to {
                total += w;
            }
        }
        total
    }

    #[test]
    fn q_matches_jump_path_expansion() {
        let inp = synthetic_inputs(8);
        for j0 in 1..4 {
            for j in j0..(j0 + 4).min(8) {
                let q = q_matrix(j, j0, &inp).unwrap();
                for to in 0..2 {
                    for from in 0..2 {
                        let p = path_sum(j, j0, &inp, from, to);
                        assert!((q.entries[to][from] - p).abs() < 1e-15, "j0={j0} j={j} {to}{from}");
                    }
                }
            }
        }
    }

    fn driven(eta: f64, steps: usize) -> (CovarianceFamily, CoefficientTable, CouplingTrajectory) {
        let f = CovarianceFamily::gaussian(16, 3).unwrap();
        let t = CoefficientTable::build(&f, crate::ALPHA2_BKT, eta, 3).unwrap();
        let tr = crate::rg_flow::run_flow(0.01, 7e-4, &t, &f, crate::ALPHA2_BKT, steps, false);
        (f, t, tr)
    }

    #[test]
    fn log_domain_matches_linear_recursion() {
        let eta = 0.35;
        let (f, t, tr) = driven(eta, 30);
        let ch = run_charge_flow(&tr, &t, &f, crate::ALPHA2_BKT, eta, 30).unwrap();
        let (mut z, mut zb) = (1.0f64, 0.0f64);
        let l2 = 256.0;
        let g = f.gamma0() * crate::ALPHA2_BKT / 2.0;
        for j in 0..30 {
            let c = t.at(j);
            let st = &tr.states[j];
            let zn = l2 * (-eta * eta * g).exp() * ((1.0 - st.s * c.m11) * z + st.z * c.m12 * zb);
            let zbn = l2 * (-(1.0 - eta) * (1.0 - eta) * g).exp() * ((1.0 - st.s * c.m22) * zb + st.z * c.m21 * z);
            z = zn;
            zb = zbn;
            assert!((ch.states[j + 1].z.value() / z - 1.0).abs() < 1e-12);
            assert!((ch.states[j + 1].zbar.value() / zb - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mirror_symmetry() {
        let (f, t3, tr) = driven(0.3, 40);
        let t7 = CoefficientTable::build(&f, crate::ALPHA2_BKT, 0.7, 3).unwrap();
        let a = run_charge_flow(&tr, &t3, &f, crate::ALPHA2_BKT, 0.3, 40).unwrap();
        let init = RenormState { z: LogReal::ZERO, zbar: LogReal::from_f64(1.0), ..RenormState::initial() };
        let b = run_charge_flow_from(&tr, &t7, &f, crate::ALPHA2_BKT, 0.7, 40, init).unwrap();
        for (x, y) in a.states.iter().zip(&b.states).skip(1) {
            assert!((x.z.ln_abs - y.zbar.ln_abs).abs() < 1e-12 * x.z.ln_abs.abs().max(1.0));
            assert!((x.zbar.ln_abs - y.z.ln_abs).abs() < 1e-12 * x.zbar.ln_abs.abs().max(1.0));
        }
    }

    #[test]
    fn diagonal_q_without_jumps() {
        let inputs = JumpInputs {
            ell: vec![0.5, 0.25, 0.5, 0.1],
            m_minus: vec![0.0; 4],
            m_plus: vec![0.0; 4],
            m: vec![0.0; 4],
            prefactor: vec![1.0; 4],
        };
        let q = q_matrix(3, 1, &inputs).unwrap();
        assert_eq!(q.entries, [[1.0, 0.0], [0.0, 0.25 * 0.5 * 0.1]]);
    }
}
