//! The acceptance suite: eight criteria, each evaluated with pinned
//! tolerances and reported as a list of named checks.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::charge_flow::run_charge_flow;
use crate::correlation::{asymptotic_formula, fit_exponents, log_grid, series_profile, AsymptoticConstants, FitModel};
use crate::covariance::CovarianceFamily;
use crate::error::Result;
use crate::lattice_green::{
    coulomb_potential, euler_constant, fit_c_e_default, yukawa_potential, LatticeSpec, Particle,
};
use crate::oracle::{
    enumerate_z, sine_gordon_mc, verify_gaussian_identities, wick_moments, wick_series, IdentityParams,
};
use crate::rg_coefficients::{compute_asymptotic_continuum, CoefficientTable};
use crate::rg_flow::{kosterlitz_integrate, kosterlitz_separatrix_s, shoot_separatrix};
use crate::ALPHA2_BKT;

/// Seed shared by the stochastic criteria.
pub const SEED: u64 = 20241015;

/// One measured quantity against its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Informational checks are reported but do not decide the criterion.
    pub informational: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub title: String,
    pub pass: bool,
    pub seconds: f64,
    pub runtime_limit: f64,
    pub checks: Vec<Check>,
}

impl CriterionReport {
    /// `criterion N: PASS|FAIL title (failing checks)`.
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        let failing: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.pass && !c.informational)
            .map(|c| format!("{}={:.6e} (target {:.6e} ± {:.1e})", c.name, c.value, c.target, c.tolerance))
            .collect();
        let tail = if failing.is_empty() { String::new() } else { format!(" failing: {}", failing.join("; ")) };
        format!("criterion {}: {verdict} {} [{:.1}s]{tail}", self.id, self.title, self.seconds)
    }
}

struct Builder {
    checks: Vec<Check>,
}

impl Builder {
    fn new() -> Self {
        Builder { checks: Vec::new() }
    }

    /// `|value − target| ≤ tol`.
    fn abs(&mut self, name: impl Into<String>, value: f64, target: f64, tol: f64) {
        let pass = (value - target).abs() <= tol;
        self.push(name, value, target, tol, pass, false);
    }

    /// `|value/target − 1| ≤ tol`.
    fn rel(&mut self, name: impl Into<String>, value: f64, target: f64, tol: f64) {
        let pass = (value / target - 1.0).abs() <= tol;
        self.push(name, value, target, tol, pass, false);
    }

    fn push(&mut self, name: impl Into<String>, value: f64, target: f64, tol: f64, pass: bool, informational: bool) {
        self.checks.push(Check { name: name.into(), value, target, tolerance: tol, pass, informational });
    }

    fn finish(mut self, id: u8, title: &str, start: Instant, limit: f64) -> CriterionReport {
        let seconds = start.elapsed().as_secs_f64();
        self.abs("runtime_s", seconds, 0.0, limit);
        let pass = self.checks.iter().all(|c| c.pass || c.informational);
        CriterionReport { id, title: title.into(), pass, seconds, runtime_limit: limit, checks: self.checks }
    }
}

/// Covariance exactness and self-similarity.
pub fn criterion_1() -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let mut worst = 0.0f64;
    for l in [8u32, 16, 32] {
        let fam = CovarianceFamily::gaussian(l, 8)?;
        let target = (l as f64).ln() / (2.0 * PI);
        for j in 0..=8 {
            worst = worst.max((fam.kernel(j, [0, 0])? - target).abs());
        }
    }
    b.abs("max |Γ_j(0) − lnL/2π|", worst, 0.0, 1e-10);
    let fam = CovarianceFamily::gaussian(16, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let j = rng.random_range(1..=8usize);
        let r = rng.random_range(0.0..4.0) * fam.l2(j).sqrt();
        let lhs = fam.continuum(j, r);
        let rhs = fam.continuum(0, r / fam.l2(j).sqrt());
        worst = worst.max((lhs - rhs).abs());
    }
    b.abs("max |Γ̃_j(y) − Γ̃_0(y/L^j)|", worst, 0.0, 1e-12);
    Ok(b.finish(1, "covariance exactness", t, 10.0))
}

/// Lattice Coulomb constants on the largest admissible odd torus.
pub fn criterion_2() -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let table = coulomb_potential(LatticeSpec::new(4095, 1)?)?;
    b.abs("W((1,0)|0)", table.get([1, 0]), -0.25, 1e-4);
    let fit = fit_c_e_default(&table)?;
    b.abs("c_E fit", fit.c_e, euler_constant(), 1e-3);
    Ok(b.finish(2, "lattice Coulomb constants", t, 60.0))
}

/// Coefficient asymptotics at `α² = 8π`, `L = 16`, `η = 1/2`.
pub fn criterion_3() -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let fam = CovarianceFamily::gaussian(16, 16)?;
    let table = CoefficientTable::build(&fam, ALPHA2_BKT, 0.5, 12)?;
    let two_ln_l = 2.0 * fam.ln_l();
    let (mut wb, mut wm) = (0.0f64, 0.0f64);
    for row in &table.rows[4..] {
        wb = wb.max((row.b / two_ln_l - 1.0).abs());
        wm = wm.max((row.m11 / (0.25 * row.b) - 1.0).abs());
    }
    b.abs("max |b_j/2lnL − 1|, 4≤j≤12", wb, 0.0, 0.02);
    b.abs("max |m11_j/(η²b_j) − 1|, 4≤j≤12", wm, 0.0, 0.02);
    let lim = compute_asymptotic_continuum(&fam, ALPHA2_BKT, 0.5)?;
    b.abs("b_limit", lim.b_limit, two_ln_l, 1e-8);
    let a_target = 8.0 * PI * PI * (8.0 * PI * fam.c_tilde_e()).exp() * fam.ln_l();
    b.rel("a_limit", lim.a_limit, a_target, 1e-6);
    Ok(b.finish(3, "coefficient asymptotics", t, 300.0))
}

/// Kosterlitz ODE invariant and closed-form separatrix.
pub fn criterion_4() -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let orbit = kosterlitz_integrate(0.1, 0.01, 10.0, 1e-3)?;
    let i0 = orbit[0].invariant;
    let drift = orbit.iter().map(|o| (o.invariant - i0).abs()).fold(0.0, f64::max);
    b.abs("invariant drift", drift, 0.0, 1e-8);
    let z0 = 0.01;
    let s0 = kosterlitz_separatrix_s(z0);
    let sep = kosterlitz_integrate(s0, z0, 100.0, 1e-3)?;
    let err = sep.iter().map(|o| (o.s - s0 / (1.0 + 2.0 * s0 * o.ell)).abs()).fold(0.0, f64::max);
    b.abs("max |s(ℓ) − s₀/(1+2s₀ℓ)|", err, 0.0, 1e-6);
    Ok(b.finish(4, "Kosterlitz ODE", t, 5.0))
}

/// Separatrix data shared by criteria 5–7.
pub struct SeparatrixSetup {
    pub family: CovarianceFamily,
    pub coeffs: CoefficientTable,
    pub shot: crate::rg_flow::SeparatrixResult,
}

/// Scales kept on the separatrix.
pub const J_SEPARATRIX: usize = 2000;

/// Shoots the `L = 16`, `z = 10⁻³` separatrix at `η = 1/2`.
pub fn separatrix_setup() -> Result<SeparatrixSetup> {
    let family = CovarianceFamily::gaussian(16, 16)?;
    let coeffs = CoefficientTable::build(&family, ALPHA2_BKT, 0.5, 12)?;
    let shot = shoot_separatrix(1e-3, &coeffs, &family, ALPHA2_BKT, J_SEPARATRIX, 1e-17)?;
    Ok(SeparatrixSetup { family, coeffs, shot })
}

/// Separatrix tracking of the reference sequence.
pub fn criterion_5(setup: &SeparatrixSetup) -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let tr = &setup.shot.trajectory;
    let (mut ws, mut wz) = (0.0f64, 0.0f64);
    for j in 5..=200 {
        let (st, q) = (&tr.states[j], tr.q[j]);
        ws = ws.max((tr.b * st.s / q - 1.0).abs());
        wz = wz.max(((tr.a * tr.b).sqrt() * st.z / q - 1.0).abs());
    }
    b.abs("max |b s_j/q_j − 1|, 5≤j≤200", ws, 0.0, 0.2);
    b.abs("max |√(ab) z_j/q_j − 1|, 5≤j≤200", wz, 0.0, 0.2);
    Ok(b.finish(5, "separatrix tracking", t, 60.0))
}

/// Pinned envelope constant for the drift increments.
pub const DRIFT_ENVELOPE: f64 = 1e-2;
/// Pinned bound on the spread of each drift sequence.
pub const DRIFT_SPREAD: f64 = 0.5;

/// Charge-flow drift at `η = 1/2` on the separatrix.
pub fn criterion_6(setup: &SeparatrixSetup) -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let n = J_SEPARATRIX - 1;
    let traj = run_charge_flow(&setup.shot.trajectory, &setup.coeffs, &setup.family, ALPHA2_BKT, 0.5, n)?;
    let drifts: Vec<(f64, f64)> = (0..n - 1).map(|j| traj.drift(j)).collect();
    let spread = |f: fn(&(f64, f64)) -> f64| {
        let v: Vec<f64> = drifts.iter().map(f).collect();
        v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
    };
    b.abs("spread of Z⁺ drift", spread(|d| d.0), 0.0, DRIFT_SPREAD);
    b.abs("spread of Z⁻ drift", spread(|d| d.1), 0.0, DRIFT_SPREAD);
    let q1 = traj.q1.abs();
    let (mut ep, mut em) = (0.0f64, 0.0f64);
    for j in 1..drifts.len() {
        let w = (1.0 + q1 * j as f64).sqrt();
        ep = ep.max((drifts[j].0 - drifts[j - 1].0).abs() * w);
        em = em.max((drifts[j].1 - drifts[j - 1].1).abs() * w);
    }
    b.abs("max |ΔZ⁺ drift|·√(1+|q₁|j)", ep, 0.0, DRIFT_ENVELOPE);
    b.abs("max |ΔZ⁻ drift|·√(1+|q₁|j)", em, 0.0, DRIFT_ENVELOPE);
    Ok(b.finish(6, "charge-flow asymptotics", t, 60.0))
}

/// Correlation exponents at zero activity and on the separatrix.
pub fn criterion_7(setup: &SeparatrixSetup) -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let fam = &setup.family;
    let lf = fam.l_f64();
    let xs = log_grid(lf.powi(3), lf.powi(7), 8);
    let free = shoot_separatrix(0.0, &setup.coeffs, fam, ALPHA2_BKT, 400, 1e-17)?.trajectory;
    for eta in [0.3, 0.5] {
        let coeffs = CoefficientTable::build(fam, ALPHA2_BKT, eta, 12)?;
        let ct = run_charge_flow(&free, &coeffs, fam, ALPHA2_BKT, eta, 399)?;
        let prof = series_profile(&xs, &ct, fam, ALPHA2_BKT, 0.0)?;
        let fit = fit_exponents(&prof, FitModel::PurePower)?;
        b.rel(format!("z=0 power, η={eta}"), fit.power, 4.0 * eta * eta, 0.02);
    }
    let z = setup.shot.z;
    let ct = run_charge_flow(&setup.shot.trajectory, &setup.coeffs, fam, ALPHA2_BKT, 0.5, 200)?;
    let prof = series_profile(&xs, &ct, fam, ALPHA2_BKT, z)?;
    let k = AsymptoticConstants::from_family(fam, ALPHA2_BKT, 0.5)?;
    let fit = fit_exponents(&prof, FitModel::PowerLog { f: k.f(z) })?;
    b.rel("separatrix power p, η=1/2", fit.power, 1.0, 0.03);
    b.rel("separatrix log exponent q, η=1/2", fit.logexp, 0.5, 0.25);
    let worst =
        prof.points.iter().map(|p| (p.rho / asymptotic_formula(p.x, z, 0.5, &k) - 1.0).abs()).fold(0.0, f64::max);
    b.abs("max |series/formula − 1|, η=1/2", worst, 0.0, 0.05);
    let coeffs = CoefficientTable::build(fam, ALPHA2_BKT, 0.3, 12)?;
    let ct = run_charge_flow(&setup.shot.trajectory, &coeffs, fam, ALPHA2_BKT, 0.3, 200)?;
    let k = AsymptoticConstants::from_family(fam, ALPHA2_BKT, 0.3)?;
    let prof = series_profile(&xs, &ct, fam, ALPHA2_BKT, z)?;
    let w = prof.points.iter().map(|p| (p.rho / asymptotic_formula(p.x, z, 0.3, &k) - 1.0).abs()).fold(0.0, f64::max);
    b.push("max |series/formula − 1|, η=0.3", w, 0.0, 0.05, w <= 0.05, true);
    Ok(b.finish(7, "correlation exponents", t, 300.0))
}

/// MC samples for the sine-Gordon comparison.
pub const MC_SAMPLES: u64 = 1_000_000;

/// Oracle equivalence on the `5 × 5` torus.
pub fn criterion_8() -> Result<CriterionReport> {
    let t = Instant::now();
    let mut b = Builder::new();
    let (beta, z, m) = (2.0, 0.05, 0.1);
    let spec = LatticeSpec::new(5, 1)?;
    let yuk = yukawa_potential(spec, m)?;
    let mc = sine_gordon_mc(&spec, beta, m, z, MC_SAMPLES, SEED, None)?;
    let moments = wick_moments(&yuk, beta, 4)?;
    let w4 = wick_series(&moments, z);
    b.abs("MC − Wick(n≤4) in stderr", (mc.mean - w4) / mc.stderr, 0.0, 3.0);
    let w6 = wick_series(&wick_moments(&yuk, beta, 6)?, z);
    let d6 = (mc.mean - w6) / mc.stderr;
    b.push("MC − Wick(n≤6) in stderr", d6, 0.0, 3.0, d6.abs() <= 3.0, true);

    let coul = coulomb_potential(spec)?;
    let eta = 0.5;
    let mut worst = 0.0f64;
    for x in [[1i64, 0], [1, 1], [2, 1], [2, 2]] {
        let probes = [Particle { pos: [0, 0], charge: eta }, Particle { pos: x, charge: -eta }];
        let e = enumerate_z(&coul, beta, 0.0, 0, &probes)?;
        let expected = (beta * eta * eta * (coul.get(x) - coul.get([0, 0]))).exp();
        worst = worst.max((e.ratio().unwrap_or(f64::NAN) / expected - 1.0).abs());
    }
    b.abs("enumeration ρ_η at z=0 vs e^{βη²W(x|0)}", worst, 0.0, 4.0 * f64::EPSILON);

    let fam = CovarianceFamily::gaussian(16, 3)?;
    let rep = verify_gaussian_identities(&fam, IdentityParams::new(0, 1.0, MC_SAMPLES, SEED))?;
    for c in &rep.checks {
        b.abs(format!("{} exact error", c.name), c.exact_error, 0.0, 1e-14);
        for k in 0..2 {
            let dev = if c.mc_stderr[k] > 0.0 { (c.mc[k] - c.closed_form[k]) / c.mc_stderr[k] } else { 0.0 };
            let part = if k == 0 { "re" } else { "im" };
            b.abs(format!("{} MC {part} in stderr", c.name), dev, 0.0, 3.0);
        }
    }
    Ok(b.finish(8, "oracle equivalence", t, 600.0))
}

/// All criteria in order; a criterion that errors is reported as failing.
pub fn run_all() -> Vec<CriterionReport> {
    let fail = |id: u8, e: crate::error::Error| CriterionReport {
        id,
        title: format!("error: {e}"),
        pass: false,
        seconds: 0.0,
        runtime_limit: 0.0,
        checks: Vec::new(),
    };
    let mut out = Vec::with_capacity(8);
    for (id, f) in
        [(1u8, criterion_1 as fn() -> Result<CriterionReport>), (2, criterion_2), (3, criterion_3), (4, criterion_4)]
    {
        out.push(f().unwrap_or_else(|e| fail(id, e)));
    }
    match separatrix_setup() {
        Ok(s) => {
            out.push(criterion_5(&s).unwrap_or_else(|e| fail(5, e)));
            out.push(criterion_6(&s).unwrap_or_else(|e| fail(6, e)));
            out.push(criterion_7(&s).unwrap_or_else(|e| fail(7, e)));
        }
        Err(e) => {
            for id in 5..=7 {
                out.push(fail(id, e.clone()));
            }
        }
    }
    out.push(criterion_8().unwrap_or_else(|e| fail(8, e)));
    out
}
