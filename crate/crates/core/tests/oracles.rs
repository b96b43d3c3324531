//! Cross-checks against independent evaluations.

use std::f64::consts::PI;

use bktrg::charge_flow::run_charge_flow;
use bktrg::correlation::rho_eta;
use bktrg::covariance::norm;
use bktrg::lattice_green::{coulomb_potential, euler_constant, yukawa_potential};
use bktrg::oracle::{enumerate_z, sine_gordon_mc, wick_moments, wick_series};
use bktrg::rg_coefficients::{compute_w0, CoefficientEngine};
use bktrg::rg_flow::run_flow;
use bktrg::special::{e1, ein};
use bktrg::*;

#[test]
fn e1_agrees_with_statrs() {
    for i in 0..200 {
        let x = 10f64.powf(-3.0 + 5.0 * i as f64 / 199.0);
        let reference = statrs::function::exponential::integral(x, 1).unwrap();
        assert!((e1(x) / reference - 1.0).abs() < 1e-13, "x={x}: {} vs {reference}", e1(x));
    }
}

/// Composite Simpson on `∫₀ˣ (1 − e^{−t})/t dt`.
fn ein_simpson(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let f = |t: f64| if t == 0.0 { 1.0 } else { -(-t).exp_m1() / t };
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn ein_matches_quadrature() {
    for x in [1e-4, 0.3, 1.0, 2.5, 7.0, 30.0] {
        assert!((ein(x) - ein_simpson(x)).abs() < 1e-11 * ein(x).max(1.0), "x={x}");
    }
}

#[test]
fn c_tilde_from_tail_of_scale_sum() {
    // Γ̃_{∞,0}(0|r) − ln r / 2π → −c̃_E; the e^{−r²/4}/(r²/2) remainder is negligible at r = 40
    let fam = CovarianceFamily::gaussian(16, 4).unwrap();
    let r = 40.0;
    let lhs = fam.infinite_zero_minus(0, r) - r.ln() / (2.0 * PI);
    assert!((lhs + fam.c_tilde_e()).abs() < 1e-12);
}

#[test]
fn a_coefficient_matches_direct_lattice_sum() {
    let fam = CovarianceFamily::gaussian(8, 4).unwrap();
    let (a2, j) = (ALPHA2_BKT, 2);
    let engine = CoefficientEngine::new(&fam, a2, SumControl::default()).unwrap();
    let kernels = compute_w0(&fam, a2, j).unwrap();
    let local = (-a2 * fam.gamma0()).exp() * fam.l2(j).powi(-2);
    // Γ_j lives on |y| ~ L^{j+1}; the w₀,b factor on |y| ~ L^j
    let r_max = 12 * 8i64.pow(j as u32 + 1);
    let r_w0b = 12.0 * 8f64.powi(j as i32);
    let mut sum = 0.0;
    for y0 in 0..=r_max {
        for y1 in 0..=r_max {
            let y = [y0, y1];
            let r = norm(y);
            if r > r_max as f64 {
                continue;
            }
            let mult = match (y0 == 0, y1 == 0) {
                (true, true) => 1.0,
                (true, false) | (false, true) => 2.0,
                _ => 4.0,
            };
            let wb = if r <= r_w0b { 2.0 * kernels.eval(KernelLabel::W0b, y).unwrap() } else { 0.0 };
            let f = wb * (-a2 * fam.continuum_zero_minus(j, r)).exp_m1() + local * (a2 * fam.continuum(j, r)).exp_m1();
            sum += mult * r * r * f;
        }
    }
    let direct = 0.5 * a2 * sum;
    let engine_a = engine.a(j).unwrap();
    assert!((engine_a / direct - 1.0).abs() < 1e-10, "engine {engine_a} direct {direct}");
}

#[test]
fn yukawa_matches_direct_momentum_sum_on_3x3() {
    let spec = LatticeSpec::new(3, 1).unwrap();
    let m = 0.7;
    let table = yukawa_potential(spec, m).unwrap();
    for x0 in -1i64..=1 {
        for x1 in -1i64..=1 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    let (k0, k1) = (2.0 * PI * a as f64 / 3.0, 2.0 * PI * b as f64 / 3.0);
                    let lam = 4.0 - 2.0 * k0.cos() - 2.0 * k1.cos();
                    s += (k0 * x0 as f64 + k1 * x1 as f64).cos() / (m * m + lam);
                }
            }
            s /= 9.0;
            assert!((table.get([x0, x1]) - s).abs() < 1e-14, "x=({x0},{x1})");
        }
    }
}

#[test]
fn zero_activity_correlation_matches_lattice_oracle() {
    let fam = CovarianceFamily::gaussian(16, 16).unwrap();
    let eta = 0.3;
    let coeffs = CoefficientTable::build(&fam, ALPHA2_BKT, eta, 4).unwrap();
    let free = run_flow(0.0, 0.0, &coeffs, &fam, ALPHA2_BKT, 80, false);
    let traj = run_charge_flow(&free, &coeffs, &fam, ALPHA2_BKT, eta, 80).unwrap();
    let table = coulomb_potential(LatticeSpec::new(4095, 1).unwrap()).unwrap();
    // continuum constant c̃_E against the lattice c_E
    let align = (ALPHA2_BKT * eta * eta * (fam.c_tilde_e() - euler_constant())).exp();
    let mut prev = f64::INFINITY;
    for r in [20i64, 35, 50, 80, 120, 200] {
        let rho = rho_eta(r as f64, &traj, &fam, ALPHA2_BKT).unwrap().rho;
        let lattice = (ALPHA2_BKT * eta * eta * table.get([r, 0])).exp() * align;
        assert!((rho / lattice - 1.0).abs() < 0.02, "r={r}: series {rho} lattice {lattice}");
        assert!(rho < prev);
        prev = rho;
    }
}

#[test]
fn enumeration_is_translation_and_charge_flip_invariant() {
    let spec = LatticeSpec::new(5, 1).unwrap();
    let table = yukawa_potential(spec, 0.3).unwrap();
    let probes = |d: [i64; 2], s: f64| {
        [Particle { pos: [d[0], d[1]], charge: s * 0.4 }, Particle { pos: [d[0] + 2, d[1] + 1], charge: -s * 0.4 }]
    };
    let base = enumerate_z(&table, 2.0, 0.05, 3, &probes([0, 0], 1.0)).unwrap().ratio().unwrap();
    for (d, s) in [([1, 3], 1.0), ([0, 0], -1.0), ([4, 2], -1.0)] {
        let r = enumerate_z(&table, 2.0, 0.05, 3, &probes(d, s)).unwrap().ratio().unwrap();
        assert!((r / base - 1.0).abs() < 1e-12, "shift {d:?} sign {s}");
    }
}

#[test]
fn enumeration_reproduces_wick_series_without_probes() {
    let spec = LatticeSpec::new(5, 1).unwrap();
    let table = yukawa_potential(spec, 0.2).unwrap();
    let e = enumerate_z(&table, 2.0, 0.05, 3, &[]).unwrap();
    let w = wick_series(&wick_moments(&table, 2.0, 3).unwrap(), 0.05);
    assert!((e.z / w - 1.0).abs() < 1e-12);
}

#[test]
fn monte_carlo_is_seed_deterministic() {
    let spec = LatticeSpec::new(5, 1).unwrap();
    let run = |seed| sine_gordon_mc(&spec, 2.0, 0.1, 0.05, 20_000, seed, None).unwrap();
    let (a, b, c) = (run(11), run(11), run(12));
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    assert_ne!(a.mean.to_bits(), c.mean.to_bits());
}
