//! Property-based invariants.

use std::sync::OnceLock;

use bktrg::correlation::{asymptotic_formula, asymptotic_profile, fit_exponents, log_grid, AsymptoticConstants};
use bktrg::lattice_green::{coulomb_potential, energy};
use bktrg::rg_flow::flow_step;
use bktrg::*;
use proptest::prelude::*;

fn coulomb7() -> &'static PotentialTable {
    static T: OnceLock<PotentialTable> = OnceLock::new();
    T.get_or_init(|| coulomb_potential(LatticeSpec::new(7, 1).unwrap()).unwrap())
}

fn family16() -> &'static (CovarianceFamily, CoefficientTable) {
    static F: OnceLock<(CovarianceFamily, CoefficientTable)> = OnceLock::new();
    F.get_or_init(|| {
        let f = CovarianceFamily::gaussian(16, 8).unwrap();
        let c = CoefficientTable::build(&f, ALPHA2_BKT, 0.5, 6).unwrap();
        (f, c)
    })
}

fn site() -> impl Strategy<Value = [i64; 2]> {
    [-10i64..10, -10i64..10]
}

fn config() -> impl Strategy<Value = ParticleConfig> {
    let particle =
        (site(), prop::bool::ANY).prop_map(|(pos, up)| Particle { pos, charge: if up { 1.0 } else { -1.0 } });
    let probe = (site(), 0.05f64..0.95, prop::bool::ANY)
        .prop_map(|(pos, q, up)| Particle { pos, charge: if up { q } else { -q } });
    (prop::collection::vec(particle, 0..6), prop::collection::vec(probe, 0..3))
        .prop_map(|(p, q)| ParticleConfig::new(p, q).unwrap())
}

proptest! {
    #[test]
    fn coulomb_potential_has_lattice_symmetries(x in site()) {
        let t = coulomb7();
        let w = t.get(x);
        for y in [[-x[0], -x[1]], [x[1], x[0]], [-x[0], x[1]], [x[0] + 7, x[1] - 14]] {
            prop_assert!((t.get(y) - w).abs() < 1e-14);
        }
    }

    #[test]
    fn energy_is_translation_and_conjugation_invariant(c in config(), d in site()) {
        let t = coulomb7();
        let e = energy(&c, t).unwrap();
        let tol = 1e-12 * (1.0 + e.abs());
        prop_assert!((energy(&c.translated(d), t).unwrap() - e).abs() < tol);
        prop_assert!((energy(&c.conjugated(), t).unwrap() - e).abs() < tol);
    }

    #[test]
    fn flow_is_odd_in_activity(s in -0.05f64..0.05, z in 0.0f64..1e-2, j in 0usize..6) {
        let (f, c) = family16();
        let st = CouplingState { j, ..CouplingState::initial(s, z) };
        let neg = CouplingState { j, ..CouplingState::initial(s, -z) };
        let (a, b) = (flow_step(&st, c, f, ALPHA2_BKT), flow_step(&neg, c, f, ALPHA2_BKT));
        prop_assert_eq!(a.s, b.s);
        prop_assert_eq!(a.z, -b.z);
        prop_assert_eq!(a.e, b.e);
    }

    #[test]
    fn continuum_kernel_is_self_similar(j in 1usize..=8, u in 0.0f64..6.0) {
        let (f, _) = family16();
        let scale = f.l2(j).sqrt();
        prop_assert!((f.continuum(j, u * scale) - f.continuum(0, u)).abs() < 1e-12);
    }

    #[test]
    fn kernel_sums_are_bounded_by_the_origin(j in 0usize..=6, x in [-200i64..200, -200i64..200]) {
        let (f, _) = family16();
        let g = f.continuum(j, ((x[0] * x[0] + x[1] * x[1]) as f64).sqrt());
        prop_assert!(g <= f.gamma0() + 1e-15);
        prop_assert!(g >= 0.0);
    }

    #[test]
    fn log_real_combination_is_linear(a in -1e3f64..1e3, b in -1e3f64..1e3, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, k in -5.0f64..5.0) {
        let v = LogReal::combine(c1, LogReal::from_f64(a), c2, LogReal::from_f64(b), k).value();
        let exact = k.exp() * (c1 * a + c2 * b);
        prop_assert!((v - exact).abs() <= 1e-12 * k.exp() * (c1.abs() * a.abs() + c2.abs() * b.abs() + 1e-300));
    }

    // at smaller z the log column is nearly collinear with ln x
    #[test]
    fn fit_recovers_generating_exponents(z in 5e-4f64..1e-2) {
        let (f, _) = family16();
        let k = AsymptoticConstants::from_family(f, ALPHA2_BKT, 0.5).unwrap();
        let xs = log_grid(1e3, 1e7, 6);
        let prof = asymptotic_profile(&xs, z, 0.5, &k);
        let fit = fit_exponents(&prof, FitModel::PowerLog { f: k.f(z) }).unwrap();
        prop_assert!((fit.power - 1.0).abs() < 1e-6);
        prop_assert!((fit.logexp - 0.5).abs() < 1e-6);
        prop_assert!(asymptotic_formula(xs[0], z, 0.5, &k) > asymptotic_formula(xs[xs.len() - 1], z, 0.5, &k));
    }
}
