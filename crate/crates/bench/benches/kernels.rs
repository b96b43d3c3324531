use bktrg::charge_flow::run_charge_flow;
use bktrg::correlation::{log_grid, series_profile};
use bktrg::lattice_green::coulomb_potential;
use bktrg::rg_flow::shoot_separatrix;
use bktrg::*;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn covariance(c: &mut Criterion) {
    let fam = CovarianceFamily::gaussian(16, 16).unwrap();
    c.bench_function("radial_profile_r100_top12", |b| b.iter(|| fam.radial_profile(black_box(100.0), 12)));
    c.bench_function("coulomb_fft_255", |b| b.iter(|| coulomb_potential(LatticeSpec::new(255, 1).unwrap()).unwrap()));
}

fn coefficients(c: &mut Criterion) {
    let fam = CovarianceFamily::gaussian(16, 8).unwrap();
    let mut g = c.benchmark_group("coefficients");
    g.sample_size(10);
    g.bench_function("table_L16_j4", |b| b.iter(|| CoefficientTable::build(&fam, ALPHA2_BKT, 0.5, 4).unwrap()));
    g.finish();
}

fn flows(c: &mut Criterion) {
    let fam = CovarianceFamily::gaussian(16, 16).unwrap();
    let table = CoefficientTable::build(&fam, ALPHA2_BKT, 0.5, 12).unwrap();
    let mut g = c.benchmark_group("flows");
    g.sample_size(10);
    g.bench_function("shoot_separatrix_J2000", |b| {
        b.iter(|| shoot_separatrix(1e-3, &table, &fam, ALPHA2_BKT, 2000, 1e-17).unwrap())
    });
    let shot = shoot_separatrix(1e-3, &table, &fam, ALPHA2_BKT, 2000, 1e-17).unwrap();
    g.bench_function("charge_flow_2000", |b| {
        b.iter(|| run_charge_flow(&shot.trajectory, &table, &fam, ALPHA2_BKT, 0.5, 1999).unwrap())
    });
    let ct = run_charge_flow(&shot.trajectory, &table, &fam, ALPHA2_BKT, 0.5, 200).unwrap();
    let xs = log_grid(16f64.powi(3), 16f64.powi(7), 8);
    g.bench_function("series_profile_33pts", |b| b.iter(|| series_profile(&xs, &ct, &fam, ALPHA2_BKT, 1e-3).unwrap()));
    g.finish();
}

criterion_group!(benches, covariance, coefficients, flows);
criterion_main!(benches);
