use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use pxlogit::coord::cd_solve;
use pxlogit::missing::{e_step, missing_step};
use pxlogit::solvers::{self, em_step, gd_backtrack_step, gpx_ecme_pgd_step, newton_step, px_ecme_step, px_mm_step};
use pxlogit::{CdConfig, KappaRule, Penalty, RaySearchConfig, SolverConfig, SolverKind};
use pxlogit_bench::{ar1, missing_binary};

fn single_steps(c: &mut Criterion) {
    let ray = RaySearchConfig::default();
    let none = Penalty::none();
    let l1 = Penalty::l1(1.0).unwrap();
    let mut g = c.benchmark_group("step");
    for &(n, p) in &[(500, 5), (2600, 50)] {
        let d = ar1(n, p, 0.5);
        let beta = DVector::from_element(p, 0.1);
        let id = format!("{n}x{p}");
        g.bench_with_input(BenchmarkId::new("em", &id), &d, |b, d| b.iter(|| em_step(d, black_box(&beta), &none)));
        g.bench_with_input(BenchmarkId::new("px_ecme", &id), &d, |b, d| {
            b.iter(|| px_ecme_step(d, black_box(&beta), &none, &ray))
        });
        g.bench_with_input(BenchmarkId::new("newton", &id), &d, |b, d| b.iter(|| newton_step(d, black_box(&beta), &none)));
        g.bench_with_input(BenchmarkId::new("px_mm", &id), &d, |b, d| {
            b.iter(|| px_mm_step(d, black_box(&beta), &none, KappaRule::Quarter, &ray))
        });
        g.bench_with_input(BenchmarkId::new("gd_backtrack_l1", &id), &d, |b, d| {
            b.iter(|| gd_backtrack_step(d, black_box(&beta), &l1, 1.0))
        });
        g.bench_with_input(BenchmarkId::new("gpx_l1", &id), &d, |b, d| {
            b.iter(|| gpx_ecme_pgd_step(d, black_box(&beta), &l1, &ray))
        });
    }
    g.finish();
}

fn full_solves(c: &mut Criterion) {
    let d = ar1(500, 5, 0.9);
    let zero = DVector::zeros(5);
    let cfg = SolverConfig {
        record_trace: false,
        ..SolverConfig::default()
    };
    let mut g = c.benchmark_group("solve_ar1_500x5");
    g.sample_size(10);
    for kind in [SolverKind::Em, SolverKind::PxEcme, SolverKind::Aa1, SolverKind::Newton] {
        g.bench_function(kind.name(), |b| b.iter(|| solvers::run(&d, &Penalty::none(), kind, black_box(&zero), &cfg)));
    }
    let cd = CdConfig {
        lambda1: 2.0,
        lambda2: 1.0,
        ..CdConfig::default()
    };
    g.bench_function("cd_em_enet", |b| b.iter(|| cd_solve(&d, &cd, black_box(&zero))));
    g.finish();
}

fn missing_covariates(c: &mut Criterion) {
    let ray = RaySearchConfig::default();
    let mut g = c.benchmark_group("missing");
    for p in [4, 8] {
        let md = missing_binary(400, p);
        let beta = DVector::from_element(p, 0.2);
        let gamma = md.uniform_gamma();
        g.bench_function(BenchmarkId::new("e_step", p), |b| b.iter(|| e_step(&md, black_box(&beta), &gamma)));
        g.bench_function(BenchmarkId::new("px_iteration", p), |b| {
            b.iter(|| missing_step(&md, black_box(&beta), &gamma, true, &ray))
        });
    }
    g.finish();
}

criterion_group!(benches, single_steps, full_solves, missing_covariates);
criterion_main!(benches);
