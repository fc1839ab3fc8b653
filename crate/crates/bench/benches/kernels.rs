//! Microbenchmarks for the numeric kernels the certification grid and the
//! Monte Carlo harness lean on.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;

use prophet_core::hfn::{h_eval, HQuery};
use prophet_core::instance::{derived_stats, gen_hard_instance};
use prophet_core::matching::{
    brute_force_marginals, normalize_regular, CarAlgorithm, MamAlgorithm, TypeGraph, MAM_BETA0,
    MAM_BETA1,
};
use prophet_core::ratio::{gamma_eval, optimize_betas, GammaPoint, SearchSpec};
use prophet_core::secretary::{policy_step, simulate_once, STEP_BETA};

fn bench_h_eval(c: &mut Criterion) {
    c.bench_function("h_eval s=2 x=0.5", |b| {
        b.iter(|| h_eval(&HQuery::new(2.0, black_box(0.5))))
    });
    c.bench_function("h_eval s=3 x=1e-3", |b| {
        b.iter(|| h_eval(&HQuery::new(3.0, black_box(1e-3))))
    });
}

fn bench_gamma_eval(c: &mut Criterion) {
    let hs = h_eval(&HQuery::new(2.0, 0.34));
    c.bench_function("gamma_eval mid-grid cell", |b| {
        b.iter(|| {
            let pt = GammaPoint::with_h_s(
                black_box(0.34),
                black_box(0.32),
                2.0,
                (0.09, 0.37, 0.46),
                hs,
            )
            .unwrap();
            gamma_eval(&pt).unwrap()
        })
    });
}

fn bench_beta_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("beta_search");
    group.sample_size(10);
    group.bench_function("optimize_betas worst cell", |b| {
        b.iter(|| optimize_betas(black_box(0.34), black_box(0.32), 2.0, &SearchSpec::default()))
    });
    group.finish();
}

fn bench_trials(c: &mut Criterion) {
    let inst = gen_hard_instance(20, 0.5).unwrap();
    let stats = derived_stats(&inst);
    let policy = policy_step(&stats, STEP_BETA);
    c.bench_function("secretary trial hard(20,0.5)", |b| {
        let mut rng = Pcg64Mcg::seed_from_u64(1);
        b.iter(|| simulate_once(&inst, &policy, &mut rng))
    });

    let p = 1.0 / 3.0;
    let dist = vec![(0, p), (1, p), (2, 1.0 - 2.0 * p)];
    let graph = TypeGraph::new(
        3,
        3,
        vec![dist; 6],
        vec![vec![3.0, 1.0, 0.5], vec![1.0, 2.0, 1.5], vec![0.5, 1.0, 2.5]],
    )
    .unwrap();
    let (_, marg) = brute_force_marginals(&graph).unwrap();
    let (g1, x1) = normalize_regular(&graph, &marg);
    let mam = MamAlgorithm::new(&g1, &x1, MAM_BETA0, MAM_BETA1);
    let car = CarAlgorithm::new(&g1, &x1);
    c.bench_function("mam trial 3x6", |b| {
        let mut rng = Pcg64Mcg::seed_from_u64(2);
        b.iter(|| mam.run(&mut rng))
    });
    c.bench_function("car trial 3x6", |b| {
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        b.iter(|| car.run(&mut rng))
    });
}

criterion_group!(benches, bench_h_eval, bench_gamma_eval, bench_beta_search, bench_trials);
criterion_main!(benches);
