use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sprinql::eval::{default_environments, prepare, SuiteConfig};
use sprinql::mdp::{occupancy_measure, soft_value_iteration, Policy};
use sprinql::objective::{gamma_hat_gradient, train_on_expectations, SprinqlConfig};
use sprinql::make_gridworld;
use std::hint::black_box;

fn soft_vi(c: &mut Criterion) {
    let mut group = c.benchmark_group("soft_value_iteration");
    for env in default_environments() {
        let mdp = make_gridworld(&env.grid).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(&env.name), &mdp, |b, mdp| {
            b.iter(|| soft_value_iteration(black_box(mdp), mdp.true_reward(), 1e-10).unwrap())
        });
    }
    group.finish();
}

fn occupancy(c: &mut Criterion) {
    let mut group = c.benchmark_group("occupancy_measure");
    for env in default_environments() {
        let mdp = make_gridworld(&env.grid).unwrap();
        let pi = Policy::uniform(mdp.n_states(), mdp.n_actions());
        group.bench_with_input(BenchmarkId::from_parameter(&env.name), &mdp, |b, mdp| {
            b.iter(|| occupancy_measure(black_box(mdp), &pi).unwrap())
        });
    }
    group.finish();
}

fn objective(c: &mut Criterion) {
    let cfg = SuiteConfig::default();
    let env = &default_environments()[0];
    let prep = prepare(env, 0, &cfg).unwrap();
    let q = soft_value_iteration(&prep.mdp, prep.mdp.true_reward(), 1e-10).unwrap().q;
    c.bench_function("gamma_hat_gradient/grid-open", |b| {
        b.iter(|| gamma_hat_gradient(black_box(&q), &prep.expectations, &prep.reference, &cfg.objective).unwrap())
    });
    let short = SprinqlConfig {
        iterations: 200,
        ..cfg.objective.clone()
    };
    c.bench_function("train_200_iterations/grid-open", |b| {
        b.iter(|| train_on_expectations(&prep.expectations, &prep.reference, &short, None).unwrap())
    });
}

criterion_group!(benches, soft_vi, occupancy, objective);
criterion_main!(benches);
