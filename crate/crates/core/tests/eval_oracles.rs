mod common;

use common::*;
use proptest::prelude::*;
use sprinql::eval::{
    default_environments, evaluate_policy, pearson, prepare, reward_correlation, run_cell, run_comparison, spearman,
    EvalMode, Method, ProbeConfig, SuiteConfig,
};
use sprinql::mdp::Policy;
use sprinql::objective::SprinqlConfig;

#[test]
fn sampled_evaluation_brackets_exact_return() {
    let mut r = rng(41);
    for _ in 0..5 {
        let mdp = random_mdp(&mut r, 5, 3, 0.85);
        let pi = random_policy(&mut r, 5, 3);
        let exact = evaluate_policy(&mdp, &pi, mdp.true_reward(), EvalMode::Exact).unwrap();
        let est = evaluate_policy(
            &mdp,
            &pi,
            mdp.true_reward(),
            EvalMode::Sampled {
                episodes: 20_000,
                horizon: 200,
                seed: 5,
            },
        )
        .unwrap();
        assert!((est.mean - exact.mean).abs() < 3.0 * est.stderr, "{est:?} vs {exact:?}");
    }
}

#[test]
fn true_reward_correlates_perfectly_with_itself() {
    let env = &default_environments()[0];
    let mdp = sprinql::make_gridworld(&env.grid).unwrap();
    let base = sprinql::data::expert_policy(&mdp, 10.0).unwrap();
    let (p, s) = reward_correlation(mdp.true_reward(), &mdp, &base, &ProbeConfig::default()).unwrap();
    assert!((p - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    // a positive affine image of the reward keeps both coefficients at one
    let affine = mdp.true_reward().map(|x| 3.0 * x);
    let (p, s) = reward_correlation(&affine, &mdp, &base, &ProbeConfig::default()).unwrap();
    assert!((p - 1.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
}

fn small_suite() -> SuiteConfig {
    let mut cfg = SuiteConfig {
        envs: default_environments().into_iter().take(2).collect(),
        seeds: vec![0, 1],
        record_timing: false,
        jobs: 2,
        ..SuiteConfig::default()
    };
    cfg.objective = SprinqlConfig {
        iterations: 300,
        ..cfg.objective
    };
    cfg.reference.iterations = 300;
    cfg
}

#[test]
fn suite_output_is_reproducible_and_schedule_independent() {
    let cfg = small_suite();
    let a = run_comparison(&cfg).unwrap();
    let b = run_comparison(&SuiteConfig { jobs: 1, ..cfg.clone() }).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.render_table(), b.render_table());
    assert!(a.failures.is_empty());
    let csv = a.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,env,seed,score,pearson,spearman,wall_s");
    assert_eq!(lines.len(), 1 + Method::ALL.len() * 2 * 2);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 7);
    }
}

#[test]
fn single_cell_equals_direct_composition() {
    let cfg = small_suite();
    let env = &cfg.envs[0];
    let prep = prepare(env, 3, &cfg).unwrap();
    let cell = run_cell(Method::Sprinql, env, 3, &prep, &cfg).unwrap();
    let out = sprinql::objective::train_on_expectations(&prep.expectations, &prep.reference, &cfg.objective, None)
        .unwrap();
    // the last evaluation is taken at the final iterate
    let last = cell.curve.last().unwrap().1;
    assert!((last - prep.score(&out.policy).unwrap()).abs() < 1e-9);
    assert_eq!(cell.weights, prep.weights.as_slice().to_vec());
}

#[test]
fn uniform_policy_scores_zero_and_expert_scores_hundred() {
    let cfg = small_suite();
    let prep = prepare(&cfg.envs[1], 0, &cfg).unwrap();
    let (ns, na) = (prep.mdp.n_states(), prep.mdp.n_actions());
    assert!(prep.score(&Policy::uniform(ns, na)).unwrap().abs() < 1e-9);
    assert!((prep.score(&prep.expert).unwrap() - 100.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn pearson_is_affine_invariant(
        xs in proptest::collection::vec(-10.0f64..10.0, 3..30),
        a in 0.1f64..10.0,
        b in -5.0f64..5.0,
    ) {
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        if let Ok(p) = pearson(&xs, &ys) {
            prop_assert!((p - 1.0).abs() < 1e-9);
            let neg: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
            prop_assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn spearman_is_monotone_invariant(xs in proptest::collection::vec(-3.0f64..3.0, 3..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + x.exp()).collect();
        if let Ok(s) = spearman(&xs, &ys) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn correlations_are_bounded(
        xs in proptest::collection::vec(-10.0f64..10.0, 5),
        ys in proptest::collection::vec(-10.0f64..10.0, 5),
    ) {
        if let Ok(p) = pearson(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&p));
        }
    }
}
