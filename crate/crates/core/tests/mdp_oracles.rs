mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sprinql::data::{rollout, Trajectory};
use sprinql::mdp::{
    flow_residual, inverse_soft_bellman, occupancy_measure, policy_return, soft_bellman_residual,
    soft_policy_evaluation, soft_value_iteration, Policy, QTable,
};
use sprinql::objective::recovered_reward;
use sprinql::Table;

#[test]
fn soft_vi_agrees_with_unshifted_iteration() {
    let mut r = rng(1);
    for _ in 0..20 {
        let ns = r.gen_range(1..6);
        let na = r.gen_range(1..4);
        let mdp = random_mdp(&mut r, ns, na, 0.8);
        let sol = soft_value_iteration(&mdp, mdp.true_reward(), 1e-12).unwrap();
        let naive = naive_soft_vi(&mdp, mdp.true_reward(), 400);
        assert!(sol.q.0.max_abs_diff(&naive) < 1e-9, "diff {}", sol.q.0.max_abs_diff(&naive));
        assert!(soft_bellman_residual(&mdp, mdp.true_reward(), &sol.q) < 1e-11);
    }
}

#[test]
fn soft_vi_survives_large_rewards() {
    let mut r = rng(2);
    let mdp = random_mdp(&mut r, 4, 3, 0.9);
    let big = mdp.true_reward().map(|x| 800.0 * x);
    let sol = soft_value_iteration(&mdp, &big, 1e-8).unwrap();
    assert!(sol.q.0.is_finite());
    assert!(soft_bellman_residual(&mdp, &big, &sol.q) < 1e-7);
}

#[test]
fn recovered_reward_inverts_soft_vi() {
    let mut r = rng(3);
    for _ in 0..50 {
        let ns = r.gen_range(1..7);
        let na = r.gen_range(1..5);
        let gamma = r.gen_range(0.0..0.95);
        let mdp = random_mdp(&mut r, ns, na, gamma);
        let sol = soft_value_iteration(&mdp, mdp.true_reward(), 1e-12).unwrap();
        let rhat = recovered_reward(&sol.q, &mdp).unwrap();
        assert!(rhat.max_abs_diff(mdp.true_reward()) < 1e-8);
    }
}

#[test]
fn occupancy_matches_power_series_and_flow() {
    let mut r = rng(4);
    for _ in 0..30 {
        let ns = r.gen_range(1..7);
        let na = r.gen_range(1..4);
        let mdp = random_mdp(&mut r, ns, na, 0.85);
        let pi = random_policy(&mut r, ns, na);
        let rho = occupancy_measure(&mdp, &pi).unwrap();
        let series = occupancy_power_series(&mdp, &pi, 600);
        assert!(rho.0.max_abs_diff(&series.0) < 1e-12);
        assert!(flow_residual(&mdp, &rho) <= 1e-9);
        assert!((rho.0.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn return_equals_occupancy_expectation_over_one_minus_gamma() {
    let mut r = rng(5);
    let mdp = random_mdp(&mut r, 5, 3, 0.9);
    let pi = random_policy(&mut r, 5, 3);
    let rho = occupancy_measure(&mdp, &pi).unwrap();
    let ret = policy_return(&mdp, &pi, mdp.true_reward()).unwrap();
    assert!((ret - rho.expect(mdp.true_reward()) / 0.1).abs() < 1e-10);
}

#[test]
fn monte_carlo_returns_within_three_standard_errors() {
    let mut r = rng(6);
    let mdp = random_mdp(&mut r, 4, 2, 0.8);
    let pi = random_policy(&mut r, 4, 2);
    let exact = policy_return(&mdp, &pi, mdp.true_reward()).unwrap();
    let n = 20_000;
    let returns: Vec<f64> = (0..n)
        .map(|_| rollout(&mdp, &pi, 150, &mut r).discounted_return(mdp.true_reward(), 0.8))
        .collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
}

#[test]
fn soft_policy_evaluation_is_backup_fixed_point() {
    let mut r = rng(7);
    let mdp = random_mdp(&mut r, 5, 3, 0.9);
    let pi = random_policy(&mut r, 5, 3);
    let q = soft_policy_evaluation(&mdp, &pi, mdp.true_reward()).unwrap();
    // applying the inverse operator under the same policy recovers the reward
    let back = inverse_soft_bellman(&q, &pi, &mdp).unwrap();
    assert!(back.max_abs_diff(mdp.true_reward()) < 1e-10);
}

#[test]
fn soft_optimal_policy_beats_random_policies_in_soft_value() {
    let mut r = rng(8);
    let mdp = random_mdp(&mut r, 4, 3, 0.9);
    let sol = soft_value_iteration(&mdp, mdp.true_reward(), 1e-12).unwrap();
    for _ in 0..50 {
        let pi = random_policy(&mut r, 4, 3);
        let q = soft_policy_evaluation(&mdp, &pi, mdp.true_reward()).unwrap();
        let v = sprinql::mdp::policy_value(&q.0, &pi).unwrap();
        for s in 0..4 {
            assert!(v[s] <= sol.v[s] + 1e-9);
        }
    }
}

#[test]
fn trajectory_returns_are_hand_computable() {
    let reward = Table::from_vec(2, 1, vec![1.0, 2.0]);
    let t = Trajectory {
        steps: vec![
            sprinql::Step {
                state: 0,
                action: 0,
                next_state: 1,
            },
            sprinql::Step {
                state: 1,
                action: 0,
                next_state: 1,
            },
        ],
    };
    assert_eq!(t.discounted_return(&reward, 0.5), 2.0);
    assert_eq!(t.total(&reward), 3.0);
}

proptest! {
    #[test]
    fn softmax_invariant_to_per_state_shift(
        vals in proptest::collection::vec(-20.0f64..20.0, 12),
        shifts in proptest::collection::vec(-50.0f64..50.0, 4),
    ) {
        let q = QTable(Table::from_vec(4, 3, vals));
        let shifted = QTable(Table::from_fn(4, 3, |s, a| q.0[(s, a)] + shifts[s]));
        prop_assert!(q.soft_policy().max_tv(&shifted.soft_policy()) < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-700.0f64..700.0, 8)) {
        let pi = Policy::softmax(&Table::from_vec(2, 4, vals), 1.0);
        for s in 0..2 {
            let z: f64 = pi.row(s).iter().sum();
            prop_assert!((z - 1.0).abs() < 1e-12);
            prop_assert!(pi.row(s).iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn soft_value_bounds(vals in proptest::collection::vec(-30.0f64..30.0, 5)) {
        let q = QTable(Table::from_vec(1, 5, vals.clone()));
        let v = q.soft_value()[0];
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= max - 1e-12);
        prop_assert!(v <= max + 5f64.ln() + 1e-12);
    }
}
