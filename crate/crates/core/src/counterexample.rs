//! Searches for small instances where the unrelaxed objective `H(Q, pi)` is not convex in
//! `pi` and is not minimized by the soft policy `pi^Q`, and checks that the relaxed `H^`
//! is minimized by `pi^Q` on the same instance.
//!
//! The recipe: two states, two actions, `Q` far above the reference reward
//! (`Q - r > gamma log|A|`) and a large regularizer weight. The squared residual
//! `(Q - gamma V^pi(s') - r)^2` then stays positive and decreasing in the policy entropy,
//! which makes `-alpha * residual^2` concave in `pi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{Policy, QTable, TabularMdp};
use crate::objective::{h_hat, h_original, EmpiricalExpectations, Record, SprinqlConfig};
use crate::reference::ReferenceReward;
use crate::table::Table;

/// A 2-state, 2-action instance of the objective.
#[derive(Debug, Clone)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub q: QTable,
    pub rbar: ReferenceReward,
    pub alpha: f64,
    pub expectations: EmpiricalExpectations,
}

impl Instance {
    /// Builds an instance whose demonstration mixture puts `weights[s][a]` on each pair
    /// with exact next-state distributions.
    pub fn new(mdp: TabularMdp, q: Table, rbar: Table, alpha: f64, weights: &Table) -> Result<Instance> {
        let mut records = Vec::new();
        let mut states = vec![0.0; mdp.n_states()];
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let w = weights[(s, a)];
                if w > 0.0 {
                    records.push(Record {
                        s,
                        a,
                        next: mdp
                            .next_dist(s, a)
                            .iter()
                            .enumerate()
                            .filter(|(_, p)| **p > 0.0)
                            .map(|(t, &p)| (t, p))
                            .collect(),
                        weight: w,
                    });
                    states[s] += w;
                }
            }
        }
        let expectations =
            EmpiricalExpectations::from_records(mdp.n_states(), mdp.n_actions(), mdp.discount(), records, states)?;
        Ok(Instance {
            mdp,
            q: QTable(q),
            rbar: ReferenceReward(rbar),
            alpha,
            expectations,
        })
    }

    /// The hand-built instance following the recipe directly.
    pub fn recipe() -> Instance {
        let mdp = TabularMdp::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
            Table::zeros(2, 2),
            0.9,
            vec![1.0, 0.0],
        )
        .expect("recipe MDP is valid");
        let q = Table::from_vec(2, 2, vec![10.0, 10.5, 10.2, 10.0]);
        Instance::new(mdp, q, Table::zeros(2, 2), 10.0, &Table::filled(2, 2, 0.25)).expect("recipe instance is valid")
    }

    fn config(&self) -> SprinqlConfig {
        SprinqlConfig {
            alpha: self.alpha,
            beta: 0.0,
            ..SprinqlConfig::default()
        }
    }

    pub fn h(&self, pi: &Policy) -> Result<f64> {
        h_original(&self.q, pi, &self.expectations, &self.rbar, &self.config())
    }

    pub fn h_hat(&self, pi: &Policy) -> Result<f64> {
        h_hat(&self.q, pi, &self.expectations, &self.rbar, &self.config())
    }
}

/// `pi(a0 | s0) = p0`, `pi(a0 | s1) = p1`.
pub fn two_state_policy(p0: f64, p1: f64) -> Policy {
    Policy::new(Table::from_vec(2, 2, vec![p0, 1.0 - p0, p1, 1.0 - p1])).expect("probabilities in [0,1]")
}

/// `H(Q, (pa + pb) / 2)` exceeds the average of the endpoint values by `gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonconvexityWitness {
    pub pi_a: (f64, f64),
    pub pi_b: (f64, f64),
    pub h_a: f64,
    pub h_b: f64,
    pub h_mid: f64,
    pub gap: f64,
}

/// A policy on which `H` is lower than at `pi^Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerWitness {
    pub pi: (f64, f64),
    pub h_at_pi: f64,
    pub h_at_soft: f64,
    /// Largest per-state total-variation distance between `pi` and `pi^Q`.
    pub tv_from_soft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    /// Number of instances examined before the search stopped.
    pub instances_tried: usize,
    pub nonconvexity: Option<NonconvexityWitness>,
    pub minimizer: Option<MinimizerWitness>,
    /// On the instance holding the witnesses: smallest `H^(Q, pi) - H^(Q, pi^Q)` over the
    /// grid. Non-negative when `pi^Q` minimizes `H^`.
    pub h_hat_margin: Option<f64>,
}

impl WitnessReport {
    pub fn found_all(&self) -> bool {
        self.nonconvexity.is_some() && self.minimizer.is_some()
    }

    pub fn summary(&self) -> String {
        let mut out = format!("instances tried: {}\n", self.instances_tried);
        match &self.nonconvexity {
            Some(w) => out.push_str(&format!(
                "nonconvexity in pi: H(mid) = {:.6} > mean of endpoints {:.6} (gap {:.3e})\n",
                w.h_mid,
                (w.h_a + w.h_b) / 2.0,
                w.gap
            )),
            None => out.push_str("nonconvexity in pi: none found in budget\n"),
        }
        match &self.minimizer {
            Some(w) => out.push_str(&format!(
                "H minimized away from pi^Q: H(pi) = {:.6} < H(pi^Q) = {:.6}, TV {:.3}\n",
                w.h_at_pi, w.h_at_soft, w.tv_from_soft
            )),
            None => out.push_str("H minimized away from pi^Q: none found in budget\n"),
        }
        if let Some(m) = self.h_hat_margin {
            out.push_str(&format!("relaxed objective: min over grid of H^(pi) - H^(pi^Q) = {m:.3e}\n"));
        }
        out
    }
}

fn grid_points(resolution: usize) -> Vec<f64> {
    (0..=resolution).map(|i| i as f64 / resolution as f64).collect()
}

/// Largest midpoint-convexity violation of `pi -> H(Q, pi)` over pairs of grid policies.
pub fn find_nonconvexity(inst: &Instance, resolution: usize, tol: f64) -> Result<Option<NonconvexityWitness>> {
    let grid = grid_points(resolution);
    let pts: Vec<(f64, f64)> = grid.iter().flat_map(|&a| grid.iter().map(move |&b| (a, b))).collect();
    let values = pts
        .iter()
        .map(|&(a, b)| inst.h(&two_state_policy(a, b)))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<NonconvexityWitness> = None;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let mid = ((pts[i].0 + pts[j].0) / 2.0, (pts[i].1 + pts[j].1) / 2.0);
            let h_mid = inst.h(&two_state_policy(mid.0, mid.1))?;
            let gap = h_mid - (values[i] + values[j]) / 2.0;
            if gap > tol && best.as_ref().map_or(true, |b| gap > b.gap) {
                best = Some(NonconvexityWitness {
                    pi_a: pts[i],
                    pi_b: pts[j],
                    h_a: values[i],
                    h_b: values[j],
                    h_mid,
                    gap,
                });
            }
        }
    }
    Ok(best)
}

/// The grid policy with the lowest `H`, if it beats `pi^Q` by more than `tol`.
pub fn find_better_than_soft(inst: &Instance, resolution: usize, tol: f64) -> Result<Option<MinimizerWitness>> {
    let soft = inst.q.soft_policy();
    let h_soft = inst.h(&soft)?;
    let grid = grid_points(resolution);
    let mut best: Option<MinimizerWitness> = None;
    for &a in &grid {
        for &b in &grid {
            let pi = two_state_policy(a, b);
            let h = inst.h(&pi)?;
            if h < h_soft - tol && best.as_ref().map_or(true, |w| h < w.h_at_pi) {
                best = Some(MinimizerWitness {
                    pi: (a, b),
                    h_at_pi: h,
                    h_at_soft: h_soft,
                    tv_from_soft: pi.max_tv(&soft),
                });
            }
        }
    }
    Ok(best)
}

/// `min over grid of H^(Q, pi) - H^(Q, pi^Q)`.
pub fn h_hat_margin(inst: &Instance, resolution: usize) -> Result<f64> {
    let at_soft = inst.h_hat(&inst.q.soft_policy())?;
    let grid = grid_points(resolution);
    let mut margin = f64::INFINITY;
    for &a in &grid {
        for &b in &grid {
            margin = margin.min(inst.h_hat(&two_state_policy(a, b))? - at_soft);
        }
    }
    Ok(margin)
}

/// Random instance following the recipe: `Q = r + margin + noise`, with the margin above
/// `gamma log 2` and a large `alpha`.
fn random_recipe_instance(rng: &mut ChaCha8Rng) -> Result<Instance> {
    let gamma = rng.gen_range(0.5..0.95);
    let mut trans = Vec::with_capacity(8);
    for _ in 0..4 {
        let p: f64 = rng.gen_range(0.0..1.0);
        trans.extend([p, 1.0 - p]);
    }
    let mdp = TabularMdp::new(2, 2, trans, Table::zeros(2, 2), gamma, vec![0.5, 0.5])?;
    let rbar = Table::from_fn(2, 2, |_, _| rng.gen_range(0.0..1.0));
    let base = rng.gen_range(5.0..20.0);
    let q = rbar.map(|r| r + base + gamma * 2f64.ln()).zip_map(
        &Table::from_fn(2, 2, |_, _| rng.gen_range(0.0..1.0)),
        |x, n| x + n,
    );
    let weights = Table::from_fn(2, 2, |_, _| rng.gen_range(0.1..1.0));
    let alpha = [5.0, 10.0, 50.0][rng.gen_range(0..3)];
    Instance::new(mdp, q, rbar, alpha, &weights)
}

/// Tries the hand-built recipe instance first, then up to `budget - 1` random recipe
/// instances, stopping at the first instance with both witnesses.
pub fn counterexample_search(budget: usize, resolution: usize, seed: u64) -> Result<WitnessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = WitnessReport {
        instances_tried: 0,
        nonconvexity: None,
        minimizer: None,
        h_hat_margin: None,
    };
    for k in 0..budget {
        let inst = if k == 0 {
            Instance::recipe()
        } else {
            random_recipe_instance(&mut rng)?
        };
        report.instances_tried = k + 1;
        let nc = find_nonconvexity(&inst, resolution, 1e-9)?;
        let mw = find_better_than_soft(&inst, resolution, 1e-9)?;
        if nc.is_some() && mw.is_some() {
            report.nonconvexity = nc;
            report.minimizer = mw;
            report.h_hat_margin = Some(h_hat_margin(&inst, resolution)?);
            return Ok(report);
        }
        report.nonconvexity = report.nonconvexity.or(nc);
        report.minimizer = report.minimizer.or(mw);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipe_instance_has_both_witnesses() {
        let inst = Instance::recipe();
        let nc = find_nonconvexity(&inst, 10, 1e-9).unwrap().expect("nonconvex in pi");
        assert!(nc.gap > 1e-6);
        let mw = find_better_than_soft(&inst, 10, 1e-9).unwrap().expect("minimized elsewhere");
        assert!(mw.tv_from_soft > 0.1);
        assert!(h_hat_margin(&inst, 10).unwrap() >= -1e-10);
    }

    #[test]
    fn search_stops_at_first_success() {
        let r = counterexample_search(5, 8, 0).unwrap();
        assert!(r.found_all());
        assert_eq!(r.instances_tried, 1);
        assert!(r.summary().contains("nonconvexity in pi: H(mid)"));
    }
}
