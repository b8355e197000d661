//! The inverse soft-Q objective with reference-reward regularization.
//!
//! Notation used throughout: `E_U` is the expectation under the weighted demonstration
//! mixture `rho^U = sum_i w_i rho^i`, `X(s,a) = gamma * E_{s'}[V(s')]` is the discounted
//! next-state value, and `T^pi[Q] = Q - X` under `V = V^pi`.
//!
//! * `H(Q, pi)     = E_U[T^pi Q] - E_U[V^pi(s) - X] - alpha E_U[(T^pi Q - r)^2]`
//! * `H^(Q, pi)    = E_U[Q - X] - E_U[V^pi(s) - X]
//!                   - alpha E_U[(Q - r)^2 + X^2 + 2 relu(r - Q) X]`
//! * `Gamma^(Q)    = H^(Q, pi^Q)`, i.e. `H^` with `V^pi` replaced by `V^Q = logsumexp Q`
//! * `Gamma^C(Q)   = Gamma^(Q) - beta E_{s ~ D, a ~ mu}[Q(s,a)]`
//!
//! The term `E_{rho_pi}[T^pi Q - log pi]` is written through the demonstration mixture as
//! `E_U[V^pi(s) - X]`, which holds for any valid occupancy measure.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::RankedDatasets;
use crate::error::{Error, Result};
use crate::mdp::{policy_value, OccupancyMeasure, Policy, QTable, TabularMdp};
use crate::reference::{ReferenceReward, WeightVector};
use crate::table::{logsumexp, softmax_into, Table};

/// Action distribution used by the conservative penalty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuSpec {
    /// Uniform over actions at every dataset state.
    #[default]
    Uniform,
    /// The current soft policy `pi^Q`, differentiated through.
    SoftPolicy,
    /// A fixed policy.
    Fixed(Policy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SprinqlConfig {
    /// Reward-regularizer weight.
    pub alpha: f64,
    /// Conservative-penalty weight.
    pub beta: f64,
    /// Multiplier applied to the reference reward wherever the objective reads it.
    ///
    /// The soft policy has unit entropy temperature, so this acts as an inverse
    /// temperature: training with scale `k` is training at temperature `1/k` with the
    /// regularizer weight divided by `k`.
    pub reference_scale: f64,
    /// Initial ascent step; later steps use Barzilai-Borwein estimates with halving
    /// backtracking.
    pub step_size: f64,
    pub max_step: f64,
    pub iterations: usize,
    /// Lower bound enforced on every Q entry after each step.
    pub floor: f64,
    pub mu: MuSpec,
    pub seed: u64,
    /// Number of evenly spaced policy evaluations recorded in the diagnostics.
    pub evaluations: usize,
    /// Stop once the projected-gradient norm falls below this value.
    pub grad_tol: f64,
}

impl Default for SprinqlConfig {
    fn default() -> Self {
        SprinqlConfig {
            alpha: 1.0,
            beta: 1.0,
            reference_scale: 1.0,
            step_size: 1e-2,
            max_step: 1e6,
            iterations: 2_000,
            floor: 0.0,
            mu: MuSpec::Uniform,
            seed: 0,
            evaluations: 50,
            grad_tol: 1e-10,
        }
    }
}

impl SprinqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.reference_scale > 0.0) || !self.reference_scale.is_finite() {
            return Err(Error::Config(format!(
                "reference_scale must be positive, got {}",
                self.reference_scale
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.step_size > 0.0) || !(self.max_step >= self.step_size) {
            return Err(Error::Config("step sizes must be positive with max_step >= step_size".into()));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::Config("projection floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// One aggregated demonstration sample: `(s, a)` with a next-state distribution and
/// its weight in `rho^U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub s: usize,
    pub a: usize,
    /// Sparse `(s', probability)`; a single entry with probability one for sampled data.
    pub next: Vec<(usize, f64)>,
    pub weight: f64,
}

/// Sample-based expectations under the weighted demonstration mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalExpectations {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    records: Vec<Record>,
    level_weights: Vec<f64>,
    /// State distribution of the pooled dataset, used by the conservative penalty.
    state_dist: Vec<f64>,
}

impl EmpiricalExpectations {
    /// Builds expectations directly from records; weights are normalized to sum to one.
    pub fn from_records(
        n_states: usize,
        n_actions: usize,
        discount: f64,
        mut records: Vec<Record>,
        state_dist: Vec<f64>,
    ) -> Result<Self> {
        if !(discount >= 0.0 && discount < 1.0) {
            return Err(Error::Config(format!("discount {discount} not in [0,1)")));
        }
        if state_dist.len() != n_states {
            return Err(Error::Shape("state distribution length".into()));
        }
        let total: f64 = records.iter().map(|r| r.weight).sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("records carry no weight".into()));
        }
        for r in &mut records {
            if r.s >= n_states || r.a >= n_actions || r.next.iter().any(|&(s, _)| s >= n_states) {
                return Err(Error::Shape(format!("record ({}, {}) out of range", r.s, r.a)));
            }
            r.weight /= total;
        }
        let z: f64 = state_dist.iter().sum();
        let state_dist = if z > 0.0 {
            state_dist.iter().map(|p| p / z).collect()
        } else {
            return Err(Error::Degenerate("empty dataset state distribution".into()));
        };
        Ok(EmpiricalExpectations {
            n_states,
            n_actions,
            discount,
            records,
            level_weights: vec![1.0],
            state_dist,
        })
    }

    /// Single-sample next-state estimator: every transition `(s, a, s')` of level `i`
    /// carries weight `w_i / |D^i|`; duplicates are merged.
    pub fn from_datasets(
        data: &RankedDatasets,
        weights: &WeightVector,
        n_states: usize,
        n_actions: usize,
        discount: f64,
    ) -> Result<Self> {
        check_levels(data, weights)?;
        let sizes = data.level_sizes();
        let mut agg: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let mut states = vec![0.0; n_states];
        for (l, &w) in weights.as_slice().iter().enumerate() {
            let unit = w / sizes[l] as f64;
            for st in data.level_steps(l) {
                check_step(st.state, st.action, st.next_state, n_states, n_actions)?;
                *agg.entry((st.state, st.action, st.next_state)).or_default() += unit;
                states[st.state] += 1.0;
            }
        }
        let records = agg
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|((s, a, next), weight)| Record {
                s,
                a,
                next: vec![(next, 1.0)],
                weight,
            })
            .collect();
        let mut out = Self::from_records(n_states, n_actions, discount, records, states)?;
        out.level_weights = weights.as_slice().to_vec();
        Ok(out)
    }

    /// Exact next-state expectations from the known dynamics: `(s, a)` pairs of the
    /// data with `P(.|s,a)` in place of sampled successors.
    pub fn from_datasets_exact(data: &RankedDatasets, weights: &WeightVector, mdp: &TabularMdp) -> Result<Self> {
        check_levels(data, weights)?;
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let sizes = data.level_sizes();
        let mut agg: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut states = vec![0.0; ns];
        for (l, &w) in weights.as_slice().iter().enumerate() {
            let unit = w / sizes[l] as f64;
            for st in data.level_steps(l) {
                check_step(st.state, st.action, st.next_state, ns, na)?;
                *agg.entry((st.state, st.action)).or_default() += unit;
                states[st.state] += 1.0;
            }
        }
        let records = agg
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|((s, a), weight)| Record {
                s,
                a,
                next: sparse_row(mdp.next_dist(s, a)),
                weight,
            })
            .collect();
        let mut out = Self::from_records(ns, na, mdp.discount(), records, states)?;
        out.level_weights = weights.as_slice().to_vec();
        Ok(out)
    }

    /// Exact expectations under `sum_i w_i rho^i` for known occupancy measures.
    pub fn from_occupancies(occupancies: &[OccupancyMeasure], weights: &WeightVector, mdp: &TabularMdp) -> Result<Self> {
        if occupancies.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} occupancies for {} weights",
                occupancies.len(),
                weights.len()
            )));
        }
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let mut mix = Table::zeros(ns, na);
        for (rho, &w) in occupancies.iter().zip(weights.as_slice()) {
            if rho.rho().shape() != (ns, na) {
                return Err(Error::Shape("occupancy measure shape".into()));
            }
            mix.add_scaled(w, rho.rho());
        }
        let mut records = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                if mix[(s, a)] > 0.0 {
                    records.push(Record {
                        s,
                        a,
                        next: sparse_row(mdp.next_dist(s, a)),
                        weight: mix[(s, a)],
                    });
                }
            }
        }
        let states = mix.row_iter().map(|r| r.iter().sum()).collect();
        let mut out = Self::from_records(ns, na, mdp.discount(), records, states)?;
        out.level_weights = weights.as_slice().to_vec();
        Ok(out)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn level_weights(&self) -> &[f64] {
        &self.level_weights
    }

    pub fn state_dist(&self) -> &[f64] {
        &self.state_dist
    }

    /// Total `rho^U` weight per `(s, a)`.
    pub fn pair_weights(&self) -> Table {
        let mut t = Table::zeros(self.n_states, self.n_actions);
        for r in &self.records {
            t[(r.s, r.a)] += r.weight;
        }
        t
    }

    /// `gamma * sum_j p_j v(s'_j)` for a record.
    fn next_value(&self, r: &Record, v: &[f64]) -> f64 {
        self.discount * r.next.iter().map(|&(s, p)| p * v[s]).sum::<f64>()
    }

    fn check_table(&self, t: &Table, what: &str) -> Result<()> {
        if t.shape() != (self.n_states, self.n_actions) {
            return Err(Error::Shape(format!(
                "{what} is {:?}, expected ({}, {})",
                t.shape(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

fn sparse_row(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(s, &p)| (s, p))
        .collect()
}

fn check_levels(data: &RankedDatasets, weights: &WeightVector) -> Result<()> {
    if data.n_levels() != weights.len() {
        return Err(Error::Shape(format!(
            "{} levels but {} weights",
            data.n_levels(),
            weights.len()
        )));
    }
    for (l, n) in data.level_sizes().into_iter().enumerate() {
        if n == 0 {
            return Err(Error::EmptyLevel(l));
        }
    }
    Ok(())
}

fn check_step(s: usize, a: usize, next: usize, ns: usize, na: usize) -> Result<()> {
    if s >= ns || next >= ns || a >= na {
        return Err(Error::Shape(format!(
            "transition ({s}, {a}, {next}) outside {ns} states / {na} actions"
        )));
    }
    Ok(())
}

/// Row-wise softmax `pi^Q`.
pub fn soft_policy(q: &QTable) -> Policy {
    q.soft_policy()
}

/// `V^Q(s) = log sum_a exp Q(s,a)`.
pub fn soft_value(q: &QTable) -> Vec<f64> {
    q.soft_value()
}

fn require_nonnegative(q: &Table) -> Result<()> {
    if let Some((i, v)) = q.as_slice().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::Domain(format!(
            "Q must be non-negative; entry ({}, {}) is {v}",
            i / q.cols(),
            i % q.cols()
        )));
    }
    Ok(())
}

/// Value of each objective component at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `E_U[Q - X]` (or `E_U[T^pi Q]`).
    pub expert_term: f64,
    /// `E_U[V(s) - X]`, standing in for `E_{rho_pi}[T^pi Q - log pi]`.
    pub policy_term: f64,
    /// `E_U[...]` inside the regularizer, before multiplying by alpha.
    pub regularizer: f64,
    /// `beta * E_{s ~ D, a ~ mu}[Q]`.
    pub conservative: f64,
    pub alpha: f64,
}

impl ObjectiveTerms {
    /// Distribution-matching part.
    pub fn distribution_matching(&self) -> f64 {
        self.expert_term - self.policy_term
    }

    /// Objective without the conservative penalty.
    pub fn value(&self) -> f64 {
        self.distribution_matching() - self.alpha * self.regularizer
    }

    pub fn conservative_value(&self) -> f64 {
        self.value() - self.conservative
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Regularizer {
    /// `(T^pi Q - r)^2`
    Signed,
    /// `(Q - r)^2 + X^2 + 2 relu(r - Q) X`
    Relu,
}

fn terms_with_values(
    q: &Table,
    v: &[f64],
    exp: &EmpiricalExpectations,
    rbar: &Table,
    scale: f64,
    alpha: f64,
    reg: Regularizer,
) -> ObjectiveTerms {
    let mut t = ObjectiveTerms {
        alpha,
        ..Default::default()
    };
    for r in &exp.records {
        let x = exp.next_value(r, v);
        let qsa = q[(r.s, r.a)];
        let target = scale * rbar[(r.s, r.a)];
        t.expert_term += r.weight * (qsa - x);
        t.policy_term += r.weight * (v[r.s] - x);
        let reg_val = match reg {
            Regularizer::Signed => (qsa - x - target).powi(2),
            Regularizer::Relu => {
                (qsa - target).powi(2) + x * x + 2.0 * (target - qsa).max(0.0) * x
            }
        };
        t.regularizer += r.weight * reg_val;
    }
    t
}

/// `H(Q, pi)`: the regularized inverse soft-Q objective with the exact squared
/// Bellman-residual regularizer. Concave in `Q` for fixed `pi`.
pub fn h_original(
    q: &QTable,
    pi: &Policy,
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
) -> Result<f64> {
    exp.check_table(&q.0, "Q")?;
    exp.check_table(&rbar.0, "reference reward")?;
    let v = policy_value(&q.0, pi)?;
    Ok(terms_with_values(&q.0, &v, exp, &rbar.0, cfg.reference_scale, cfg.alpha, Regularizer::Signed).value())
}

/// `H^(Q, pi)`: the regularizer's cross term `2 (r - Q) X` is replaced by
/// `2 relu(r - Q) X`. Requires `Q >= 0`, where it lower-bounds [`h_original`].
pub fn h_hat(
    q: &QTable,
    pi: &Policy,
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
) -> Result<f64> {
    exp.check_table(&q.0, "Q")?;
    exp.check_table(&rbar.0, "reference reward")?;
    require_nonnegative(&q.0)?;
    let v = policy_value(&q.0, pi)?;
    Ok(terms_with_values(&q.0, &v, exp, &rbar.0, cfg.reference_scale, cfg.alpha, Regularizer::Relu).value())
}

/// All terms of `Gamma^C` at `q`.
pub fn objective_terms(
    q: &QTable,
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
) -> Result<ObjectiveTerms> {
    exp.check_table(&q.0, "Q")?;
    exp.check_table(&rbar.0, "reference reward")?;
    require_nonnegative(&q.0)?;
    let v = q.soft_value();
    let mut t = terms_with_values(&q.0, &v, exp, &rbar.0, cfg.reference_scale, cfg.alpha, Regularizer::Relu);
    t.conservative = conservative_penalty(q, exp, cfg)?;
    Ok(t)
}

/// `Gamma^(Q) = min_pi H^(Q, pi)`, attained at `pi^Q`. Concave on `Q >= 0`.
pub fn gamma_hat(q: &QTable, exp: &EmpiricalExpectations, rbar: &ReferenceReward, cfg: &SprinqlConfig) -> Result<f64> {
    Ok(objective_terms(q, exp, rbar, cfg)?.value())
}

/// `Gamma^C(Q) = Gamma^(Q) - beta E_{s ~ D, a ~ mu}[Q(s,a)]`.
pub fn gamma_hat_conservative(
    q: &QTable,
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
) -> Result<f64> {
    Ok(objective_terms(q, exp, rbar, cfg)?.conservative_value())
}

/// `E_{s ~ D, a ~ mu}[Q(s, a)]` without the beta factor.
pub fn mu_average(q: &QTable, exp: &EmpiricalExpectations, mu: &MuSpec) -> Result<f64> {
    exp.check_table(&q.0, "Q")?;
    let na = exp.n_actions;
    let mut acc = 0.0;
    let mut probs = vec![0.0; na];
    for (s, &d) in exp.state_dist.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = q.0.row(s);
        let inner = match mu {
            MuSpec::Uniform => row.iter().sum::<f64>() / na as f64,
            MuSpec::SoftPolicy => {
                softmax_into(row, &mut probs);
                probs.iter().zip(row).map(|(p, x)| p * x).sum()
            }
            MuSpec::Fixed(pi) => {
                if pi.probs().shape() != q.0.shape() {
                    return Err(Error::Shape("mu policy shape".into()));
                }
                pi.row(s).iter().zip(row).map(|(p, x)| p * x).sum()
            }
        };
        acc += d * inner;
    }
    Ok(acc)
}

/// The conservative penalty `beta * E_{s ~ D, a ~ mu}[Q(s, a)]`, subtracted from `H^`.
pub fn conservative_penalty(q: &QTable, exp: &EmpiricalExpectations, cfg: &SprinqlConfig) -> Result<f64> {
    if cfg.beta == 0.0 {
        return Ok(0.0);
    }
    Ok(cfg.beta * mu_average(q, exp, &cfg.mu)?)
}

/// Analytic gradient of `Gamma^C` with respect to every `Q(s, a)`.
///
/// At `Q(s,a) = r(s,a)` the relu term uses the zero subgradient.
pub fn gamma_hat_gradient(
    q: &QTable,
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
) -> Result<Table> {
    exp.check_table(&q.0, "Q")?;
    exp.check_table(&rbar.0, "reference reward")?;
    require_nonnegative(&q.0)?;
    let (ns, na) = (exp.n_states, exp.n_actions);
    let gamma = exp.discount;
    let alpha = cfg.alpha;
    let v = q.soft_value();
    let pi = q.soft_policy();
    let mut grad = Table::zeros(ns, na);
    // coefficient on V^Q(s) for every state, chained through d V / d Q = pi^Q afterwards
    let mut dv = vec![0.0; ns];
    for r in &exp.records {
        let x = exp.next_value(r, &v);
        let qsa = q.0[(r.s, r.a)];
        let target = cfg.reference_scale * rbar.0[(r.s, r.a)];
        let active = target > qsa;
        let relu = if active { target - qsa } else { 0.0 };
        // d/dQ(s,a): 1 - alpha (2 (Q - r) - 2 1[r > Q] X)
        let mut direct = 1.0 - alpha * 2.0 * (qsa - target);
        if active {
            direct += alpha * 2.0 * x;
        }
        grad[(r.s, r.a)] += r.weight * direct;
        dv[r.s] -= r.weight;
        // d/dX of (-X) + (X) - alpha (X^2 + 2 relu X)
        let dx = -alpha * 2.0 * (x + relu);
        for &(s2, p) in &r.next {
            dv[s2] += r.weight * dx * gamma * p;
        }
    }
    for s in 0..ns {
        if dv[s] == 0.0 {
            continue;
        }
        for a in 0..na {
            grad[(s, a)] += dv[s] * pi.prob(s, a);
        }
    }
    if cfg.beta != 0.0 {
        let mut probs = vec![0.0; na];
        for (s, &d) in exp.state_dist.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            match &cfg.mu {
                MuSpec::Uniform => {
                    for a in 0..na {
                        grad[(s, a)] -= cfg.beta * d / na as f64;
                    }
                }
                MuSpec::SoftPolicy => {
                    let row = q.0.row(s);
                    softmax_into(row, &mut probs);
                    let mean: f64 = probs.iter().zip(row).map(|(p, x)| p * x).sum();
                    for a in 0..na {
                        grad[(s, a)] -= cfg.beta * d * probs[a] * (1.0 + row[a] - mean);
                    }
                }
                MuSpec::Fixed(pi_mu) => {
                    for a in 0..na {
                        grad[(s, a)] -= cfg.beta * d * pi_mu.prob(s, a);
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Projected-gradient norm `|| P(Q + g) - Q ||` on the feasible set `Q >= floor`.
pub fn projected_gradient_norm(q: &Table, grad: &Table, floor: f64) -> f64 {
    q.as_slice()
        .iter()
        .zip(grad.as_slice())
        .map(|(&x, &g)| ((x + g).max(floor) - x).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Training diagnostics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Objective after each accepted step, starting with the initial point.
    pub objective: Vec<f64>,
    /// Projected-gradient norm at each iterate.
    pub grad_norm: Vec<f64>,
    pub step_size: Vec<f64>,
    /// `(iteration, score)` from the evaluation hook.
    pub evaluations: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub final_terms: Option<ObjectiveTerms>,
}

impl Diagnostics {
    /// Whether the objective never decreased by more than `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.objective.windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub q: QTable,
    pub policy: Policy,
    pub diagnostics: Diagnostics,
}

/// Callback scoring the current policy during training.
pub type EvalHook<'a> = dyn FnMut(&Policy) -> f64 + 'a;

/// Evaluation checkpoints: `count` evenly spaced iterations ending at `iterations`.
pub fn evaluation_schedule(iterations: usize, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let count = count.min(iterations);
    let mut out: Vec<usize> = (1..=count).map(|k| k * iterations / count).collect();
    out.dedup();
    out
}

/// Generic monotone projected gradient ascent on `Q >= floor`.
///
/// Steps follow Barzilai-Borwein estimates and are halved until the Armijo condition
/// holds, so the objective never decreases. Stops after `cfg.iterations` iterations, when
/// the projected gradient vanishes, or when no ascent step can be found.
pub(crate) fn projected_ascent(
    init: Table,
    cfg: &SprinqlConfig,
    mut value: impl FnMut(&Table) -> Result<f64>,
    mut gradient: impl FnMut(&Table) -> Result<Table>,
    mut hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let floor = cfg.floor;
    let mut q = init.map(|x| x.max(floor));
    let mut f = value(&q)?;
    let mut g = gradient(&q)?;
    if !f.is_finite() {
        return Err(Error::Divergence("initial objective is not finite".into()));
    }
    let schedule = evaluation_schedule(cfg.iterations, cfg.evaluations);
    let mut next_eval = 0;
    let mut diag = Diagnostics {
        objective: vec![f],
        grad_norm: vec![projected_gradient_norm(&q, &g, floor)],
        ..Default::default()
    };
    let mut step = cfg.step_size;
    let mut stalled = false;
    for it in 1..=cfg.iterations {
        diag.iterations = it;
        let pg = projected_gradient_norm(&q, &g, floor);
        if !stalled && pg > cfg.grad_tol {
            let mut t = step;
            let accepted = loop {
                let cand = q.zip_map(&g, |x, d| (x + t * d).max(floor));
                let fc = value(&cand)?;
                if !fc.is_finite() {
                    return Err(Error::Divergence(format!(
                        "objective became non-finite at iteration {it}"
                    )));
                }
                let lin: f64 = cand
                    .as_slice()
                    .iter()
                    .zip(q.as_slice())
                    .zip(g.as_slice())
                    .map(|((c, x), d)| (c - x) * d)
                    .sum();
                if fc >= f + 1e-4 * lin && fc >= f {
                    break Some((cand, fc, t));
                }
                t *= 0.5;
                if t < 1e-300 || t * g.norm() < 1e-300 {
                    break None;
                }
            };
            match accepted {
                Some((cand, fc, t)) => {
                    let gc = gradient(&cand)?;
                    // Barzilai-Borwein: s.s / (-s.y) for ascent on a concave function
                    let mut ss = 0.0;
                    let mut sy = 0.0;
                    for ((c, x), (gn, go)) in cand
                        .as_slice()
                        .iter()
                        .zip(q.as_slice())
                        .zip(gc.as_slice().iter().zip(g.as_slice()))
                    {
                        let s = c - x;
                        ss += s * s;
                        sy += s * (gn - go);
                    }
                    step = if sy < 0.0 && ss > 0.0 {
                        (ss / -sy).clamp(1e-12, cfg.max_step)
                    } else {
                        (2.0 * t).min(cfg.max_step)
                    };
                    q = cand;
                    f = fc;
                    g = gc;
                    diag.step_size.push(t);
                }
                None => stalled = true,
            }
        } else {
            diag.converged = true;
        }
        diag.objective.push(f);
        diag.grad_norm.push(projected_gradient_norm(&q, &g, floor));
        if next_eval < schedule.len() && schedule[next_eval] == it {
            if let Some(h) = hook.as_deref_mut() {
                let pi = Policy::softmax(&q, 1.0);
                diag.evaluations.push((it, h(&pi)));
            }
            next_eval += 1;
        }
        if (diag.converged || stalled) && next_eval >= schedule.len() {
            break;
        }
    }
    if stalled {
        diag.converged = true;
    }
    let q = QTable(q);
    Ok(TrainOutput {
        policy: q.soft_policy(),
        q,
        diagnostics: diag,
    })
}

/// Projected gradient ascent on `Gamma^C` from `Q = floor`.
pub fn train_on_expectations(
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    exp.check_table(&rbar.0, "reference reward")?;
    let init = Table::filled(exp.n_states, exp.n_actions, cfg.floor);
    let mut out = projected_ascent(
        init,
        cfg,
        |t| gamma_hat_conservative(&QTable(t.clone()), exp, rbar, cfg),
        |t| gamma_hat_gradient(&QTable(t.clone()), exp, rbar, cfg),
        hook,
    )?;
    out.diagnostics.final_terms = Some(objective_terms(&out.q, exp, rbar, cfg)?);
    Ok(out)
}

/// Trains on ranked demonstrations with the single-sample next-state estimator.
pub fn train_sprinql(
    data: &RankedDatasets,
    rbar: &ReferenceReward,
    weights: &WeightVector,
    discount: f64,
    cfg: &SprinqlConfig,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    let (ns, na) = rbar.0.shape();
    let exp = EmpiricalExpectations::from_datasets(data, weights, ns, na, discount)?;
    train_on_expectations(&exp, rbar, cfg, hook)
}

/// `r^ = Q - gamma E_{s'}[V^Q(s')]` under the exact dynamics.
pub fn recovered_reward(q: &QTable, mdp: &TabularMdp) -> Result<Table> {
    if q.0.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(Error::Shape("Q does not match the MDP".into()));
    }
    let v: Vec<f64> = q.0.row_iter().map(logsumexp).collect();
    Ok(Table::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        q.0[(s, a)] - mdp.discount() * mdp.expect_next(s, a, &v)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_mdp(gamma: f64) -> TabularMdp {
        TabularMdp::new(
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 0.0],
            Table::zeros(2, 2),
            gamma,
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    fn exact_expectations(mdp: &TabularMdp, pairs: &[((usize, usize), f64)]) -> EmpiricalExpectations {
        let records = pairs
            .iter()
            .map(|&((s, a), w)| Record {
                s,
                a,
                next: sparse_row(mdp.next_dist(s, a)),
                weight: w,
            })
            .collect();
        let mut d = vec![0.0; mdp.n_states()];
        for &((s, _), w) in pairs {
            d[s] += w;
        }
        EmpiricalExpectations::from_records(mdp.n_states(), mdp.n_actions(), mdp.discount(), records, d).unwrap()
    }

    #[test]
    fn soft_policy_cases() {
        let q = QTable(Table::from_vec(2, 3, vec![0.0, 0.0, 0.0, 1.0, 0.0, -1.0]));
        let pi = soft_policy(&q);
        for a in 0..3 {
            assert!((pi.prob(0, a) - 1.0 / 3.0).abs() < 1e-15);
        }
        let q2 = QTable(Table::from_vec(1, 2, vec![1.0, 0.0]));
        let e = 1f64.exp();
        assert!((soft_policy(&q2).prob(0, 0) - e / (1.0 + e)).abs() < 1e-15);
        let shifted = QTable(q.0.map(|x| x + 17.0));
        assert!(soft_policy(&shifted).max_tv(&pi) < 1e-15);
    }

    #[test]
    fn soft_value_cases() {
        let v = soft_value(&QTable(Table::zeros(1, 4)));
        assert!((v[0] - 4f64.ln()).abs() < 1e-15);
        assert_eq!(soft_value(&QTable(Table::filled(1, 1, 2.5))), vec![2.5]);
    }

    #[test]
    fn h_hand_evaluated_closed_form() {
        // Q = 0, r = 0, pi uniform: V^pi = ln 2 everywhere, X = gamma ln 2 for every record.
        let mdp = two_state_mdp(0.8);
        let exp = exact_expectations(&mdp, &[((0, 0), 0.5), ((1, 1), 0.5)]);
        let cfg = SprinqlConfig {
            alpha: 1.5,
            ..Default::default()
        };
        let q = QTable(Table::zeros(2, 2));
        let pi = Policy::uniform(2, 2);
        let rbar = ReferenceReward(Table::zeros(2, 2));
        let l2 = 2f64.ln();
        let x = 0.8 * l2;
        // E[T Q] = -x, E[V - X] = l2 - x, reg = x^2
        let expected = -x - (l2 - x) - 1.5 * x * x;
        let h = h_original(&q, &pi, &exp, &rbar, &cfg).unwrap();
        assert!((h - expected).abs() < 1e-14);
        let hh = h_hat(&q, &pi, &exp, &rbar, &cfg).unwrap();
        assert!((hh - expected).abs() < 1e-14);
    }

    #[test]
    fn h_hat_rejects_negative_q() {
        let mdp = two_state_mdp(0.8);
        let exp = exact_expectations(&mdp, &[((0, 0), 1.0)]);
        let q = QTable(Table::from_vec(2, 2, vec![0.0, -1e-3, 0.0, 0.0]));
        let err = h_hat(&q, &Policy::uniform(2, 2), &exp, &ReferenceReward(Table::zeros(2, 2)), &SprinqlConfig::default());
        assert!(matches!(err, Err(Error::Domain(_))));
        assert!(gamma_hat(&q, &exp, &ReferenceReward(Table::zeros(2, 2)), &SprinqlConfig::default()).is_err());
    }

    #[test]
    fn zero_alpha_makes_h_and_h_hat_equal() {
        let mdp = two_state_mdp(0.9);
        let exp = exact_expectations(&mdp, &[((0, 1), 0.3), ((1, 0), 0.7)]);
        let cfg = SprinqlConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let q = QTable(Table::from_vec(2, 2, vec![3.0, 0.2, 1.0, 5.0]));
        let rbar = ReferenceReward(Table::from_vec(2, 2, vec![0.5, 4.0, -1.0, 2.0]));
        let pi = Policy::new(Table::from_vec(2, 2, vec![0.3, 0.7, 0.9, 0.1])).unwrap();
        let a = h_original(&q, &pi, &exp, &rbar, &cfg).unwrap();
        let b = h_hat(&q, &pi, &exp, &rbar, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_q_penalty() {
        let mdp = two_state_mdp(0.9);
        let exp = exact_expectations(&mdp, &[((0, 1), 0.3), ((1, 0), 0.7)]);
        let cfg = SprinqlConfig {
            beta: 2.5,
            ..Default::default()
        };
        let q = QTable(Table::filled(2, 2, 1.7));
        assert!((conservative_penalty(&q, &exp, &cfg).unwrap() - 2.5 * 1.7).abs() < 1e-14);
        let off = SprinqlConfig { beta: 0.0, ..cfg.clone() };
        let rbar = ReferenceReward(Table::zeros(2, 2));
        assert_eq!(
            gamma_hat_conservative(&q, &exp, &rbar, &off).unwrap(),
            gamma_hat(&q, &exp, &rbar, &off).unwrap()
        );
    }

    #[test]
    fn recovered_reward_without_discount_is_q() {
        let mdp = TabularMdp::from_parts(1, 2, vec![1.0, 1.0], Table::zeros(1, 2), 0.0, vec![1.0]);
        let q = QTable(Table::from_vec(1, 2, vec![0.4, 2.0]));
        assert_eq!(recovered_reward(&q, &mdp).unwrap(), q.0);
    }

    #[test]
    fn schedule_spacing() {
        assert_eq!(evaluation_schedule(100, 4), vec![25, 50, 75, 100]);
        assert_eq!(evaluation_schedule(3, 50), vec![1, 2, 3]);
        assert!(evaluation_schedule(10, 0).is_empty());
    }
}
