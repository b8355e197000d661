//! Exact finite MDPs and the oracle solvers every other module is checked against.
//!
//! The occupancy measure uses the `t = 0` convention,
//! `rho(s, a) = (1 - gamma) * pi(a|s) * sum_{t >= 0} gamma^t P(s_t = s)`,
//! so it is a probability distribution over state-action pairs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::table::{logsumexp, softmax_into, Table};

/// Tolerance on row sums of stochastic vectors.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Largest number of state-action pairs the dense solvers accept.
pub const MAX_PAIRS: usize = 10_000;

/// Default iteration cap for soft value iteration.
pub const DEFAULT_MAX_ITERS: usize = 200_000;

/// First violated [`TabularMdp`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum MdpViolation {
    EmptySpace { n_states: usize, n_actions: usize },
    Shape(String),
    NegativeProbability { s: usize, a: usize, next: usize, value: f64 },
    RowSum { s: usize, a: usize, sum: f64 },
    InitialNegative { s: usize, value: f64 },
    InitialSum(f64),
    Discount(f64),
    NonFiniteReward { s: usize, a: usize },
    TooLarge(usize),
}

impl fmt::Display for MdpViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpViolation::EmptySpace { n_states, n_actions } => write!(
                f,
                "state and action counts must be positive (got {n_states} states, {n_actions} actions)"
            ),
            MdpViolation::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            MdpViolation::NegativeProbability { s, a, next, value } => write!(
                f,
                "negative transition probability {value} at (s={s},a={a},s'={next})"
            ),
            MdpViolation::RowSum { s, a, sum } => write!(f, "row (s={s},a={a}) sums to {sum}"),
            MdpViolation::InitialNegative { s, value } => {
                write!(f, "initial distribution has negative mass {value} at s={s}")
            }
            MdpViolation::InitialSum(sum) => write!(f, "initial distribution sums to {sum}"),
            MdpViolation::Discount(g) => write!(f, "discount out of range: {g} not in (0,1)"),
            MdpViolation::NonFiniteReward { s, a } => {
                write!(f, "non-finite reward at (s={s},a={a})")
            }
            MdpViolation::TooLarge(pairs) => {
                write!(f, "{pairs} state-action pairs exceed the cap of {MAX_PAIRS}")
            }
        }
    }
}

impl std::error::Error for MdpViolation {}

/// An exact finite MDP: `P[s][a][s']`, true reward `r*[s][a]`, discount and initial distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    true_reward: Table,
    discount: f64,
    initial_dist: Vec<f64>,
}

impl TabularMdp {
    /// Builds and validates an MDP. `transition` is flattened as `[s][a][s']`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        true_reward: Table,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> std::result::Result<Self, MdpViolation> {
        let mdp = Self::from_parts(
            n_states,
            n_actions,
            transition,
            true_reward,
            discount,
            initial_dist,
        );
        validate_mdp(&mdp)?;
        Ok(mdp)
    }

    /// Builds an MDP without checking invariants. Use [`validate_mdp`] before solving.
    pub fn from_parts(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        true_reward: Table,
        discount: f64,
        initial_dist: Vec<f64>,
    ) -> Self {
        TabularMdp {
            n_states,
            n_actions,
            transition,
            true_reward,
            discount,
            initial_dist,
        }
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

    pub fn true_reward(&self) -> &Table {
        &self.true_reward
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    /// Flattened `[s][a][s']` transition tensor.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// `P(. | s, a)`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// Returns a copy with a different true reward.
    pub fn with_reward(&self, reward: Table) -> Result<Self> {
        check_table_shape(self, &reward, "reward")?;
        let mut out = self.clone();
        out.true_reward = reward;
        Ok(out)
    }

    /// Returns a copy with a different discount.
    pub fn with_discount(&self, discount: f64) -> std::result::Result<Self, MdpViolation> {
        let mut out = self.clone();
        out.discount = discount;
        validate_mdp(&out)?;
        Ok(out)
    }

    /// Returns a copy with a different initial distribution.
    pub fn with_initial_dist(&self, initial: Vec<f64>) -> std::result::Result<Self, MdpViolation> {
        let mut out = self.clone();
        out.initial_dist = initial;
        validate_mdp(&out)?;
        Ok(out)
    }

    /// `E_{s' ~ P(.|s,a)}[values(s')]`.
    pub fn expect_next(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.next_dist(s, a)
            .iter()
            .zip(values)
            .filter(|(p, _)| **p != 0.0)
            .map(|(p, v)| p * v)
            .sum()
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial_dist, rng)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.next_dist(s, a), rng)
    }

    /// State-to-state transition matrix under `pi`, row-major `[s][s']`.
    pub fn state_transition(&self, pi: &Policy) -> Vec<f64> {
        let n = self.n_states;
        let mut out = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let p_a = pi.prob(s, a);
                if p_a == 0.0 {
                    continue;
                }
                for (o, p) in out[s * n..(s + 1) * n].iter_mut().zip(self.next_dist(s, a)) {
                    *o += p_a * p;
                }
            }
        }
        out
    }
}

/// Draws an index from a discrete distribution by inversion.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Checks every [`TabularMdp`] invariant and reports the first violation.
pub fn validate_mdp(mdp: &TabularMdp) -> std::result::Result<(), MdpViolation> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        return Err(MdpViolation::EmptySpace {
            n_states: ns,
            n_actions: na,
        });
    }
    if ns * na > MAX_PAIRS {
        return Err(MdpViolation::TooLarge(ns * na));
    }
    if mdp.transition.len() != ns * na * ns {
        return Err(MdpViolation::Shape(format!(
            "transition has {} entries, expected {}",
            mdp.transition.len(),
            ns * na * ns
        )));
    }
    if mdp.true_reward.shape() != (ns, na) {
        return Err(MdpViolation::Shape(format!(
            "reward is {:?}, expected ({ns}, {na})",
            mdp.true_reward.shape()
        )));
    }
    if mdp.initial_dist.len() != ns {
        return Err(MdpViolation::Shape(format!(
            "initial distribution has {} entries, expected {ns}",
            mdp.initial_dist.len()
        )));
    }
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.next_dist(s, a);
            if let Some((next, &value)) = row
                .iter()
                .enumerate()
                .find(|(_, p)| !(**p >= 0.0) || !p.is_finite())
            {
                return Err(MdpViolation::NegativeProbability { s, a, next, value });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(MdpViolation::RowSum { s, a, sum });
            }
        }
    }
    if let Some((s, &value)) = mdp
        .initial_dist
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p >= 0.0) || !p.is_finite())
    {
        return Err(MdpViolation::InitialNegative { s, value });
    }
    let sum: f64 = mdp.initial_dist.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(MdpViolation::InitialSum(sum));
    }
    if !(mdp.discount > 0.0 && mdp.discount < 1.0) {
        return Err(MdpViolation::Discount(mdp.discount));
    }
    for s in 0..ns {
        for a in 0..na {
            if !mdp.true_reward[(s, a)].is_finite() {
                return Err(MdpViolation::NonFiniteReward { s, a });
            }
        }
    }
    Ok(())
}

fn check_table_shape(mdp: &TabularMdp, t: &Table, what: &str) -> Result<()> {
    if t.shape() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::Shape(format!(
            "{what} table is {:?}, expected ({}, {})",
            t.shape(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// A row-stochastic policy table `pi[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy(Table);

impl Policy {
    pub fn new(probs: Table) -> Result<Self> {
        for (s, row) in probs.row_iter().enumerate() {
            if let Some(p) = row.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidPolicy(format!("entry {p} in row {s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(Policy(probs))
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy(Table::filled(n_states, n_actions, 1.0 / n_actions as f64))
    }

    /// One action per state with probability one.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        Policy(Table::from_fn(actions.len(), n_actions, |s, a| {
            if actions[s] == a {
                1.0
            } else {
                0.0
            }
        }))
    }

    /// Row-wise softmax of `q * inverse_temperature`.
    pub fn softmax(q: &Table, inverse_temperature: f64) -> Self {
        let mut out = Table::zeros(q.rows(), q.cols());
        let mut scaled = vec![0.0; q.cols()];
        for s in 0..q.rows() {
            for (x, v) in scaled.iter_mut().zip(q.row(s)) {
                *x = v * inverse_temperature;
            }
            softmax_into(&scaled, out.row_mut(s));
        }
        Policy(out)
    }

    pub fn probs(&self) -> &Table {
        &self.0
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0[(s, a)]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn n_states(&self) -> usize {
        self.0.rows()
    }

    pub fn n_actions(&self) -> usize {
        self.0.cols()
    }

    pub fn into_table(self) -> Table {
        self.0
    }

    /// Total-variation distance between the action distributions at state `s`.
    pub fn tv_at(&self, other: &Policy, s: usize) -> f64 {
        0.5 * self
            .row(s)
            .iter()
            .zip(other.row(s))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Largest per-state total-variation distance.
    pub fn max_tv(&self, other: &Policy) -> f64 {
        (0..self.n_states())
            .map(|s| self.tv_at(other, s))
            .fold(0.0, f64::max)
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }
}

/// A tabular soft-Q function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable(pub Table);

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable(Table::zeros(n_states, n_actions))
    }

    pub fn values(&self) -> &Table {
        &self.0
    }

    /// `V^Q(s) = log sum_a exp Q(s, a)` for every state.
    pub fn soft_value(&self) -> Vec<f64> {
        self.0.row_iter().map(logsumexp).collect()
    }

    /// `pi^Q(a|s)`, the row-wise softmax.
    pub fn soft_policy(&self) -> Policy {
        Policy::softmax(&self.0, 1.0)
    }
}

/// Discounted state-action occupancy measure, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure(pub Table);

impl OccupancyMeasure {
    pub fn rho(&self) -> &Table {
        &self.0
    }

    /// State marginal `d(s) = sum_a rho(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.0.row_iter().map(|r| r.iter().sum()).collect()
    }

    /// `E_rho[f]`.
    pub fn expect(&self, f: &Table) -> f64 {
        self.0.dot(f)
    }
}

/// Result of [`soft_value_iteration`].
#[derive(Debug, Clone)]
pub struct SoftSolution {
    pub v: Vec<f64>,
    pub q: QTable,
    pub policy: Policy,
    pub iterations: usize,
    pub residual: f64,
}

/// Soft value iteration with the default iteration cap.
pub fn soft_value_iteration(mdp: &TabularMdp, reward: &Table, tol: f64) -> Result<SoftSolution> {
    soft_value_iteration_capped(mdp, reward, tol, DEFAULT_MAX_ITERS)
}

/// Iterates `Q <- r + gamma E_{s'} logsumexp Q(s', .)` until the sup-norm Bellman residual
/// of the returned `Q` is at most `tol`.
pub fn soft_value_iteration_capped(
    mdp: &TabularMdp,
    reward: &Table,
    tol: f64,
    max_iters: usize,
) -> Result<SoftSolution> {
    validate_mdp(mdp)?;
    check_table_shape(mdp, reward, "reward")?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let gamma = mdp.discount;
    let mut q = reward.clone();
    let mut next = Table::zeros(ns, na);
    let mut v: Vec<f64> = q.row_iter().map(logsumexp).collect();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let mut diff: f64 = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let x = reward[(s, a)] + gamma * mdp.expect_next(s, a, &v);
                diff = diff.max((x - q[(s, a)]).abs());
                next[(s, a)] = x;
            }
        }
        std::mem::swap(&mut q, &mut next);
        v = q.row_iter().map(logsumexp).collect();
        // ||T Q_k+1 - Q_k+1|| <= gamma ||Q_k+1 - Q_k||
        residual = gamma * diff;
        if residual <= tol {
            let policy = Policy::softmax(&q, 1.0);
            return Ok(SoftSolution {
                v,
                q: QTable(q),
                policy,
                iterations: it,
                residual,
            });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Sup-norm residual of the soft Bellman optimality operator at `q`.
pub fn soft_bellman_residual(mdp: &TabularMdp, reward: &Table, q: &QTable) -> f64 {
    let v = q.soft_value();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let x = reward[(s, a)] + mdp.discount * mdp.expect_next(s, a, &v);
            worst = worst.max((x - q.0[(s, a)]).abs());
        }
    }
    worst
}

fn check_policy_shape(mdp: &TabularMdp, pi: &Policy) -> Result<()> {
    if pi.probs().shape() != (mdp.n_states, mdp.n_actions) {
        return Err(Error::Shape(format!(
            "policy is {:?}, expected ({}, {})",
            pi.probs().shape(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// Solves `(I - gamma P_pi^T) d = (1 - gamma) d0` by dense LU and returns `rho = d * pi`.
pub fn occupancy_measure(mdp: &TabularMdp, pi: &Policy) -> Result<OccupancyMeasure> {
    validate_mdp(mdp)?;
    check_policy_shape(mdp, pi)?;
    let n = mdp.n_states;
    let gamma = mdp.discount;
    let p_pi = mdp.state_transition(pi);
    // A[s][s~] = 1{s = s~} - gamma * P_pi[s~][s]
    let a = DMatrix::from_fn(n, n, |s, s_prev| {
        let id = if s == s_prev { 1.0 } else { 0.0 };
        id - gamma * p_pi[s_prev * n + s]
    });
    let b = DVector::from_iterator(n, mdp.initial_dist.iter().map(|p| (1.0 - gamma) * p));
    let d = a
        .lu()
        .solve(&b)
        .ok_or(Error::Singular("occupancy flow equations"))?;
    let rho = Table::from_fn(n, mdp.n_actions, |s, act| d[s].max(0.0) * pi.prob(s, act));
    Ok(OccupancyMeasure(rho))
}

/// Largest absolute residual of the flow equations
/// `d(s) = (1-gamma) d0(s) + gamma sum_{s~,a~} rho(s~,a~) P(s|s~,a~)` with `d(s) = sum_a rho(s,a)`.
pub fn flow_residual(mdp: &TabularMdp, rho: &OccupancyMeasure) -> f64 {
    let n = mdp.n_states;
    let d = rho.state_marginal();
    let mut inflow = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let m = rho.0[(s, a)];
            if m == 0.0 {
                continue;
            }
            for (f, p) in inflow.iter_mut().zip(mdp.next_dist(s, a)) {
                *f += m * p;
            }
        }
    }
    (0..n)
        .map(|s| (d[s] - (1.0 - mdp.discount) * mdp.initial_dist[s] - mdp.discount * inflow[s]).abs())
        .fold(0.0, f64::max)
}

/// Exact discounted return `E[sum_t gamma^t r(s_t, a_t)]` from the initial distribution.
pub fn policy_return(mdp: &TabularMdp, pi: &Policy, reward: &Table) -> Result<f64> {
    check_table_shape(mdp, reward, "reward")?;
    let rho = occupancy_measure(mdp, pi)?;
    Ok(rho.expect(reward) / (1.0 - mdp.discount))
}

/// `V^pi(s) = E_{a ~ pi}[Q(s,a) - log pi(a|s)]`; zero-probability actions contribute nothing.
pub fn policy_value(q: &Table, pi: &Policy) -> Result<Vec<f64>> {
    if q.shape() != pi.probs().shape() {
        return Err(Error::Shape(format!(
            "Q is {:?} but policy is {:?}",
            q.shape(),
            pi.probs().shape()
        )));
    }
    let mut v = Vec::with_capacity(q.rows());
    for s in 0..q.rows() {
        let mut acc = 0.0;
        for (a, &p) in pi.row(s).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let lp = p.ln();
            if !lp.is_finite() || !(p > 0.0) {
                return Err(Error::LogDomain(format!(
                    "log pi({a}|{s}) is not finite (pi = {p})"
                )));
            }
            acc += p * (q[(s, a)] - lp);
        }
        v.push(acc);
    }
    Ok(v)
}

/// One application of `B^pi_r[Q](s,a) = r(s,a) + gamma E_{s'}[V^pi(s')]`.
pub fn soft_bellman_backup(mdp: &TabularMdp, q: &QTable, pi: &Policy, reward: &Table) -> Result<Table> {
    check_table_shape(mdp, reward, "reward")?;
    check_policy_shape(mdp, pi)?;
    let v = policy_value(&q.0, pi)?;
    Ok(Table::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        reward[(s, a)] + mdp.discount * mdp.expect_next(s, a, &v)
    }))
}

/// `T^pi[Q](s,a) = Q(s,a) - gamma E_{s'}[V^pi(s')]`, the unique reward whose soft-Q
/// function under `pi` is `Q`.
pub fn inverse_soft_bellman(q: &QTable, pi: &Policy, mdp: &TabularMdp) -> Result<Table> {
    check_table_shape(mdp, &q.0, "Q")?;
    check_policy_shape(mdp, pi)?;
    let v = policy_value(&q.0, pi)?;
    Ok(Table::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        q.0[(s, a)] - mdp.discount * mdp.expect_next(s, a, &v)
    }))
}

/// Fixed point of `B^pi_r`, solved exactly through the state-value system
/// `(I - gamma P_pi) V = r_pi + H_pi`.
pub fn soft_policy_evaluation(mdp: &TabularMdp, pi: &Policy, reward: &Table) -> Result<QTable> {
    validate_mdp(mdp)?;
    check_table_shape(mdp, reward, "reward")?;
    check_policy_shape(mdp, pi)?;
    let n = mdp.n_states;
    let gamma = mdp.discount;
    let p_pi = mdp.state_transition(pi);
    let a = DMatrix::from_fn(n, n, |s, t| {
        let id = if s == t { 1.0 } else { 0.0 };
        id - gamma * p_pi[s * n + t]
    });
    let mut b = DVector::zeros(n);
    for s in 0..n {
        let mut acc = 0.0;
        for (act, &p) in pi.row(s).iter().enumerate() {
            if p > 0.0 {
                acc += p * (reward[(s, act)] - p.ln());
            }
        }
        b[s] = acc;
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or(Error::Singular("soft policy evaluation"))?;
    let v: Vec<f64> = v.iter().copied().collect();
    Ok(QTable(Table::from_fn(n, mdp.n_actions, |s, act| {
        reward[(s, act)] + gamma * mdp.expect_next(s, act, &v)
    })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(reward: f64, gamma: f64, n_actions: usize) -> TabularMdp {
        TabularMdp::new(
            1,
            n_actions,
            vec![1.0; n_actions],
            Table::filled(1, n_actions, reward),
            gamma,
            vec![1.0],
        )
        .unwrap()
    }

    fn two_state() -> TabularMdp {
        TabularMdp::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0],
            Table::from_vec(2, 2, vec![1.0, 0.0, 0.5, 2.0]),
            0.9,
            vec![0.3, 0.7],
        )
        .unwrap()
    }

    #[test]
    fn well_formed_mdp_validates() {
        assert_eq!(validate_mdp(&two_state()), Ok(()));
    }

    #[test]
    fn short_row_is_reported() {
        let mdp = TabularMdp::from_parts(
            1,
            2,
            vec![1.0, 0.9],
            Table::zeros(1, 2),
            0.9,
            vec![1.0],
        );
        let err = validate_mdp(&mdp).unwrap_err();
        assert_eq!(err.to_string(), "row (s=0,a=1) sums to 0.9");
    }

    #[test]
    fn unit_discount_is_rejected() {
        let mdp = TabularMdp::from_parts(1, 1, vec![1.0], Table::zeros(1, 1), 1.0, vec![1.0]);
        let err = validate_mdp(&mdp).unwrap_err();
        assert!(err.to_string().starts_with("discount out of range"));
    }

    #[test]
    fn bad_initial_distribution_is_rejected() {
        let mdp = TabularMdp::from_parts(2, 1, vec![1.0, 0.0, 0.0, 1.0], Table::zeros(2, 1), 0.5, vec![0.5, 0.4]);
        assert!(matches!(validate_mdp(&mdp), Err(MdpViolation::InitialSum(_))));
    }

    #[test]
    fn soft_vi_zero_reward_fixed_point() {
        let sol = soft_value_iteration(&single(0.0, 0.9, 1), &Table::zeros(1, 1), 1e-12).unwrap();
        assert_eq!(sol.v, vec![0.0]);
        assert_eq!(sol.q.0[(0, 0)], 0.0);
    }

    #[test]
    fn soft_vi_unit_reward_geometric() {
        let mdp = single(1.0, 0.9, 1);
        let sol = soft_value_iteration(&mdp, mdp.true_reward(), 1e-11).unwrap();
        assert!((sol.v[0] - 10.0).abs() < 1e-9);
        assert!((sol.q.0[(0, 0)] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn soft_vi_two_actions_log_two() {
        let mdp = single(0.0, 0.5, 2);
        let sol = soft_value_iteration(&mdp, mdp.true_reward(), 1e-13).unwrap();
        assert!((sol.v[0] - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((sol.policy.prob(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn soft_vi_reports_non_convergence() {
        let mdp = single(1.0, 0.99, 1);
        let err = soft_value_iteration_capped(&mdp, mdp.true_reward(), 1e-12, 5).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 5, .. }));
    }

    #[test]
    fn soft_vi_output_is_consistent() {
        let mdp = two_state();
        let sol = soft_value_iteration(&mdp, mdp.true_reward(), 1e-10).unwrap();
        assert!(soft_bellman_residual(&mdp, mdp.true_reward(), &sol.q) <= 1e-10);
        for s in 0..2 {
            assert!((sol.v[s] - logsumexp(sol.q.0.row(s))).abs() < 1e-12);
        }
        assert_eq!(sol.policy, sol.q.soft_policy());
    }

    #[test]
    fn occupancy_single_pair_is_one() {
        let rho = occupancy_measure(&single(0.0, 0.9, 1), &Policy::uniform(1, 1)).unwrap();
        assert!((rho.0[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn occupancy_absorbing_split() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![1.0, 0.0, 0.0, 1.0],
            Table::zeros(2, 1),
            0.9,
            vec![0.5, 0.5],
        )
        .unwrap();
        let rho = occupancy_measure(&mdp, &Policy::uniform(2, 1)).unwrap();
        assert!((rho.0[(0, 0)] - 0.5).abs() < 1e-12);
        assert!((rho.0[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occupancy_satisfies_flow_and_sums_to_one() {
        let mdp = two_state();
        let pi = Policy::new(Table::from_vec(2, 2, vec![0.25, 0.75, 0.6, 0.4])).unwrap();
        let rho = occupancy_measure(&mdp, &pi).unwrap();
        assert!((rho.0.sum() - 1.0).abs() < 1e-12);
        assert!(flow_residual(&mdp, &rho) < 1e-12);
    }

    #[test]
    fn return_of_unit_reward() {
        let mdp = single(1.0, 0.9, 1);
        let r = policy_return(&mdp, &Policy::uniform(1, 1), mdp.true_reward()).unwrap();
        assert!((r - 10.0).abs() < 1e-12);
        let zero = policy_return(&mdp, &Policy::uniform(1, 1), &Table::zeros(1, 1)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn inverse_operator_single_state() {
        let mdp = single(0.0, 0.9, 1);
        let r = inverse_soft_bellman(&QTable(Table::filled(1, 1, 3.0)), &Policy::uniform(1, 1), &mdp).unwrap();
        assert!((r[(0, 0)] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn inverse_operator_round_trip() {
        let mdp = two_state();
        let pi = Policy::new(Table::from_vec(2, 2, vec![0.1, 0.9, 0.5, 0.5])).unwrap();
        let q = QTable(Table::from_vec(2, 2, vec![1.5, -0.3, 2.2, 0.7]));
        let r = inverse_soft_bellman(&q, &pi, &mdp).unwrap();
        let back = soft_bellman_backup(&mdp, &q, &pi, &r).unwrap();
        assert!(back.max_abs_diff(&q.0) < 1e-12);
        let solved = soft_policy_evaluation(&mdp, &pi, &r).unwrap();
        assert!(solved.0.max_abs_diff(&q.0) < 1e-10);
    }

    #[test]
    fn zero_probability_actions_are_skipped() {
        let q = Table::from_vec(1, 2, vec![1.0, 5.0]);
        let pi = Policy::deterministic(&[0], 2);
        assert_eq!(policy_value(&q, &pi).unwrap(), vec![1.0]);
    }
}
