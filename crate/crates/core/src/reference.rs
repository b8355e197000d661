//! Reference reward fitted from ranked demonstrations with a Bradley-Terry preference loss,
//! and the dataset weights derived from it.
//!
//! The loss on a batch is
//!
//! ```text
//! L(r) = c * sum_levels w_g * sum_{unordered pairs (x, y) in group} (r(x) - r(y))^2
//!      + sum_{cross pairs} w_p * -ln P(tau_lower < tau_higher)
//! ```
//!
//! where `P(tau_i < tau_j) = exp R(tau_j) / (exp R(tau_i) + exp R(tau_j))` and `R` sums `r`
//! along a trajectory. Within-level pair sums are evaluated through
//! `sum_{i<j} (x_i - x_j)^2 = n * sum x^2 - (sum x)^2`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::RankedDatasets;
use crate::error::{Error, Result};
use crate::table::Table;

/// Fitted reference reward table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReward(pub Table);

impl ReferenceReward {
    pub fn values(&self) -> &Table {
        &self.0
    }

    /// Mean reference reward over the transitions of each level.
    pub fn level_means(&self, data: &RankedDatasets) -> Vec<f64> {
        (0..data.n_levels())
            .map(|l| {
                let (sum, n) = data
                    .level_steps(l)
                    .fold((0.0, 0usize), |(acc, n), st| (acc + self.0[(st.state, st.action)], n + 1));
                sum / n.max(1) as f64
            })
            .collect()
    }
}

/// Non-negative level weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Config("weight vector is empty".into()));
        }
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("weights must be finite and non-negative: {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights sum to {sum}, expected 1")));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    /// Normalizes non-negative values to sum to one.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::Degenerate(format!("cannot normalize weights {raw:?}")));
        }
        let mut w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        // push the rounding residue into the largest entry
        let resid = 1.0 - w.iter().sum::<f64>();
        if let Some(i) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
            w[i] += resid;
        }
        WeightVector::new(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreferenceFitConfig {
    pub iterations: usize,
    pub step_size: f64,
    /// Transitions sampled per level for the within-level term.
    pub within_samples: usize,
    /// Cross-level trajectory pairs per batch.
    pub pairs_per_batch: usize,
    /// Coefficient on the within-level term.
    pub variance_coef: f64,
    pub seed: u64,
    /// Compare per-step returns when trajectory lengths differ by more than 2x.
    pub length_normalize: bool,
    /// Iterations between full-data loss evaluations.
    pub eval_every: usize,
}

impl Default for PreferenceFitConfig {
    fn default() -> Self {
        PreferenceFitConfig {
            iterations: 2_000,
            step_size: 2e-3,
            within_samples: 16,
            pairs_per_batch: 16,
            variance_coef: 1.0,
            seed: 0,
            length_normalize: true,
            eval_every: 50,
        }
    }
}

impl PreferenceFitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if self.within_samples < 2 && self.variance_coef != 0.0 {
            return Err(Error::Config("within_samples must be at least 2".into()));
        }
        if self.pairs_per_batch == 0 {
            return Err(Error::Config("pairs_per_batch must be positive".into()));
        }
        if !(self.variance_coef >= 0.0) {
            return Err(Error::Config("variance coefficient must be non-negative".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// `P(tau_i < tau_j)` given accumulated rewards `R(tau_i)` and `R(tau_j)`: the logistic of
/// `R_j - R_i`.
pub fn bt_probability(r_i: f64, r_j: f64) -> f64 {
    let d = r_j - r_i;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `-ln P(tau_i < tau_j) = ln(1 + exp(R_i - R_j))`, evaluated without overflow.
pub fn bt_neg_log_likelihood(r_i: f64, r_j: f64) -> f64 {
    let x = r_i - r_j;
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Sparse `(flat state-action index, count)` summary of one trajectory.
#[derive(Debug, Clone, PartialEq)]
struct TrajSummary {
    counts: Vec<(usize, f64)>,
    len: usize,
}

impl TrajSummary {
    fn accumulated(&self, r: &[f64]) -> f64 {
        self.counts.iter().map(|&(k, c)| c * r[k]).sum()
    }
}

fn summarize(pairs: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
    let mut v: Vec<usize> = pairs.collect();
    v.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for k in v {
        match out.last_mut() {
            Some((last, c)) if *last == k => *c += 1.0,
            _ => out.push((k, 1.0)),
        }
    }
    out
}

/// Ranked data reduced to what the preference loss needs.
#[derive(Debug, Clone)]
pub struct PreferenceProblem {
    n_states: usize,
    n_actions: usize,
    trajectories: Vec<Vec<TrajSummary>>,
    /// Flat state-action index of every transition, per level.
    level_pairs: Vec<Vec<usize>>,
    length_normalize: bool,
}

impl PreferenceProblem {
    pub fn new(data: &RankedDatasets, n_states: usize, n_actions: usize, length_normalize: bool) -> Result<Self> {
        let (ns, na) = data.index_bounds();
        if ns > n_states || na > n_actions {
            return Err(Error::Shape(format!(
                "data references {ns} states / {na} actions, table is {n_states}x{n_actions}"
            )));
        }
        let mut trajectories = Vec::with_capacity(data.n_levels());
        let mut level_pairs = Vec::with_capacity(data.n_levels());
        for (l, level) in data.levels.iter().enumerate() {
            let trajs: Vec<TrajSummary> = level
                .iter()
                .filter(|t| !t.is_empty())
                .map(|t| TrajSummary {
                    counts: summarize(t.steps.iter().map(|st| st.state * n_actions + st.action)),
                    len: t.len(),
                })
                .collect();
            if trajs.is_empty() {
                return Err(Error::EmptyLevel(l));
            }
            trajectories.push(trajs);
            level_pairs.push(
                data.level_steps(l)
                    .map(|st| st.state * n_actions + st.action)
                    .collect(),
            );
        }
        if trajectories.len() < 2 {
            return Err(Error::Config("need at least two levels".into()));
        }
        Ok(PreferenceProblem {
            n_states,
            n_actions,
            trajectories,
            level_pairs,
            length_normalize,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_trajectories(&self, level: usize) -> usize {
        self.trajectories[level].len()
    }

    pub fn trajectory_len(&self, level: usize, idx: usize) -> usize {
        self.trajectories[level][idx].len
    }

    /// Whether accumulated rewards are compared per step for this pair.
    fn normalizes(&self, a: &TrajSummary, b: &TrajSummary) -> bool {
        let (lo, hi) = (a.len.min(b.len), a.len.max(b.len));
        self.length_normalize && hi > 2 * lo
    }

    fn check(&self, r: &Table) -> Result<()> {
        if r.shape() != (self.n_states, self.n_actions) {
            return Err(Error::Shape(format!(
                "reference table is {:?}, expected ({}, {})",
                r.shape(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// Every within-level pair and every cross-level trajectory pair, each with weight one.
    pub fn exhaustive_batch(&self) -> BatchSpec {
        let within = self
            .level_pairs
            .iter()
            .map(|p| WithinGroup {
                items: summarize(p.iter().copied()),
                weight: 1.0,
            })
            .collect();
        let mut cross = Vec::new();
        for worse in 0..self.n_levels() {
            for better in 0..worse {
                for i in 0..self.n_trajectories(worse) {
                    for j in 0..self.n_trajectories(better) {
                        cross.push(CrossPair {
                            lower: TrajRef { level: worse, index: i },
                            higher: TrajRef { level: better, index: j },
                            weight: 1.0,
                        });
                    }
                }
            }
        }
        BatchSpec { within, cross }
    }

    /// The expectation of [`PreferenceProblem::sample_batch`] over its randomness, written
    /// as a deterministic full-data batch.
    pub fn expected_batch(&self, cfg: &PreferenceFitConfig) -> BatchSpec {
        let within = self
            .level_pairs
            .iter()
            .map(|p| {
                let n = p.len() as f64;
                let m = (cfg.within_samples as f64).min(n);
                let weight = if n < 2.0 { 0.0 } else { m * (m - 1.0) / (n * (n - 1.0)) };
                WithinGroup {
                    items: summarize(p.iter().copied()),
                    weight,
                }
            })
            .collect();
        let n_level_pairs = (self.n_levels() * (self.n_levels() - 1) / 2) as f64;
        let mut cross = Vec::new();
        for worse in 0..self.n_levels() {
            for better in 0..worse {
                let (nw, nb) = (self.n_trajectories(worse), self.n_trajectories(better));
                let weight = cfg.pairs_per_batch as f64 / (n_level_pairs * (nw * nb) as f64);
                for i in 0..nw {
                    for j in 0..nb {
                        cross.push(CrossPair {
                            lower: TrajRef { level: worse, index: i },
                            higher: TrajRef { level: better, index: j },
                            weight,
                        });
                    }
                }
            }
        }
        BatchSpec { within, cross }
    }

    /// Samples `within_samples` transitions per level without replacement and
    /// `pairs_per_batch` cross-level pairs (level pair uniform, then trajectories uniform).
    pub fn sample_batch<R: Rng + ?Sized>(&self, cfg: &PreferenceFitConfig, rng: &mut R) -> BatchSpec {
        let within = self
            .level_pairs
            .iter()
            .map(|p| {
                let m = cfg.within_samples.min(p.len());
                let picked = index::sample(rng, p.len(), m);
                WithinGroup {
                    items: summarize(picked.iter().map(|i| p[i])),
                    weight: 1.0,
                }
            })
            .collect();
        let level_pairs: Vec<(usize, usize)> = (0..self.n_levels())
            .flat_map(|worse| (0..worse).map(move |better| (worse, better)))
            .collect();
        let cross = (0..cfg.pairs_per_batch)
            .map(|_| {
                let (worse, better) = level_pairs[rng.gen_range(0..level_pairs.len())];
                CrossPair {
                    lower: TrajRef {
                        level: worse,
                        index: rng.gen_range(0..self.n_trajectories(worse)),
                    },
                    higher: TrajRef {
                        level: better,
                        index: rng.gen_range(0..self.n_trajectories(better)),
                    },
                    weight: 1.0,
                }
            })
            .collect();
        BatchSpec { within, cross }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajRef {
    pub level: usize,
    pub index: usize,
}

/// A trajectory from a worse level (`lower`) compared against one from a better level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossPair {
    pub lower: TrajRef,
    pub higher: TrajRef,
    pub weight: f64,
}

/// Multiset of state-action indices whose pairwise squared differences are penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WithinGroup {
    pub items: Vec<(usize, f64)>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchSpec {
    pub within: Vec<WithinGroup>,
    pub cross: Vec<CrossPair>,
}

/// Both terms of the preference loss, reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub within: f64,
    pub cross: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.within + self.cross
    }
}

fn within_group_value(g: &WithinGroup, r: &[f64]) -> f64 {
    let (mut n, mut s, mut sq) = (0.0, 0.0, 0.0);
    for &(k, c) in &g.items {
        n += c;
        s += c * r[k];
        sq += c * r[k] * r[k];
    }
    (n * sq - s * s).max(0.0)
}

pub fn reference_loss_parts(
    rbar: &ReferenceReward,
    problem: &PreferenceProblem,
    batch: &BatchSpec,
    variance_coef: f64,
) -> Result<LossParts> {
    problem.check(&rbar.0)?;
    let r = rbar.0.as_slice();
    let within = batch
        .within
        .iter()
        .map(|g| g.weight * within_group_value(g, r))
        .sum::<f64>()
        * variance_coef;
    let cross = batch
        .cross
        .iter()
        .map(|p| {
            let lo = &problem.trajectories[p.lower.level][p.lower.index];
            let hi = &problem.trajectories[p.higher.level][p.higher.index];
            let (mut rl, mut rh) = (lo.accumulated(r), hi.accumulated(r));
            if problem.normalizes(lo, hi) {
                rl /= lo.len as f64;
                rh /= hi.len as f64;
            }
            p.weight * bt_neg_log_likelihood(rl, rh)
        })
        .sum();
    Ok(LossParts { within, cross })
}

/// Preference loss on `batch`; convex in `rbar`.
pub fn reference_loss(
    rbar: &ReferenceReward,
    problem: &PreferenceProblem,
    batch: &BatchSpec,
    variance_coef: f64,
) -> Result<f64> {
    Ok(reference_loss_parts(rbar, problem, batch, variance_coef)?.total())
}

/// Analytic gradient of [`reference_loss`] with respect to every table entry.
pub fn reference_loss_gradient(
    rbar: &ReferenceReward,
    problem: &PreferenceProblem,
    batch: &BatchSpec,
    variance_coef: f64,
) -> Result<Table> {
    problem.check(&rbar.0)?;
    let r = rbar.0.as_slice();
    let mut grad = Table::zeros(problem.n_states, problem.n_actions);
    let g = grad.as_mut_slice();
    for grp in &batch.within {
        let (mut n, mut s) = (0.0, 0.0);
        for &(k, c) in &grp.items {
            n += c;
            s += c * r[k];
        }
        for &(k, c) in &grp.items {
            g[k] += variance_coef * grp.weight * c * 2.0 * (n * r[k] - s);
        }
    }
    for p in &batch.cross {
        let lo = &problem.trajectories[p.lower.level][p.lower.index];
        let hi = &problem.trajectories[p.higher.level][p.higher.index];
        let (mut rl, mut rh) = (lo.accumulated(r), hi.accumulated(r));
        let (mut sl, mut sh) = (1.0, 1.0);
        if problem.normalizes(lo, hi) {
            sl = 1.0 / lo.len as f64;
            sh = 1.0 / hi.len as f64;
            rl *= sl;
            rh *= sh;
        }
        // d/dx ln(1 + e^x) = sigmoid(x) with x = R_lower - R_higher
        let sig = 1.0 - bt_probability(rl, rh);
        let coef = p.weight * sig;
        for &(k, c) in &lo.counts {
            g[k] += coef * sl * c;
        }
        for &(k, c) in &hi.counts {
            g[k] -= coef * sh * c;
        }
    }
    Ok(grad)
}

/// Fitted reward plus the full-data loss trace recorded during fitting.
#[derive(Debug, Clone)]
pub struct ReferenceFit {
    pub reward: ReferenceReward,
    /// `(iteration, expected-batch loss)` pairs; the first entry is the initial loss.
    pub loss_trace: Vec<(usize, f64)>,
}

/// Minibatch gradient descent on the preference loss starting from `r = 0`.
///
/// Pairs never observed in the data keep `r = 0`.
pub fn fit_reference_reward(
    data: &RankedDatasets,
    n_states: usize,
    n_actions: usize,
    cfg: &PreferenceFitConfig,
) -> Result<ReferenceFit> {
    let mut trace = Vec::new();
    let reward = fit_reference_traced(data, n_states, n_actions, cfg, &mut trace)?;
    Ok(ReferenceFit {
        reward,
        loss_trace: trace,
    })
}

/// Same as [`fit_reference_reward`], but appends to a caller-owned loss trace so the
/// trace survives a divergence error.
pub fn fit_reference_traced(
    data: &RankedDatasets,
    n_states: usize,
    n_actions: usize,
    cfg: &PreferenceFitConfig,
    trace: &mut Vec<(usize, f64)>,
) -> Result<ReferenceReward> {
    cfg.validate()?;
    let problem = PreferenceProblem::new(data, n_states, n_actions, cfg.length_normalize)?;
    let full = problem.expected_batch(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rbar = ReferenceReward(Table::zeros(n_states, n_actions));
    let initial = reference_loss(&rbar, &problem, &full, cfg.variance_coef)?;
    trace.push((0, initial));
    let mut best = (initial, rbar.clone());
    let mut last = initial;
    let mut increases = 0;
    for it in 1..=cfg.iterations {
        let batch = problem.sample_batch(cfg, &mut rng);
        let grad = reference_loss_gradient(&rbar, &problem, &batch, cfg.variance_coef)?;
        rbar.0.add_scaled(-cfg.step_size, &grad);
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let loss = reference_loss(&rbar, &problem, &full, cfg.variance_coef)?;
            trace.push((it, loss));
            if !loss.is_finite() || !rbar.0.is_finite() {
                return Err(Error::Divergence(format!(
                    "reference loss became non-finite at iteration {it}; reduce the step size"
                )));
            }
            if loss > last {
                increases += 1;
                if increases >= 10 {
                    return Err(Error::Divergence(format!(
                        "reference loss increased over 10 consecutive evaluations (now {loss:.6e}); reduce the step size"
                    )));
                }
            } else {
                increases = 0;
            }
            last = loss;
            if loss <= best.0 {
                best = (loss, rbar.clone());
            }
        }
    }
    // Keep the final iterate when it did not regress; otherwise fall back to the best one.
    Ok(if last <= best.0 { rbar } else { best.1 })
}

/// Shift applied to level means before the ratio, making them strictly positive.
pub const WEIGHT_SHIFT_EPS: f64 = 1e-6;

/// `w_i = m_i / sum_j m_j` with `m_i` the mean reference reward on level `i`, after shifting
/// the means by `-min(0, min_j m_j) + eps`.
pub fn estimate_weights(rbar: &ReferenceReward, data: &RankedDatasets) -> Result<WeightVector> {
    weights_from_means(&rbar.level_means(data))
}

pub fn weights_from_means(means: &[f64]) -> Result<WeightVector> {
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite level means {means:?}")));
    }
    let lowest = means.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = -lowest.min(0.0) + WEIGHT_SHIFT_EPS;
    let shifted: Vec<f64> = means.iter().map(|m| m + shift).collect();
    let denom: f64 = shifted.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!("non-positive weight denominator {denom}")));
    }
    WeightVector::normalized(&shifted)
}
