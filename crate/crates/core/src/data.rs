//! Gridworld generation, expert and noisy policies, and ranked demonstration datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{policy_return, soft_value_iteration, Policy, TabularMdp};
use crate::table::Table;

/// Moves in action order: up, down, left, right.
pub const MOVES: [(i64, i64); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalCell {
    pub x: usize,
    pub y: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridworldConfig {
    pub width: usize,
    pub height: usize,
    pub slip_prob: f64,
    pub goals: Vec<GoalCell>,
    /// Added to the reward of every state-action pair.
    pub step_penalty: f64,
    pub horizon: usize,
    pub seed: u64,
    pub discount: f64,
    /// Start cell; `None` spreads the initial mass uniformly over free non-goal cells.
    pub start: Option<(usize, usize)>,
    /// Number of blocked cells placed at random from `seed`.
    pub obstacles: usize,
}

impl Default for GridworldConfig {
    fn default() -> Self {
        GridworldConfig {
            width: 5,
            height: 5,
            slip_prob: 0.1,
            goals: vec![GoalCell {
                x: 4,
                y: 4,
                reward: 1.0,
            }],
            step_penalty: 0.0,
            horizon: 50,
            seed: 0,
            discount: 0.9,
            start: Some((0, 0)),
            obstacles: 0,
        }
    }
}

impl GridworldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.goals.is_empty() {
            return Err(Error::Config("at least one goal cell is required".into()));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::Config(format!("slip_prob {} not in [0,1)", self.slip_prob)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        for g in &self.goals {
            if g.x >= self.width || g.y >= self.height {
                return Err(Error::Config(format!("goal ({}, {}) outside the grid", g.x, g.y)));
            }
        }
        if let Some((x, y)) = self.start {
            if x >= self.width || y >= self.height {
                return Err(Error::Config(format!("start ({x}, {y}) outside the grid")));
            }
        }
        let mut reserved: Vec<(usize, usize)> = self.goals.iter().map(|g| (g.x, g.y)).chain(self.start).collect();
        reserved.sort_unstable();
        reserved.dedup();
        let reserved = reserved.len();
        if self.obstacles + reserved > self.width * self.height {
            return Err(Error::Config("too many obstacles for the grid".into()));
        }
        Ok(())
    }

    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Builds a 4-action gridworld. The intended move succeeds with probability `1 - slip`,
/// each perpendicular move gets `slip / 2`. Moves into walls or obstacles stay put.
pub fn make_gridworld(cfg: &GridworldConfig) -> Result<TabularMdp> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let n = w * h;
    let mut blocked = vec![false; n];
    if cfg.obstacles > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut reserved = vec![false; n];
        for g in &cfg.goals {
            reserved[cfg.cell_index(g.x, g.y)] = true;
        }
        if let Some((x, y)) = cfg.start {
            reserved[cfg.cell_index(x, y)] = true;
        }
        let mut placed = 0;
        while placed < cfg.obstacles {
            let c = rng.gen_range(0..n);
            if !reserved[c] && !blocked[c] {
                blocked[c] = true;
                placed += 1;
            }
        }
    }
    let na = MOVES.len();
    let target = |x: usize, y: usize, m: usize| -> usize {
        let (dx, dy) = MOVES[m];
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
            return y * w + x;
        }
        let c = ny as usize * w + nx as usize;
        if blocked[c] {
            y * w + x
        } else {
            c
        }
    };
    let mut transition = vec![0.0; n * na * n];
    for y in 0..h {
        for x in 0..w {
            let s = y * w + x;
            for a in 0..na {
                let row = &mut transition[(s * na + a) * n..(s * na + a + 1) * n];
                if blocked[s] {
                    row[s] = 1.0;
                    continue;
                }
                let perpendicular: [usize; 2] = if a < 2 { [2, 3] } else { [0, 1] };
                row[target(x, y, a)] += 1.0 - cfg.slip_prob;
                for p in perpendicular {
                    row[target(x, y, p)] += cfg.slip_prob / 2.0;
                }
            }
        }
    }
    let mut reward = Table::filled(n, na, cfg.step_penalty);
    for g in &cfg.goals {
        let s = cfg.cell_index(g.x, g.y);
        for a in 0..na {
            reward[(s, a)] += g.reward;
        }
    }
    let initial = match cfg.start {
        Some((x, y)) => {
            let mut d = vec![0.0; n];
            d[cfg.cell_index(x, y)] = 1.0;
            d
        }
        None => {
            let mut free = vec![true; n];
            for (c, f) in free.iter_mut().enumerate() {
                *f = !blocked[c];
            }
            for g in &cfg.goals {
                free[cfg.cell_index(g.x, g.y)] = false;
            }
            let k = free.iter().filter(|f| **f).count().max(1);
            free.iter()
                .map(|&f| if f { 1.0 / k as f64 } else { 0.0 })
                .collect()
        }
    };
    Ok(TabularMdp::new(n, na, transition, reward, cfg.discount, initial)?)
}

/// Soft-optimal expert: softmax of the soft-optimal `Q` scaled by `inverse_temperature`.
pub fn expert_policy(mdp: &TabularMdp, inverse_temperature: f64) -> Result<Policy> {
    let sol = soft_value_iteration(mdp, mdp.true_reward(), 1e-10)?;
    Ok(Policy::softmax(sol.q.values(), inverse_temperature))
}

/// `(1 - eps) * expert + eps * uniform`.
pub fn noisy_policy(expert: &Policy, noise_level: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::Config(format!("noise level {noise_level} not in [0,1]")));
    }
    let u = 1.0 / expert.n_actions() as f64;
    let t = expert
        .probs()
        .map(|p| (1.0 - noise_level) * p + noise_level * u);
    // Renormalize rows to absorb rounding.
    let mut t = t;
    for s in 0..t.rows() {
        let z: f64 = t.row(s).iter().sum();
        for p in t.row_mut(s) {
            *p /= z;
        }
    }
    Policy::new(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Consecutive steps chain: `next_state[t] == state[t + 1]`.
    pub fn is_chained(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }

    /// `sum_t gamma^t r(s_t, a_t)`.
    pub fn discounted_return(&self, reward: &Table, gamma: f64) -> f64 {
        let mut g = 1.0;
        let mut acc = 0.0;
        for st in &self.steps {
            acc += g * reward[(st.state, st.action)];
            g *= gamma;
        }
        acc
    }

    /// `sum_t r(s_t, a_t)`.
    pub fn total(&self, reward: &Table) -> f64 {
        self.steps.iter().map(|st| reward[(st.state, st.action)]).sum()
    }
}

/// Rolls out horizon-capped trajectories from the initial distribution until at least
/// `n_transitions` transitions are collected. The last trajectory runs to completion.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    pi: &Policy,
    n_transitions: usize,
    horizon: usize,
    rng_seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_transitions == 0 {
        return Err(Error::Config("n_transitions must be positive".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    let mut total = 0;
    while total < n_transitions {
        let traj = rollout(mdp, pi, horizon, &mut rng);
        total += traj.len();
        out.push(traj);
    }
    Ok(out)
}

pub fn rollout<R: Rng + ?Sized>(mdp: &TabularMdp, pi: &Policy, horizon: usize, rng: &mut R) -> Trajectory {
    let mut steps = Vec::with_capacity(horizon);
    let mut s = mdp.sample_initial(rng);
    for _ in 0..horizon {
        let a = pi.sample_action(s, rng);
        let next = mdp.sample_next(s, a, rng);
        steps.push(Step {
            state: s,
            action: a,
            next_state: next,
        });
        s = next;
    }
    Trajectory { steps }
}

/// Demonstrations ranked best (level 0, the expert) to worst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDatasets {
    pub levels: Vec<Vec<Trajectory>>,
}

impl RankedDatasets {
    pub fn new(levels: Vec<Vec<Trajectory>>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Config(format!(
                "ranked datasets need at least two levels, got {}",
                levels.len()
            )));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.iter().all(|t| t.is_empty()) {
                return Err(Error::EmptyLevel(i));
            }
        }
        Ok(RankedDatasets { levels })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Transition counts per level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels
            .iter()
            .map(|l| l.iter().map(Trajectory::len).sum())
            .collect()
    }

    pub fn level_steps(&self, level: usize) -> impl Iterator<Item = &Step> {
        self.levels[level].iter().flat_map(|t| t.steps.iter())
    }

    pub fn all_steps(&self) -> impl Iterator<Item = &Step> {
        self.levels.iter().flatten().flat_map(|t| t.steps.iter())
    }

    /// Largest state and action index referenced, plus one.
    pub fn index_bounds(&self) -> (usize, usize) {
        let mut ns = 0;
        let mut na = 0;
        for st in self.all_steps() {
            ns = ns.max(st.state + 1).max(st.next_state + 1);
            na = na.max(st.action + 1);
        }
        (ns, na)
    }

    /// Mean discounted trajectory return per level under `reward`.
    pub fn level_mean_returns(&self, reward: &Table, gamma: f64) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| {
                let n = l.len().max(1) as f64;
                l.iter().map(|t| t.discounted_return(reward, gamma)).sum::<f64>() / n
            })
            .collect()
    }

    /// Mean and standard error of discounted trajectory returns per level.
    pub fn level_return_stats(&self, reward: &Table, gamma: f64) -> Vec<(f64, f64)> {
        self.levels
            .iter()
            .map(|l| {
                let xs: Vec<f64> = l.iter().map(|t| t.discounted_return(reward, gamma)).collect();
                mean_and_stderr(&xs)
            })
            .collect()
    }
}

pub(crate) fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// How ranked datasets are generated from an MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    /// Strictly increasing, first entry 0 (the expert).
    pub noise_levels: Vec<f64>,
    /// Transition counts per level, same length as `noise_levels`.
    pub sizes: Vec<usize>,
    pub horizon: usize,
    pub seed: u64,
    /// Inverse temperature applied to the soft-optimal Q before the expert softmax.
    pub expert_inverse_temperature: f64,
    pub max_attempts: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            noise_levels: vec![0.0, 0.5, 0.9],
            sizes: vec![1_000, 10_000, 25_000],
            horizon: 50,
            seed: 0,
            expert_inverse_temperature: 10.0,
            max_attempts: 10,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.noise_levels.len() < 2 {
            return Err(Error::Config("need at least two noise levels".into()));
        }
        if self.noise_levels[0] != 0.0 {
            return Err(Error::Config("first noise level must be 0 (the expert)".into()));
        }
        if self.noise_levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("noise levels must be strictly increasing".into()));
        }
        if self.noise_levels.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Config("noise levels must lie in [0,1]".into()));
        }
        if self.sizes.len() != self.noise_levels.len() {
            return Err(Error::Config(format!(
                "{} sizes for {} noise levels",
                self.sizes.len(),
                self.noise_levels.len()
            )));
        }
        if self.sizes.iter().any(|&n| n == 0) {
            return Err(Error::Config("level sizes must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Splits a seed into independent sub-seeds.
pub(crate) fn sub_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples level `i` from `noisy_policy(expert, noise_levels[i])` and retries with a fresh
/// sub-seed until empirical mean true returns strictly decrease with the level index.
pub fn build_ranked_datasets(mdp: &TabularMdp, spec: &DatasetSpec) -> Result<RankedDatasets> {
    spec.validate()?;
    let expert = expert_policy(mdp, spec.expert_inverse_temperature)?;
    build_ranked_datasets_from(mdp, &expert, spec)
}

/// As [`build_ranked_datasets`] with an explicit expert policy.
pub fn build_ranked_datasets_from(
    mdp: &TabularMdp,
    expert: &Policy,
    spec: &DatasetSpec,
) -> Result<RankedDatasets> {
    spec.validate()?;
    let policies = spec
        .noise_levels
        .iter()
        .map(|&e| noisy_policy(expert, e))
        .collect::<Result<Vec<_>>>()?;
    let mut means = Vec::new();
    for attempt in 0..spec.max_attempts {
        let mut levels = Vec::with_capacity(policies.len());
        for (i, (pi, &size)) in policies.iter().zip(&spec.sizes).enumerate() {
            let seed = sub_seed(spec.seed, (attempt as u64) << 16 | i as u64);
            levels.push(sample_trajectories(mdp, pi, size, spec.horizon, seed)?);
        }
        let data = RankedDatasets::new(levels)?;
        means = data.level_mean_returns(mdp.true_reward(), mdp.discount());
        if means.windows(2).all(|w| w[0] > w[1]) {
            return Ok(data);
        }
        log::debug!("ranked dataset attempt {attempt} rejected: level means {means:?}");
    }
    Err(Error::RetryBudget {
        attempts: spec.max_attempts,
        means,
    })
}

/// Exact expected discounted return of each noisy level policy.
pub fn exact_level_returns(mdp: &TabularMdp, expert: &Policy, noise_levels: &[f64]) -> Result<Vec<f64>> {
    noise_levels
        .iter()
        .map(|&e| policy_return(mdp, &noisy_policy(expert, e)?, mdp.true_reward()))
        .collect()
}
