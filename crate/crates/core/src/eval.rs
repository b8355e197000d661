//! Normalized scores, reward-recovery correlations and the method comparison suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bc_policy, nodm_on_expectations, noreg_on_expectations, BcConfig, LevelSelector};
use crate::data::{
    build_ranked_datasets_from, expert_policy, make_gridworld, mean_and_stderr, noisy_policy, rollout, sub_seed,
    DatasetSpec, GoalCell, GridworldConfig, RankedDatasets,
};
use crate::error::{Error, Result};
use crate::mdp::{policy_return, Policy, TabularMdp};
use crate::objective::{recovered_reward, train_on_expectations, EmpiricalExpectations, SprinqlConfig, TrainOutput};
use crate::reference::{estimate_weights, fit_reference_reward, PreferenceFitConfig, ReferenceReward, WeightVector};
use crate::table::Table;

/// `(ret - random) / (expert - random) * 100`.
pub fn normalized_score(ret: f64, random_ret: f64, expert_ret: f64) -> Result<f64> {
    let span = expert_ret - random_ret;
    if !(span.abs() > 1e-12) || !span.is_finite() {
        return Err(Error::Degenerate(format!(
            "expert return {expert_ret} and random return {random_ret} coincide"
        )));
    }
    Ok((ret - random_ret) / span * 100.0)
}

/// Policy return, either exact or a Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Exact,
    /// Discounted returns of `episodes` rollouts truncated at `horizon`.
    Sampled { episodes: usize, horizon: usize, seed: u64 },
}

pub fn evaluate_policy(mdp: &TabularMdp, pi: &Policy, reward: &Table, mode: EvalMode) -> Result<ReturnEstimate> {
    match mode {
        EvalMode::Exact => Ok(ReturnEstimate {
            mean: policy_return(mdp, pi, reward)?,
            stderr: 0.0,
            episodes: 0,
        }),
        EvalMode::Sampled {
            episodes,
            horizon,
            seed,
        } => {
            if episodes == 0 || horizon == 0 {
                return Err(Error::Config("episodes and horizon must be positive".into()));
            }
            if pi.probs().shape() != reward.shape() || reward.shape() != (mdp.n_states(), mdp.n_actions()) {
                return Err(Error::Shape("policy, reward and MDP disagree".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let returns: Vec<f64> = (0..episodes)
                .map(|_| rollout(mdp, pi, horizon, &mut rng).discounted_return(reward, mdp.discount()))
                .collect();
            let (mean, stderr) = mean_and_stderr(&returns);
            Ok(ReturnEstimate {
                mean,
                stderr,
                episodes,
            })
        }
    }
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape("correlation needs two equal-length samples of size >= 2".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties receiving their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Noise sweep used to probe a recovered reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub noise_levels: Vec<f64>,
    pub per_level: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            noise_levels: (0..10).map(|i| i as f64 / 10.0).collect(),
            per_level: 50,
            horizon: 50,
            seed: 0,
        }
    }
}

/// Correlation between `rhat`-returns and true returns of trajectories from noisy copies
/// of `base`: `(pearson, spearman)`.
pub fn reward_correlation(
    rhat: &Table,
    mdp: &TabularMdp,
    base: &Policy,
    probe: &ProbeConfig,
) -> Result<(f64, f64)> {
    if probe.noise_levels.len() < 2 {
        return Err(Error::Config("reward correlation needs at least two probe levels".into()));
    }
    if rhat.shape() != mdp.true_reward().shape() {
        return Err(Error::Shape("recovered reward does not match the MDP".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for &eps in &probe.noise_levels {
        let pi = noisy_policy(base, eps)?;
        for _ in 0..probe.per_level {
            let t = rollout(mdp, &pi, probe.horizon, &mut rng);
            predicted.push(t.discounted_return(rhat, mdp.discount()));
            truth.push(t.discounted_return(mdp.true_reward(), mdp.discount()));
        }
    }
    Ok((pearson(&predicted, &truth)?, spearman(&predicted, &truth)?))
}

/// Mean of the last `window` entries (all of them when shorter).
pub fn last_window_mean(scores: &[f64], window: usize) -> Option<f64> {
    if scores.is_empty() || window == 0 {
        return None;
    }
    let tail = &scores[scores.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Methods compared by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sprinql,
    Noreg,
    Nodm,
    #[serde(rename = "bc-e")]
    BcExpert,
    #[serde(rename = "bc-o")]
    BcSuboptimal,
    #[serde(rename = "bc-both")]
    BcAll,
    #[serde(rename = "w-bc")]
    WeightedBc,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sprinql,
        Method::Noreg,
        Method::Nodm,
        Method::BcExpert,
        Method::BcSuboptimal,
        Method::BcAll,
        Method::WeightedBc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sprinql => "sprinql",
            Method::Noreg => "noreg",
            Method::Nodm => "nodm",
            Method::BcExpert => "bc-e",
            Method::BcSuboptimal => "bc-o",
            Method::BcAll => "bc-both",
            Method::WeightedBc => "w-bc",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Whether the method learns a Q function (and so a recovered reward).
    pub fn learns_q(self) -> bool {
        matches!(self, Method::Sprinql | Method::Noreg | Method::Nodm)
    }
}

/// A named environment of the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub grid: GridworldConfig,
}

/// The three default gridworld variants, easiest first.
pub fn default_environments() -> Vec<EnvSpec> {
    let base = GridworldConfig::default();
    vec![
        EnvSpec {
            name: "grid-open".into(),
            grid: GridworldConfig {
                width: 5,
                height: 5,
                slip_prob: 0.05,
                ..base.clone()
            },
        },
        EnvSpec {
            name: "grid-obstacles".into(),
            grid: GridworldConfig {
                width: 6,
                height: 6,
                slip_prob: 0.1,
                obstacles: 5,
                seed: 3,
                ..base.clone()
            },
        },
        EnvSpec {
            name: "grid-decoy".into(),
            grid: GridworldConfig {
                width: 7,
                height: 7,
                slip_prob: 0.15,
                goals: vec![
                    GoalCell { x: 6, y: 6, reward: 1.0 },
                    GoalCell { x: 0, y: 6, reward: 0.4 },
                ],
                obstacles: 6,
                seed: 11,
                ..base
            },
        },
    ]
}

/// Datasets of the default suite: scarce expert data and two moderately noisy levels.
pub fn suite_dataset_spec() -> DatasetSpec {
    DatasetSpec {
        noise_levels: vec![0.0, 0.3, 0.6],
        sizes: vec![200, 2_000, 5_000],
        ..DatasetSpec::default()
    }
}

/// Objective settings of the default suite, calibrated for per-step reference rewards of
/// order 0.1 on 50-step trajectories.
pub fn suite_objective() -> SprinqlConfig {
    SprinqlConfig {
        alpha: 0.03,
        beta: 0.03,
        reference_scale: 100.0,
        ..SprinqlConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub envs: Vec<EnvSpec>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub data: DatasetSpec,
    pub reference: PreferenceFitConfig,
    pub objective: SprinqlConfig,
    pub bc: BcConfig,
    pub probe: ProbeConfig,
    /// Number of trailing evaluations averaged into a run's score.
    pub score_window: usize,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    /// Record wall-clock time; when off, `wall_s` is written as 0 so outputs are
    /// byte-reproducible.
    pub record_timing: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            envs: default_environments(),
            methods: Method::ALL.to_vec(),
            seeds: (0..5).collect(),
            data: suite_dataset_spec(),
            reference: PreferenceFitConfig::default(),
            objective: suite_objective(),
            bc: BcConfig::default(),
            probe: ProbeConfig::default(),
            score_window: 10,
            jobs: 0,
            record_timing: false,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("suite needs at least one environment, method and seed".into()));
        }
        if self.score_window == 0 {
            return Err(Error::Config("score_window must be positive".into()));
        }
        for e in &self.envs {
            e.grid.validate()?;
        }
        self.data.validate()?;
        self.reference.validate()?;
        self.objective.validate()
    }
}

/// Independent seeds derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub reference: u64,
    pub probe: u64,
}

impl RunSeeds {
    pub fn derive(seed: u64) -> RunSeeds {
        RunSeeds {
            data: sub_seed(seed, 1),
            reference: sub_seed(seed, 2),
            probe: sub_seed(seed, 3),
        }
    }
}

/// Everything shared by the methods of one `(environment, seed)` pair.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mdp: TabularMdp,
    pub expert: Policy,
    pub expert_return: f64,
    pub random_return: f64,
    pub data: RankedDatasets,
    pub reference: ReferenceReward,
    pub weights: WeightVector,
    pub expectations: EmpiricalExpectations,
}

impl Prepared {
    pub fn score(&self, pi: &Policy) -> Result<f64> {
        let ret = policy_return(&self.mdp, pi, self.mdp.true_reward())?;
        normalized_score(ret, self.random_return, self.expert_return)
    }
}

/// Builds the MDP, the ranked datasets, the reference reward and the weights.
pub fn prepare(env: &EnvSpec, seed: u64, cfg: &SuiteConfig) -> Result<Prepared> {
    let mdp = make_gridworld(&env.grid)?;
    let expert = expert_policy(&mdp, cfg.data.expert_inverse_temperature)?;
    let expert_return = policy_return(&mdp, &expert, mdp.true_reward())?;
    let random_return = policy_return(&mdp, &Policy::uniform(mdp.n_states(), mdp.n_actions()), mdp.true_reward())?;
    let spec = DatasetSpec {
        seed: RunSeeds::derive(seed).data,
        ..cfg.data.clone()
    };
    let data = build_ranked_datasets_from(&mdp, &expert, &spec)?;
    let pref = PreferenceFitConfig {
        seed: RunSeeds::derive(seed).reference,
        ..cfg.reference.clone()
    };
    let reference = fit_reference_reward(&data, mdp.n_states(), mdp.n_actions(), &pref)?.reward;
    let weights = estimate_weights(&reference, &data)?;
    let expectations =
        EmpiricalExpectations::from_datasets(&data, &weights, mdp.n_states(), mdp.n_actions(), mdp.discount())?;
    Ok(Prepared {
        mdp,
        expert,
        expert_return,
        random_return,
        data,
        reference,
        weights,
        expectations,
    })
}

/// Outcome of a single `(method, environment, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub env: String,
    pub seed: u64,
    /// Mean of the last `score_window` evaluation scores.
    pub score: f64,
    /// `(iteration, score)` evaluation trace.
    pub curve: Vec<(usize, f64)>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub weights: Vec<f64>,
    pub wall_s: f64,
}

/// Trains one method on prepared data.
pub fn run_method(method: Method, prep: &Prepared, cfg: &SuiteConfig) -> Result<(Policy, Option<TrainOutput>)> {
    let (ns, na) = (prep.mdp.n_states(), prep.mdp.n_actions());
    let obj = &cfg.objective;
    let mut hook = |pi: &Policy| prep.score(pi).unwrap_or(f64::NAN);
    let bc = |levels| BcConfig {
        levels,
        ..cfg.bc.clone()
    };
    Ok(match method {
        Method::Sprinql => {
            let out = train_on_expectations(&prep.expectations, &prep.reference, obj, Some(&mut hook))?;
            (out.policy.clone(), Some(out))
        }
        Method::Noreg => {
            let out = noreg_on_expectations(&prep.expectations, obj, Some(&mut hook))?;
            (out.policy.clone(), Some(out))
        }
        Method::Nodm => {
            let out = nodm_on_expectations(&prep.expectations, &prep.reference, obj, Some(&mut hook))?;
            (out.policy.clone(), Some(out))
        }
        Method::BcExpert => (bc_policy(&prep.data, ns, na, &bc(LevelSelector::ExpertOnly), None)?, None),
        Method::BcSuboptimal => (bc_policy(&prep.data, ns, na, &bc(LevelSelector::SuboptimalOnly), None)?, None),
        Method::BcAll => (bc_policy(&prep.data, ns, na, &bc(LevelSelector::All), None)?, None),
        Method::WeightedBc => (
            bc_policy(&prep.data, ns, na, &bc(LevelSelector::Weighted), Some(&prep.weights))?,
            None,
        ),
    })
}

/// Runs one method and scores it by the suite protocol.
pub fn run_cell(method: Method, env: &EnvSpec, seed: u64, prep: &Prepared, cfg: &SuiteConfig) -> Result<CellResult> {
    let start = Instant::now();
    let (pi, trained) = run_method(method, prep, cfg)?;
    let curve = match &trained {
        Some(out) => out.diagnostics.evaluations.clone(),
        // a fixed policy scores the same at every evaluation
        None => vec![(0, prep.score(&pi)?)],
    };
    let scores: Vec<f64> = curve.iter().map(|&(_, s)| s).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Divergence(format!("{} produced a non-finite score", method.name())));
    }
    let score = last_window_mean(&scores, cfg.score_window).unwrap_or(prep.score(&pi)?);
    let (pearson, spearman) = match &trained {
        Some(out) => {
            let rhat = recovered_reward(&out.q, &prep.mdp)?;
            let probe = ProbeConfig {
                seed: RunSeeds::derive(seed).probe,
                ..cfg.probe.clone()
            };
            match reward_correlation(&rhat, &prep.mdp, &prep.expert, &probe) {
                Ok((p, s)) => (Some(p), Some(s)),
                Err(Error::Degenerate(_)) => (None, None),
                Err(e) => return Err(e),
            }
        }
        None => (None, None),
    };
    Ok(CellResult {
        method,
        env: env.name.clone(),
        seed,
        score,
        curve,
        pearson,
        spearman,
        weights: prep.weights.as_slice().to_vec(),
        wall_s: if cfg.record_timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

/// A failed cell, kept in the report instead of aborting the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub env: String,
    pub seed: u64,
    pub error: String,
}

/// Seed-aggregated result of one method on one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    pub env: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; `None` with fewer than two seeds.
    pub std: Option<f64>,
    pub weights: Vec<Vec<f64>>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub results: Vec<ExperimentResult>,
    /// Environment names in configuration order.
    pub envs: Vec<String>,
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every `(method, environment, seed)` cell. Cells run in parallel; results are
/// ordered by `(method, environment, seed)` regardless of scheduling.
pub fn run_comparison(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let pairs: Vec<(usize, u64)> = (0..cfg.envs.len())
        .flat_map(|e| cfg.seeds.iter().map(move |&s| (e, s)))
        .collect();
    let outcomes: Vec<std::result::Result<CellResult, CellFailure>> = pool.install(|| {
        let prepared: Vec<(usize, u64, Result<Prepared>)> = pairs
            .par_iter()
            .map(|&(e, s)| (e, s, prepare(&cfg.envs[e], s, cfg)))
            .collect();
        let jobs: Vec<(Method, usize, u64, &Result<Prepared>)> = prepared
            .iter()
            .flat_map(|(e, s, p)| cfg.methods.iter().map(move |&m| (m, *e, *s, p)))
            .collect();
        jobs.par_iter()
            .map(|&(m, e, s, prep)| {
                let env = &cfg.envs[e];
                let fail = |err: &Error| CellFailure {
                    method: m,
                    env: env.name.clone(),
                    seed: s,
                    error: err.to_string(),
                };
                match prep {
                    Ok(p) => run_cell(m, env, s, p, cfg).map_err(|err| fail(&err)),
                    Err(err) => Err(fail(err)),
                }
            })
            .collect()
    });
    let env_rank: BTreeMap<&str, usize> = cfg.envs.iter().enumerate().map(|(i, e)| (e.name.as_str(), i)).collect();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(c) => cells.push(c),
            Err(f) => failures.push(f),
        }
    }
    cells.sort_by_key(|c| (c.method, env_rank[c.env.as_str()], c.seed));
    failures.sort_by_key(|f| (f.method, env_rank[f.env.as_str()], f.seed));
    let results = aggregate(&cells, &cfg.envs.iter().map(|e| e.name.clone()).collect::<Vec<_>>());
    Ok(SuiteReport {
        cells,
        failures,
        results,
        envs: cfg.envs.iter().map(|e| e.name.clone()).collect(),
    })
}

/// Groups cells by `(method, environment)`.
pub fn aggregate(cells: &[CellResult], env_order: &[String]) -> Vec<ExperimentResult> {
    let rank = |name: &str| env_order.iter().position(|e| e == name).unwrap_or(usize::MAX);
    let mut groups: BTreeMap<(Method, usize, String), Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.method, rank(&c.env), c.env.clone())).or_default().push(c);
    }
    groups
        .into_iter()
        .map(|((method, _, env), cs)| {
            let scores: Vec<f64> = cs.iter().map(|c| c.score).collect();
            let (mean, std) = mean_std(&scores);
            ExperimentResult {
                method,
                env,
                mean,
                std,
                weights: cs.iter().map(|c| c.weights.clone()).collect(),
                pearson: mean_of(cs.iter().map(|c| c.pearson)),
                spearman: mean_of(cs.iter().map(|c| c.spearman)),
                wall_s: cs.iter().map(|c| c.wall_s).sum(),
                scores,
            }
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl SuiteReport {
    /// One row per cell: `method,env,seed,score,pearson,spearman,wall_s`. Correlations
    /// are left empty for methods without a Q function.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,env,seed,score,pearson,spearman,wall_s\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.method.name(),
                c.env,
                c.seed,
                c.score,
                opt(c.pearson),
                opt(c.spearman),
                c.wall_s
            );
        }
        out
    }

    pub fn result(&self, method: Method, env: &str) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.method == method && r.env == env)
    }

    /// Methods as rows, environments as columns, cells `mean ± std`.
    pub fn render_table(&self) -> String {
        let mut methods: Vec<Method> = self.results.iter().map(|r| r.method).collect();
        methods.dedup();
        let mut rows = vec![std::iter::once("method".to_string()).chain(self.envs.iter().cloned()).collect::<Vec<_>>()];
        for m in methods {
            let mut row = vec![m.name().to_string()];
            for e in &self.envs {
                row.push(match self.result(m, e) {
                    Some(r) => match r.std {
                        Some(sd) => format!("{:.1} ± {:.1}", r.mean, sd),
                        None => format!("{:.1}", r.mean),
                    },
                    None => "failed".into(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let pad = widths[j] - c.chars().count();
                    if j == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        for f in &self.failures {
            let _ = writeln!(out, "failed: {} on {} seed {}: {}", f.method.name(), f.env, f.seed, f.error);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_endpoints() {
        assert_eq!(normalized_score(5.0, 1.0, 5.0).unwrap(), 100.0);
        assert_eq!(normalized_score(1.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_score(3.0, 1.0, 5.0).unwrap(), 50.0);
        assert!(normalized_score(3.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn pearson_signs() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn last_ten_window() {
        let trace: Vec<f64> = (1..=50).map(f64::from).collect();
        assert_eq!(last_window_mean(&trace, 10), Some(45.5));
        assert_eq!(last_window_mean(&trace[..4], 10), Some(2.5));
        assert_eq!(last_window_mean(&[], 10), None);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse("sac"), None);
    }
}
