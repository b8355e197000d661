//! Behavioral cloning variants and the two ablations of the full objective.

use log::info;
use serde::{Deserialize, Serialize};

use crate::data::RankedDatasets;
use crate::error::{Error, Result};
use crate::mdp::{Policy, QTable};
use crate::objective::{
    evaluation_schedule, train_on_expectations, Diagnostics, EmpiricalExpectations, EvalHook, MuSpec,
    SprinqlConfig, TrainOutput,
};
use crate::reference::{ReferenceReward, WeightVector};
use crate::table::Table;

/// Which demonstration levels a BC policy is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelSelector {
    /// Level 0 only.
    ExpertOnly,
    /// Every level except 0.
    SuboptimalOnly,
    /// Every level, equally weighted.
    #[default]
    All,
    /// Every level, weighted by a supplied weight vector.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcConfig {
    /// Pseudo-count added to every action.
    pub smoothing: f64,
    pub levels: LevelSelector,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            smoothing: 1.0,
            levels: LevelSelector::All,
        }
    }
}

/// Tabular weighted maximum likelihood: `pi(a|s)` proportional to the weighted count of
/// `(s, a)` plus `smoothing`. States without data or pseudo-counts get uniform rows.
///
/// Level `i` contributes its counts scaled by `w_i * N / |D^i|`, where `N` is the number
/// of transitions in the levels with positive weight. A single selected level therefore
/// uses raw counts.
pub fn bc_policy(
    data: &RankedDatasets,
    n_states: usize,
    n_actions: usize,
    cfg: &BcConfig,
    weights: Option<&WeightVector>,
) -> Result<Policy> {
    if !(cfg.smoothing >= 0.0) || !cfg.smoothing.is_finite() {
        return Err(Error::Config(format!("smoothing must be >= 0, got {}", cfg.smoothing)));
    }
    let k = data.n_levels();
    let raw: Vec<f64> = match cfg.levels {
        LevelSelector::ExpertOnly => (0..k).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        LevelSelector::SuboptimalOnly => (0..k).map(|i| if i == 0 { 0.0 } else { 1.0 }).collect(),
        LevelSelector::All => vec![1.0; k],
        LevelSelector::Weighted => {
            let w = weights.ok_or_else(|| Error::Config("weighted BC needs a weight vector".into()))?;
            if w.len() != k {
                return Err(Error::Shape(format!("{} weights for {k} levels", w.len())));
            }
            w.as_slice().to_vec()
        }
    };
    let w = WeightVector::normalized(&raw)?;
    let sizes = data.level_sizes();
    let selected: usize = (0..k).filter(|&i| w.as_slice()[i] > 0.0).map(|i| sizes[i]).sum();
    for i in 0..k {
        if w.as_slice()[i] > 0.0 && sizes[i] == 0 {
            return Err(Error::EmptyLevel(i));
        }
    }
    let mut counts = Table::filled(n_states, n_actions, cfg.smoothing);
    for (i, &wi) in w.as_slice().iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let scale = wi * selected as f64 / sizes[i] as f64;
        for st in data.level_steps(i) {
            if st.state >= n_states || st.action >= n_actions {
                return Err(Error::Shape(format!("step ({}, {}) out of range", st.state, st.action)));
            }
            counts[(st.state, st.action)] += scale;
        }
    }
    let uniform = 1.0 / n_actions as f64;
    let mut probs = Table::zeros(n_states, n_actions);
    for s in 0..n_states {
        let z: f64 = counts.row(s).iter().sum();
        for a in 0..n_actions {
            probs[(s, a)] = if z > 0.0 { counts[(s, a)] / z } else { uniform };
        }
    }
    Policy::new(probs)
}

/// The objective with the reward regularizer removed (`alpha = 0`); the conservative
/// penalty is kept.
pub fn train_noreg(
    data: &RankedDatasets,
    weights: &WeightVector,
    n_states: usize,
    n_actions: usize,
    discount: f64,
    cfg: &SprinqlConfig,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    let exp = EmpiricalExpectations::from_datasets(data, weights, n_states, n_actions, discount)?;
    noreg_on_expectations(&exp, cfg, hook)
}

pub fn noreg_on_expectations(
    exp: &EmpiricalExpectations,
    cfg: &SprinqlConfig,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    let cfg = without_regularizer(cfg);
    // the reference reward is multiplied by alpha = 0, so any table of the right shape works
    let rbar = ReferenceReward(Table::zeros(exp.n_states(), exp.n_actions()));
    train_on_expectations(exp, &rbar, &cfg, hook)
}

/// Copy of `cfg` with `alpha = 0`, logging when a nonzero value is overridden.
pub fn without_regularizer(cfg: &SprinqlConfig) -> SprinqlConfig {
    if cfg.alpha != 0.0 {
        info!("noreg: overriding alpha = {} with 0", cfg.alpha);
    }
    SprinqlConfig {
        alpha: 0.0,
        ..cfg.clone()
    }
}

/// The objective with the distribution-matching term removed: fitted soft Q-iteration
/// toward the reference reward on the weighted dataset transitions, with the conservative
/// penalty.
///
/// Each sweep solves `min_Q alpha E_U[(Q - y)^2] + beta E_{s ~ D, a ~ mu}[Q]` in closed form
/// for the target `y = r + gamma E_{s'} V^Q(s')` of the previous iterate, then clamps at the
/// floor. Pairs never seen in the data are held at the floor. The map is a
/// `gamma`-contraction, so the iteration converges.
pub fn train_nodm(
    data: &RankedDatasets,
    rbar: &ReferenceReward,
    weights: &WeightVector,
    discount: f64,
    cfg: &SprinqlConfig,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    let (ns, na) = rbar.0.shape();
    let exp = EmpiricalExpectations::from_datasets(data, weights, ns, na, discount)?;
    nodm_on_expectations(&exp, rbar, cfg, hook)
}

pub fn nodm_on_expectations(
    exp: &EmpiricalExpectations,
    rbar: &ReferenceReward,
    cfg: &SprinqlConfig,
    mut hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let (ns, na) = (exp.n_states(), exp.n_actions());
    if rbar.0.shape() != (ns, na) {
        return Err(Error::Shape("reference reward shape".into()));
    }
    if cfg.alpha == 0.0 {
        return Err(Error::Config("the regression-only variant needs alpha > 0".into()));
    }
    let pair_w = exp.pair_weights();
    let gamma = exp.discount();
    let mut q = Table::filled(ns, na, cfg.floor);
    let schedule = evaluation_schedule(cfg.iterations, cfg.evaluations);
    let mut next_eval = 0;
    let mut diag = Diagnostics::default();
    let mut done = false;
    for it in 1..=cfg.iterations {
        diag.iterations = it;
        if !done {
            let v = QTable(q.clone()).soft_value();
            let penalty = penalty_weights(&q, exp, cfg)?;
            let mut target = Table::zeros(ns, na);
            for r in exp.records() {
                let next: f64 = r.next.iter().map(|&(s, p)| p * v[s]).sum();
                target[(r.s, r.a)] += r.weight * (cfg.reference_scale * rbar.0[(r.s, r.a)] + gamma * next);
            }
            let mut loss = 0.0;
            let mut new_q = Table::filled(ns, na, cfg.floor);
            for s in 0..ns {
                for a in 0..na {
                    let w = pair_w[(s, a)];
                    if w > 0.0 {
                        let y = target[(s, a)] / w;
                        new_q[(s, a)] = (y - penalty[(s, a)] / (2.0 * cfg.alpha * w)).max(cfg.floor);
                        loss += w * (q[(s, a)] - y).powi(2);
                    }
                }
            }
            let change = new_q.max_abs_diff(&q);
            if !new_q.is_finite() {
                return Err(Error::Divergence(format!("non-finite Q at sweep {it}")));
            }
            diag.objective.push(-cfg.alpha * loss - penalty.dot(&q));
            diag.grad_norm.push(change);
            q = new_q;
            if change <= cfg.grad_tol {
                done = true;
                diag.converged = true;
            }
        }
        if next_eval < schedule.len() && schedule[next_eval] == it {
            if let Some(h) = hook.as_deref_mut() {
                diag.evaluations.push((it, h(&Policy::softmax(&q, 1.0))));
            }
            next_eval += 1;
        }
        if done && next_eval >= schedule.len() {
            break;
        }
    }
    let q = QTable(q);
    Ok(TrainOutput {
        policy: q.soft_policy(),
        q,
        diagnostics: diag,
    })
}

/// `beta * d_D(s) * mu(a|s)`, the per-entry slope of the conservative penalty.
fn penalty_weights(q: &Table, exp: &EmpiricalExpectations, cfg: &SprinqlConfig) -> Result<Table> {
    let (ns, na) = q.shape();
    let mut out = Table::zeros(ns, na);
    if cfg.beta == 0.0 {
        return Ok(out);
    }
    let mu = match &cfg.mu {
        MuSpec::Uniform => Policy::uniform(ns, na),
        // the soft policy is treated as fixed within a sweep
        MuSpec::SoftPolicy => Policy::softmax(q, 1.0),
        MuSpec::Fixed(p) => {
            if p.probs().shape() != (ns, na) {
                return Err(Error::Shape("mu policy shape".into()));
            }
            p.clone()
        }
    };
    for (s, &d) in exp.state_dist().iter().enumerate() {
        for a in 0..na {
            out[(s, a)] = cfg.beta * d * mu.prob(s, a);
        }
    }
    Ok(out)
}
