//! Plain-text serialization of MDPs, tables, datasets and training diagnostics.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so parsing a written
//! file reproduces every `f64` bit for bit. Lines starting with `#` and blank lines are
//! ignored by every parser.
//!
//! MDP layout:
//!
//! ```text
//! mdp
//! states 2
//! actions 2
//! discount 0.9
//! initial 1 0
//! transition
//! <states * actions lines, row (s, a) holding P(. | s, a)>
//! reward
//! <states lines of actions values>
//! end
//! ```
//!
//! Table layout: a header `table <kind> <rows> <cols>` followed by `rows` lines.
//!
//! Dataset layout: one transition per line, `level trajectory step s a s'`, grouped by
//! level, then trajectory, then step.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::data::{DatasetSpec, GridworldConfig, RankedDatasets, Step, Trajectory};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::objective::Diagnostics;
use crate::table::Table;

fn push_row(out: &mut String, xs: &[f64]) {
    let mut first = true;
    for x in xs {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{x}");
    }
    out.push('\n');
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_floats(line: usize, s: &str, expected: usize) -> Result<Vec<f64>> {
    let xs = s
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(line, format!("bad number {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if xs.len() != expected {
        return Err(Error::parse(line, format!("expected {expected} numbers, found {}", xs.len())));
    }
    Ok(xs)
}

fn keyed<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (n, l) = lines
        .next()
        .ok_or_else(|| Error::parse(0, format!("unexpected end of input, expected {key:?}")))?;
    let rest = l
        .strip_prefix(key)
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
        .ok_or_else(|| Error::parse(n, format!("expected {key:?}, found {l:?}")))?;
    Ok((n, rest.trim()))
}

fn parse_usize(line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| Error::parse(line, format!("bad count {s:?}")))
}

pub fn write_mdp(mdp: &TabularMdp) -> String {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = String::new();
    let _ = writeln!(out, "mdp\nstates {ns}\nactions {na}\ndiscount {}", mdp.discount());
    out.push_str("initial ");
    push_row(&mut out, mdp.initial_dist());
    out.push_str("transition\n");
    for row in mdp.transition().chunks(ns) {
        push_row(&mut out, row);
    }
    out.push_str("reward\n");
    for row in mdp.true_reward().row_iter() {
        push_row(&mut out, row);
    }
    out.push_str("end\n");
    out
}

/// Parses and validates an MDP.
pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = content_lines(text);
    keyed(&mut lines, "mdp")?;
    let (n, v) = keyed(&mut lines, "states")?;
    let ns = parse_usize(n, v)?;
    let (n, v) = keyed(&mut lines, "actions")?;
    let na = parse_usize(n, v)?;
    let (n, v) = keyed(&mut lines, "discount")?;
    let discount = parse_floats(n, v, 1)?[0];
    let (n, v) = keyed(&mut lines, "initial")?;
    let initial = parse_floats(n, v, ns)?;
    keyed(&mut lines, "transition")?;
    let mut transition = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let (n, l) = lines.next().ok_or_else(|| Error::parse(0, "transition block is truncated"))?;
        transition.extend(parse_floats(n, l, ns)?);
    }
    keyed(&mut lines, "reward")?;
    let mut reward = Vec::with_capacity(ns * na);
    for _ in 0..ns {
        let (n, l) = lines.next().ok_or_else(|| Error::parse(0, "reward block is truncated"))?;
        reward.extend(parse_floats(n, l, na)?);
    }
    keyed(&mut lines, "end")?;
    if let Some((n, l)) = lines.next() {
        return Err(Error::parse(n, format!("trailing content {l:?}")));
    }
    Ok(TabularMdp::new(ns, na, transition, Table::from_vec(ns, na, reward), discount, initial)?)
}

pub fn write_table(kind: &str, t: &Table) -> String {
    let mut out = format!("table {kind} {} {}\n", t.rows(), t.cols());
    for row in t.row_iter() {
        push_row(&mut out, row);
    }
    out
}

/// Parses a table, returning its kind label.
pub fn parse_table(text: &str) -> Result<(String, Table)> {
    let mut lines = content_lines(text);
    let (n, header) = keyed(&mut lines, "table")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::parse(n, "table header must be `table <kind> <rows> <cols>`"));
    }
    let rows = parse_usize(n, parts[1])?;
    let cols = parse_usize(n, parts[2])?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (n, l) = lines.next().ok_or_else(|| Error::parse(0, "table is truncated"))?;
        data.extend(parse_floats(n, l, cols)?);
    }
    if let Some((n, l)) = lines.next() {
        return Err(Error::parse(n, format!("trailing content {l:?}")));
    }
    Ok((parts[0].to_string(), Table::from_vec(rows, cols, data)))
}

/// Parses a table and checks its kind label.
pub fn parse_table_of_kind(text: &str, kind: &str) -> Result<Table> {
    let (k, t) = parse_table(text)?;
    if k != kind {
        return Err(Error::parse(1, format!("expected a {kind:?} table, found {k:?}")));
    }
    Ok(t)
}

pub fn write_dataset(data: &RankedDatasets) -> String {
    let mut out = String::from("# level trajectory step s a s'\n");
    for (l, level) in data.levels.iter().enumerate() {
        for (t, traj) in level.iter().enumerate() {
            for (k, st) in traj.steps.iter().enumerate() {
                let _ = writeln!(out, "{l} {t} {k} {} {} {}", st.state, st.action, st.next_state);
            }
        }
    }
    out
}

/// Parses the line format written by [`write_dataset`]. Levels, trajectories and steps
/// must each be numbered contiguously from zero.
pub fn parse_dataset(text: &str) -> Result<RankedDatasets> {
    let mut levels: Vec<Vec<Trajectory>> = Vec::new();
    for (n, line) in content_lines(text) {
        let f: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(n, format!("bad field {t:?}"))))
            .collect::<Result<_>>()?;
        let [level, traj, step, s, a, next] = f[..] else {
            return Err(Error::parse(n, format!("expected 6 fields, found {}", f.len())));
        };
        if level == levels.len() {
            levels.push(Vec::new());
        } else if level + 1 != levels.len() {
            return Err(Error::parse(n, format!("level {level} out of order")));
        }
        let trajs = levels.last_mut().expect("pushed above");
        if traj == trajs.len() {
            trajs.push(Trajectory { steps: Vec::new() });
        } else if traj + 1 != trajs.len() {
            return Err(Error::parse(n, format!("trajectory {traj} out of order")));
        }
        let steps = &mut trajs.last_mut().expect("pushed above").steps;
        if step != steps.len() {
            return Err(Error::parse(n, format!("step {step} out of order")));
        }
        steps.push(Step {
            state: s,
            action: a,
            next_state: next,
        });
    }
    RankedDatasets::new(levels)
}

/// Everything needed to regenerate a dataset, stored next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub grid: Option<GridworldConfig>,
    pub data: DatasetSpec,
    pub n_states: usize,
    pub n_actions: usize,
    pub level_sizes: Vec<usize>,
    pub level_trajectories: Vec<usize>,
    /// Empirical mean discounted true return per level.
    pub level_mean_returns: Vec<f64>,
    /// Free-form extra configuration echoed by the caller.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub const VERSION: u32 = 1;

    pub fn describe(
        data: &RankedDatasets,
        mdp: &TabularMdp,
        spec: &DatasetSpec,
        grid: Option<&GridworldConfig>,
    ) -> Manifest {
        Manifest {
            format_version: Self::VERSION,
            seed: spec.seed,
            grid: grid.cloned(),
            data: spec.clone(),
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            level_sizes: data.level_sizes(),
            level_trajectories: data.levels.iter().map(Vec::len).collect(),
            level_mean_returns: data.level_mean_returns(mdp.true_reward(), mdp.discount()),
            extra: serde_json::Value::Null,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest is always serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Manifest> {
        serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))
    }

    /// Checks that a parsed dataset matches the recorded shape.
    pub fn check(&self, data: &RankedDatasets) -> Result<()> {
        if data.level_sizes() != self.level_sizes {
            return Err(Error::Config(format!(
                "dataset level sizes {:?} differ from the manifest's {:?}",
                data.level_sizes(),
                self.level_sizes
            )));
        }
        let (ns, na) = data.index_bounds();
        if ns > self.n_states || na > self.n_actions {
            return Err(Error::Config("dataset indices exceed the manifest's state/action counts".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum DiagRecord {
    Step {
        iteration: usize,
        objective: f64,
        grad_norm: f64,
    },
    Eval {
        iteration: usize,
        score: f64,
    },
}

/// One JSON object per line: every iterate's `objective` and `grad_norm`, then every
/// evaluation's `score`.
pub fn diagnostics_jsonl(d: &Diagnostics) -> String {
    let mut out = String::new();
    for (i, (&objective, &grad_norm)) in d.objective.iter().zip(&d.grad_norm).enumerate() {
        let rec = DiagRecord::Step {
            iteration: i,
            objective,
            grad_norm,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    for &(iteration, score) in &d.evaluations {
        out.push_str(&serde_json::to_string(&DiagRecord::Eval { iteration, score }).expect("plain record"));
        out.push('\n');
    }
    out
}
