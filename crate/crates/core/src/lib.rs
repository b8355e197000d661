//! Offline imitation learning from ranked, mostly sub-optimal demonstrations on tabular MDPs.
//!
//! The pipeline has three stages:
//!
//! 1. [`reference::fit_reference_reward`] fits a per-`(s, a)` reward from the expertise
//!    ranking of the datasets with a Bradley-Terry likelihood, and
//!    [`reference::estimate_weights`] turns it into mixture weights over the datasets.
//! 2. [`objective::EmpiricalExpectations`] builds the weighted demonstration mixture.
//! 3. [`objective::train_sprinql`] maximizes a concave inverse soft-Q objective whose
//!    regularizer pulls the implied reward toward the reference reward, with an optional
//!    conservative penalty on actions outside the data.
//!
//! Everything is tabular and deterministic given a seed.



pub mod baselines;
pub mod counterexample;
pub mod data;
pub mod error;
pub mod eval;
pub mod format;


pub mod mdp;
pub mod objective;
pub mod reference;
pub mod table;

pub use data::{
    build_ranked_datasets, make_gridworld, DatasetSpec, GridworldConfig, RankedDatasets, Step, Trajectory,
};
pub use error::{Error, Result};
pub use mdp::{
    occupancy_measure, policy_return, soft_value_iteration, OccupancyMeasure, Policy, QTable, TabularMdp,
};
pub use objective::{
    gamma_hat, gamma_hat_conservative, gamma_hat_gradient, h_hat, h_original, train_sprinql,
    EmpiricalExpectations, SprinqlConfig, TrainOutput,
};
pub use reference::{estimate_weights, fit_reference_reward, PreferenceFitConfig, ReferenceReward, WeightVector};
pub use table::Table;
