use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sprinql::baselines::BcConfig;
use sprinql::eval::{suite_objective, ProbeConfig, RunSeeds, SuiteConfig};
use sprinql::{DatasetSpec, GridworldConfig, PreferenceFitConfig, SprinqlConfig};

use crate::output::{CliResult, Failure};
use crate::{Format, GlobalArgs};

/// Everything a run reads from its configuration file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Directory holding `mdp.txt`, `dataset.txt` and earlier outputs; defaults to the
    /// output directory.
    pub input: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub format: Option<Format>,
    pub env: GridworldConfig,
    pub data: DatasetSpec,
    pub reference: PreferenceFitConfig,
    pub objective: SprinqlConfig,
    pub bc: BcConfig,
    pub train: TrainSection,
    pub suite: SuiteConfig,
    pub eval: EvalSection,
    pub plot: PlotSection,
}

impl Default for RunConfig {
    /// The training objective defaults to the suite's weights and reference scale.
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: None,
            input: None,
            jobs: None,
            format: None,
            env: GridworldConfig::default(),
            data: DatasetSpec::default(),
            reference: PreferenceFitConfig::default(),
            objective: suite_objective(),
            bc: BcConfig::default(),
            train: TrainSection::default(),
            suite: SuiteConfig::default(),
            eval: EvalSection::default(),
            plot: PlotSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: String,
    /// Trailing evaluations averaged into the reported score.
    pub score_window: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            method: "sprinql".into(),
            score_window: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Policy table to score; defaults to `policy.txt` in the input directory.
    pub policy: Option<PathBuf>,
    /// Recovered reward to correlate with the true one; `reward.txt` in the input
    /// directory is used when present.
    pub reward: Option<PathBuf>,
    pub probe: ProbeConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSection {
    /// Suite results; defaults to `results.csv` in the output directory.
    pub results: Option<PathBuf>,
    /// Training diagnostics; defaults to `diagnostics.jsonl` in the output directory.
    pub diagnostics: Option<PathBuf>,
}

/// Configuration after applying command-line overrides.
#[derive(Debug, Clone, Serialize)]
pub struct Effective {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
    pub format: Format,
    #[serde(flatten)]
    pub cfg: RunConfig,
}

impl Effective {
    pub fn load(args: &GlobalArgs) -> CliResult<Effective> {
        let mut cfg = match &args.config {
            Some(path) => parse_config(path)?,
            None => RunConfig::default(),
        };
        let seed = args.seed.or(cfg.seed).unwrap_or(0);
        let out = args.out.clone().or(cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let jobs = args.jobs.or(cfg.jobs).unwrap_or(0);
        let format = args.format.or(cfg.format).unwrap_or(Format::Csv);
        // the same derivation as a suite cell, so a pipeline run with seed `s` reproduces
        // suite seed `s`
        let streams = RunSeeds::derive(seed);
        cfg.data.seed = streams.data;
        cfg.reference.seed = streams.reference;
        cfg.objective.seed = seed;
        cfg.eval.probe.seed = streams.probe;
        if args.seed.is_some() || cfg.seed.is_some() {
            // keep the number of seeds, start them at the requested one
            let n = cfg.suite.seeds.len() as u64;
            cfg.suite.seeds = (seed..seed + n).collect();
        }
        cfg.suite.jobs = jobs;
        cfg.seed = Some(seed);
        cfg.out = Some(out.clone());
        cfg.jobs = Some(jobs);
        cfg.format = Some(format);
        Ok(Effective {
            seed,
            out,
            jobs,
            format,
            cfg,
        })
    }

    /// Directory inputs are read from: the configured one or the output directory.
    pub fn input_dir(&self) -> PathBuf {
        self.cfg.input.clone().unwrap_or_else(|| self.out.clone())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration is always serializable")
    }
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    if !path.exists() {
        return Err(Failure::validation(format!("config file {} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::runtime(anyhow::Error::new(e).context(format!("reading {}", path.display()))))?;
    toml::from_str(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}
