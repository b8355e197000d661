use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use log::{info, warn};
use serde_json::json;
use sprinql::data::expert_policy;
use sprinql::eval::{
    evaluate_policy, last_window_mean, normalized_score, reward_correlation, run_comparison, run_method, EvalMode,
    Method, Prepared, SuiteConfig,
};
use sprinql::format::{
    diagnostics_jsonl, parse_dataset, parse_mdp, parse_table_of_kind, write_dataset, write_mdp, write_table,
    Manifest,
};
use sprinql::mdp::{policy_return, Policy, TabularMdp};
use sprinql::objective::{recovered_reward, Diagnostics, EmpiricalExpectations};
use sprinql::reference::fit_reference_traced;
use sprinql::{
    build_ranked_datasets, estimate_weights, make_gridworld, RankedDatasets, ReferenceReward, Table, WeightVector,
};

use crate::config::Effective;
use crate::output::{read_input, CliResult, CoreContext, Failure, Outputs, EXIT_PARTIAL};
use crate::plot::{curves_svg, reference_levels_svg, scores_svg, training_svgs, ScoreRow};
use crate::{Cli, Command, Format};

pub const MDP_FILE: &str = "mdp.txt";
pub const DATASET_FILE: &str = "dataset.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REFERENCE_FILE: &str = "reference.txt";
pub const WEIGHTS_FILE: &str = "weights.txt";

pub fn run(cli: &Cli) -> CliResult<ExitCode> {
    let eff = Effective::load(&cli.global)?;
    match cli.command {
        Command::GenData => gen_data(&eff),
        Command::FitReference => fit_reference(&eff),
        Command::Train => train(&eff),
        Command::Suite => return suite(&eff),
        Command::Eval => eval(&eff),
        Command::Plot => plot(&eff),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn command_manifest(eff: &Effective, command: &str) -> String {
    let mut s = serde_json::to_string_pretty(&json!({ "command": command, "config": eff.to_json() }))
        .expect("manifest is always serializable");
    s.push('\n');
    s
}

fn report_written(paths: &[PathBuf]) {
    for p in paths {
        info!("wrote {}", p.display());
    }
}

fn gen_data(eff: &Effective) -> CliResult<()> {
    let grid = &eff.cfg.env;
    let data_cfg = &eff.cfg.data;
    grid.validate().ctx("[env]")?;
    data_cfg.validate().ctx("[data]")?;
    let mdp = make_gridworld(grid).ctx("building the gridworld")?;
    let data = build_ranked_datasets(&mdp, data_cfg).ctx("generating datasets")?;
    let mut manifest = Manifest::describe(&data, &mdp, data_cfg, Some(grid));
    manifest.extra = eff.to_json();
    for (l, (n, m)) in manifest.level_sizes.iter().zip(&manifest.level_mean_returns).enumerate() {
        info!("level {}: {n} transitions, mean discounted return {m:.4}", l + 1);
    }
    let mut out = Outputs::new(&eff.out);
    out.add(MDP_FILE, write_mdp(&mdp));
    out.add(DATASET_FILE, write_dataset(&data));
    out.add(MANIFEST_FILE, manifest.to_json());
    report_written(&out.commit()?);
    Ok(())
}

/// MDP and datasets from the input directory, checked against the manifest when present.
struct Inputs {
    dir: PathBuf,
    mdp: TabularMdp,
    data: RankedDatasets,
    manifest: Option<Manifest>,
}

fn load_inputs(eff: &Effective) -> CliResult<Inputs> {
    let dir = eff.input_dir();
    let mdp_path = dir.join(MDP_FILE);
    let data_path = dir.join(DATASET_FILE);
    let mdp = parse_mdp(&read_input(&mdp_path)?).ctx(mdp_path.display())?;
    let data = parse_dataset(&read_input(&data_path)?).ctx(data_path.display())?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        let m = Manifest::from_json(&read_input(&manifest_path)?).ctx(manifest_path.display())?;
        m.check(&data).ctx(manifest_path.display())?;
        Some(m)
    } else {
        None
    };
    let (ns, na) = data.index_bounds();
    if ns > mdp.n_states() || na > mdp.n_actions() {
        return Err(Failure::validation(format!(
            "{} references states or actions outside {}",
            data_path.display(),
            mdp_path.display()
        )));
    }
    Ok(Inputs {
        dir,
        mdp,
        data,
        manifest,
    })
}

fn fit_reference(eff: &Effective) -> CliResult<()> {
    let pref = &eff.cfg.reference;
    pref.validate().ctx("[reference]")?;
    let inputs = load_inputs(eff)?;
    let (ns, na) = (inputs.mdp.n_states(), inputs.mdp.n_actions());
    let mut trace = Vec::new();
    let fitted = fit_reference_traced(&inputs.data, ns, na, pref, &mut trace);
    let mut csv = String::from("iteration,loss\n");
    for (it, loss) in &trace {
        let _ = writeln!(csv, "{it},{loss}");
    }
    let mut out = Outputs::new(&eff.out);
    out.add("loss_trace.csv", csv);
    let reward = match fitted {
        Ok(r) => r,
        Err(e) => {
            // keep the trace for diagnosis
            report_written(&out.commit()?);
            return Err(Failure::from(e));
        }
    };
    let weights = estimate_weights(&reward, &inputs.data).ctx("estimating level weights")?;
    for (l, (m, w)) in reward.level_means(&inputs.data).iter().zip(weights.as_slice()).enumerate() {
        info!("level {}: mean reference reward {m:.4}, weight {w:.4}", l + 1);
    }
    out.add(REFERENCE_FILE, write_table("reference", reward.values()));
    out.add(
        WEIGHTS_FILE,
        write_table("weights", &Table::from_vec(1, weights.len(), weights.as_slice().to_vec())),
    );
    if eff.format == Format::Svg {
        let per_level: Vec<Vec<f64>> = (0..inputs.data.n_levels())
            .map(|l| inputs.data.level_steps(l).map(|st| reward.values()[(st.state, st.action)]).collect())
            .collect();
        out.add("reference-levels.svg", reference_levels_svg(&per_level, 30).map_err(Failure::runtime)?);
    }
    out.add("fit-reference.json", command_manifest(eff, "fit-reference"));
    report_written(&out.commit()?);
    Ok(())
}

fn expert_for(eff: &Effective, inputs: &Inputs) -> CliResult<Policy> {
    let temp = inputs
        .manifest
        .as_ref()
        .map_or(eff.cfg.data.expert_inverse_temperature, |m| m.data.expert_inverse_temperature);
    expert_policy(&inputs.mdp, temp).ctx("computing the expert policy")
}

fn load_reference(dir: &Path, ns: usize, na: usize) -> CliResult<ReferenceReward> {
    let path = dir.join(REFERENCE_FILE);
    let t = parse_table_of_kind(&read_input(&path)?, "reference").ctx(path.display())?;
    if t.shape() != (ns, na) {
        return Err(Failure::validation(format!(
            "{} is {:?}, the MDP has {ns} states and {na} actions",
            path.display(),
            t.shape()
        )));
    }
    Ok(ReferenceReward(t))
}

fn load_weights(dir: &Path, reference: &ReferenceReward, data: &RankedDatasets) -> CliResult<WeightVector> {
    let path = dir.join(WEIGHTS_FILE);
    if path.exists() {
        let t = parse_table_of_kind(&read_input(&path)?, "weights").ctx(path.display())?;
        let w = WeightVector::new(t.into_vec()).ctx(path.display())?;
        if w.len() != data.n_levels() {
            return Err(Failure::validation(format!(
                "{} has {} weights for {} levels",
                path.display(),
                w.len(),
                data.n_levels()
            )));
        }
        Ok(w)
    } else {
        estimate_weights(reference, data).ctx("estimating level weights")
    }
}

fn parse_method(name: &str) -> CliResult<Method> {
    Method::parse(name).ok_or_else(|| {
        let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        Failure::validation(format!("unknown method `{name}`; expected one of {}", known.join(", ")))
    })
}

fn train(eff: &Effective) -> CliResult<()> {
    let method = parse_method(&eff.cfg.train.method)?;
    eff.cfg.objective.validate().ctx("[objective]")?;
    if eff.cfg.train.score_window == 0 {
        return Err(Failure::validation("[train] score_window must be positive"));
    }
    let inputs = load_inputs(eff)?;
    let mdp = &inputs.mdp;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let needs_reference = !matches!(method, Method::BcExpert | Method::BcSuboptimal | Method::BcAll);
    let (reference, weights) = if needs_reference {
        let r = load_reference(&inputs.dir, ns, na)?;
        let w = load_weights(&inputs.dir, &r, &inputs.data)?;
        (r, w)
    } else {
        (
            ReferenceReward(Table::zeros(ns, na)),
            WeightVector::uniform(inputs.data.n_levels()),
        )
    };
    let expert = expert_for(eff, &inputs)?;
    let expectations = EmpiricalExpectations::from_datasets(&inputs.data, &weights, ns, na, mdp.discount())
        .ctx("aggregating the datasets")?;
    let prep = Prepared {
        expert_return: policy_return(mdp, &expert, mdp.true_reward()).ctx("expert return")?,
        random_return: policy_return(mdp, &Policy::uniform(ns, na), mdp.true_reward()).ctx("random return")?,
        mdp: mdp.clone(),
        expert,
        data: inputs.data.clone(),
        reference,
        weights,
        expectations,
    };
    let suite_cfg = SuiteConfig {
        objective: eff.cfg.objective.clone(),
        bc: eff.cfg.bc.clone(),
        score_window: eff.cfg.train.score_window,
        ..SuiteConfig::default()
    };
    let (policy, trained) = run_method(method, &prep, &suite_cfg).ctx(format!("training {}", method.name()))?;
    let final_score = prep.score(&policy).ctx("scoring the final policy")?;
    let mut out = Outputs::new(&eff.out);
    out.add("policy.txt", write_table("policy", policy.probs()));
    let mut summary = json!({
        "method": method.name(),
        "final_score": final_score,
        "score": final_score,
        "weights": prep.weights.as_slice(),
    });
    if let Some(t) = &trained {
        let scores: Vec<f64> = t.diagnostics.evaluations.iter().map(|&(_, s)| s).collect();
        if let Some(s) = last_window_mean(&scores, eff.cfg.train.score_window) {
            summary["score"] = json!(s);
        }
        summary["iterations"] = json!(t.diagnostics.iterations);
        summary["converged"] = json!(t.diagnostics.converged);
        summary["final_objective"] = json!(t.diagnostics.objective.last());
        let rhat = recovered_reward(&t.q, mdp).ctx("recovering the reward")?;
        out.add("q.txt", write_table("q", &t.q.0));
        out.add("reward.txt", write_table("reward", &rhat));
        out.add("diagnostics.jsonl", diagnostics_jsonl(&t.diagnostics));
    }
    info!(
        "{}: final score {final_score:.2}, reported score {:.2}",
        method.name(),
        summary["score"].as_f64().unwrap_or(f64::NAN)
    );
    let mut text = serde_json::to_string_pretty(&summary).expect("summary is serializable");
    text.push('\n');
    out.add("summary.json", text);
    out.add("train.json", command_manifest(eff, "train"));
    report_written(&out.commit()?);
    Ok(())
}

fn suite(eff: &Effective) -> CliResult<ExitCode> {
    let cfg = &eff.cfg.suite;
    cfg.validate().ctx("[suite]")?;
    let report = run_comparison(cfg).ctx("running the suite")?;
    let table = report.render_table();
    print!("{table}");
    let mut out = Outputs::new(&eff.out);
    out.add("results.csv", report.to_csv());
    out.add("results.txt", table);
    out.add("suite.json", command_manifest(eff, "suite"));
    if eff.format == Format::Svg && !report.cells.is_empty() {
        let rows: Vec<ScoreRow> = report
            .cells
            .iter()
            .map(|c| ScoreRow {
                method: c.method.name().to_string(),
                env: c.env.clone(),
                seed: c.seed,
                score: c.score,
            })
            .collect();
        out.add("scores.svg", scores_svg(&rows).map_err(Failure::runtime)?);
        for env in &report.envs {
            if let Some(svg) = curves_svg(&report.cells, env).map_err(Failure::runtime)? {
                out.add(&format!("curves-{env}.svg"), svg);
            }
        }
    }
    report_written(&out.commit()?);
    if report.cells.is_empty() {
        return Err(Failure::runtime(anyhow::anyhow!("every suite cell failed")));
    }
    if !report.failures.is_empty() {
        warn!("{} of {} cells failed", report.failures.len(), report.failures.len() + report.cells.len());
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(eff: &Effective) -> CliResult<()> {
    let dir = eff.input_dir();
    let mdp_path = dir.join(MDP_FILE);
    let mdp = parse_mdp(&read_input(&mdp_path)?).ctx(mdp_path.display())?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let policy_path = eff.cfg.eval.policy.clone().unwrap_or_else(|| dir.join("policy.txt"));
    let table = parse_table_of_kind(&read_input(&policy_path)?, "policy").ctx(policy_path.display())?;
    if table.shape() != (ns, na) {
        return Err(Failure::validation(format!("{} does not match the MDP", policy_path.display())));
    }
    let policy = Policy::new(table).ctx(policy_path.display())?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let temp = if manifest_path.exists() {
        Manifest::from_json(&read_input(&manifest_path)?)
            .ctx(manifest_path.display())?
            .data
            .expert_inverse_temperature
    } else {
        eff.cfg.data.expert_inverse_temperature
    };
    let expert = expert_policy(&mdp, temp).ctx("computing the expert policy")?;
    let ret = evaluate_policy(&mdp, &policy, mdp.true_reward(), EvalMode::Exact).ctx("evaluating")?.mean;
    let expert_ret = policy_return(&mdp, &expert, mdp.true_reward()).ctx("expert return")?;
    let random_ret = policy_return(&mdp, &Policy::uniform(ns, na), mdp.true_reward()).ctx("random return")?;
    let score = normalized_score(ret, random_ret, expert_ret).ctx("normalizing")?;

    let reward_path = match &eff.cfg.eval.reward {
        Some(p) => Some(p.clone()),
        None => Some(dir.join("reward.txt")).filter(|p| p.exists()),
    };
    let (mut pearson, mut spearman) = (String::new(), String::new());
    if let Some(path) = reward_path {
        let rhat = parse_table_of_kind(&read_input(&path)?, "reward").ctx(path.display())?;
        let (p, s) = reward_correlation(&rhat, &mdp, &expert, &eff.cfg.eval.probe).ctx("probing the reward")?;
        info!("reward correlation: pearson {p:.4}, spearman {s:.4}");
        pearson = p.to_string();
        spearman = s.to_string();
    }
    info!("return {ret:.6}, normalized score {score:.2}");
    if eff.format == Format::Svg {
        info!("eval writes csv only; use `plot` for figures");
    }
    let csv = format!(
        "policy,return,score,pearson,spearman\n{},{ret},{score},{pearson},{spearman}\n",
        policy_path.display()
    );
    print!("{csv}");
    let mut out = Outputs::new(&eff.out);
    out.add("eval.csv", csv);
    report_written(&out.commit()?);
    Ok(())
}

fn parse_diagnostics(text: &str) -> CliResult<Diagnostics> {
    let mut d = Diagnostics::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Failure::validation(format!("diagnostics line {}: {e}", i + 1)))?;
        let it = v["iteration"].as_u64().unwrap_or(0) as usize;
        if let Some(score) = v.get("score").and_then(|s| s.as_f64()) {
            d.evaluations.push((it, score));
        } else if let Some(obj) = v.get("objective").and_then(|s| s.as_f64()) {
            d.objective.push(obj);
            d.iterations = d.iterations.max(it);
        } else {
            return Err(Failure::validation(format!("diagnostics line {} has no objective or score", i + 1)));
        }
    }
    Ok(d)
}

fn plot(eff: &Effective) -> CliResult<()> {
    let results = eff.cfg.plot.results.clone().unwrap_or_else(|| eff.out.join("results.csv"));
    let diagnostics = eff.cfg.plot.diagnostics.clone().unwrap_or_else(|| eff.out.join("diagnostics.jsonl"));
    let explicit = eff.cfg.plot.results.is_some() || eff.cfg.plot.diagnostics.is_some();
    if !results.exists() && !diagnostics.exists() {
        return Err(Failure::validation(format!(
            "nothing to plot: neither {} nor {} exists",
            results.display(),
            diagnostics.display()
        )));
    }
    if eff.format == Format::Csv && explicit {
        info!("plot always writes svg");
    }
    let mut out = Outputs::new(&eff.out);
    if results.exists() {
        let text = read_input(&results)?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows = reader
            .deserialize::<ScoreRow>()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::validation(format!("{}: {e}", results.display())))?;
        out.add("scores.svg", scores_svg(&rows).map_err(Failure::runtime)?);
    }
    if diagnostics.exists() {
        let d = parse_diagnostics(&read_input(&diagnostics)?)?;
        for (name, svg) in training_svgs(&d).map_err(Failure::runtime)? {
            let name = if name == "scores.svg" { "training-scores.svg".to_string() } else { name };
            out.add(&name, svg);
        }
    }
    report_written(&out.commit()?);
    Ok(())
}
