use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sprinql::eval::{prepare, run_cell, Method, SuiteConfig};
use sprinql::format::{parse_dataset, parse_table_of_kind, Manifest};
use sprinql::{ReferenceReward, WeightVector};
use tempfile::TempDir;

fn sprinql(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sprinql"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

/// Small datasets and short training so a full pipeline finishes quickly.
const SMALL: &str = r#"
[data]
sizes = [200, 1000, 2000]

[reference]
iterations = 500

[objective]
iterations = 300
evaluations = 20
"#;

fn pipeline(dir: &Path, cfg: &str, seed: &str) {
    for cmd in ["gen-data", "fit-reference"] {
        ok(&sprinql(&[cmd, "--config", cfg, "--seed", seed], dir));
    }
}

#[test]
fn gen_data_writes_three_levels_and_a_matching_manifest() {
    let tmp = TempDir::new().unwrap();
    ok(&sprinql(&["gen-data"], tmp.path()));
    let data = parse_dataset(&fs::read_to_string(tmp.path().join("dataset.txt")).unwrap()).unwrap();
    assert_eq!(data.n_levels(), 3);
    let manifest = Manifest::from_json(&fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
    manifest.check(&data).unwrap();
    assert_eq!(Manifest::from_json(&manifest.to_json()).unwrap(), manifest);
    assert_eq!(manifest.extra["seed"], 0);
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        ok(&sprinql(&["gen-data", "--seed", "9"], d.path()));
    }
    for f in ["mdp.txt", "dataset.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = TempDir::new().unwrap();
    ok(&sprinql(&["gen-data", "--seed", "10"], c.path()));
    assert_ne!(fs::read(a.path().join("dataset.txt")).unwrap(), fs::read(c.path().join("dataset.txt")).unwrap());
}

#[test]
fn non_increasing_noise_is_rejected_before_writing() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[data]\nnoise_levels = [0.0, 0.5, 0.5]\n");
    let out_dir = tmp.path().join("out");
    let out = sprinql(&["gen-data", "--config", &cfg], &out_dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_keys_are_validation_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[objective]\nalpah = 1.0\n");
    assert_eq!(sprinql(&["train", "--config", &cfg], tmp.path()).status.code(), Some(1));
}

#[test]
fn fit_reference_ranks_levels() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    pipeline(tmp.path(), &cfg, "0");
    let data = parse_dataset(&fs::read_to_string(tmp.path().join("dataset.txt")).unwrap()).unwrap();
    let r = parse_table_of_kind(&fs::read_to_string(tmp.path().join("reference.txt")).unwrap(), "reference").unwrap();
    let means = ReferenceReward(r).level_means(&data);
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    let w = parse_table_of_kind(&fs::read_to_string(tmp.path().join("weights.txt")).unwrap(), "weights").unwrap();
    let w = WeightVector::new(w.into_vec()).unwrap();
    assert!(w.as_slice()[0] > w.as_slice()[1]);
    let trace = fs::read_to_string(tmp.path().join("loss_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,loss\n"));
    assert!(!tmp.path().join("reference-levels.svg").exists());
    ok(&sprinql(&["fit-reference", "--config", &cfg, "--format", "svg"], tmp.path()));
    assert!(fs::read_to_string(tmp.path().join("reference-levels.svg")).unwrap().contains("level 3"));
}

#[test]
fn fit_reference_input_errors() {
    let tmp = TempDir::new().unwrap();
    let missing = sprinql(&["fit-reference"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));

    ok(&sprinql(&["gen-data"], tmp.path()));
    let cfg = write_config(tmp.path(), "[reference]\niterations = 0\n");
    assert_eq!(sprinql(&["fit-reference", "--config", &cfg], tmp.path()).status.code(), Some(1));
}

#[test]
fn divergent_fit_exits_with_runtime_error_and_keeps_trace() {
    let tmp = TempDir::new().unwrap();
    ok(&sprinql(&["gen-data"], tmp.path()));
    let cfg = write_config(tmp.path(), "[reference]\nstep_size = 1e6\niterations = 500\n");
    let out = sprinql(&["fit-reference", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("loss_trace.csv").exists());
    assert!(!tmp.path().join("reference.txt").exists());
}

#[test]
fn train_writes_artifacts_for_each_learning_method() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    pipeline(tmp.path(), &cfg, "0");
    for method in ["sprinql", "noreg", "nodm"] {
        let cfg = write_config(tmp.path(), &format!("{SMALL}\n[train]\nmethod = \"{method}\"\n"));
        let out = sprinql(&["train", "--config", &cfg], tmp.path());
        ok(&out);
        for f in ["q.txt", "policy.txt", "reward.txt", "diagnostics.jsonl", "summary.json"] {
            assert!(tmp.path().join(f).exists(), "{method}: {f}");
        }
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["method"], method);
        assert!(summary["final_score"].as_f64().unwrap().is_finite());
        if method == "noreg" {
            assert!(String::from_utf8_lossy(&out.stderr).contains("overriding alpha"));
        }
    }
}

#[test]
fn unknown_method_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[train]\nmethod = \"sac\"\n");
    let out = sprinql(&["train", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));
}

const SUITE: &str = r#"
[suite]
methods = ["sprinql", "bc-e", "w-bc"]
seeds = [0, 1]

[suite.reference]
iterations = 300

[suite.objective]
alpha = 0.03
beta = 0.03
reference_scale = 100.0
iterations = 200
evaluations = 20

[[suite.envs]]
name = "small"
[suite.envs.grid]
width = 4
height = 4
goals = [{ x = 3, y = 3, reward = 1.0 }]
"#;

#[test]
fn suite_is_reproducible_and_plots() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SUITE);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&sprinql(&["suite", "--config", &cfg, "--format", "svg", "--jobs", "2"], &a));
    ok(&sprinql(&["suite", "--config", &cfg, "--jobs", "1"], &b));
    let csv = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("results.csv")).unwrap());
    assert_eq!(csv.lines().next().unwrap(), "method,env,seed,score,pearson,spearman,wall_s");
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(fs::read_to_string(a.join("scores.svg")).unwrap().starts_with("<svg"));
    assert!(a.join("curves-small.svg").exists());
    assert!(!b.join("scores.svg").exists());

    ok(&sprinql(&["plot"], &b));
    assert!(fs::read_to_string(b.join("scores.svg")).unwrap().contains("normalized score"));
}

#[test]
fn suite_with_a_broken_environment_is_partial() {
    let tmp = TempDir::new().unwrap();
    let broken = format!(
        "{SUITE}\n[[suite.envs]]\nname = \"flat\"\n[suite.envs.grid]\nwidth = 4\nheight = 4\ngoals = [{{ x = 3, y = 3, reward = 0.0 }}]\n"
    );
    let cfg = write_config(tmp.path(), &broken);
    let out = sprinql(&["suite", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let table = fs::read_to_string(tmp.path().join("results.txt")).unwrap();
    assert!(table.contains("failed: sprinql on flat seed 0"));

    let only_broken = write_config(
        tmp.path(),
        "[suite]\nmethods = [\"bc-e\"]\nseeds = [0]\n[[suite.envs]]\nname = \"flat\"\n[suite.envs.grid]\nwidth = 4\nheight = 4\ngoals = [{ x = 3, y = 3, reward = 0.0 }]\n",
    );
    assert_eq!(sprinql(&["suite", "--config", &only_broken], tmp.path()).status.code(), Some(2));
}

#[test]
fn pipeline_reproduces_the_matching_suite_cell() {
    let tmp = TempDir::new().unwrap();
    let cfg_text = r#"
[env]
width = 4
height = 4
goals = [{ x = 3, y = 3, reward = 1.0 }]

[data]
sizes = [200, 2000, 5000]
noise_levels = [0.0, 0.3, 0.6]

[reference]
iterations = 300

[objective]
alpha = 0.03
beta = 0.03
reference_scale = 100.0
iterations = 200
evaluations = 20
"#;
    let cfg = write_config(tmp.path(), cfg_text);
    pipeline(tmp.path(), &cfg, "4");
    ok(&sprinql(&["train", "--config", &cfg, "--seed", "4"], tmp.path()));
    ok(&sprinql(&["eval", "--config", &cfg, "--seed", "4"], tmp.path()));

    let parsed: toml::Table = toml::from_str(cfg_text).unwrap();
    let suite = SuiteConfig {
        envs: vec![sprinql::eval::EnvSpec {
            name: "small".into(),
            grid: parsed["env"].clone().try_into().unwrap(),
        }],
        data: parsed["data"].clone().try_into().unwrap(),
        reference: parsed["reference"].clone().try_into().unwrap(),
        objective: parsed["objective"].clone().try_into().unwrap(),
        ..SuiteConfig::default()
    };
    let prep = prepare(&suite.envs[0], 4, &suite).unwrap();
    let cell = run_cell(Method::Sprinql, &suite.envs[0], 4, &prep, &suite).unwrap();

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["score"].as_f64().unwrap() - cell.score).abs() < 1e-9);
    let eval = fs::read_to_string(tmp.path().join("eval.csv")).unwrap();
    let row: Vec<&str> = eval.lines().nth(1).unwrap().split(',').collect();
    let pearson: f64 = row[3].parse().unwrap();
    assert!((pearson - cell.pearson.unwrap()).abs() < 1e-9);
}

#[test]
fn plot_without_inputs_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(sprinql(&["plot"], tmp.path()).status.code(), Some(1));
}
