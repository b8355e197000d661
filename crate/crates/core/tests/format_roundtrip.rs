mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use sprinql::data::{build_ranked_datasets, make_gridworld, DatasetSpec, GridworldConfig};
use sprinql::format::{
    diagnostics_jsonl, parse_dataset, parse_mdp, parse_table_of_kind, write_dataset, write_mdp, write_table, Manifest,
};
use sprinql::objective::{train_on_expectations, SprinqlConfig};
use sprinql::{ReferenceReward, Table};

#[test]
fn random_mdps_round_trip_bit_exactly() {
    let mut r = rng(51);
    for _ in 0..50 {
        let ns = r.gen_range(1..8);
        let na = r.gen_range(1..5);
        let gamma = r.gen_range(0.0..0.999);
        let mdp = random_mdp(&mut r, ns, na, gamma);
        let text = write_mdp(&mdp);
        let back = parse_mdp(&text).unwrap();
        assert_eq!(back, mdp);
        assert_eq!(write_mdp(&back), text);
    }
}

#[test]
fn generated_datasets_round_trip_with_manifest() {
    let grid = GridworldConfig::default();
    let mdp = make_gridworld(&grid).unwrap();
    let spec = DatasetSpec {
        sizes: vec![300, 600, 900],
        ..DatasetSpec::default()
    };
    let data = build_ranked_datasets(&mdp, &spec).unwrap();
    let text = write_dataset(&data);
    let back = parse_dataset(&text).unwrap();
    assert_eq!(back, data);
    assert_eq!(write_dataset(&back), text);

    let manifest = Manifest::describe(&data, &mdp, &spec, Some(&grid));
    let parsed = Manifest::from_json(&manifest.to_json()).unwrap();
    assert_eq!(parsed, manifest);
    parsed.check(&back).unwrap();
}

#[test]
fn manifest_rejects_mismatched_dataset() {
    let mdp = make_gridworld(&GridworldConfig::default()).unwrap();
    let spec = DatasetSpec {
        sizes: vec![100, 100, 100],
        ..DatasetSpec::default()
    };
    let data = build_ranked_datasets(&mdp, &spec).unwrap();
    let mut manifest = Manifest::describe(&data, &mdp, &spec, None);
    manifest.level_sizes[0] += 1;
    assert!(manifest.check(&data).is_err());
}

#[test]
fn diagnostics_are_one_json_object_per_line() {
    let mut r = rng(52);
    let mdp = random_mdp(&mut r, 3, 2, 0.9);
    let exp = random_expectations(&mut r, &mdp);
    let cfg = SprinqlConfig {
        iterations: 40,
        evaluations: 4,
        ..SprinqlConfig::default()
    };
    let mut hook = |_: &sprinql::Policy| 1.0;
    let out = train_on_expectations(&exp, &ReferenceReward(Table::zeros(3, 2)), &cfg, Some(&mut hook)).unwrap();
    let text = diagnostics_jsonl(&out.diagnostics);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), out.diagnostics.objective.len() + out.diagnostics.evaluations.len());
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.get("iteration").is_some());
    }
}

proptest! {
    #[test]
    fn tables_round_trip_bit_exactly(
        rows in 1usize..6,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let t = Table::from_fn(rows, cols, |_, _| {
            let bits: u64 = r.gen();
            let x = f64::from_bits(bits);
            if x.is_finite() { x } else { r.gen_range(-1e300..1e300) }
        });
        let text = write_table("q", &t);
        let back = parse_table_of_kind(&text, "q").unwrap();
        prop_assert!(back.as_slice().iter().zip(t.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
