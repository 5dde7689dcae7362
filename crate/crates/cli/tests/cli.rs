//! End-to-end tests of the command-line interface: exit codes, CSV
//! round trips, and the lattice fast path.

use std::path::PathBuf;
use std::process::Command;

use approx::assert_abs_diff_eq;

use lattice_bsde::bsde::solve;
use lattice_bsde::scenario::build_tree;
use lattice_bsde::{AdaptedField, Basis};
use lattice_bsde_cli::config::RunConfig;
use lattice_bsde_cli::output::{adapted_csv, adapted_from_csv, solution_from_csv};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lattice-bsde")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lattice-bsde-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin()).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

#[test]
fn missing_horizon_is_a_validation_error() {
    let dir = workdir("bad");
    let config = dir.join("config.json");
    std::fs::write(&config, r#"{"basis": {"vectors": [[1.0]]}}"#).unwrap();
    let (code, stderr) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(
        stderr.contains("horizon"),
        "diagnostic names the field: {stderr}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn oversized_tree_is_a_validation_error() {
    let dir = workdir("cap");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[0.0, -1.0], [1.0, 0.5]]},
  "horizon": 13,
  "driver": {"kind": "linear", "slope": [0.0, 0.0]},
  "payoff": {"kind": "linear", "weights": [1.0, 0.0]}
}"#,
    )
    .unwrap();
    let (code, stderr) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_maximizer_is_a_numerical_error() {
    let dir = workdir("noargmax");
    let config = dir.join("config.json");
    // A linear driver with nonzero slope is unbounded above.
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 2,
  "driver": {"kind": "linear", "slope": [0.5]},
  "payoff": {"kind": "linear", "weights": [1.0]}
}"#,
    )
    .unwrap();
    let (code, stderr) = run(&[
        "invest",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn declared_dimension_must_match() {
    let dir = workdir("dim");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"d": 2, "vectors": [[1.0]]},
  "horizon": 1,
  "driver": {"kind": "linear", "slope": [0.0]},
  "payoff": {"kind": "linear", "weights": [1.0]}
}"#,
    )
    .unwrap();
    let (code, _) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solution_csv_round_trips_and_passes_residual() {
    let dir = workdir("roundtrip");
    let config_text = r#"{
  "basis": {"vectors": [[0.0, -0.8164965809277261], [0.7071067811865476, 0.4082482904638631]]},
  "horizon": 3,
  "driver": {"kind": "entropic", "belief": [0.2, 0.5, 0.3], "risk_aversion": 1.1},
  "payoff": {"kind": "call", "weights": [1.0, -0.4], "strike": 0.2},
  "seed": 5
}"#;
    let config = dir.join("config.json");
    std::fs::write(&config, config_text).unwrap();
    let out = dir.join("out");
    let (code, stderr) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");

    // Re-import the CSV and check the backward equation residual.
    let parsed = RunConfig::parse(config_text).unwrap();
    let tree = parsed.build_tree().unwrap();
    let driver = parsed.require_driver(&tree).unwrap();
    let text = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    let solution = solution_from_csv(&tree, &text).unwrap();
    assert!(solution.max_residual(&tree, driver.as_ref()) < 1e-10);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn binomial_linear_config_gives_half() {
    // d=1, N=1, slope 0.5, terminal ∓1: Y₀ = 0.75·1 + 0.25·(−1) = 0.5.
    let dir = workdir("binomial");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"d": 1, "vectors": [[1.0]]},
  "horizon": 1,
  "driver": {"kind": "linear", "slope": [0.5]},
  "payoff": {"kind": "table", "values": [-1.0, 1.0]}
}"#,
    )
    .unwrap();
    let out = dir.join("out");
    let (code, stderr) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["y0"].as_f64(), Some(0.5));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn zero_driver_value_is_the_uniform_path_average() {
    let dir = workdir("uniform");
    let config_text = r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 3,
  "driver": {"kind": "linear", "slope": [0.0]},
  "payoff": {"kind": "table", "values": [3.0, -1.0, 2.0, 0.5, -2.0, 4.0, 1.0, 0.0]}
}"#;
    let config = dir.join("config.json");
    std::fs::write(&config, config_text).unwrap();
    let out = dir.join("out");
    let (code, _) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    // Leaf rows of the CSV average to Y₀ under the uniform measure.
    let text = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    let mut y0 = None;
    let mut leaves = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] == "0" {
            y0 = Some(fields[2].parse::<f64>().unwrap());
        } else if fields[0] == "3" {
            leaves.push(fields[2].parse::<f64>().unwrap());
        }
    }
    let average: f64 = leaves.iter().sum::<f64>() / leaves.len() as f64;
    assert_abs_diff_eq!(y0.unwrap(), average, epsilon = 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn markov_route_matches_tree_route() {
    let dir = workdir("markov");
    let base = r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 6,
  "driver": {"kind": "entropic", "belief": [0.3, 0.7], "risk_aversion": 0.9},
  "payoff": {"kind": "call", "weights": [1.0], "strike": 0.5},
  "markov": MARKOV
}"#;
    let mut values = Vec::new();
    for markov in ["false", "true"] {
        let config = dir.join(format!("config-{markov}.json"));
        std::fs::write(&config, base.replace("MARKOV", markov)).unwrap();
        let out = dir.join(format!("out-{markov}"));
        let (code, stderr) = run(&[
            "solve",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "stderr: {stderr}");
        let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
        values.push(parsed["y0"].as_f64().unwrap());
    }
    assert_abs_diff_eq!(values[0], values[1], epsilon = 1e-12);
    // The lattice route touches far fewer points than the tree has nodes.
    let summary = std::fs::read_to_string(dir.join("out-true").join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert!(parsed["evaluated_points"].as_u64().unwrap() < 64);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn markov_flag_requires_markov_data() {
    let dir = workdir("markov-bad");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 2,
  "driver": {"kind": "worstcase"},
  "payoff": {"kind": "linear", "weights": [1.0]},
  "markov": true
}"#,
    )
    .unwrap();
    let (code, _) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn measure_csv_round_trips_from_robust_output() {
    let dir = workdir("measure");
    let config_text = r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 3,
  "driver": {"kind": "entropic", "belief": [0.3, 0.7], "risk_aversion": 1.2},
  "payoff": {"kind": "call", "weights": [1.0], "strike": 0.0},
  "seed": 21
}"#;
    let config = dir.join("config.json");
    std::fs::write(&config, config_text).unwrap();
    let out = dir.join("out");
    let (code, stderr) = run(&[
        "robust",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    let parsed = RunConfig::parse(config_text).unwrap();
    let tree = parsed.build_tree().unwrap();
    let text = std::fs::read_to_string(out.join("measure.csv")).unwrap();
    let measure = lattice_bsde_cli::output::measure_from_csv(&tree, &text).unwrap();
    let total: f64 = measure.path_weights(&tree).iter().sum();
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn non_interior_reference_rejected() {
    let dir = workdir("badref");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 1,
  "reference": [1.0, 0.0],
  "driver": {"kind": "linear", "slope": [0.0]},
  "payoff": {"kind": "linear", "weights": [1.0]}
}"#,
    )
    .unwrap();
    let (code, _) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn adapted_field_csv_round_trip() {
    let tree = build_tree(Basis::from_vectors(&[vec![1.0]]).unwrap(), 3).unwrap();
    let field = AdaptedField::from_fn(&tree, |n, node| (n as f64) * 1.5 - (node as f64) * 0.25);
    let text = adapted_csv(&tree, &field);
    let back = adapted_from_csv(&tree, &text).unwrap();
    assert_eq!(field, back);
}

#[test]
fn equilibrium_artifacts_written() {
    let dir = workdir("equilibrium");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 2,
  "agents": [
    {"driver": {"kind": "entropic", "belief": [0.5, 0.5], "risk_aversion": 1.0},
     "endowment": {"kind": "table", "values": [0.0, 0.0, 0.0, 0.0]}}
  ],
  "supply": [[0.0], [0.0]],
  "seed": 9
}"#,
    )
    .unwrap();
    let out = dir.join("out");
    let (code, stderr) = run(&[
        "equilibrium",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(out.join("summary.json").exists());
    assert!(out.join("equilibrium.json").exists());
    assert!(out.join("strategies_agent_1.csv").exists());
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(parsed["is_equilibrium"].as_bool(), Some(true));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solve_with_zero_driver_config_parses_supconv() {
    // A sup-convolution driver spec builds and solves.
    let dir = workdir("supconv");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 2,
  "driver": {"kind": "supconv", "children": [
    {"kind": "entropic", "belief": [0.3, 0.7], "risk_aversion": 2.0},
    {"kind": "entropic", "belief": [0.3, 0.7], "risk_aversion": 2.0}
  ]},
  "payoff": {"kind": "linear", "weights": [1.0]}
}"#,
    )
    .unwrap();
    let out = dir.join("out");
    let (code, stderr) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    // Common belief: the convolution is entropic with γ = 1; compare
    // against the direct closed-form run.
    let tree = build_tree(Basis::from_vectors(&[vec![1.0]]).unwrap(), 2).unwrap();
    let spec = lattice_bsde::drivers::EntropicSpec::constant(&tree, &[0.3, 0.7], 1.0).unwrap();
    let driver = lattice_bsde::drivers::entropic_driver(&tree, spec).unwrap();
    let terminal: Vec<f64> = (0..4).map(|leaf| tree.position(2, leaf)[0]).collect();
    let expected = solve(&tree, &driver, &terminal).unwrap().value();
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_abs_diff_eq!(parsed["y0"].as_f64().unwrap(), expected, epsilon = 1e-6);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn zero_driver_reference_independence() {
    // The solved value ignores the reference kernel; the raw average
    // under the reference does not.
    let dir = workdir("reference");
    let template = r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 2,
  "reference": REF,
  "driver": {"kind": "linear", "slope": [0.0]},
  "payoff": {"kind": "table", "values": [4.0, 1.0, -3.0, 2.0]}
}"#;
    let mut y0s = Vec::new();
    let mut refs = Vec::new();
    for (tag, kernel) in [("uniform", "[0.5, 0.5]"), ("tilted", "[0.2, 0.8]")] {
        let config = dir.join(format!("config-{tag}.json"));
        std::fs::write(&config, template.replace("REF", kernel)).unwrap();
        let out = dir.join(format!("out-{tag}"));
        let (code, _) = run(&[
            "solve",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&summary).unwrap();
        y0s.push(parsed["y0"].as_f64().unwrap());
        refs.push(parsed["terminal_mean_reference"].as_f64().unwrap());
    }
    assert_abs_diff_eq!(y0s[0], y0s[1], epsilon = 1e-14);
    assert!((refs[0] - refs[1]).abs() > 0.1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn zero_driver_as_linear_with_unknown_field_rejected() {
    let dir = workdir("unknown");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "basis": {"vectors": [[1.0]]},
  "horizon": 1,
  "driver": {"kind": "linear", "slope": [0.0], "spurious": 1},
  "payoff": {"kind": "linear", "weights": [1.0]}
}"#,
    )
    .unwrap();
    let (code, _) = run(&[
        "solve",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    std::fs::remove_dir_all(&dir).ok();
}
