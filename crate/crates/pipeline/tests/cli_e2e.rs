//! Drives the whole CLI over a generated dataset and checks that every stage
//! leaves a well-formed artifact behind.

use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_partctx"))
        .args(args)
        .status()
        .expect("binary runs");
    assert!(status.success(), "stage failed: partctx {}", args.join(" "));
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_leaves_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");

    run(&["synth-gen", "--out", path_str(&raw), "--seed", "7", "--num-images", "40", "--sigma-app", "0.4"]);
    for name in [
        "images.jsonl",
        "objects.jsonl",
        "parts.jsonl",
        "part_proposals.jsonl",
        "object_proposals.jsonl",
        "part_scores.jsonl",
        "object_scores.jsonl",
        "object_features.jsonl",
        "manifest.jsonl",
    ] {
        assert!(raw.join(name).exists(), "missing {name}");
    }

    run(&["preprocess", "--data", path_str(&raw), "--out", path_str(&data)]);
    assert!(data.join("catalog.json").exists());

    std::fs::create_dir_all(&run_dir).unwrap();
    std::fs::copy(data.join("catalog.json"), run_dir.join("catalog.json")).unwrap();

    run(&["priors", "--data", path_str(&data), "--run", path_str(&run_dir)]);
    run(&["train-regressor", "--data", path_str(&data), "--run", path_str(&run_dir)]);
    run(&["train-combiner", "--data", path_str(&data), "--run", path_str(&run_dir)]);
    run(&["score", "--data", path_str(&data), "--run", path_str(&run_dir)]);
    run(&["fit-mix", "--data", path_str(&data), "--run", path_str(&run_dir)]);
    run(&["detect", "--data", path_str(&data), "--run", path_str(&run_dir)]);
    run(&[
        "eval",
        "--data",
        path_str(&data),
        "--run",
        path_str(&run_dir),
        "--coverage",
        "--pr-csv",
        path_str(&run_dir.join("pr.csv")),
    ]);
    for name in [
        "priors.json",
        "regressor.json",
        "combiner.json",
        "initial_scores.json",
        "rl_scores.json",
        "mix_weights.json",
        "detections.jsonl",
        "eval.json",
        "eval.txt",
        "coverage.json",
        "pr.csv",
        "config.json",
    ] {
        assert!(run_dir.join(name).exists(), "missing {name}");
    }

    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("eval.json")).unwrap()).unwrap();
    let map = eval["mean_ap"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map), "mean ap {map}");
    assert!(!eval["per_class"].as_object().unwrap().is_empty());

    let heatmap = run_dir.join("wheel.pgm");
    run(&[
        "heatmap",
        "--data",
        path_str(&data),
        "--run",
        path_str(&run_dir),
        "--image",
        "0",
        "--class",
        "wheel",
        "--out",
        path_str(&heatmap),
        "--grid",
        "32",
    ]);
    let bytes = std::fs::read(&heatmap).unwrap();
    assert!(bytes.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(bytes.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
}
