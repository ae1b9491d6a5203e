//! Drives the `gnnmoe` binary end to end on small synthetic graphs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnnmoe"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gnnmoe")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path.as_ref()).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 120-node SBM; `extra` flags go to `generate-sbm`.
fn dataset(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.path().join(name);
    let mut args = vec!["generate-sbm", "--nodes", "120", "--features", "8", "--out", p(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

const QUICK: [&str; 6] = ["--hidden", "8", "--epochs", "8", "--patience", "100"];

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", p(data), "--out", p(out), "--seeds", "0..1"];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(extra);
    ok(&args);
}

fn accuracies(results: &Value) -> Vec<(f64, f64, f64)> {
    results["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["test_acc"].as_f64().unwrap(), r["val_acc"].as_f64().unwrap(), r["train_acc"].as_f64().unwrap()))
        .collect()
}

#[test]
fn train_writes_results_metrics_routing_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &[]);
    let out = tmp.path().join("run");
    train(&data, &out, &[]);

    let results = json(out.join("results.json"));
    assert_eq!(results["rows"].as_array().unwrap().len(), 2);
    for key in ["mean_test_acc", "std_test_acc", "mean_val_acc", "std_val_acc"] {
        let v = results[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    for (test, val, train) in accuracies(&results) {
        assert!([test, val, train].iter().all(|a| (0.0..=1.0).contains(a)));
    }

    let manifest = json(out.join("manifest.json"));
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["dataset"]["nodes"], 120);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for f in ["results.json", "routing.csv", "seed_0/metrics.csv", "seed_1/routing.csv"] {
        assert!(outputs.contains(&f), "{f} missing from {outputs:?}");
    }
    for f in &outputs {
        assert!(out.join(f).is_file(), "{f} listed but not written");
    }

    let metrics = fs::read_to_string(out.join("seed_0/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,task_loss,route_loss,total_loss,train_acc,val_acc,hr_selection\n"));
    assert_eq!(metrics.lines().count(), 1 + 8);
}

#[test]
fn default_config_is_echoed_into_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &[]);
    let out = tmp.path().join("run");
    ok(&["train", "--data", p(&data), "--out", p(&out), "--seeds", "0", "--epochs", "1"]);
    let cfg = &json(out.join("manifest.json"))["config"];
    assert_eq!(cfg["model"]["hidden"], 64);
    assert_eq!(cfg["model"]["blocks"], 2);
    assert_eq!(cfg["patience"], 100);
    assert_eq!(cfg["lambda"], 0.01);
}

#[test]
fn no_route_loss_variant_equals_lambda_zero() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &["--p-in", "0.01", "--p-out", "0.05"]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a, &["--lambda", "0"]);
    train(&data, &b, &["--variant", "no-route-loss"]);
    assert_eq!(accuracies(&json(a.join("results.json"))), accuracies(&json(b.join("results.json"))));
    for f in ["seed_0/metrics.csv", "seed_1/metrics.csv", "routing.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &[]);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    train(&data, &a, &[]);
    train(&data, &b, &[]);
    for f in ["results.json", "routing.csv", "seed_0/metrics.csv", "seed_1/routing.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablate_runs_all_six_variants_in_one_invocation() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &[]);
    let out = tmp.path().join("ablate");
    let mut args = vec!["ablate", "--data", p(&data), "--out", p(&out), "--seeds", "0"];
    args.extend_from_slice(&QUICK);
    ok(&args);
    let results = json(out.join("results.json"));
    let variants = results["variants"].as_array().unwrap();
    let names: Vec<&str> = variants.iter().map(|v| v["variant"].as_str().unwrap()).collect();
    assert_eq!(names, ["no-sr", "no-effn", "no-hr", "no-ares", "no-route-loss", "delta-tau"]);
    assert!(variants.iter().all(|v| v["rows"].as_array().unwrap().len() == 1));
    let no_sr = fs::read_to_string(out.join("no-sr/routing.csv")).unwrap();
    assert!(no_sr.lines().skip(1).all(|l| l.ends_with(",0.25")));
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let out = run(&["ablate", "--data", "x", "--out", "y", "--variant", "no-such"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--data", "x", "--out", "y", "--variant", "full,no-sr"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_routing_emits_every_router() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &[]);
    let out = tmp.path().join("cmp");
    let mut args = vec!["compare-routing", "--data", p(&data), "--out", p(&out), "--seeds", "0"];
    args.extend_from_slice(&QUICK);
    ok(&args);
    let table = fs::read_to_string(out.join("comparison.csv")).unwrap();
    let routers: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(routers, ["soft", "mean", "top1", "top2", "top3", "dot-att"]);
    let mean = fs::read_to_string(out.join("mean/routing.csv")).unwrap();
    assert!(mean.lines().skip(1).all(|l| l.ends_with(",0.25")));

    let only = tmp.path().join("cmp2");
    let mut args = vec!["compare-routing", "--data", p(&data), "--out", p(&only), "--seeds", "0", "--topk", "2"];
    args.extend_from_slice(&QUICK);
    ok(&args);
    let table = fs::read_to_string(only.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
}

fn subspace_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn observe_subspaces_partitions_non_isolated_nodes() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "pure", &["--p-in", "0.1", "--p-out", "0"]);
    let out = tmp.path().join("obs");
    let mut args = vec!["observe-subspaces", "--data", p(&data), "--out", p(&out), "--seeds", "0"];
    args.extend_from_slice(&QUICK);
    args.extend_from_slice(&["--homophily-bins", "4", "--degree-bins", "2"]);
    ok(&args);
    let rows = subspace_rows(&out.join("subspaces.csv"));
    assert_eq!(rows.len(), 4 * 2);
    let mut total = 0;
    for r in &rows {
        assert_eq!(r.len(), 13);
        let nodes: usize = r[6].parse().unwrap();
        total += nodes;
        if nodes > 0 {
            assert_eq!(r[0], "3", "populated subspace outside the top homophily bin: {r:?}");
        }
        let tests: usize = r[7].parse().unwrap();
        assert_eq!(r[12].is_empty(), tests == 0);
        if tests > 0 {
            assert!(["PP", "PT", "TP", "TT"].contains(&r[12].as_str()));
        }
    }
    let manifest = json(data.join("manifest.json"));
    let edges = fs::read_to_string(data.join("edges.tsv")).unwrap();
    let mut touched = std::collections::BTreeSet::new();
    for line in edges.lines().filter(|l| !l.starts_with('#')) {
        for t in line.split_whitespace() {
            if let Ok(i) = t.parse::<usize>() {
                touched.insert(i);
            }
        }
    }
    assert_eq!(manifest["dataset"]["nodes"], 120);
    assert_eq!(total, touched.len());
}

#[test]
fn export_routing_pairs_runs_per_block() {
    let tmp = TempDir::new().unwrap();
    let data = dataset(&tmp, "sbm", &[]);
    let (a, b) = (tmp.path().join("lambda0"), tmp.path().join("lambda1"));
    train(&data, &a, &["--lambda", "0"]);
    train(&data, &b, &["--lambda", "1"]);
    let out = tmp.path().join("export");
    ok(&["export-routing", "--runs", p(&a), p(&b), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("routing_compare.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 4 * 2);
    for chunk in rows.chunks(4) {
        let sum: f64 = chunk.iter().map(|r| r[4].parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6, "{chunk:?}");
    }
    assert_eq!(rows[0][1], "0");
    assert_eq!(rows[8][1], "1");
}

#[test]
fn export_routing_rejects_missing_run_directory() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["export-routing", "--runs", p(&tmp.path().join("nope")), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_theory_is_reproducible_and_passes() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["verify-theory", "--instances", "5", "--seed", "7", "--out", p(dir)]);
    }
    let report = fs::read(a.join("theory_report.json")).unwrap();
    assert_eq!(report, fs::read(b.join("theory_report.json")).unwrap());
    let v: Value = serde_json::from_slice(&report).unwrap();
    assert_eq!(v["closed_form_matches"], 5);
    assert_eq!(v["corollary"]["violations"], 0);
}

#[test]
fn bad_flags_exit_with_usage_error() {
    for args in [
        vec!["train", "--data", "d", "--out", "o", "--prop", "mlp"],
        vec!["train", "--data", "d", "--out", "o", "--dropout", "1.5"],
        vec!["train", "--out", "o"],
        vec!["frobnicate"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn missing_dataset_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    let out = run(&["train", "--data", p(&tmp.path().join("none")), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
