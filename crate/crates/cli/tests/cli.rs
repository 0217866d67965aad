use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stg_core::fixtures;
use stg_core::io::GraphDocument;
use tempfile::TempDir;

fn stg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stg"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("toy.json"), fixtures::toy_record().to_json()).unwrap();
    std::fs::write(dir.path().join("b461.json"), fixtures::biamonti_461_record().to_json()).unwrap();
    dir
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn solver() -> Option<PathBuf> {
    stg_core::repair::SolverConfig::locate(None).ok().map(|s| s.path)
}

#[test]
fn ingest_validate_augment_compress() {
    let dir = setup();
    let d = dir.path();
    ok(&stg(d, &["ingest", "toy.json", "--out", "a"]));
    ok(&stg(d, &["validate", "a/toy.stg.json", "--out", "v"]));
    ok(&stg(d, &["augment", "a/toy.stg.json", "--dot", "--out", "b"]));
    assert!(std::fs::read_to_string(d.join("b/toy.dot")).unwrap().starts_with("digraph"));
    ok(&stg(d, &["compress", "b/toy.aug.json", "--out", "c"]));
    let a = GraphDocument::from_json(&std::fs::read_to_string(d.join("a/toy.stg.json")).unwrap()).unwrap();
    let c = GraphDocument::from_json(&std::fs::read_to_string(d.join("c/toy.stg.json")).unwrap()).unwrap();
    assert_eq!(a.to_stg().unwrap().without_intervals().edges(), c.to_stg().unwrap().edges());
    ok(&stg(d, &["ingest", "b461.json", "--levels", "segmentation,key", "--out", "lv"]));
    let lv = GraphDocument::from_json(&std::fs::read_to_string(d.join("lv/b461.stg.json")).unwrap()).unwrap();
    assert_eq!(lv.to_stg().unwrap().levels().len(), 2);
}

#[test]
fn distance_writes_csv_and_manifest() {
    let dir = setup();
    let d = dir.path();
    let out = stg(d, &["distance", "toy.json", "toy.json", "--seed", "3", "--out", "dist"]);
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0");
    let csv = std::fs::read_to_string(d.join("dist/distance.csv")).unwrap();
    assert_eq!(csv, "a,b,distance\ntoy,toy,0.0\n");
    let m = manifest(&d.join("dist"));
    assert_eq!(m["command"], "distance");
    assert_eq!(m["seed"], 3);
    assert_eq!(m["inputs"]["toy.json"].as_str().unwrap().len(), 64);
    assert!(m["outputs"]["distance.csv"].is_string());
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(stg(d, &["validate", "bad.json", "--out", "x"]).status.code(), Some(3));
    assert_eq!(stg(d, &["validate", "missing.json", "--out", "x"]).status.code(), Some(3));
    std::fs::write(d.join("bad.toml"), "seed = \"seven\"").unwrap();
    assert_eq!(stg(d, &["--config", "bad.toml", "validate", "toy.json"]).status.code(), Some(2));
    assert_eq!(stg(d, &["no-such-command"]).status.code(), Some(2));
    // A repair stage with a missing solver fails before any compute.
    let out = stg(
        d,
        &["centroid", "toy.json", "toy.json", "--repair", "--solver", "/nonexistent/z3", "--out", "r"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("r/centroid.matrix.json").exists());
}

#[test]
fn invalid_graph_reports_violations() {
    let dir = setup();
    let d = dir.path();
    ok(&stg(d, &["augment", "toy.json", "--out", "a"]));
    let path = d.join("a/toy.aug.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    doc["edges"].as_array_mut().unwrap().pop();
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = stg(d, &["validate", "a/toy.aug.json", "--out", "v"]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("v/validation.json")).unwrap()).unwrap();
    assert!(!report["violations"].as_array().unwrap().is_empty());
}

#[test]
fn mantel_on_matrices() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("a.csv"), "p,q,r,s\n0,1,2,3\n1,0,4,5\n2,4,0,6\n3,5,6,0\n").unwrap();
    std::fs::write(d.join("b.csv"), "p,q,r,s\n0,2,4,6\n2,0,8,10\n4,8,0,12\n6,10,12,0\n").unwrap();
    let out = stg(d, &["mantel", "a.csv", "b.csv", "--out", "m"]);
    ok(&out);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("m/mantel.json")).unwrap()).unwrap();
    assert_eq!(r["rho"], 1.0);
    assert_eq!(r["exact"], true);
}

#[test]
fn synth_centroid_mine_and_replay() {
    let dir = setup();
    let d = dir.path();
    ok(&stg(d, &["synth", "--base", "toy.json", "--k", "3", "--seed", "5", "--out", "s"]));
    let corpus = d.join("s/corpus");
    assert_eq!(std::fs::read_dir(&corpus).unwrap().count(), 3);
    let mut args = vec!["centroid", "s/corpus", "--seed", "9", "--out", "c"];
    if solver().is_some() {
        args.push("--repair");
    }
    ok(&stg(d, &args));
    let trace = std::fs::read_to_string(d.join("c/trace.csv")).unwrap();
    let best: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    let centroid = if solver().is_some() { "c/centroid.json" } else { "s/base.json" };
    ok(&stg(d, &["mine", "s/corpus", "--size", "4", "--centroid", centroid, "--out", "mine"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("mine/mine.json")).unwrap()).unwrap();
    assert!(report["containment"]["percent"].as_f64().is_some());

    for run in ["s", "c", "mine"] {
        let out = stg(d, &["replay", &format!("{run}/manifest.json"), "--out", &format!("{run}-replay")]);
        ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("identical"));
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = setup();
    let d = dir.path();
    ok(&stg(d, &["synth", "--base", "toy.json", "--k", "4", "--seed", "1", "--out", "s"]));
    ok(&stg(d, &["distance-matrix", "s/corpus", "--workers", "1", "--out", "w1"]));
    ok(&stg(d, &["distance-matrix", "s/corpus", "--workers", "4", "--out", "w4"]));
    assert_eq!(manifest(&d.join("w1"))["outputs"], manifest(&d.join("w4"))["outputs"]);
}

#[test]
fn tampered_output_fails_replay() {
    let dir = setup();
    let d = dir.path();
    ok(&stg(d, &["distance", "toy.json", "toy.json", "--out", "x"]));
    let path = d.join("x/manifest.json");
    let mut m = manifest(&d.join("x"));
    m["outputs"]["distance.csv"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&path, m.to_string()).unwrap();
    assert_eq!(stg(d, &["replay", "x/manifest.json"]).status.code(), Some(5));
}

#[test]
fn pipeline_config_runs_steps() {
    let dir = setup();
    let d = dir.path();
    let extra = if solver().is_some() { "" } else { r#", "--no-repair""# };
    std::fs::write(
        d.join("run.toml"),
        format!(
            r#"seed = 11

[centroid]
steps = 200

[pipeline]
steps = [
  ["distance", "toy.json", "toy.json"],
  ["study", "centroid-error", "--base", "toy.json", "--ks", "3"{extra}],
]
"#
        ),
    )
    .unwrap();
    let out = stg(d, &["run", "run.toml", "--out", "p"]);
    ok(&out);
    assert!(d.join("p/01-distance/distance.csv").exists());
    let rows = std::fs::read_to_string(d.join("p/02-study/centroid-error.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    let trace = std::fs::read_to_string(d.join("p/02-study/centroid-trace.csv")).unwrap();
    let best: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(!best.is_empty() && best.windows(2).all(|w| w[1] <= w[0]));
    let m = manifest(&d.join("p"));
    assert_eq!(m["command"], "run");
    assert_eq!(m["config"]["centroid"]["steps"], 200);
    ok(&stg(d, &["replay", "p/manifest.json", "--out", "p2"]));
}

#[test]
fn ablation_study_writes_one_matrix_per_depth() {
    let dir = setup();
    let d = dir.path();
    for s in 0..3u64 {
        let g = fixtures::random_stg(s, &fixtures::RandomRecordConfig::default());
        std::fs::write(d.join(format!("r{s}.json")), GraphDocument::from_stg(&format!("r{s}"), &g).to_json()).unwrap();
    }
    ok(&stg(d, &["study", "ablation", "r0.json", "r1.json", "r2.json", "--out", "ab"]));
    for keep in 1..=5 {
        assert!(d.join(format!("ab/ablation-keep{keep}.csv")).exists());
    }
}
