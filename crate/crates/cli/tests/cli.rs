use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn bikvil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bikvil"))
        .args(args)
        .env_remove("BIKVIL_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn dir_hash(dir: &Path) -> Vec<u8> {
    let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        h.update(n.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&n).unwrap());
    }
    h.finalize().to_vec()
}

fn generate(dir: &TempDir, name: &str, task: &str, seed: &str) -> PathBuf {
    let out = path(dir, name);
    let r = bikvil(&["generate", "--task", task, "--demos", "7", "--seed", seed, "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn extract(dir: &TempDir, set: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let graph = path(dir, name);
    let mut args = extra.to_vec();
    args.extend(["extract", "--in", s(set), "--out", s(&graph)]);
    let r = bikvil(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    graph
}

#[test]
fn generate_is_deterministic_and_writes_ground_truth() {
    let dir = TempDir::new().unwrap();
    let a = generate(&dir, "a", "pour", "42");
    let b = generate(&dir, "b", "pour", "42");
    assert_eq!(dir_hash(&a), dir_hash(&b));
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["demos"].as_array().unwrap().len(), 7);
    let truth = json(&a.join("ground_truth.json"));
    assert_eq!(truth["ground_truth"]["task"], "pour");
    assert_eq!(truth["meta"]["seed"], 42);
    assert_eq!(truth["meta"]["scenario"]["n_demos"], 7);
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "x");
    assert_eq!(code(&bikvil(&["generate", "--task", "pour", "--demos", "1", "--out", s(&out)])), 2);
    assert_eq!(code(&bikvil(&["generate", "--task", "juggle", "--demos", "3", "--out", s(&out)])), 2);
    assert_eq!(code(&bikvil(&["--set", "no-equals", "generate", "--task", "pour", "--demos", "3", "--out", s(&out)])), 2);
    assert_eq!(code(&bikvil(&["frobnicate"])), 2);
}

#[test]
fn extract_classifies_coordination_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let pour = generate(&dir, "pour", "pour", "3");
    let g1 = extract(&dir, &pour, "g1.json", &[]);
    let g2 = extract(&dir, &pour, "g2.json", &[]);
    assert_eq!(std::fs::read(&g1).unwrap(), std::fs::read(&g2).unwrap());
    assert_eq!(json(&g1)["coordination"]["value"], "loosely_coupled");
    let report = std::fs::read_to_string(g1.with_extension("txt")).unwrap();
    assert!(report.contains("coordination: loosely_coupled"));
    assert!(report.contains("evidence:"));

    let pair = generate(&dir, "pair", "uncoordinated_pair", "3");
    let g = extract(&dir, &pair, "pair.json", &[]);
    assert_eq!(json(&g)["coordination"]["value"], "uncoordinated_bimanual");
}

#[test]
fn config_file_env_fallback_and_overrides_reach_the_graph_meta() {
    let dir = TempDir::new().unwrap();
    let set = generate(&dir, "set", "unimanual", "1");
    let cfg = path(&dir, "cfg.toml");
    std::fs::write(&cfg, "[hmsr]\nend_fraction = 0.2\n\n[geomcon]\nbudget = 2\n").unwrap();

    let g = extract(&dir, &set, "g.json", &["--config", s(&cfg), "--set", "geomcon.budget=1"]);
    let meta = &json(&g)["meta"]["config"];
    assert_eq!(meta["hmsr"]["end_fraction"], 0.2);
    assert_eq!(meta["geomcon"]["budget"], 1);

    let graph = path(&dir, "env.json");
    let r = Command::new(env!("CARGO_BIN_EXE_bikvil"))
        .args(["extract", "--in", s(&set), "--out", s(&graph)])
        .env("BIKVIL_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    assert_eq!(json(&graph)["meta"]["config"]["geomcon"]["budget"], 2);

    let unknown = bikvil(&["--set", "hmsr.bogus=1", "extract", "--in", s(&set), "--out", s(&graph)]);
    assert_eq!(code(&unknown), 1);
    let range = bikvil(&["--set", "hmsr.end_fraction=2.0", "extract", "--in", s(&set), "--out", s(&graph)]);
    assert_eq!(code(&range), 1);
    assert!(String::from_utf8_lossy(&range.stderr).contains("[hmsr]"));
}

#[test]
fn missing_input_exits_1() {
    let dir = TempDir::new().unwrap();
    let r = bikvil(&["extract", "--in", s(&path(&dir, "absent")), "--out", s(&path(&dir, "g.json"))]);
    assert_eq!(code(&r), 1);
}

#[test]
fn reproduce_exit_codes() {
    let dir = TempDir::new().unwrap();
    let set = generate(&dir, "set", "pour", "42");
    let graph = extract(&dir, &set, "g.json", &[]);
    let scene = path(&dir, "scene.json");
    let r = bikvil(&["export-scene", "--task", "pour", "--seed", "1", "--out", s(&scene)]);
    assert_eq!(code(&r), 0);

    let log = path(&dir, "log.json");
    let r = bikvil(&["reproduce", "--graph", s(&graph), "--scene", s(&scene), "--out", s(&log), "--seed", "1"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stdout));
    let written = json(&log);
    assert_eq!(written["converged"], true);
    assert!(written["meta"]["config"]["bikac"].is_object());

    let r = bikvil(&["reproduce", "--graph", s(&graph), "--scene", s(&scene), "--out", s(&log), "--horizon", "0"]);
    assert_eq!(code(&r), 3);
    let written = json(&log);
    assert_eq!(written["converged"], false);
    assert_eq!(written["log"]["n_steps"], 0);

    let mut partial = json(&scene);
    let bodies = partial["bodies"].as_array_mut().unwrap();
    bodies.retain(|b| b["category"] != "kettle" && b["attached_to"] != "kettle");
    let reduced = path(&dir, "reduced.json");
    std::fs::write(&reduced, partial.to_string()).unwrap();
    let r = bikvil(&["reproduce", "--graph", s(&graph), "--scene", s(&reduced), "--out", s(&log)]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("kettle"));
}

#[test]
fn evaluate_scores_against_truth() {
    let dir = TempDir::new().unwrap();
    let set = generate(&dir, "set", "place_on", "2");
    let graph = extract(&dir, &set, "g.json", &[]);
    let report = path(&dir, "eval.json");
    let r = bikvil(&["evaluate", "--graph", s(&graph), "--truth", s(&set), "--out", s(&report)]);
    assert_eq!(code(&r), 0);
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.starts_with("run"));
    let e = json(&report);
    let run = &e["runs"][0]["evaluation"];
    assert_eq!(run["precision"], 1.0);
    assert_eq!(run["recall"], 1.0);
    assert_eq!(run["coordination_match"], true);
    assert_eq!(e["aggregate"]["n_runs"], 1);

    let other = generate(&dir, "other", "pour", "2");
    let r = bikvil(&["evaluate", "--graph", s(&graph), "--truth", s(&other)]);
    assert_eq!(code(&r), 1);
    let r = bikvil(&["evaluate", "--graph", s(&graph), s(&graph), "--truth", s(&set)]);
    assert_eq!(code(&r), 2);
}
