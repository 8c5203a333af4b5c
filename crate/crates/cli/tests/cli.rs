use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SPEC: &str = "F (car_stops & F door_opens)";

fn tlvq(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlvq"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tlvq(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_scenario(dir: &Path, name: &str, events: &str) {
    let doc = format!(
        r#"{{"frame_count": 400, "dim": 32, "fps": 2.0, "background_similarity": 0.1,
            "scene_length": 40, "events": [{events}]}}"#
    );
    fs::write(dir.join(name), doc).unwrap();
}

fn two_events(dir: &Path) {
    write_scenario(
        dir,
        "sc.json",
        r#"{"proposition": "car_stops", "start_frame": 100, "end_frame": 130, "similarity": 0.5},
           {"proposition": "door_opens", "start_frame": 250, "end_frame": 270, "similarity": 0.5}"#,
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_labels_and_reproducibility() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    write_scenario(
        p,
        "one.json",
        r#"{"proposition": "p1", "start_frame": 100, "end_frame": 120, "similarity": 0.5}"#,
    );
    ok(p, &["--kappa", "10", "synth", "--scenario", "one.json", "--trace", "a.bin", "--labels", "a.json"]);
    ok(p, &["--kappa", "10", "synth", "--scenario", "one.json", "--trace", "b.bin", "--labels", "b.json"]);
    assert_eq!(fs::read(p.join("a.bin")).unwrap(), fs::read(p.join("b.bin")).unwrap());
    assert_eq!(fs::read(p.join("a.json")).unwrap(), fs::read(p.join("b.json")).unwrap());
    let labels = json(&p.join("a.json"));
    let true_windows: Vec<usize> = labels["labels"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, row)| row[0].as_bool().unwrap())
        .map(|(w, _)| w)
        .collect();
    assert_eq!(true_windows, vec![10, 11, 12]);

    write_scenario(p, "empty.json", "");
    ok(p, &["synth", "--scenario", "empty.json", "--trace", "e.bin", "--labels", "e.json"]);
    let rows = json(&p.join("e.json"))["labels"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 25);
    assert!(rows.iter().all(|r| r.as_array().unwrap().is_empty()));
}

#[test]
fn stage_chain_matches_run() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    two_events(p);
    ok(p, &["synth", "--scenario", "sc.json", "--trace", "tr.bin", "--labels", "lab.json"]);
    ok(p, &["sample", "--trace", "tr.bin", "--spec", SPEC, "--out", "rep.json"]);
    ok(p, &["ground", "--spec", SPEC, "--report", "rep.json", "--scenario", "sc.json", "--out", "m.json"]);
    ok(p, &["check", "--spec", SPEC, "--matrix", "m.json", "--out", "c1.json"]);
    ok(p, &["export-automaton", "--matrix", "m.json", "--out", "a.dtmc"]);
    ok(p, &["check", "--spec", SPEC, "--automaton", "a.dtmc", "--out", "c2.json"]);
    assert_eq!(json(&p.join("c1.json")), json(&p.join("c2.json")));

    ok(p, &["run", "--spec", SPEC, "--trace", "tr.bin", "--scenario", "sc.json", "--out", "run.json"]);
    let run = json(&p.join("run.json"));
    let check = json(&p.join("c1.json"));
    assert_eq!(run["checker"], check);
    assert_eq!(run["sampling"], json(&p.join("rep.json")));
    assert_eq!(run["segments"]["segments"].as_array().unwrap().len(), 2);
    assert_eq!(run["degraded"], Value::Bool(false));
}

#[test]
fn run_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    two_events(p);
    let a = ok(p, &["--seed", "5", "run", "--spec", SPEC, "--scenario", "sc.json"]);
    let b = ok(p, &["--seed", "5", "run", "--spec", SPEC, "--scenario", "sc.json"]);
    assert_eq!(a, b);
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    two_events(p);
    assert_eq!(tlvq(p, &["run", "--spec", "F (", "--scenario", "sc.json"]).status.code(), Some(2));
    assert_eq!(tlvq(p, &["--mode", "fast", "run", "--spec", "F a"]).status.code(), Some(2));
    assert_eq!(tlvq(p, &["run", "--spec", "F ghost", "--scenario", "sc.json"]).status.code(), Some(4));
    assert_eq!(tlvq(p, &["run", "--query", "when?", "--scenario", "sc.json"]).status.code(), Some(2));
    assert_eq!(tlvq(p, &["sample", "--trace", "missing.bin", "--spec", "F a"]).status.code(), Some(2));

    let cfg = r#"{"backends": {"detector": "remote", "remote": {"endpoint": "http://127.0.0.1:9", "attempts": 1, "timeout_ms": 500}}}"#;
    fs::write(p.join("remote.json"), cfg).unwrap();
    let out = tlvq(p, &["--config", "remote.json", "run", "--spec", SPEC, "--scenario", "sc.json"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = r#"{"backends": {"answerer": "remote", "remote": {"endpoint": "http://127.0.0.1:9", "attempts": 1, "timeout_ms": 500}}}"#;
    fs::write(p.join("remote.json"), cfg).unwrap();
    let out = tlvq(p, &["--config", "remote.json", "run", "--spec", SPEC, "--scenario", "sc.json"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn disabled_optimisations_recover_sequential_counts() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    two_events(p);
    let seq: Value =
        serde_json::from_str(&ok(p, &["--mode", "sequential", "run", "--spec", SPEC, "--scenario", "sc.json"])).unwrap();
    let ad: Value = serde_json::from_str(&ok(
        p,
        &["--tau-s", "-1", "--tau-r", "1.1", "--batch", "1", "run", "--spec", SPEC, "--scenario", "sc.json"],
    ))
    .unwrap();
    assert_eq!(seq["grounding"]["passes"], ad["grounding"]["passes"]);
    assert_eq!(seq["grounding"]["passes"], Value::from(25 * 2));
}

#[test]
fn bench_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let table = ok(
        p,
        &["bench", "--lengths", "30,120", "--event-fractions", "0.8,0.4", "--json", "b.json", "--csv", "b.csv"],
    );
    assert!(table.contains("sequential") && table.contains("+ multi-segment"));
    let csv = fs::read_to_string(p.join("b.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
    let rep = json(&p.join("b.json"));
    assert_eq!(rep["rows"].as_array().unwrap().len(), 8);
    assert_eq!(rep["ablation"].as_array().unwrap().len(), 4);
    assert_eq!(
        tlvq(p, &["bench", "--lengths", "30", "--event-fractions", "0.8,0.4"]).status.code(),
        Some(2)
    );
}

#[test]
fn translate_without_translator_normalises_specs() {
    let d = tempfile::tempdir().unwrap();
    let out: Value = serde_json::from_str(&ok(d.path(), &["translate", "--query", "G(!a | F b)"])).unwrap();
    assert_eq!(out["propositions"], serde_json::json!(["a", "b"]));
    let again: Value =
        serde_json::from_str(&ok(d.path(), &["translate", "--query", out["spec"].as_str().unwrap()])).unwrap();
    assert_eq!(again, out);
    assert_eq!(tlvq(d.path(), &["translate", "--query", "is the door open?"]).status.code(), Some(2));
}
