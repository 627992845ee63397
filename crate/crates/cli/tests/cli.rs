use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tensormix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensormix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key}= in output:\n{out}"))
}

const CP_BG: &str = r#"
alpha = 0.9
max_iterations = 200
seed = 4

[[component]]
kind = "cp"
ranks = [2]

[[component]]
kind = "background"
ranks = []
"#;

fn write(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

#[test]
fn synth_fit_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let o = tensormix(
        d,
        &["synth", "--kind", "cp", "--shape", "4,3,5", "--rank", "2", "--bg", "0.1", "--seed", "7", "--n", "400", "--out", "s.csv", "--out-true", "true.json"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(d.join("s.csv")).unwrap().lines().count(), 401);

    write(d, "cfg.toml", CP_BG);
    let o = tensormix(
        d,
        &["fit", "--data", "s.csv", "--config", "cfg.toml", "--shape", "4,3,5", "--out-model", "m.json", "--out-trace", "t.jsonl"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let iterations: usize = value(&out, "iterations").parse().unwrap();
    let trace = fs::read_to_string(d.join("t.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), iterations + 1);

    let o = tensormix(d, &["eval", "--model", "m.json", "--data", "s.csv", "--shape", "4,3,5"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mean: f64 = value(&out, "nll_mean").parse().unwrap();
    // never worse than the uniform distribution on 60 cells by much
    assert!(mean.is_finite() && mean < (60f64).ln() + 0.1, "{mean}");
}

#[test]
fn categorical_fit_and_classify() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let mut csv = String::from("color,size,label\n");
    for i in 0..60 {
        let (c, l) = if i % 2 == 0 { ("red", "yes") } else { ("blue", "no") };
        let s = ["s", "m", "l"][i % 3];
        csv.push_str(&format!("{c},{s},{l}\n"));
    }
    write(d, "train.csv", &csv);
    write(d, "cfg.toml", CP_BG);
    let o = tensormix(d, &["fit", "--data", "train.csv", "--config", "cfg.toml", "--out-model", "m.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = fs::read_to_string(d.join("m.json")).unwrap();
    assert!(model.contains("\"red\""));

    write(d, "features.csv", "color,size\nred,m\nblue,l\n");
    let o = tensormix(d, &["classify", "--model", "m.json", "--data", "features.csv"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(value(&out, "prediction.1"), "yes");
    assert_eq!(value(&out, "prediction.2"), "no");

    let o = tensormix(d, &["classify", "--model", "m.json", "--data", "train.csv", "--out", "pred.csv"]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "accuracy"), "1");
    assert_eq!(fs::read_to_string(d.join("pred.csv")).unwrap().lines().count(), 61);

    // unseen category
    write(d, "bad.csv", "color,size,label\ngreen,m,yes\n");
    let o = tensormix(d, &["eval", "--model", "m.json", "--data", "bad.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown category"));
}

#[test]
fn zero_mass_sample_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(
        d,
        "m.json",
        r#"{"format": "e2m-model v1", "shape": [2, 2], "weights": [1.0],
            "components": [{"kind": "cp", "rank": 1, "factors": [[[1.0], [0.0]], [[0.5], [0.5]]]}]}"#,
    );
    write(d, "ok.csv", "0,1
0,0
");
    let o = tensormix(d, &["eval", "--model", "m.json", "--data", "ok.csv", "--no-header"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "nll_mean"), format!("{}", 2f64.ln()));

    write(d, "bad.csv", "0,1
1,0
");
    let o = tensormix(d, &["eval", "--model", "m.json", "--data", "bad.csv", "--no-header"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("data row 2"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(tensormix(d, &["fit"]).status.code(), Some(1));
    assert_eq!(tensormix(d, &["nonsense"]).status.code(), Some(1));
    assert_eq!(tensormix(d, &["--help"]).status.code(), Some(0));
    assert_eq!(tensormix(d, &["--version"]).status.code(), Some(0));

    let o = tensormix(d, &["eval", "--model", "missing.json", "--data", "missing.csv"]);
    assert_eq!(o.status.code(), Some(2));

    write(d, "s.csv", "0,0\n1,1\n");
    write(d, "cfg.toml", "alpha = 1.5\n[[component]]\nkind = \"cp\"\nranks = [1]\n");
    let o = tensormix(d, &["fit", "--data", "s.csv", "--shape", "2,2", "--config", "cfg.toml", "--out-model", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));

    write(d, "junk.json", "{\"format\": \"something else\"}");
    let o = tensormix(d, &["eval", "--model", "junk.json", "--data", "s.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reconstruct_dense_grid() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    // rank-one outer product of (1,2,3) and (1,1)
    write(d, "grid.txt", "3x2\n1 1\n2 2\n3 3\n");
    write(d, "cfg.toml", "alpha = 0.5\nmax_iterations = 2000\ntolerance = 1e-15\n[[component]]\nkind = \"cp\"\nranks = [1]\n");
    let o = tensormix(d, &["reconstruct", "--dense", "grid.txt", "--config", "cfg.toml", "--out-trace", "t.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let objective: f64 = value(&stdout(&o), "objective").parse().unwrap();
    assert!(objective.abs() < 1e-9, "{objective}");
}

#[test]
fn grid_search_writes_report() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    for (name, n, seed) in [("train.csv", 300, "1"), ("valid.csv", 100, "2"), ("test.csv", 100, "3")] {
        let o = tensormix(
            d,
            &["synth", "--kind", "cp", "--shape", "3,3,2", "--rank", "2", "--seed", seed, "--n", &n.to_string(), "--out", name],
        );
        assert!(o.status.success());
    }
    write(
        d,
        "grid.toml",
        "alphas = [0.5, 1.0]\nrepeats = 2\nmax_iterations = 60\nbackground = true\n[[structure]]\nkind = \"cp\"\nranks = [1, 2]\n",
    );
    let o = tensormix(
        d,
        &["grid", "--train", "train.csv", "--valid", "valid.csv", "--test", "test.csv", "--grid", "grid.toml", "--shape", "3,3,2", "--out-report", "r.json", "--out-table", "r.csv", "--jobs", "2"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert_eq!(value(&out, "cells"), "4");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 8);
    assert!(fs::read_to_string(d.join("r.csv")).unwrap().lines().count() > 8);
}

#[test]
fn background_only_toy_fit() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    write(d, "toy.csv", "a,b\nx,u\nx,v\ny,u\ny,u\n");
    write(d, "cfg.toml", "alpha = 0.5\n[[component]]\nkind = \"background\"\nranks = []\n");
    let o = tensormix(d, &["fit", "--data", "toy.csv", "--config", "cfg.toml", "--out-model", "m.json", "--out-trace", "t.jsonl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(value(&stdout(&o), "eta"), "1");
    assert_eq!(fs::read_to_string(d.join("t.jsonl")).unwrap().lines().count(), 2);
}

#[test]
fn synth_is_deterministic_under_seed() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let args = |out: &'static str| {
        ["synth", "--kind", "cp", "--shape", "8,8,8,8,8", "--rank", "8", "--bg", "0.10", "--seed", "1", "--n", "1000", "--out", out]
    };
    assert!(tensormix(d, &args("a.csv")).status.success());
    assert!(tensormix(d, &args("b.csv")).status.success());
    let a = fs::read_to_string(d.join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 1001);
    assert_eq!(a, fs::read_to_string(d.join("b.csv")).unwrap());
}

#[test]
fn fit_outputs_repeat_and_trace_is_monotone() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let o = tensormix(d, &["synth", "--kind", "tt", "--shape", "4,4,4", "--rank", "2", "--seed", "5", "--n", "300", "--out", "s.csv"]);
    assert!(o.status.success());
    write(d, "cfg.toml", "alpha = 0.3\nmax_iterations = 150\nseed = 9\n[[component]]\nkind = \"tt\"\nranks = [2, 2]\n[[component]]\nkind = \"background\"\nranks = []\n");
    let run = |model: &str, trace: &str| {
        tensormix(d, &["fit", "--data", "s.csv", "--shape", "4,4,4", "--config", "cfg.toml", "--out-model", model, "--out-trace", trace])
    };
    let a = run("a.json", "a.jsonl");
    let b = run("b.json", "b.jsonl");
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    let objectives: Vec<f64> = fs::read_to_string(d.join("a.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["objective"].as_f64().unwrap())
        .collect();
    assert!(objectives.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}
