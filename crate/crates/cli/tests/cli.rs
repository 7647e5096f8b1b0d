use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_radarnomaly"));
    c.env("RADARNOMALY_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small corpus and a short training schedule keep these runs quick.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn small_corpus(&self) -> PathBuf {
        let cfg = self.path("synth.json");
        let mut v: Value = serde_json::from_str(&default_synth_json()).unwrap();
        v["tracks_per_session"] = json!([24, 16, 12, 12]);
        std::fs::write(&cfg, v.to_string()).unwrap();
        let out = self.path("corpus");
        ok(&["gen", "--config", s(&cfg), "--seed", "7", "--out", s(&out)]);
        out
    }

    fn quick_config(&self) -> PathBuf {
        let p = self.path("quick.json");
        let cfg = json!({"train": {"max_epochs": 3, "min_plots": 100, "min_windows": 50}});
        std::fs::write(&p, cfg.to_string()).unwrap();
        p
    }

    fn model(&self, corpus: &Path) -> PathBuf {
        let m = self.path("model.json");
        ok(&["train", "--corpus", s(corpus), "--config", s(&self.quick_config()), "--out", s(&m)]);
        m
    }
}

fn default_synth_json() -> String {
    radarnomaly::synth::SynthConfig::default_radar(7).to_json()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn gen_writes_four_sessions_reproducibly() {
    let f = Fixture::new();
    let (a, b) = (f.path("a"), f.path("b"));
    ok(&["gen", "--seed", "42", "--out", s(&a)]);
    ok(&["gen", "--seed", "42", "--out", s(&b)]);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["R1.ndjson", "R2.ndjson", "R3.ndjson", "R4.ndjson"]);
    for n in &names {
        assert_eq!(read(&a.join(n)), read(&b.join(n)), "{n}");
    }
}

#[test]
fn gen_rejects_bad_config_naming_the_field() {
    let f = Fixture::new();
    let mut v: Value = serde_json::from_str(&default_synth_json()).unwrap();
    v["flip_probability"] = json!(1.5);
    let cfg = f.path("bad.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = run(&["gen", "--config", s(&cfg), "--out", s(&f.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flip_probability"));
}

#[test]
fn train_attack_eval_monitor_bench() {
    let f = Fixture::new();
    let corpus = f.small_corpus();
    let model = f.model(&corpus);

    // file contract and determinism
    let m: Value = serde_json::from_slice(&read(&model)).unwrap();
    for key in ["field", "timing"] {
        assert!(m[key].is_object(), "{key}");
    }
    let th = m["thresholds"].as_object().unwrap();
    assert!(th.values().all(Value::is_f64));
    let again = f.path("again.json");
    ok(&["train", "--corpus", s(&corpus), "--config", s(&f.quick_config()), "--out", s(&again)]);
    assert_eq!(read(&model), read(&again));

    // manipulation test set, scored by the stored model
    let t = f.path("manip.ndjson");
    ok(&["attack", "--corpus", s(&corpus), "--kind", "manipulate", "--feature", "objectType", "--out", s(&t)]);
    let lines = String::from_utf8(read(&t)).unwrap();
    let labels: Vec<u64> = lines
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["label"].as_u64().unwrap())
        .collect();
    assert_eq!(labels.iter().sum::<u64>() * 2, labels.len() as u64);
    ok(&["eval", "--model", s(&model), "--testset", s(&t), "--out", s(&f.path("ev"))]);
    let ev: Value = serde_json::from_slice(&read(&f.path("ev/eval.json"))).unwrap();
    assert_eq!(ev["attack"], "manipulate:objectType");
    assert_eq!(ev["level"], "track");

    let d = f.path("drop.ndjson");
    ok(&["attack", "--corpus", s(&corpus), "--kind", "drop", "--c", "3", "--k", "5", "--out", s(&d)]);
    ok(&["eval", "--model", s(&model), "--testset", s(&d), "--out", s(&f.path("evd"))]);
    let ev: Value = serde_json::from_slice(&read(&f.path("evd/eval.json"))).unwrap();
    assert_eq!(ev["level"], "plot");

    // monitor over the drop stream: alerts valid, none before plot K
    let alerts_path = f.path("alerts.ndjson");
    ok(&["monitor", "--model", s(&model), "--input", s(&d), "--out", s(&alerts_path)]);
    for l in String::from_utf8(read(&alerts_path)).unwrap().lines() {
        let a: Value = serde_json::from_str(l).unwrap();
        assert!(a["score"].as_f64().unwrap() > a["threshold"].as_f64().unwrap());
        if a["kind"] == "TIMING" {
            assert!(a["plot_index"].as_u64().unwrap() >= 5);
        }
    }

    // mismatched schema aborts
    let mut schema = radarnomaly::FeatureSchema::default_radar();
    schema.numerical.push("extra".into());
    let sp = f.path("schema.json");
    std::fs::write(&sp, schema.to_json()).unwrap();
    let out = run(&["monitor", "--model", s(&model), "--schema", s(&sp), "--input", s(&d)]);
    assert_eq!(out.status.code(), Some(2));

    let out = ok(&["bench", "--model", s(&model), "--corpus", s(&corpus)]);
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["mean_latency_us", "p99_latency_us", "plots_per_sec"] {
        assert!(b[key].as_f64().unwrap() > 0.0, "{key}");
    }
}

#[test]
fn monitor_skips_malformed_lines() {
    let f = Fixture::new();
    let corpus = f.small_corpus();
    let model = f.model(&corpus);
    let r4 = String::from_utf8(read(&corpus.join("R4.ndjson"))).unwrap();
    let mut input: Vec<&str> = r4.lines().collect();
    input.insert(3, "{not json");
    input.insert(7, r#"{"session":"R4"}"#);
    let p = f.path("in.ndjson");
    std::fs::write(&p, input.join("\n")).unwrap();
    let out = ok(&["monitor", "--model", s(&model), "--input", s(&p)]);
    let stats: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(stats["malformed"], 2);
    assert_eq!(stats["plots"].as_u64().unwrap() as usize, r4.lines().count());
}

#[test]
fn battery_writes_reports() {
    let f = Fixture::new();
    let corpus = f.small_corpus();
    let out = f.path("bat");
    ok(&[
        "eval",
        "--corpus",
        s(&corpus),
        "--setup",
        "cross",
        "--session",
        "R1",
        "--attack",
        "manipulate:alertRaised",
        "--config",
        s(&f.quick_config()),
        "--out",
        s(&out),
    ]);
    for name in ["report.json", "roc.csv", "prc.csv", "summary.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("setup,attack,experiments,avg_auc,avg_ap,avg_tpr,avg_fpr"));
    assert!(summary.contains("cross_session,manipulate:alertRaised,1,"));
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let missing = f.path("nope.ndjson");
    let out = run(&["train", "--corpus", s(&missing), "--out", s(&f.path("m.json"))]);
    assert_eq!(out.status.code(), Some(4));

    let mut v: Value = serde_json::from_str(&default_synth_json()).unwrap();
    v["tracks_per_session"] = json!([3, 2]);
    let cfg = f.path("tiny.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    ok(&["gen", "--config", s(&cfg), "--out", s(&f.path("tiny"))]);
    let out = run(&["train", "--corpus", s(&f.path("tiny")), "--out", s(&f.path("m.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(&["attack", "--corpus", s(&f.path("tiny")), "--kind", "manipulate", "--feature", "nope", "--out", s(&f.path("t"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["attack", "--corpus", s(&f.path("tiny")), "--kind", "manipulate", "--out", s(&f.path("t"))]);
    assert_eq!(out.status.code(), Some(2));
}
