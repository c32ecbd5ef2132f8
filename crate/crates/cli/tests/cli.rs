use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tdo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdo")).args(args).output().expect("spawn tdo")
}

fn json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("no stdout")).expect("stdout is not JSON")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small instance plus a FLAT store built from it.
fn setup() -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "cfg.json");
    std::fs::write(&cfg, r#"{"n": 250, "seed": 9}"#).unwrap();
    let inst = p(dir.path(), "g.tdi");
    let out = tdo(&["generate", "--config", &cfg, "--out", &inst]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let store = p(dir.path(), "flat.tdo");
    let out = tdo(&["preprocess", "--instance", &inst, "--mode", "flat", "--out", &store, "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&out);
    assert_eq!(rep["mode"], "flat");
    assert!(rep["landmarks"].as_u64().unwrap() > 0);
    (dir, inst.into(), store.into())
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = p(dir.path(), "a.tdi");
    let b = p(dir.path(), "b.tdi");
    assert!(tdo(&["generate", "--out", &a, "--seed", "4"]).status.success());
    assert!(tdo(&["generate", "--out", &b, "--seed", "4"]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(tdo(&["verify", "--instance", &a]).status.code(), Some(0));
}

#[test]
fn queries_never_undercut_exact() {
    let (_dir, inst, store) = setup();
    let (i, s) = (inst.to_str().unwrap(), store.to_str().unwrap());
    for (o, d, t) in [("0", "120", "1.5"), ("17", "201", "7.25"), ("88", "3", "0")] {
        let base = ["query", "--instance", i, "--origin", o, "--dest", d, "--time", t];
        let exact = json(&tdo(&[&base[..], &["--algo", "tdd"]].concat()))["value"].as_f64().unwrap();
        let fca = json(&tdo(&[&base[..], &["--store", s, "--algo", "fca"]].concat()))["value"].as_f64().unwrap();
        let mut prev = fca;
        for r in ["0", "1", "2"] {
            let v = json(&tdo(&[&base[..], &["--store", s, "--algo", "rqa", "--budget", r]].concat()))["value"]
                .as_f64()
                .unwrap();
            assert!(v >= exact * (1.0 - 1e-9));
            assert!(v <= prev * (1.0 + 1e-12), "r = {r}: {v} > {prev}");
            prev = v;
        }
        assert!(fca >= exact * (1.0 - 1e-9));
    }
}

#[test]
fn mode_mismatch_and_bad_input() {
    let (_dir, inst, store) = setup();
    let (i, s) = (inst.to_str().unwrap(), store.to_str().unwrap());
    let out = tdo(&["query", "--instance", i, "--store", s, "--algo", "hqa", "--origin", "0", "--dest", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = tdo(&["query", "--instance", i, "--store", s, "--origin", "0", "--dest", "99999"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(tdo(&["query", "--instance", "/nonexistent.tdi", "--origin", "0", "--dest", "1"]).status.code(), Some(3));
    assert_eq!(tdo(&["nonsense"]).status.code(), Some(1));
    assert_eq!(tdo(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_detects_tampering() {
    let (dir, inst, store) = setup();
    let (i, s) = (inst.to_str().unwrap(), store.to_str().unwrap());
    let out = tdo(&["verify", "--instance", i, "--store", s]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["violations"], 0);

    // halve the value of the first summary breakpoint
    let text = std::fs::read_to_string(&store).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let at = lines.iter().position(|l| l.starts_with("dest ")).unwrap() + 1;
    let mut parts = lines[at].split_whitespace();
    let t = parts.next().unwrap().to_string();
    let val: f64 = parts.next().unwrap().parse().unwrap();
    lines[at] = format!("{t} {:.16e}", val * 0.5);
    let bad = p(dir.path(), "bad.tdo");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let out = tdo(&["verify", "--instance", i, "--store", &bad, "--checks", "100000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(json(&out)["violations"].as_u64().unwrap() > 0);
}

#[test]
fn bench_writes_reports() {
    let (dir, inst, store) = setup();
    let (i, s) = (inst.to_str().unwrap(), store.to_str().unwrap());
    let (js, csv) = (p(dir.path(), "b.json"), p(dir.path(), "b.csv"));
    let out = tdo(&["bench", "--instance", i, "--store", s, "--queries", "40", "--out", &js, "--csv", &csv]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["under_approximations"], 0);
    let full: Value = serde_json::from_str(&std::fs::read_to_string(&js).unwrap()).unwrap();
    assert_eq!(full["records"].as_array().unwrap().len(), 40);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 41);
}

#[test]
fn horn_and_traponly_preprocess() {
    let (dir, inst, _) = setup();
    let i = inst.to_str().unwrap();
    let h = p(dir.path(), "h.tdo");
    let out = tdo(&["preprocess", "--instance", i, "--mode", "horn", "--out", &h, "--delta", "0.8", "--xi", "0.1,0.2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let q = tdo(&["query", "--instance", i, "--store", &h, "--origin", "5", "--dest", "77", "--time", "2"]);
    assert!(q.status.success());
    let exact = json(&tdo(&["query", "--instance", i, "--algo", "tdd", "--origin", "5", "--dest", "77", "--time", "2"]));
    assert!(json(&q)["value"].as_f64().unwrap() >= exact["value"].as_f64().unwrap() * (1.0 - 1e-9));

    let t = p(dir.path(), "t.tdo");
    let out = tdo(&["preprocess", "--instance", i, "--mode", "traponly", "--out", &t]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let q = tdo(&["query", "--instance", i, "--store", &t, "--origin", "5", "--dest", "77", "--time", "2"]);
    assert!(q.status.success(), "{}", String::from_utf8_lossy(&q.stderr));
}
