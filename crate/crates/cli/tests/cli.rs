use std::path::PathBuf;
use std::process::{Command, Output};

fn system(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "systems", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastslow")).args(args).output().unwrap()
}

fn json(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn reduce_prints_the_slow_flow() {
    let out = run(&["reduce", &system("intro.fsys")]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("F1(x) = -2*x1"), "{text}");
}

#[test]
fn check_passes_on_the_counterexample_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("check.json");
    let o = run(&["check", &system("counterexample.fsys"), "--epsilon", "0.05", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    assert_eq!(report["all_pass"], true);
    let manifest = json(&dir.path().join("check.json.manifest.json"));
    assert_eq!(manifest["command"], "check");
    assert_eq!(manifest["output_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["epsilon"], 0.05);
}

#[test]
fn failing_hypothesis_exits_with_one() {
    let o = run(&["check", &system("intro.fsys")]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["all_pass"], false);
}

#[test]
fn census_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("census{jobs}.json"));
        let o = run(&["census", &system("counterexample.fsys"), "--samples", "40", "--tmax", "60", "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn simulate_writes_csv() {
    let o = run(&["simulate", &system("intro.fsys"), "--ic", "-0.5,0.2", "--tmax", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,y1"));
    assert_eq!(lines.next(), Some("0,-0.5,0.2"));
}

#[test]
fn bad_input_exits_with_one() {
    assert_eq!(run(&["reduce", "/nonexistent.fsys"]).status.code(), Some(1));
    assert_eq!(run(&["census", &system("intro.fsys"), "--frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["census", &system("intro.fsys"), "--epsilon", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_system_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.fsys");
    let good = std::fs::read_to_string(system("intro.fsys")).unwrap();
    std::fs::write(&path, good.replace("f1 = \"", "f1 = \"((")).unwrap();
    let o = run(&["reduce", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line") && err.contains("f1"), "{err}");
}
