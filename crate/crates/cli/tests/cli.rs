use std::path::Path;
use std::process::{Command, Output};

fn dyadica(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadica")).args(args).current_dir(dir).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn forms_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = dyadica(&["forms", "--identity", "all", "--depth", "4", "--seed", "3", "--report", name], dir.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (mut a, mut b) = (json(&dir.path().join("a.json")), json(&dir.path().join("b.json")));
    assert_eq!(a["hash"], b["hash"]);
    a["timestamp"] = 0.into();
    b["timestamp"] = 0.into();
    assert_eq!(a, b);
    assert!(a["result"]["checked"].as_array().unwrap().iter().all(|c| c["holds"] == true));
}

#[test]
fn measure_gen_then_constants_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (seed, file) in [("42", "s.json"), ("43", "w.json")] {
        let out = dyadica(&["measure", "gen", "--kind", "cascade", "--beta", "0.25", "--depth", "5", "--seed", seed, "-o", file], d);
        assert_eq!(out.status.code(), Some(0));
    }
    std::fs::write(d.join("k.json"), r#"{"family":"hilbert","lambda":0,"delta":0.05,"R":1.0}"#).unwrap();
    let out = dyadica(
        &["constants", "--spec", "k.json", "--sigma", "s.json", "--omega", "w.json", "--p", "2", "--starts", "3", "--iterations", "20", "--report", "c.csv"],
        d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "name,value,kind,family,witness,seed"));
    assert!(csv.lines().any(|l| l.starts_with("norm,")));
    assert!(!csv.contains(",false"));
}

#[test]
fn malformed_measure_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), r#"{"n":1,"depth":3,"atoms":[{"x":[0.1],"mass":1}]}"#).unwrap();
    let out = dyadica(&["measure", "report", "--measure", "m.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("atoms[0].m"));
}

#[test]
fn bad_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dyadica(&["counterexample", "--p", "2"], dir.path()).status.code(), Some(2));
    assert_eq!(dyadica(&["verify-all", "--only", "12"], dir.path()).status.code(), Some(2));
    assert_eq!(dyadica(&["square", "--kind", "haar"], dir.path()).status.code(), Some(2));
}

#[test]
fn corona_on_uniform_passes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = dyadica(&["measure", "gen", "--kind", "uniform", "--depth", "4", "-o", "m.json"], d);
    assert_eq!(out.status.code(), Some(0));
    let f: Vec<f64> = (0..16).map(|k| if k == 3 { 50.0 } else { 1.0 }).collect();
    std::fs::write(d.join("f.json"), serde_json::to_string(&f).unwrap()).unwrap();
    let ok = dyadica(&["corona", "--measure", "m.json", "--f", "f.json", "--report", "c.json"], d);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(json(&d.join("c.json"))["result"]["quantitative"]["failures"], serde_json::json!([]));
}

#[test]
fn verify_all_subset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dyadica(&["verify-all", "--depth", "5", "--seed", "1", "--only", "4,6,10", "--report", "v.json"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
    let v = json(&dir.path().join("v.json"));
    assert_eq!(v["config"]["seed"], 1);
}
