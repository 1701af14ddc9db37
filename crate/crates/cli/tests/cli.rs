use std::path::PathBuf;
use std::process::{Command, Output};

use gwlab::BranchingModel;

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "fixtures", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn gw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gw")).args(args).env_remove("GW_THREADS").output().expect("gw runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn error_line(o: &Output) -> serde_json::Value {
    let line = stderr(o).lines().rev().find(|l| l.starts_with("{\"error\"")).expect("error line").to_string();
    serde_json::from_str(&line).unwrap()
}

/// Value of the first data row in the named column.
fn cell(csv: &str, column: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == column).unwrap();
    lines.next().unwrap().split(',').nth(j).unwrap().parse().unwrap()
}

#[test]
fn validate_model_b() {
    let o = gw(&["validate", &fixture("model_b.json")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["valid"], true);
    assert_eq!(v["diagnostics"]["positive_regular"], true);
    assert!(stderr(&o).lines().any(|l| l.starts_with("manifest {")));
}

#[test]
fn extinction_of_model_a() {
    let o = gw(&["extinction", &fixture("model_a.json")]);
    assert_eq!(o.status.code(), Some(0));
    let row = stdout(&o).lines().find(|l| l.starts_with("q,1,")).unwrap().to_string();
    let q: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((q - 1.0 / 3.0).abs() < 1e-13);
}

#[test]
fn progeny_pmf_model_b() {
    let o = gw(&["progeny", "pmf", &fixture("model_b.json"), "--x0", "1", "--n", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = stdout(&o);
    assert!((cell(&csv, "formula") - 0.075).abs() < 1e-14);
    assert!((cell(&csv, "dp") - 0.075).abs() < 1e-14);
}

#[test]
fn numbers_carry_seventeen_digits() {
    let o = gw(&["extinction", &fixture("model_a.json")]);
    let row = stdout(&o).lines().find(|l| l.starts_with("q,1,")).unwrap().to_string();
    let text = row.rsplit(',').next().unwrap();
    let mantissa = text.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{text}");
    assert_eq!(text.parse::<f64>().unwrap(), extinction_exact());
}

fn extinction_exact() -> f64 {
    let m = BranchingModel::from_json(&std::fs::read_to_string(fixture("model_a.json")).unwrap()).unwrap();
    gwlab::tilt::extinction_vector(&m).unwrap().q[0]
}

#[test]
fn invalid_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"d":1,"types":[{"atoms":[{"k":[2],"p":0.5}]}]}"#).unwrap();
    let o = gw(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(error_line(&o)["error"], "validation");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(gw(&["frobnicate"]).status.code(), Some(2));
    let o = gw(&["condition", &fixture("model_a.json"), "--set", "sometimes", "--n", "3", "--path", "1;1:2"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "domain");
}

#[test]
fn small_box_exits_3() {
    let o = gw(&["yaglom", &fixture("model_c.json"), "--box", "5"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(error_line(&o)["error"], "truncation");
}

#[test]
fn unreachable_condition_exits_4() {
    // binary splitting from one particle only ever shows even populations
    let o = gw(&["condition", &fixture("model_a.json"), "--set", "finite:[1]", "--n", "2", "--path", "1;1:2"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert_eq!(error_line(&o)["error"], "degenerate-condition");
}

#[test]
fn out_dir_gets_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = gw(&[
        "--out",
        out.to_str().unwrap(),
        "mc",
        &fixture("model_c.json"),
        "--path",
        "(1,0);1:(1,1)",
        "--seed",
        "7",
        "--reps",
        "2000",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let csv = std::fs::read_to_string(out.join("mc.csv")).unwrap();
    assert!(cell(&csv, "exact") > 0.0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("mc.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"][0], 7);
    assert_eq!(manifest["model_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["command_line"].as_array().unwrap().len() > 3);
    let csvs = std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "csv");
    assert_eq!(csvs.count(), 1);
}

#[test]
fn mc_is_reproducible_across_thread_counts() {
    let args = |t: &'static str| {
        vec![
            "--threads".to_string(),
            t.to_string(),
            "mc".into(),
            fixture("model_a.json"),
            "--path".into(),
            "1;1:2".into(),
            "--set".into(),
            "norm>=3".into(),
            "--n".into(),
            "3".into(),
            "--given-extinction".into(),
            "--reps".into(),
            "5000".into(),
        ]
    };
    let run = |t| {
        let a = args(t);
        stdout(&gw(&a.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn tilted_model_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tilted.json");
    let o = gw(&["tilt", &fixture("model_d.json"), "--critical", "--model-out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let m = BranchingModel::from_json(&text).unwrap();
    assert_eq!(BranchingModel::from_json(&m.to_json()).unwrap(), m);
    let o = gw(&["spectral", out.to_str().unwrap(), "--n-max", "3"]);
    let rho: f64 = stdout(&o).lines().find(|l| l.starts_with("rho,")).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert!((rho - 1.0).abs() < 1e-9);
}
