use std::path::Path;
use std::process::{Command, Output};

fn mint(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mint")).args(args).current_dir(dir).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn simulate_then_test() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "gen.json", r#"{"kind":"polynomial","k":15,"n":60,"confounded":true}"#);
    let out = mint(&["simulate", "--config", "gen.json", "--seed", "4", "-o", "data.csv", "--truth", "truth.json"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["confounded"], true);

    let out = mint(&["test", "--data", "data.csv", "--resamples", "99", "--seed", "1"], d);
    assert!(out.status.success());
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["method"], "mint");
    assert_eq!(result["resamples"], 99);
    assert!(result["reject"].is_boolean());

    // the same seed gives the same bytes
    let again = mint(&["test", "--data", "data.csv", "--resamples", "99", "--seed", "1"], d);
    assert_eq!(out.stdout, again.stdout);

    let out = mint(&["test", "--data", "data.csv", "--method", "transportability"], d);
    assert!(out.status.success());
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["resamples"], serde_json::Value::Null);

    let out = mint(&["test", "--data", "data.csv", "--no-bootstrap", "--resamples", "50"], d);
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["method"], "mint_no_bootstrap");
}

#[test]
fn benchmark_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "bench.json",
        r#"{"schema_version":1,"generator":{"kind":"polynomial","k":8,"n":40},
            "method":{"name":"mint","resamples":40},"sweep":{"axis":"N","values":[30,40]},"repetitions":3,"seed":2}"#,
    );
    let out = mint(&["benchmark", "--config", "bench.json"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,rate,se,reps,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("N,30,") && lines[1].ends_with(",3,"));

    let timed = mint(&["benchmark", "--config", "bench.json", "--timing"], d);
    let text = String::from_utf8(timed.stdout).unwrap();
    assert!(!text.lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mint(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(mint(&["test"], dir.path()).status.code(), Some(1));
    assert_eq!(mint(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mint(&["test", "--data", "missing.csv"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));

    write(d, "bad.csv", "env,a,y,x1\ne1,1,2,3\ne1,1,oops,3\n");
    let out = mint(&["test", "--data", "bad.csv"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));

    write(d, "bench.json", r#"{"schema_version":2,"generator":{"kind":"polynomial","k":8,"n":40},"method":{"name":"mint"},"sweep":{"axis":"N","values":[30]},"repetitions":1,"seed":0}"#);
    assert_eq!(mint(&["benchmark", "--config", "bench.json"], d).status.code(), Some(1));

    write(d, "gen.json", r#"{"kind":"polynomial","k":8,"n":40,"bogus":1}"#);
    assert_eq!(mint(&["simulate", "--config", "gen.json"], d).status.code(), Some(1));
}

#[test]
fn numerical_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // x1 duplicates a, so the outcome design is rank deficient
    let mut csv = String::from("env,a,y,x1\n");
    for s in 0..3 {
        for i in 0..8 {
            let a = ((i * 3 + s) % 5) as f64;
            csv.push_str(&format!("e{s},{a},{},{a}\n", (i * 7 % 4) as f64));
        }
    }
    write(d, "collinear.csv", &csv);
    let out = mint(&["test", "--data", "collinear.csv", "--resamples", "10"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
