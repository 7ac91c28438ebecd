use std::process::{Command, Output};

fn stablekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stablekit"))
        .args(args)
        .env_remove("STABLEKIT_SEED")
        .env_remove("STABLEKIT_THREADS")
        .output()
        .unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn rotation_sde_validates() {
    let out = stablekit(&["validate", "--model", "rotation-sde"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["all_passed"], true);
    assert_eq!(v["provenance"]["model"], "rotation-sde");
}

#[test]
fn cauchy_density_at_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    // the default four terms leave 8% at t = 0.5; eight terms converge
    let out = stablekit(&["density", "--model", "const-cauchy", "--t", "0.5", "--grid", "-8:8:1024", "--k-max", "8", "--out", o]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
    assert!(csv.starts_with("# stablekit"));
    assert!(csv.contains("sha256="));
    let rows = data_rows(&csv);
    let at0 = rows.iter().find(|r| r[1] == 0.0 && r[2] == 0.0).unwrap()[3];
    let want = 1.0 / (std::f64::consts::PI * 0.5);
    assert!((at0 - want).abs() < 0.02 * want, "{at0} vs {want}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("density.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["params"]["k_max"], 8);
}

#[test]
fn seeded_simulation_is_byte_identical() {
    let a = stablekit(&["simulate", "--model", "const-cauchy", "--n", "10", "--seed", "7"]);
    let b = stablekit(&["simulate", "--model", "const-cauchy", "--n", "10", "--seed", "7"]);
    let c = stablekit(&["--threads", "3", "simulate", "--model", "const-cauchy", "--n", "10", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    assert_eq!(data_rows(&String::from_utf8(a.stdout).unwrap()).len(), 10);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let out = stablekit(&["simulate", "--model", "const-cauchy", "--n", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let env = Command::new(env!("CARGO_BIN_EXE_stablekit"))
        .args(["simulate", "--model", "const-cauchy", "--n", "4"])
        .env("STABLEKIT_SEED", "7")
        .output()
        .unwrap();
    let flag = stablekit(&["simulate", "--model", "const-cauchy", "--n", "4", "--seed", "7"]);
    assert_eq!(env.status.code(), Some(0));
    assert_eq!(env.stdout, flag.stdout);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(stablekit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(stablekit(&["density", "--model", "no-such-model"]).status.code(), Some(2));
    assert_eq!(stablekit(&["density", "--model", "const-cauchy", "--grid", "1:0:8"]).status.code(), Some(2));
}

#[test]
fn malformed_model_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut model: serde_json::Value = serde_json::from_str(&stablekit::examples::builtin("const-alpha").unwrap().to_json()).unwrap();
    model["sigma"]["atoms"][0]["weight"] = serde_json::json!("heavy");
    std::fs::write(&path, model.to_string()).unwrap();
    let out = stablekit(&["validate", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sigma.atoms[0].weight"), "{err}");
}

#[test]
fn numerical_failures_name_the_term() {
    let out = stablekit(&["renewal", "--model", "var-alpha-1d", "--seed", "1", "--paths", "10"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerical failure in"));
}

#[test]
fn condition_sweep_table() {
    let out = stablekit(&["conditions", "--model", "const-alpha", "--kind", "scale-threshold", "--alpha", "1.5", "--t", "0.25,0.5,1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 3);
    // μ(|u| ≥ t^{1/α}) scales as 1/t
    assert!((rows[2][1] - 1.0 / 1.5).abs() < 1e-6);
    assert!((rows[0][1] / rows[2][1] - 4.0).abs() < 1e-4);
}

#[test]
fn list_models_is_json() {
    let out = stablekit(&["list-models"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.as_array().unwrap().iter().any(|m| m["name"] == "resetting"));
}
