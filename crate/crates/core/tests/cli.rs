use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbm-grushin"))
}

fn write_config(dir: &Path, name: &str, json: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

const CLASSICAL: &str = r#"{
  "subcommand": "verify", "hurst": 0.5, "steps": 64, "samples": 2000,
  "model": {"kind": "grushin", "x0": [0.0], "y0": [0.0], "sigma": {"name": "constant", "params": [1]}},
  "directions": [[1, 0], [0, 1]]
}"#;

#[test]
fn hurst_below_half_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &CLASSICAL.replace("\"hurst\": 0.5", "\"hurst\": 0.3"));
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[1/2, 1)"));
}

#[test]
fn unknown_key_and_missing_file_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &CLASSICAL.replace("\"samples\"", "\"n_samples\""));
    let out = bin().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().arg("--config").arg(dir.path().join("missing.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_assumption_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "zero.json", &CLASSICAL.replace("\"params\": [1]", "\"params\": [0]"));
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn classical_verify_passes_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.json", CLASSICAL);
    let mut files = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "3")] {
        let out_dir = dir.path().join(run);
        let out = bin()
            .arg("--config")
            .arg(&cfg)
            .args(["--workers", workers, "--seed", "7"])
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        assert!(String::from_utf8_lossy(&out.stdout).contains("[PASS]"));
        files.push((std::fs::read(out_dir.join("verify.csv")).unwrap(), std::fs::read(out_dir.join("verify.json")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let csv = String::from_utf8(files[0].0.clone()).unwrap();
    assert!(csv.lines().nth(1).unwrap().contains("seed=7"), "{csv}");
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sim.json",
        r#"{"subcommand": "simulate", "steps": 32,
            "model": {"kind": "grushin", "x0": [0.3], "y0": [0.0], "sigma": {"name": "sine-affine", "params": [2, 1, 1]}}}"#,
    );
    let read = |seed: &str| {
        let out_dir = dir.path().join(seed);
        let status = bin().arg("--config").arg(&cfg).args(["--seed", seed]).arg("--out").arg(&out_dir).output().unwrap().status;
        assert!(status.success());
        std::fs::read_to_string(out_dir.join("simulate_0.csv")).unwrap()
    };
    let (a, b) = (read("1"), read("2"));
    assert_eq!(a.lines().count(), 3 + 33);
    assert_ne!(a, b);
}
