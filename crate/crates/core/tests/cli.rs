use std::process::Command;

use spinmix::report::RunReport;

fn spinmix(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_spinmix"))
        .args(args)
        .env_remove("SEED")
        .output()
        .unwrap()
}

fn report(dir: &std::path::Path) -> RunReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn minimal_config_exact_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exact.toml");
    std::fs::write(&cfg, "command = \"exact\"\n[system]\ngraph = \"cycle:4\"\nmodel = \"potts:3:0.5\"\n").unwrap();
    let out = spinmix(&["exact", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r.command, "exact");
    assert!(r.all_pass());
    assert_eq!(r.values["states"], 81);
}

#[test]
fn eta_of_single_edge() {
    let dir = tempfile::tempdir().unwrap();
    let beta = format!("ising:{}", 3f64.ln());
    let out = spinmix(&["eta", "--graph", "path:2", "--model", &beta, "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let eta = report(dir.path()).values["eta"].as_f64().unwrap();
    assert!((eta - 0.5).abs() < 1e-12);
}

#[test]
fn unknown_kernel_is_an_error() {
    let out = spinmix(&["mix", "--kernel", "metropolis"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metropolis"));
}

#[test]
fn unknown_config_field_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "command = \"eta\"\nseed = 3\n[system]\ngrpah = \"path:3\"\n").unwrap();
    let out = spinmix(&["eta", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn seed_env_reproduces_samples() {
    let run = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(env!("CARGO_BIN_EXE_spinmix"))
            .args(["sample", "--graph", "path:4", "--replicas", "40", "--csv", "--out", dir.path().to_str().unwrap()])
            .env("SEED", seed)
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read_to_string(dir.path().join("samples.csv")).unwrap()
    };
    assert_eq!(run("5"), run("5"));
    assert_ne!(run("5"), run("6"));
}

#[test]
fn coupling_tail_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinmix(&[
        "couple", "--experiment", "tail", "--graph", "grid:5x5", "--theta", "0.1", "--trials", "4000", "--csv",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(dir.path().join("tail.csv")).unwrap();
    assert!(csv.starts_with("k,count,frequency,bound\n"));
}

#[test]
fn factorize_kpf_holds() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinmix(&[
        "factorize", "--graph", "path:4", "--model", "ising:0.3", "--trials", "40", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(report(dir.path()).values["scheme"], "KPF(2)");
}
