use std::path::Path;
use std::process::Command as Process;
use std::time::Instant;

use coexist_cli::{load_config, main_with, run, Command, RunConfig, RunManifest};

fn args(dir: &Path, rest: &str) -> Vec<String> {
    let mut v = vec!["coexist".to_string()];
    v.extend(rest.split_whitespace().map(str::to_owned));
    v.push("--out".into());
    v.push(dir.display().to_string());
    v
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn coexist_example_writes_six_rows_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let code = main_with(args(dir.path(), "coexist --rho 0 --z 1,1 --n-grid 64:2048:x2 --replicas 200000 --seed 7 --svg"));
    assert_eq!(code, 0);
    let csv = read(dir.path(), "coexist.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rho,family,z1,z2,n,estimate,stderr,replicas,seed");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("0,gaussian,1,1,64,"));
    assert!(lines[6].ends_with(",200000,7"));

    let manifest: RunManifest = serde_json::from_str(&read(dir.path(), "coexist.manifest.json")).unwrap();
    assert_eq!(manifest.config.replicas, 200_000);
    assert_eq!(manifest.config.seed, 7);
    assert_eq!(manifest.outputs["coexist.csv"], coexist_cli::output::sha256_hex(csv.as_bytes()));
    assert!(manifest.stream_rule.contains("hash64"));
    let svg = read(dir.path(), "coexist.svg");
    assert_eq!(svg.matches("<line").count(), 2);

    let code = main_with(args(dir.path(), &format!("fit --input {} --n-min 64", dir.path().join("coexist.csv").display())));
    assert_eq!(code, 0);
    let fit = read(dir.path(), "fit.csv");
    assert!(fit.starts_with("slope,stderr,ci_lo,ci_hi,intercept,theta_theory,n_min,points\n"));
    let row: Vec<f64> = fit.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(row[0] < -0.9 && row[0] > -1.1);
    assert_eq!(row[5], 1.0);
    assert_eq!(row[7], 6.0);
}

#[test]
fn oracle_example_reports_a_quarter() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(main_with(args(dir.path(), "oracle --rho 0 --z 1,1 --n 1")), 0);
    let csv = read(dir.path(), "oracle.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "coexist");
    assert_eq!(row[3], "0.25");
    assert!(row[6].parse::<f64>().unwrap().abs() < 4.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(main_with(["coexist", "frobnicate"]), 2);
    assert_eq!(main_with(["coexist", "--help"]), 0);
    assert_eq!(main_with(args(dir.path(), "coexist --rho 1.5")), 2);
    assert_eq!(main_with(args(dir.path(), "coexist --n-grid 64:32:x2")), 2);
    assert_eq!(main_with(args(dir.path(), "oracle --family gaussian")), 2);
    assert_eq!(main_with(args(dir.path(), "fit")), 2);

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert_eq!(main_with(args(&blocker.join("sub"), "coexist --replicas 10 --n-grid 1:4:x2")), 3);

    let starving = "meander --meander-mode rejection --n 64 --replicas 600 --t-grid 1";
    assert_eq!(main_with(args(dir.path(), starving)), 3);
}

#[test]
fn invalid_configs_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "coexist --rho -1 --replicas 1000000000000",
        "exit-tail --x 0,1 --replicas 1000000000000",
        "repulsion --rho 1 --replicas 1000000000000",
        "zs --n-grid 256:8192:x2 --replicas 1000000000000",
        "meander --t-grid 0.5,1.5 --replicas 1000000000000",
    ] {
        let t = Instant::now();
        assert_eq!(main_with(args(dir.path(), bad)), 2, "{bad}");
        assert!(t.elapsed().as_millis() < 100, "{bad} took {:?}", t.elapsed());
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::defaults(Command::ExitTail);
    cfg.rho = 0.25;
    cfg.replicas = 5_000;
    cfg.n_grid = "1:16:x2".into();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let code = main_with(args(dir.path(), &format!("exit-tail --config {} --seed 99", path.display())));
    assert_eq!(code, 0);
    let m = load_config(&dir.path().join("exit-tail.manifest.json")).unwrap();
    assert_eq!(m.rho, 0.25);
    assert_eq!(m.replicas, 5_000);
    assert_eq!(m.seed, 99);
    assert_eq!(read(dir.path(), "exit-tail.csv").lines().count(), 6);

    assert_eq!(main_with(args(dir.path(), &format!("coexist --config {}", path.display()))), 2);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::defaults(Command::Zs);
    cfg.n_grid = "8:32:x2".into();
    cfg.replicas = 20_000;
    cfg.seed = 3;
    cfg.out = dir.path().join("a");
    let first = run(&cfg, Some(1)).unwrap();
    let mut again = load_config(&first.manifest).unwrap();
    again.out = dir.path().join("b");
    run(&again, Some(4)).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a/zs.csv")).unwrap(), std::fs::read(dir.path().join("b/zs.csv")).unwrap());
}

#[test]
fn binary_exit_status() {
    let exe = env!("CARGO_BIN_EXE_coexist");
    let dir = tempfile::tempdir().unwrap();
    let ok = Process::new(exe)
        .args(["estimate-v", "--x", "2,3", "--n", "0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("V(2, 3)"));
    let bad = Process::new(exe).arg("nonsense").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("possible values"));
}
