use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const GAUSSIAN: &str = r#"
[model]
family = "gaussian"
halfwidth = 8.0

[flow]
time = 0.7

[grid]
n_per_axis = 121
momentum_nodes = 64

[experiment]
seed = 3
samples = 200000
bins = 40
random_vectors = 5
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_hmc-transfer"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn certificate(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/certificate.json")).unwrap()).unwrap()
}

#[test]
fn every_subcommand_passes_on_gaussian() {
    for (cmd, csv) in [
        ("flow", "trajectory.csv"),
        ("operator", "operator.csv"),
        ("spectrum", "eigenvalues.csv"),
        ("kernel-norm", "kernel_norm.csv"),
        ("convergence", "trace.csv"),
        ("sampler-check", "histogram.csv"),
    ] {
        let dir = TempDir::new().unwrap();
        let out = run(dir.path(), GAUSSIAN, &[cmd, "--threads", "2"]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
        assert!(manifest.contains(&format!("experiment = \"{cmd}\"")));
        assert!(manifest.contains("threads = 2"));
        assert_eq!(certificate(dir.path())["status"], "pass");
        assert!(dir.path().join("out").join(csv).exists(), "{cmd}");
    }
}

#[test]
fn csv_values_carry_seventeen_digits() {
    let dir = TempDir::new().unwrap();
    run(dir.path(), GAUSSIAN, &["spectrum"]);
    let text = fs::read_to_string(dir.path().join("out/eigenvalues.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    let mantissa = row[1].split('e').next().unwrap().trim_start_matches('-');
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
    let mu: f64 = row[1].parse().unwrap();
    assert!((mu - 0.7f64.cos()).abs() < 1e-6);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    run(dir.path(), GAUSSIAN, &["flow", "--seed", "99"]);
    let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 99"));
}

#[test]
fn failed_certificate_exits_two() {
    let dir = TempDir::new().unwrap();
    let starved = GAUSSIAN.replace("random_vectors = 5", "random_vectors = 5\nn_max = 6");
    let out = run(dir.path(), &starved, &["convergence"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(certificate(dir.path())["status"], "fail");
}

#[test]
fn bad_configs_exit_one_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &GAUSSIAN.replace("time = 0.7", "time = 2.0"),
        &["operator"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.time"));

    let out = run(
        dir.path(),
        &GAUSSIAN.replace("seed = 3", "seed = 3\ncolour = 1"),
        &["operator"],
    );
    assert_eq!(out.status.code(), Some(1));

    let out = run(
        dir.path(),
        &GAUSSIAN.replace("n_per_axis = 121", "n_per_axis = 4"),
        &["spectrum"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.n_per_axis"));
}

#[test]
fn flow_study_ignores_the_regime() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        &GAUSSIAN.replace("time = 0.7", "time = 6.0"),
        &["flow"],
    );
    assert_eq!(out.status.code(), Some(0));
}
