use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-growth"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("rg-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).env_remove("ROBUST_GROWTH_OUT").output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn ctou_report_without_simulation() {
    let out = scratch("report");
    let o = run(&["ctou-report", "--no-sim"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let json = read(out.join("ctou_report.json"));
    for needle in ["\"lambda_p\": 3.4375000000000000e-1", "\"lambda_pi\": 1.4285714285714", "\"growth_gap\": 2.00892857142857", "-5.8035714285714"] {
        assert!(json.contains(needle), "{needle} missing from {json}");
    }
    let manifest = read(out.join("manifest.toml"));
    let digest = hex::encode(Sha256::digest(json.as_bytes()));
    assert!(manifest.contains(&digest));
    assert!(manifest.contains("command = \"ctou-report\""));
}

#[test]
fn invalid_parameter_is_a_configuration_error() {
    let out = scratch("invalid");
    let o = run(&["ctou-report", "--no-sim", "--kappa-x", "0"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("kappa_x"));
    let o = run(&["check", "--example", "ctou", "--set", "ctou.bogus=1"], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--example", "tdist", "--measure", "hat"], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["slices", "--example", "nope"], &out);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn check_exit_codes_name_the_failure() {
    let out = scratch("check");
    let o = run(&["check", "--example", "ctou"], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", text(&o.stdout), text(&o.stderr));
    assert!(read(out.join("check_ctou.json")).contains("\"pass\": true"));

    let o = run(&["check", "--example", "ctou", "--b-y-shift", "0.1"], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("compatibility"));

    let o = run(&["check", "--example", "stochvol", "--param", "sigma=0.7"], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("feller"));
}

#[test]
fn slices_use_the_default_factor_ranges() {
    let out = scratch("slices");
    for (example, first, last) in [("ctou", "-2", "2"), ("tdist", "-3", "3"), ("stochvol", "0.0225", "0.0575")] {
        let o = run(&["slices", "--example", example], &out);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        assert!(text(&o.stdout).contains(&format!("11 y-slices in [{first}, {last}]")));
        let csv = read(out.join(format!("slices_{example}.csv")));
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header.split(',').count(), 13);
    }
}

#[test]
fn manifest_reproduces_simulation_bytes() {
    let a = scratch("sim-a");
    let b = scratch("sim-b");
    let args = ["simulate", "--example", "ctou", "--strategies", "theta_star,theta_hat_literal,zero", "--n-paths", "50", "--horizon", "1", "--checkpoints", "0.5,1", "--seed", "11"];
    let o = run(&args, &a);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let manifest = a.join("manifest.toml");
    let o = run(&["simulate", "--config", manifest.to_str().unwrap()], &b);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let csv = "growth_ctou_star.csv";
    assert_eq!(std::fs::read(a.join(csv)).unwrap(), std::fs::read(b.join(csv)).unwrap());
    assert_eq!(read(a.join(csv)).lines().count(), 1 + 50 * 3 * 2);
    // Manifests from a different command are rejected.
    let o = run(&["check", "--config", manifest.to_str().unwrap()], &b);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let out = scratch("env");
    let o = bin().args(["gaussian-suite", "--count", "4", "--seed", "3"]).env("ROBUST_GROWTH_OUT", &out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert_eq!(read(out.join("gaussian_suite.csv")).lines().count(), 5);
    assert!(out.join("manifest.toml").exists());
}

#[test]
fn custom_gaussian_model() {
    let out = scratch("custom");
    std::fs::create_dir_all(&out).unwrap();
    let model = robust_growth::pairs::ctou_model(&robust_growth::pairs::CtouParams::default()).unwrap();
    let path = out.join("model.toml");
    std::fs::write(&path, model.to_toml()).unwrap();
    let o = run(&["check", "--example", "custom", "--model", path.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}{}", text(&o.stdout), text(&o.stderr));
    let o = run(
        &["simulate", "--example", "custom", "--model", path.to_str().unwrap(), "--measure", "hat", "--n-paths", "20", "--horizon", "1", "--checkpoints", "1"],
        &out,
    );
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(out.join("growth_custom_hat_summary.json").exists());
    let o = run(&["check", "--example", "custom"], &out);
    assert_eq!(o.status.code(), Some(2));
}
