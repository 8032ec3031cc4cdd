use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_blowup");

const SMALL: &str = r#"
[problem]
p = 3.0

[compact_set]
mode = "line"
components = [[0.0, 0.0]]

[grid]
dx = 0.015625

[solver]
ladder = [8]
samples = 40

[diagnostics]
probes = [0.0, 3.0]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn blowup(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("BLOWUP_OUT").env("RUST_LOG", "warn");
    if let Some(p) = env_out {
        cmd.env("BLOWUP_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn all_then_plot_on_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = blowup(
        &["all", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "2"],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["params"]["J"], 2);
    assert_eq!(manifest["params"]["k"], 10);
    assert_eq!(manifest["params"]["lambda"], 0.5);
    assert!(manifest["runs"]["8"]["truncation_dormant"].as_bool().unwrap());
    for rel in ["stack/fields.json", "runs/n8/h1_norm.csv", "classify/growth.csv"] {
        assert!(out.join(rel).exists(), "{rel}");
        assert!(manifest["artifacts"].get(rel).is_some(), "{rel} not in manifest");
    }
    let csv = std::fs::read_to_string(out.join("runs/n8/h1_norm.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("name,n,region,t,value"));

    let o = blowup(&["plot", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(out.join("plots/h1_norm.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("n=8"));
}

#[test]
fn solve_without_stack_fails_with_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = blowup(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing stack artifact"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("samples", "sample_count"));
    let o = blowup(&["ansatz", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sample_count"), "{}", stderr(&o));
}

#[test]
fn stage_override_and_env_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let root = dir.path().join("from-env");
    let o = blowup(&["all", "--config", cfg.to_str().unwrap(), "--stage-override", "ansatz"], Some(&root));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("stack/fields.json").exists());
    assert!(root.join("ansatz/report.json").exists());
    assert!(!root.join("runs").exists(), "override should stop after the ansatz stage");
}

#[test]
fn bad_flags_are_rejected() {
    let o = blowup(&["all", "--stage-override", "plot"], None);
    assert!(!o.status.success());
    let o = blowup(&["ansatz", "--threads", "0", "--config", "nowhere.toml"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--threads"), "{}", stderr(&o));
    let o = blowup(&["ansatz"], None);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--config"));
}
