//! End-to-end checks of the command-line binary: exit codes, run
//! directory layout, manifest fidelity, and bitwise reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use telosim::config::RunConfig;
use telosim::output::config_hash;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_telosim"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run_dir(out_root: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> = fs::read_dir(out_root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(entries.len(), 1, "expected a single run directory in {out_root:?}");
    entries.pop().unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const QUICK_SIM: &str = r#"
[model]
preset = "model2"
k = 1
delta = 1.0
Delta = 100.0
q_params = { q0 = 0.97, x_scale = 50.0, p = 2.0 }

[model.birth]
kind = "age_linear"

[run]
horizon = 6.0
replicates = 50
seed = 7
init_x = 50.0
"#;

#[test]
fn usage_errors_exit_with_one_and_help_with_zero() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1), "no arguments should be a usage error");

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("simulate"), "help lists subcommands");

    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--config", "/no/such/file.toml", "--out"])
        .arg(tmp.path())
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("error:"));

    let out = bin().args(["--out", "x", "simulate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing --config is an error");
    assert!(stderr_of(&out).contains("--config"));
}

#[test]
fn declared_command_must_match_invocation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "declared.toml",
        &format!("{QUICK_SIM}command = \"simulate\"\n"),
    );
    let out = bin()
        .args(["--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .arg("estimate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("simulate") && err.contains("estimate"), "{err}");
}

#[test]
fn simulate_runs_are_reproducible_and_the_manifest_is_faithful() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), "sim.toml", QUICK_SIM);

    let mut outputs = Vec::new();
    for root in ["a", "b"] {
        let out_root = tmp.path().join(root);
        let out = bin()
            .args(["--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out_root)
            .arg("simulate")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
        outputs.push(run_dir(&out_root));
    }

    let (a, b) = (&outputs[0], &outputs[1]);
    assert_eq!(a.file_name(), b.file_name(), "run id is derived from config and seed");
    let id = a.file_name().unwrap().to_string_lossy().into_owned();
    assert!(id.starts_with("simulate-"), "{id}");
    assert!(id.ends_with("-s7"), "{id}");

    for file in ["alive.csv", "events.csv", "summary.json"] {
        let left = fs::read(a.join(file)).unwrap();
        let right = fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} must be byte-identical across reruns");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["run_id"].as_str().unwrap(), id);
    assert_eq!(manifest["seed"].as_u64(), Some(7));
    let embedded = manifest["config"].as_str().unwrap();
    assert_eq!(manifest["config_sha256"].as_str().unwrap(), config_hash(embedded));
    let reparsed = RunConfig::parse_str(embedded).unwrap();
    assert_eq!(reparsed.to_toml(), embedded, "embedded config is in resolved form");
    assert_eq!(reparsed.run.seed, 7);

    let manifest_b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], manifest_b["config_sha256"]);

    let out_root = tmp.path().join("c");
    let out = bin()
        .args(["--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out_root)
        .args(["--seed", "99", "simulate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let overridden = run_dir(&out_root);
    let over_id = overridden.file_name().unwrap().to_string_lossy().into_owned();
    assert!(over_id.ends_with("-s99"), "{over_id}");
    assert_ne!(over_id, id, "seed override must change the run id");
}

#[test]
fn zero_birth_rate_leaves_the_root_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "quiet.toml",
        r#"
[model]
preset = "model2"
k = 1
delta = 1.0
Delta = 100.0
q_params = { q0 = 0.97, x_scale = 50.0, p = 2.0 }

[model.birth]
kind = "constant"
coeffs = [0.0]

[run]
horizon = 5.0
seed = 1
init_x = 50.0
"#,
    );
    let out_root = tmp.path().join("out");
    let out = bin()
        .args(["--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_root)
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let dir = run_dir(&out_root);

    let alive = fs::read_to_string(dir.join("alive.csv")).unwrap();
    assert_eq!(alive.lines().count(), 2, "header plus the never-dividing root:\n{alive}");
    let events = fs::read_to_string(dir.join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1, "no division events:\n{events}");
}

#[test]
fn verify_assumptions_reports_certificate_failures_with_exit_two() {
    let tmp = tempfile::tempdir().unwrap();

    let unreachable = write_config(
        tmp.path(),
        "unreachable.toml",
        &format!("{QUICK_SIM}\n[verify]\nepsilon0_target = 3.9\nsamples = 4000\n"),
    );
    let out_root = tmp.path().join("target");
    let out = bin()
        .args(["--config"])
        .arg(&unreachable)
        .arg("--out")
        .arg(&out_root)
        .arg("verify-assumptions")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("FAIL"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&out_root).join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["expansion"]["passed"], false);
    assert_eq!(report["expansion"]["threshold"], 4.9);

    let invalid = write_config(
        tmp.path(),
        "invalid.toml",
        r#"
[model]
preset = "model2"
k = 16
delta = 10.0
Delta = 460.0
q_params = { q0 = 1.0, x_scale = 50.0, p = 2.0 }

[model.birth]
kind = "age_linear"

[run]
seed = 2
init_x = 100.0
"#,
    );
    let out_root = tmp.path().join("invalid");
    let out = bin()
        .args(["--config"])
        .arg(&invalid)
        .arg("--out")
        .arg(&out_root)
        .arg("verify-assumptions")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir(&out_root).join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], false);
    assert!(report["reason"].as_str().unwrap().contains("size condition")
        || !report["reason"].as_str().unwrap().is_empty());
}

#[test]
fn malformed_configuration_lists_every_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "broken.toml",
        r#"
[model]
preset = "model2"
k = 0
delta = -1.0
Delta = 100.0
q_params = { q0 = 0.97, x_scale = 50.0, p = 2.0 }

[model.birth]
kind = "age_linear"

[run]
seed = 4
"#,
    );
    let out = bin()
        .args(["--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("model.k"), "{err}");
    assert!(err.contains("model.delta"), "{err}");
}
