// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gateforge::cli::{run_cli, EXIT_OK, EXIT_USAGE};
use gateforge::io::load_model;
use gateforge::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gateforge"));
    cmd.env_remove("GATEFORGE_SEED");
    cmd
}

fn arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn shipped_fixtures_load() {
    let p = load_model(fixture("not2.json")).unwrap();
    assert_eq!((p.model.level_count(), p.model.relevant_dim()), (2, 2));
    assert_eq!(p.target, gateforge::instances::not_gate());
    for name in ["hadamard2.json", "phase_flip2.json", "embedded8.json"] {
        load_model(fixture(name)).unwrap();
    }
    let e = load_model(fixture("embedded8.json")).unwrap();
    assert_eq!(e.model, gateforge::instances::embedded_qubit());
}

#[test]
fn oversized_target_is_a_dimension_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(
        &p,
        r#"{"M":3,"N":2,"energies":[0,1,2],"mu":[[0,1,0],[1,0,1],[0,1,0]],
            "target":[[1,0,0],[0,1,0],[0,0,1]],"grid":{"T":1,"steps":4}}"#,
    )
    .unwrap();
    match load_model(&p) {
        Err(Error::InvalidModel(msgs)) => assert!(msgs.iter().any(|m| m.contains("dimension mismatch"))),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn optimize_then_residual_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = run_cli([
        "gateforge",
        "optimize",
        &arg(&fixture("not2.json")),
        "--approach",
        "evolution",
        "--lambda",
        "1",
        "--max-iters",
        "200",
        "--out",
        &arg(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,re_tau,abs_tau,fidelity,eta,fluence,update_norm,wall_ms\n"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["fidelity"].as_f64().unwrap() >= 0.999);
    assert_eq!(summary["stop_reason"], "stop_fidelity");

    let res_dir = dir.path().join("res");
    let code = run_cli([
        "gateforge",
        "residual",
        &arg(&fixture("not2.json")),
        "--field",
        &arg(&out.join("field.json")),
        "--out",
        &arg(&res_dir),
    ]);
    assert_eq!(code, EXIT_OK);
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(res_dir.join("residuals.json")).unwrap()).unwrap();
    for key in ["evolution", "s2s"] {
        let a = summary["residuals"][key].as_f64().unwrap();
        let b = res[key].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-12, "{key}: {a} vs {b}");
    }
    let csv = fs::read_to_string(res_dir.join("residuals.csv")).unwrap();
    assert_eq!(csv.lines().count(), 402);
}

#[test]
fn propagate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_cli(["gateforge", "propagate", &arg(&fixture("hadamard2.json")), "--out", &arg(dir.path())]);
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(dir.path().join("propagation.csv")).unwrap();
    assert!(csv.starts_with("step,time,row_index,component_index,re,im\n"));
    assert_eq!(csv.lines().count(), 1 + 401 * 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("propagation.json")).unwrap()).unwrap();
    assert!(summary["max_norm_drift"].as_f64().unwrap() < 1e-10);
}

#[test]
fn seed_environment_variable_changes_the_guess() {
    let dir = tempfile::tempdir().unwrap();
    let tau_for = |seed: Option<&str>| {
        let out = dir.path().join(seed.unwrap_or("none"));
        let mut cmd = bin();
        cmd.args(["propagate", &arg(&fixture("not2.json")), "--out", &arg(&out)]);
        if let Some(s) = seed {
            cmd.env("GATEFORGE_SEED", s);
        }
        assert!(cmd.status().unwrap().success());
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("propagation.json")).unwrap()).unwrap();
        v["tau_re"].as_f64().unwrap()
    };
    assert_eq!(tau_for(None), tau_for(Some("0")));
    assert_ne!(tau_for(Some("0")), tau_for(Some("5")));
}

#[test]
fn experiment_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["experiment", "spurious_diagonal", "--out", &arg(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("verdict: pass"));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("spurious_diagonal_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["assertions"].as_array().unwrap().iter().all(|a| a["threshold"].is_number()));
    assert!(dir.path().join("spurious_diagonal_escape_trace.csv").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let out = bin().args(["optimize", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(run_cli(["gateforge", "experiment", "nonexistent"]), EXIT_USAGE);
    assert_eq!(run_cli(["gateforge", "validate", "/definitely/missing.json"]), EXIT_USAGE);
    assert_eq!(run_cli(["gateforge", "--help"]), EXIT_OK);
}

#[test]
fn validate_reports_offending_entry_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nonherm.json");
    fs::write(
        &p,
        r#"{"M":2,"N":2,"energies":[0,1],"mu":[[0,[1,0.5]],[[1,0.5],0]],
            "target":[[1,0],[0,1]],"grid":{"T":1,"steps":4}}"#,
    )
    .unwrap();
    let out = bin().args(["validate", &arg(&p)]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-Hermitian dipole at (1,2)"), "{err}");

    let ok = bin().args(["validate", &arg(&fixture("not2.json"))]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
}
