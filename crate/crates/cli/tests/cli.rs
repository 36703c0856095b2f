use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ppem(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ppem"));
    cmd.args(args).env_remove("PPEM_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("error JSON on stderr")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn graph_gen_is_reproducible_and_reports_retries() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = ppem(&["graph-gen", "--seed", "5", "--n", "40", "--out", d.to_str().unwrap()], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        std::fs::read(a.join("graph.edges")).unwrap(),
        std::fs::read(b.join("graph.edges")).unwrap()
    );
    let report = read_json(&a.join("graph_report.json"));
    assert_eq!(report["connected"], true);
    assert_eq!(report["config"]["n"], 40);
    assert!(report["retries"].is_u64());
}

#[test]
fn zero_radius_exhausts_retries() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppem(
        &[
            "graph-gen",
            "--radius",
            "0",
            "--set",
            "max_attempts=5",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_of(&out)["error"], "RetriesExhausted");
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppem(&["graph-gen", "--graph", "fig1"], &[("PPEM_OUT_DIR", dir.path())]);
    assert!(out.status.success());
    let edges = std::fs::read_to_string(dir.path().join("graph.edges")).unwrap();
    assert!(edges.starts_with("5 7\n"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"graph": "geometric", "n": 12, "seed": 3}"#).unwrap();
    let out_dir = dir.path().join("o");
    let out = ppem(
        &[
            "graph-gen",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "15",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success());
    let report = read_json(&out_dir.join("graph_report.json"));
    assert_eq!((report["nodes"].as_u64(), report["config"]["seed"].as_u64()), (Some(15), Some(3)));
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppem(&["graph-gen", "--set", "colour=1", "--out", dir.path().to_str().unwrap()], &[]);
    let err = error_of(&out);
    assert!(err["message"].as_str().unwrap().contains("colour"));
}

#[test]
fn secure_sum_needs_a_hamiltonian_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let star = dir.path().join("star.edges");
    std::fs::write(&star, "4 3\n1 2\n1 3\n1 4\n").unwrap();
    let out = ppem(
        &[
            "em-run",
            "--graph",
            "file",
            "--graph-file",
            star.to_str().unwrap(),
            "--protocol",
            "secure-sum",
            "--iters",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(error_of(&out)["error"], "NotFound");
}

#[test]
fn em_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppem(
        &[
            "em-run",
            "--graph",
            "fig1",
            "--protocol",
            "federated",
            "--iters",
            "5",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["trajectory.json", "loglik.csv", "comparison.csv", "transcript.jsonl", "report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loglik = std::fs::read_to_string(dir.path().join("loglik.csv")).unwrap();
    assert!(loglik.starts_with("iter,loglik\n0,"));
    assert_eq!(loglik.lines().count(), 7);
    let transcript = std::fs::read_to_string(dir.path().join("transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), 5 * 5 + 5);
    let report = read_json(&dir.path().join("report.json"));
    assert!(report["max_loglik_abs_diff"].as_f64().unwrap() < 1e-12);
}

#[test]
fn audit_guards() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(
        error_of(&ppem(&["privacy-audit", "--trials", "10", "--out", d], &[]))["error"],
        "InsufficientSamples"
    );
    let split = error_of(&ppem(&["privacy-audit", "--corrupt", "1,4", "--target", "2", "--out", d], &[]));
    assert_eq!(split["error"], "HonestSubgraphDisconnected");
    assert!(split["message"].as_str().unwrap().contains("honest"));
    assert_eq!(
        error_of(&ppem(&["privacy-audit", "--target", "2", "--out", d], &[]))["error"],
        "InvalidArgument"
    );
}

#[test]
fn audit_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppem(
        &[
            "privacy-audit",
            "--trials",
            "300",
            "--repeats",
            "2",
            "--iters",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for p in ["federated", "secure_sum", "subspace"] {
        let nmi = std::fs::read_to_string(dir.path().join(format!("nmi_{p}.csv"))).unwrap();
        assert_eq!(nmi.lines().next(), Some("iter,nmi,stderr"));
        assert_eq!(nmi.lines().count(), 3);
        let features = std::fs::read_to_string(dir.path().join(format!("features_{p}.csv"))).unwrap();
        assert_eq!(features.lines().count(), 1 + 2 * 300);
    }
}
