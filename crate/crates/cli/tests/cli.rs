//! End-to-end tests of the `blocksolve` binary: run determinism, trace
//! schemas, plot-data aggregation, and check-suite exit codes.

use std::path::Path;
use std::process::{Command, Output};

use blocksolve_core::checks::fixtures;

fn blocksolve(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blocksolve"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write_operator_fixture(dir: &Path) {
    let op = fixtures::separable_cocoercive(31, 4, 3, 0.2, 1.0);
    std::fs::write(dir.join("problem.json"), op.to_json().unwrap()).unwrap();
}

fn write_split_fixture(dir: &Path) {
    let problem = fixtures::affine_split(41, 4, 3);
    std::fs::write(dir.join("split.json"), problem.to_json().unwrap()).unwrap();
}

fn run_config(solver: &str, seeds: &str, iters: usize, out: &str, problem: &str) -> String {
    format!(
        r#"{{
  "problem": {{"file": "{problem}"}},
  "solver": {{"solver": "{solver}", "seed": 1, "max_iters": {iters}}},
  "seeds": {seeds},
  "diagnostics": {{"lyapunov": false, "descent_margins": false, "summable_checks": false}},
  "output_dir": "{out}"
}}"#
    )
}

#[test]
fn run_is_deterministic_and_traces_match_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_operator_fixture(dir);
    std::fs::write(
        dir.join("a.json"),
        run_config("rcog", "[1, 2]", 200, "out_a", "problem.json"),
    )
    .unwrap();

    // The identical config executed twice must give byte-identical traces.
    let out = blocksolve(&["run", "a.json"], dir);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for seed in [1, 2] {
        std::fs::copy(
            dir.join(format!("out_a/trace_seed{seed}.csv")),
            dir.join(format!("first_run_seed{seed}.csv")),
        )
        .unwrap();
    }
    let out = blocksolve(&["run", "a.json"], dir);
    assert!(out.status.success());

    for seed in [1, 2] {
        let a = std::fs::read(dir.join(format!("first_run_seed{seed}.csv"))).unwrap();
        let b = std::fs::read(dir.join(format!("out_a/trace_seed{seed}.csv"))).unwrap();
        assert_eq!(a, b, "trace CSVs must be byte-identical across reruns");
        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        let meta = lines.next().unwrap();
        assert!(
            meta.starts_with(&format!("# seed={seed} config_hash=")),
            "meta line: {meta}"
        );
        assert_eq!(
            lines.next().unwrap(),
            "k,block,res_sq,step_sq,dist_sq,lyapunov,margin"
        );
        assert_eq!(lines.count(), 201);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out_a/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["solver"], "rcog");
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let bounds = summary["bounds"].as_array().unwrap();
    assert!(bounds
        .iter()
        .any(|b| b["name"] == "ergodic_residual" && b["satisfied"] == true));
}

#[test]
fn zero_iteration_run_writes_initial_row_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_operator_fixture(dir);
    std::fs::write(
        dir.join("zero.json"),
        run_config("arcog_practical", "[7]", 0, "out_zero", "problem.json"),
    )
    .unwrap();
    let out = blocksolve(&["run", "zero.json"], dir);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.join("out_zero/trace_seed7.csv")).unwrap();
    assert_eq!(
        text.lines().count(),
        3,
        "metadata, header, and the initial row"
    );
}

#[test]
fn export_plotdata_aggregates_and_recomputes_envelope() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_operator_fixture(dir);
    std::fs::write(
        dir.join("run.json"),
        run_config(
            "arcog_direct",
            "[1, 2, 3, 4, 5]",
            300,
            "out",
            "problem.json",
        ),
    )
    .unwrap();
    assert!(blocksolve(&["run", "run.json"], dir).status.success());
    let out = blocksolve(&["export-plotdata", "out"], dir);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = std::fs::read_to_string(dir.join("out/plotdata.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "k,metric,mean,p10,p90");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap())
            .unwrap();
    let (nu, omega, c0, c2) = (
        summary["params"]["nu"].as_f64().unwrap(),
        summary["params"]["omega"].as_f64().unwrap(),
        summary["params"]["c0"].as_f64().unwrap(),
        summary["params"]["c2"].as_f64().unwrap(),
    );
    let d0 = summary["dist0_sq"].as_f64().unwrap();
    let mut saw_envelope = false;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let (k, metric) = (fields[0].parse::<usize>().unwrap(), fields[1]);
        let (mean, p10, p90) = (
            fields[2].parse::<f64>().unwrap(),
            fields[3].parse::<f64>().unwrap(),
            fields[4].parse::<f64>().unwrap(),
        );
        assert!(p10 <= p90, "quantiles out of order on line {line}");
        if metric == "residual_envelope" {
            saw_envelope = true;
            let t = k as f64 + nu;
            let expected = 8.0 * (c0 + 2.0 * omega * c2) / (omega * omega * t * t) * d0;
            let rel = (mean - expected).abs() / expected;
            assert!(
                rel <= 1e-12,
                "envelope mismatch at k={k}: {mean} vs {expected}"
            );
        } else {
            // Five seeds: the mean lies within the sample range.
            assert!(p10 <= mean + 1e-300 && mean <= p90 + p90.abs() * 1e-12 + 1e-300);
        }
    }
    assert!(saw_envelope, "envelope column missing");
}

#[test]
fn export_single_seed_collapses_quantiles() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_operator_fixture(dir);
    std::fs::write(
        dir.join("run.json"),
        run_config("rcog", "[3]", 50, "out", "problem.json"),
    )
    .unwrap();
    assert!(blocksolve(&["run", "run.json"], dir).status.success());
    assert!(blocksolve(&["export-plotdata", "out"], dir)
        .status
        .success());
    let text = std::fs::read_to_string(dir.join("out/plotdata.csv")).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1] == "res_sq" || fields[1] == "step_sq" || fields[1] == "dist_sq" {
            assert_eq!(fields[2], fields[3], "single seed: mean == p10");
            assert_eq!(fields[3], fields[4], "single seed: p10 == p90");
        }
    }
}

#[test]
fn federated_run_writes_ledger_and_round_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_split_fixture(dir);
    std::fs::write(
        dir.join("fed.json"),
        run_config("acfeddr", "[1, 2]", 100, "out_fed", "split.json"),
    )
    .unwrap();
    let out = blocksolve(&["run", "fed.json"], dir);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.join("out_fed/trace_seed1.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# seed=1 config_hash="));
    assert_eq!(
        lines.next().unwrap(),
        "round,sampled_user,certificate_residual,lyapunov,cumulative_bytes"
    );
    let ledger = std::fs::read_to_string(dir.join("out_fed/messages_seed1.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 200);
    assert!(blocksolve(&["export-plotdata", "out_fed"], dir)
        .status
        .success());
    let plot = std::fs::read_to_string(dir.join("out_fed/plotdata.csv")).unwrap();
    assert!(plot.lines().any(|l| l.contains("certificate_envelope")));
}

#[test]
fn thread_cap_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_operator_fixture(dir);
    std::fs::write(
        dir.join("serial.json"),
        run_config(
            "arcog_direct",
            "[1, 2, 3, 4]",
            150,
            "out_serial",
            "problem.json",
        ),
    )
    .unwrap();
    std::fs::write(
        dir.join("parallel.json"),
        run_config(
            "arcog_direct",
            "[1, 2, 3, 4]",
            150,
            "out_parallel",
            "problem.json",
        ),
    )
    .unwrap();
    let serial = Command::new(env!("CARGO_BIN_EXE_blocksolve"))
        .args(["run", "serial.json"])
        .env("BLOCKSOLVE_THREADS", "1")
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(serial.status.success());
    let parallel = Command::new(env!("CARGO_BIN_EXE_blocksolve"))
        .args(["run", "parallel.json"])
        .env("BLOCKSOLVE_THREADS", "4")
        .current_dir(dir)
        .output()
        .unwrap();
    assert!(parallel.status.success());
    for seed in 1..=4 {
        // The metadata line carries the config hash, which differs because
        // the output directories differ; everything below it must agree.
        let strip = |path: std::path::PathBuf| -> String {
            let text = std::fs::read_to_string(path).unwrap();
            text.lines().skip(1).collect::<Vec<_>>().join("\n")
        };
        let a = strip(dir.join(format!("out_serial/trace_seed{seed}.csv")));
        let b = strip(dir.join(format!("out_parallel/trace_seed{seed}.csv")));
        assert_eq!(a, b, "seed {seed} differs between thread caps");
    }
}

#[test]
fn infeasible_parameters_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_operator_fixture(dir);
    let config = r#"{
  "problem": {"file": "problem.json"},
  "solver": {"solver": "rcog", "seed": 0, "max_iters": 10, "rho": 99.0},
  "output_dir": "out"
}"#;
    std::fs::write(dir.join("bad.json"), config).unwrap();
    let out = blocksolve(&["run", "bad.json"], dir);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("infeasible stepsizes"), "stderr: {stderr}");
}

#[test]
fn unknown_suite_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blocksolve(&["check", "bogus"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn lemmas_suite_passes_via_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let out = blocksolve(&["check", "lemmas"], tmp.path());
    assert!(
        out.status.success(),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("consensus_resolvent_bruteforce"));
    assert!(stdout.contains("4/4 checks passed"));
}
