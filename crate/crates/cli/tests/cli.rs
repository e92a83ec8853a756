//! End-to-end checks of the installed binary: exit codes, file outputs,
//! and agreement between the solver, the oracle, and the exporter.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qconic"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated normally")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout(out))
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stdout(out)))
}

/// Generates the shared small instance and returns its path.
fn gen_desk(dir: &Path) -> PathBuf {
    let out = run_in(dir, &["gen", "--preset", "desk-small", "--seed", "3"]);
    assert_eq!(code(&out), 0, "gen failed: {}", stderr(&out));
    let path = dir.join("desk-small-s3.json");
    assert!(path.is_file(), "gen did not write {}", path.display());
    path
}

#[test]
fn generation_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = gen_desk(a.path());
    let pb = gen_desk(b.path());
    let bytes_a = std::fs::read(&pa).unwrap();
    let bytes_b = std::fs::read(&pb).unwrap();
    assert_eq!(bytes_a, bytes_b, "same preset and seed, different files");
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen", "--preset", "nonsuch", "--seed", "1"]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("nonsuch"));
}

#[test]
fn solve_formulations_agree_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_desk(dir.path());
    let inst = inst.to_str().unwrap();
    let mut objectives = Vec::new();
    for form in ["1", "4"] {
        let out = run_in(dir.path(), &["solve", inst, "-f", form, "--json"]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        let doc = json(&out);
        assert_eq!(doc["status"], "optimal");
        let obj = doc["objective"].as_f64().unwrap();
        let verified = doc["verified_objective"].as_f64().unwrap();
        assert!(
            (obj - verified).abs() <= 1e-6 * verified.abs().max(1.0),
            "form {form}: solver {obj} vs re-evaluated {verified}"
        );
        let open = doc["open"].as_array().unwrap();
        assert!(!open.is_empty(), "no facilities reported open");
        objectives.push(obj);
    }
    assert!(
        (objectives[0] - objectives[1]).abs() <= 1e-6 * objectives[0].abs(),
        "formulations disagree: {objectives:?}"
    );
}

#[test]
fn relaxing_the_binary_only_formulation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_desk(dir.path());
    let out = run_in(
        dir.path(),
        &["solve", inst.to_str().unwrap(), "-f", "2", "--relax-binaries"],
    );
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn missing_instance_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["solve", "nosuch.json", "-f", "1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn oracle_matches_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_desk(dir.path());
    let inst = inst.to_str().unwrap();
    let solved = run_in(dir.path(), &["solve", inst, "-f", "1", "--json"]);
    assert_eq!(code(&solved), 0, "stderr: {}", stderr(&solved));
    let solver_obj = json(&solved)["objective"].as_f64().unwrap();
    let oracle = run_in(dir.path(), &["oracle", inst, "--json"]);
    assert_eq!(code(&oracle), 0, "stderr: {}", stderr(&oracle));
    let value = json(&oracle)["value"].as_f64().unwrap();
    assert!(
        (solver_obj - value).abs() <= 1e-6 * value.abs().max(1.0),
        "solver {solver_obj} vs oracle {value}"
    );
}

/// One site, one level, one customer: demand 1 against rate 2 with an
/// exponential service time gives one waiting customer on average, so the
/// cost is 5 (establish) + 4 (waiting) + 2 (travel) = 11.
#[test]
fn oracle_value_on_a_hand_checkable_instance() {
    let dir = tempfile::tempdir().unwrap();
    let doc = serde_json::json!({
        "facilities": 1,
        "customers": 1,
        "levels": 1,
        "f": [[5.0]],
        "d": [[2.0]],
        "lambda": [1.0],
        "mu": [[2.0]],
        "sigma": [[0.5]],
        "w": [4.0],
        "metadata": {}
    });
    let path = dir.path().join("one.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let out = run_in(dir.path(), &["oracle", path.to_str().unwrap(), "--json"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let value = json(&out)["value"].as_f64().unwrap();
    assert!((value - 11.0).abs() < 1e-9, "oracle value {value}");
}

#[test]
fn oracle_refuses_oversized_instances() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["gen", "--preset", "vj-large", "--seed", "1"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let inst = dir.path().join("vj-large-s1.json");
    let out = run_in(dir.path(), &["oracle", inst.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn exports_are_stable_and_conic() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_desk(dir.path());
    let inst = inst.to_str().unwrap();
    for name in ["a.cbf", "b.cbf"] {
        let out = run_in(dir.path(), &["export", inst, "-f", "1", "-o", name]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    }
    let a = std::fs::read(dir.path().join("a.cbf")).unwrap();
    let b = std::fs::read(dir.path().join("b.cbf")).unwrap();
    assert_eq!(a, b, "export is not reproducible");
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("VER\n3"), "missing version stanza");
    assert!(text.contains("OBJSENSE\nMIN"), "missing objective sense");
    // 3 sites x 2 levels, one three-row cone per (site, level).
    let cones = text.lines().filter(|l| *l == "Q 3").count();
    assert_eq!(cones, 6, "expected 6 second-order cones:\n{text}");
    // Every x and y decision is declared integer: 6 + 30.
    assert!(text.contains("INT\n36\n"), "missing integer stanza");
}

#[test]
fn bench_emits_the_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_desk(dir.path());
    let inst = inst.to_str().unwrap();
    let out = run_in(
        dir.path(),
        &["bench", inst, "--formulations", "1,4", "--csv", "-"],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance,formulation,status,total_cost,establish_pct,waiting_pct,traveling_pct,\
         root_bound,nodes,cuts,wall_time_s,gap"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2, "one row per (instance, formulation)");
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 12, "row: {row}");
        assert_eq!(fields[0], "desk-small-s3");
        assert_eq!(fields[2], "optimal", "row: {row}");
        let pct: f64 = fields[4..7]
            .iter()
            .map(|s| s.parse::<f64>().unwrap())
            .sum();
        assert!((pct - 100.0).abs() < 0.05, "percentages sum to {pct}");
        fields[11].parse::<f64>().expect("gap is numeric");
    }
}

#[test]
fn unstable_simulation_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--arrival", "2",
            "--service-rate", "2",
            "--customers", "100",
        ],
    );
    assert_eq!(code(&out), 3, "stderr: {}", stderr(&out));
}

#[test]
fn simulation_matches_theory_on_a_short_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate",
            "--arrival", "1",
            "--service-rate", "2",
            "--customers", "30000",
            "--seed", "1",
            "--json",
        ],
    );
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    let metrics = doc["metrics"].as_array().unwrap();
    assert_eq!(metrics.len(), 6);
    let l_row = metrics
        .iter()
        .find(|m| m["metric"] == "L")
        .expect("queue length metric present");
    // M/M/1 at half load holds one customer in the system on average.
    assert!((l_row["formula"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let sim = l_row["simulated"].as_f64().unwrap();
    assert!((sim - 1.0).abs() < 0.2, "simulated L = {sim}");
}
