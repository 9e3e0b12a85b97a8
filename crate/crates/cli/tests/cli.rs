use std::path::Path;
use std::process::{Command, Output};

fn mdbench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdbench"))
        .args(args)
        .current_dir(dir)
        .env_remove("MDBENCH_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lists_every_registered_system() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdbench(&["list-systems"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["logistic", "lorenz", "advection", "burgers", "kdv", "ks", "advection_diffusion", "heat_solar_1d"] {
        assert!(text.contains(name), "missing {name}");
    }
    let o = mdbench(&["list-systems", "--json"], dir.path());
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 15);
}

#[test]
fn generate_corrupt_discover_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = mdbench(&["generate", "--system", "harmonic_oscillator", "--seed", "3", "--out", "ho.mdb"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = mdbench(&["corrupt", "--in", "ho.mdb", "--snr", "30", "--seed", "4", "--out", "ho30.mdb"], p);
    assert!(o.status.success(), "{}", stderr(&o));

    let grid = r#"{"thresholds":[0.05],"bases":[["poly"]],"poly_orders":[2],"alphas":[0.05],"max_iters":[20]}"#;
    std::fs::write(p.join("grid.json"), grid).unwrap();
    for data in ["ho.mdb", "ho30.mdb"] {
        let o = mdbench(
            &["discover", "--method", "sindy", "--data", data, "--grid", "grid.json", "--out", "r.jsonl", "--jobs", "1"],
            p,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(p.join("r.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["fidelity"], "full");
    assert_eq!(lines[0]["seed"], 3);
    assert!(lines[0]["snr_db"].is_null());
    assert_eq!(lines[1]["snr_db"], 30.0);
    assert_eq!(lines[0]["configs_total"], 1);

    let o = mdbench(&["report", "--in", "r.jsonl", "--out", "summary.csv"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[0].starts_with("method,snr_db"));
    assert_eq!(rows.len(), 3, "{csv}");
}

#[test]
fn corrupting_twice_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(mdbench(&["generate", "--system", "logistic", "--out", "a.mdb"], p).status.success());
    assert!(mdbench(&["corrupt", "--in", "a.mdb", "--snr", "20", "--seed", "1", "--out", "b.mdb"], p).status.success());
    let o = mdbench(&["corrupt", "--in", "b.mdb", "--snr", "20", "--seed", "1", "--out", "c.mdb"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("already noisy"));
}

#[test]
fn truncated_container_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(mdbench(&["generate", "--system", "logistic", "--out", "a.mdb"], p).status.success());
    let bytes = std::fs::read(p.join("a.mdb")).unwrap();
    std::fs::write(p.join("t.mdb"), &bytes[..bytes.len() - 700]).unwrap();
    let o = mdbench(&["discover", "--method", "sindy", "--data", "t.mdb", "--out", "r.jsonl"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("truncated array"), "{}", stderr(&o));
}

#[test]
fn unknown_system_and_method_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdbench(&["generate", "--system", "navier_stokes", "--out", "x.mdb"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = mdbench(&["grid", "--method", "pysr"], dir.path());
    assert!(!o.status.success());
    let o = mdbench(&["grid", "--method", "sindy", "--kind", "pde"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn printed_grids_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = mdbench(&["grid", "--method", "ewsindy"], dir.path());
    assert!(o.status.success());
    let g: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(g["thresholds"].as_array().unwrap().len(), 16);
    assert_eq!(g["integration_points"], serde_json::json!([200, 2000]));
    assert_eq!(g["n_models"], serde_json::json!([10, 20, 50]));
}

#[test]
fn manifest_run_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let manifest = r#"{"systems":["logistic","harmonic_oscillator"],"methods":["sindy","pdefind"],"seeds":[0,1]}"#;
    std::fs::write(p.join("m.json"), manifest).unwrap();
    let o = mdbench(&["run", "--manifest", "m.json", "--out", "r.jsonl", "--summary", "s.csv", "--jobs", "2"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 written"));
    let o = mdbench(&["run", "--manifest", "m.json", "--out", "r.jsonl"], p);
    assert!(stdout(&o).contains("0 written, 4 resumed"));
    assert_eq!(std::fs::read_to_string(p.join("r.jsonl")).unwrap().lines().count(), 4);
    assert!(std::fs::read_to_string(p.join("s.csv")).unwrap().contains("sindy,clean,4,0"));
}

#[test]
fn jobs_default_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(mdbench(&["generate", "--system", "logistic", "--out", "a.mdb"], p).status.success());
    let grid = r#"{"thresholds":[0.01],"bases":[["poly"]],"poly_orders":[2],"alphas":[0.05],"max_iters":[20]}"#;
    std::fs::write(p.join("g.json"), grid).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mdbench"))
        .args(["discover", "--method", "sindy", "--data", "a.mdb", "--grid", "g.json", "--out", "r.jsonl"])
        .current_dir(p)
        .env("MDBENCH_JOBS", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_mdbench"))
        .args(["discover", "--method", "sindy", "--data", "a.mdb", "--grid", "g.json", "--out", "r.jsonl"])
        .current_dir(p)
        .env("MDBENCH_JOBS", "two")
        .output()
        .unwrap();
    assert!(!o.status.success());
}
