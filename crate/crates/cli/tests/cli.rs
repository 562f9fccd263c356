use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ultranet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ultranet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_out_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"problem":{"kind":"sawtooth"}}"#);
    let o = ultranet(&["solve", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn malformed_json_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"problem":{"kind":"sawtooth""#);
    let out = tmp.path().join("o");
    let o = ultranet(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn vanishing_boundary_data_names_the_node() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"problem":{"kind":"singular","boundary":{"affine":{"gradient":[1.0,0.0],"offset":-0.5}}},"levels":"3..5"}"#,
    );
    let out = tmp.path().join("o");
    let o = ultranet(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("boundary node"), "{}", stderr(&o));
}

#[test]
fn output_parent_must_exist() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"problem":{"kind":"sawtooth"},"levels":"3..5"}"#);
    let out = tmp.path().join("missing/parent/o");
    let o = ultranet(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_sweep_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.json", r#"{"base":{"problem":{"kind":"sawtooth"}},"grid":[]}"#);
    let out = tmp.path().join("o");
    let o = ultranet(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sawtooth_solve_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"problem":{"kind":"sawtooth"},"dumps":"both"}"#);
    let out = tmp.path().join("o");
    let o = ultranet(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--levels", "3..8", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["command"], "solve");
    let hash = report["config_hash"].as_str().unwrap();
    for f in ["levels.csv", "splitting.csv", "psi.csv", "plot.csv", "classification.json", "report.json", "config.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    for f in ["u_L8.bin", "u_L8.csv", "nodes_L8.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let mut rdr = csv::Reader::from_path(out.join("levels.csv")).unwrap();
    let hc = rdr.headers().unwrap().iter().position(|h| h == "config_hash").unwrap();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| &r[hc] == hash));
}

#[test]
fn sweep_over_potential_amplitude() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "s.json",
        r#"{"base":{"problem":{"kind":"sign-perturbed"},"levels":"2..4","dumps":"none"},
            "grid":[{"problem":{"potential":"zero"}},
                    {"problem":{"potential":{"cone":{"amplitude":100.0,"center":null}}}}]}"#,
    );
    let out = tmp.path().join("o");
    let o = ultranet(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0) | Some(1) | Some(3)), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let hdr = rdr.headers().unwrap().clone();
    let col = |name: &str| hdr.iter().position(|h| h == name).unwrap();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let m: Vec<f64> = rows.iter().map(|r| r[col("m_finest")].parse().unwrap()).collect();
    // a nonnegative potential can only raise the minimum
    assert!(m[1] > m[0], "{m:?}");
    assert!(out.join("run_000/levels.csv").is_file() && out.join("run_001/levels.csv").is_file());
}

#[test]
fn calculus_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = ultranet(&["calculus-check", "--out", out.to_str().unwrap(), "--levels", "3..5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.starts_with("invariant,verdict,measured,threshold"));
    assert!(!table.contains(",fail,"));
}

#[test]
fn zero_threads_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = ultranet(&["calculus-check", "--out", out.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
