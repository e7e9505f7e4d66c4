use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flocking(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flocking"))
        .args(args)
        .env_remove("FLOCKING_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn critical_noise_matches_known_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dstar.csv");
    let o = flocking(&["critical-noise", "--d", "1,2", "--alpha", "2", "-o", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    let k = column(&header, "D_star");
    let values: Vec<f64> = rows.iter().map(|r| r[k].parse().unwrap()).collect();
    assert!((values[0] - 0.529).abs() < 1e-3);
    assert!((values[1] - 0.354).abs() < 1e-3);
}

#[test]
fn malformed_flag_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.csv");
    let o = flocking(&["critical-noise", "--d", "one", "-o", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = flocking(&["bifurcation", "--range", "0.1:0.5", "-o", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = flocking(&["bifurcation", "--alpha", "-1", "-o", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn empty_noise_grid_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty.csv");
    let o = flocking(&["bifurcation", "--range", "0.1:0.6:0", "-o", path_str(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), "D,branch,u,residual,kappa,eta\n");
}

#[test]
fn polarized_branch_ends_at_the_critical_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bif.csv");
    let o = flocking(&["bifurcation", "--d", "1", "--alpha", "2", "--range", "0.1:0.6:26", "-o", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    let (kd, kb, ku) = (column(&header, "D"), column(&header, "branch"), column(&header, "u"));
    let polarized: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r[kb] == "polarized")
        .map(|r| (r[kd].parse().unwrap(), r[ku].parse().unwrap()))
        .collect();
    assert!(!polarized.is_empty());
    assert!(polarized.iter().all(|&(d, u)| d < 0.529 && u > 0.0));
    let isotropic = rows.iter().filter(|r| r[kb] == "isotropic").count();
    assert_eq!(isotropic, 26);
}

#[test]
fn polarized_branch_vanishes_at_the_critical_noise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bif.csv");
    let o = flocking(&["bifurcation", "--noise", "0.5,0.529009753106967,0.54", "-o", path_str(&out)]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&out);
    let (kd, kb, ku) = (column(&header, "D"), column(&header, "branch"), column(&header, "u"));
    for r in rows.iter().filter(|r| r[kb] == "polarized") {
        let d: f64 = r[kd].parse().unwrap();
        let u: f64 = r[ku].parse().unwrap();
        if (d - 0.529009753106967).abs() < 1e-12 {
            assert!(u < 1e-3);
        }
        assert!(d < 0.54);
    }
}

#[test]
fn check_suites_and_unknown_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("checks.csv");
    let o = flocking(&["check", "ipp", "special-functions", "-o", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[column(&header, "passed")] == "true"));
    let o = flocking(&["check", "bogus-name"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"d": 1, "nosie": [0.3]}"#).unwrap();
    let o = flocking(&["bifurcation", "--config", path_str(&config)]);
    assert_eq!(o.status.code(), Some(2));
    let o = flocking(&["bifurcation", "--config", path_str(&dir.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"d": 2, "alpha": 2, "range": {"start": 0.1, "end": 0.4, "count": 7}}"#).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = flocking(&["bifurcation", "--config", path_str(&config), "-o", path_str(out)]);
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_flocking"))
        .args(["h-curve", "--d", "1", "--range", "0.2:0.8:4"])
        .env("FLOCKING_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let (header, rows) = read_csv(&dir.path().join("h_vs_D.csv"));
    assert_eq!(header, ["d", "alpha", "D", "h"]);
    let h: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(h[0] > 0.0 && h[3] < 0.0);
}

#[test]
fn csv_goes_to_stdout_without_a_destination() {
    let o = flocking(&["critical-noise"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("d,alpha,D_star,"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn stationary_initial_data_gives_a_flat_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("evolve.json");
    fs::write(
        &config,
        r#"{"noise": 0.3, "t_final": 1, "initial": {"kind": "stationary", "branch": "polarized"}, "diagnostics_stride": 5}"#,
    )
    .unwrap();
    let out = dir.path().join("trace.csv");
    let summary = dir.path().join("summary.json");
    let o = flocking(&[
        "evolve",
        "--config",
        path_str(&config),
        "--summary",
        path_str(&summary),
        "-o",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert!(header.iter().any(|h| h == "relative_entropy_polarized"));
    let (km, kf) = (column(&header, "mean_velocity_1"), column(&header, "free_energy"));
    let first: Vec<f64> = [km, kf].iter().map(|&k| rows[0][k].parse().unwrap()).collect();
    for r in &rows {
        assert!((r[km].parse::<f64>().unwrap() - first[0]).abs() < 1e-10);
        assert!((r[kf].parse::<f64>().unwrap() - first[1]).abs() < 1e-12);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(summary["limit"], "polarized");
}

#[test]
fn evolve_writes_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let o = flocking(&[
        "evolve",
        "--t-final",
        "0.2",
        "--cells",
        "128",
        "--checkpoint-every",
        "10",
        "--checkpoint-dir",
        path_str(dir.path()),
        "-o",
        path_str(&dir.path().join("trace.csv")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let count = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("checkpoint_"))
        .count();
    assert!(count >= 2);
}

#[test]
fn spectrum_rows_follow_the_noise_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gap.csv");
    let o = flocking(&["spectrum", "--noise", "0.8,1.2", "--cells", "256", "-o", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header.len(), 18);
    let kd = column(&header, "D");
    let noises: Vec<f64> = rows.iter().map(|r| r[kd].parse().unwrap()).collect();
    assert_eq!(noises, [0.8, 1.2]);
    let kc = column(&header, "c_opt");
    assert!(rows.iter().all(|r| r[kc].parse::<f64>().unwrap() > 0.0));

    let o = flocking(&["spectrum", "--reference", "polarized", "--noise", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
}
