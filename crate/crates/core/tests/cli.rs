use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spinchannel::config::parse_config;
use spinchannel::run::{MISSING_AVERAGE_HEADER, MISSING_HEADER, SWEEP_HEADER, TRAJECTORY_HEADER};

fn spinchannel(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinchannel"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn dynamics_writes_trajectory_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinchannel(
        &["--n", "1", "--gamma-nv-khz", "0", "--gamma-c-khz", "0", "--output", "traj.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let listed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(listed.lines().count(), 2);

    let csv = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() > 100);
    assert_eq!(rows[0][0], 0.0);
    assert!(rows.iter().all(|r| r.len() == 4 && (r[2] - 1.0).abs() < 1e-8));
    assert!(rows.iter().any(|r| r[1] > 0.9));

    let meta = fs::read_to_string(dir.path().join("traj.meta")).unwrap();
    assert!(meta.contains("backend = dense"));
    assert!(meta.contains("[model]"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "[model]\ngeometry = ladder\nn = 3\ngamma_c_khz = 5\n",
    )
    .unwrap();
    let out = spinchannel(
        &["--config", "run.toml", "--n", "2", "--print-config"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = parse_config(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.n, 2);
    assert_eq!(cfg.gamma_c_khz, 5.0);
    assert_eq!(cfg.geometry.name(), "ladder");
}

#[test]
fn bad_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinchannel(&["--n", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("bad.toml"), "[model]\nn = 2\ncolour = red\n").unwrap();
    let out = spinchannel(&["--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));

    let out = spinchannel(&["--chi-max", "8", "--chi-schedule", "8,16"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oversized_dense_request_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinchannel(
        &["--geometry", "ladder", "--n", "5", "--solver", "dense", "--output", "big.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn missing_study_enumerates_every_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinchannel(
        &[
            "--n", "3", "--experiment", "missing", "--p-grid", "0,0.5,1", "--output", "m.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], MISSING_HEADER);
    let split = lines.iter().position(|l| *l == MISSING_AVERAGE_HEADER).unwrap();
    assert_eq!(split, 9);
    assert_eq!(lines.len(), split + 4);
    let full: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    for row in &lines[2..split] {
        let e: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(e, 0.0, "{row}");
    }
    let avg = |i: usize| -> f64 { lines[split + i].split(',').nth(1).unwrap().parse().unwrap() };
    assert_eq!(avg(1), full);
    assert!((avg(2) - full / 8.0).abs() < 1e-15);
    assert_eq!(avg(3), 0.0);
}

#[test]
fn length_sweep_lists_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = spinchannel(
        &[
            "--experiment", "length_sweep", "--n-list", "1,2", "--gamma-c-list-khz", "0,2",
            "--output", "sweep.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("chain,1,0"));
    assert!(lines[4].starts_with("chain,2,2"));
    // per-point trajectories plus the summary and its meta file
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 6);
}
