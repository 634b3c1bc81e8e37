use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use coeffid_cli::experiments::exact_state_field;
use coeffid_cli::output::{emit_field, read_field};

fn coeffid(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coeffid"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn exact_state_snapshot_round_trips_and_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ubar.grid");
    let (nx, ny, vals) = exact_state_field(30).unwrap();
    emit_field(&path, nx, ny, &vals).unwrap();
    let (rx, ry, back) = read_field(&path).unwrap();
    assert_eq!((rx, ry), (31, 31));
    assert_eq!(back, vals);
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (i as f64 / 30.0, j as f64 / 30.0);
            let exact = (PI * x * x).cos() * (2.0 * PI * y).cos();
            assert!((back[j * nx + i] - exact).abs() <= 1e-15, "node ({i}, {j})");
        }
    }
}

#[test]
fn table_run_writes_csv_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = coeffid(&["table1", "--n", "4"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&dir.path().join("table1.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..4], ["h", "n", "delta", "rel_l2_a"]);
    assert_eq!(rows[1][0], "0.3535534");
    for field in ["a", "u", "z"] {
        let (nx, ny, v) = read_field(&dir.path().join(format!("table1_n4_d0e0_{field}.grid"))).unwrap();
        assert_eq!((nx, ny, v.len()), (5, 5, 25));
    }
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# smaller run\nn = 3\nmax_iters = 2\nwrite_fields = false\n").unwrap();
    let out = coeffid(&["table1", "--n", "4", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("table1.csv"));
    assert_eq!(rows[1][1], "3");
    assert!(!dir.path().join("table1_n3_d0e0_a.grid").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let failure = coeffid(&["failure", "--n", "6"], dir.path());
    assert_eq!(failure.status.code(), Some(2));
    let rows = csv_rows(&dir.path().join("failure.csv"));
    assert_eq!(rows[1][4], "singular_system");

    assert_eq!(coeffid(&["failure", "--n", "6", "--eps", "1e-4"], dir.path()).status.code(), Some(0));
    assert_eq!(coeffid(&["table1", "--objective", "lasso"], dir.path()).status.code(), Some(1));
    assert_eq!(coeffid(&["table1", "--n", "0"], dir.path()).status.code(), Some(1));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "colour = blue\n").unwrap();
    let out = coeffid(&["table1", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
}

#[test]
fn gradient_checks_pass_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = coeffid(&["check-gradients"], dir.path());
    assert!(out.status.success());
    let rows = csv_rows(&dir.path().join("check_gradients.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows[1..].iter().all(|r| r[4] == "true"), "{rows:?}");
}
