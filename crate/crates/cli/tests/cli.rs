use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_asysqn"));
    c.env("ASYSQN_OUT_DIR", dir).env_remove("RUST_LOG");
    c
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn sim1(dir: &Path, n: usize) -> PathBuf {
    let p = dir.join("sim1.svm");
    run_ok(bin(dir).args(["gen", "sim1", "--n", &n.to_string(), "--a", "0.1", "--b", "10", "--seed", "3", "-o"]).arg(&p));
    p
}

/// Header and data rows of a trace CSV, skipping `#` lines.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn gen_writes_one_line_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let p = sim1(dir.path(), 123);
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 123);
    let out = run_ok(bin(dir.path()).args(["gen", "sim2", "--n", "40", "--d", "5", "--cond", "10"]));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("d = 5") && text.contains("condition number"));
    assert_eq!(std::fs::read_to_string(dir.path().join("sim2.svm")).unwrap().lines().count(), 40);
}

#[test]
fn gen_without_n_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path()).args(["gen", "sim1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_header_and_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 500);
    let out = run_ok(bin(dir.path()).args(["run", "--algo", "asysqn", "--epochs", "50", "--eta", "0.05", "--data"]).arg(&data));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.path().join("asysqn-p1.csv")).unwrap();
    let (header, rows) = csv_rows(&text);
    assert_eq!(
        header.join(","),
        "algo,threads,epoch,datapasses,wall_ms,objective,gap,grad_norm,max_staleness"
    );
    assert_eq!(rows.len(), 50);
    assert!(text.starts_with("# "));
}

#[test]
fn svrg_datapasses_grow_by_two_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 500);
    let out = run_ok(bin(dir.path()).args(["run", "--algo", "svrg", "--epochs", "6", "--eta", "0.05", "-o", "-", "--data"]).arg(&data));
    let (header, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    let dp = column(&header, "datapasses");
    for (k, r) in rows.iter().enumerate() {
        assert_eq!(r[dp].parse::<f64>().unwrap(), 2.0 * (k + 1) as f64);
    }
}

#[test]
fn target_gap_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 500);
    let out = run_ok(
        bin(dir.path())
            .args(["run", "--algo", "svrg", "--epochs", "200", "--eta", "0.2", "--target-gap", "1e-3", "-o", "-", "--data"])
            .arg(&data),
    );
    let (header, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert!(rows.len() < 200);
    let gap = column(&header, "gap");
    assert!(rows.last().unwrap()[gap].parse::<f64>().unwrap() <= 1e-3);
    assert!(rows[rows.len() - 2][gap].parse::<f64>().unwrap() > 1e-3);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 200);
    let out = bin(dir.path()).args(["run", "--algo", "sgd", "--epochs", "20", "--eta", "1e3", "-o", "-", "--data"]).arg(&data).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reduce eta"));
}

#[test]
fn unreadable_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path()).args(["run", "--data"]).arg(dir.path().join("missing.svm")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let bad = dir.path().join("bad.svm");
    std::fs::write(&bad, "1 x:y\n").unwrap();
    let out = bin(dir.path()).args(["run", "--eta", "0.1", "--data"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 300);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("# test config\nalgo = svrg\nepochs = 7\neta = 0.05\nb = 5\ndata = {}\n", data.display())).unwrap();
    let out = run_ok(bin(dir.path()).args(["run", "--epochs", "3", "-o", "-", "--config"]).arg(&cfg));
    let text = String::from_utf8(out.stdout).unwrap();
    let (header, rows) = csv_rows(&text);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[column(&header, "algo")] == "svrg"));
    assert!(text.contains("# b = 5"));

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let out = bin(dir.path()).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_worker_runs_repeat_except_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 400);
    let strip = |o: Output| {
        let text = String::from_utf8(o.stdout).unwrap();
        let (header, rows) = csv_rows(&text);
        let wall = column(&header, "wall_ms");
        let comments: Vec<String> = text.lines().filter(|l| l.starts_with('#')).map(String::from).collect();
        let rows: Vec<Vec<String>> = rows
            .into_iter()
            .map(|mut r| {
                r.remove(wall);
                r
            })
            .collect();
        (comments, rows)
    };
    let args = ["run", "--algo", "asysqn", "--epochs", "12", "--eta", "0.1", "--seed", "9", "-o", "-", "--data"];
    let a = strip(run_ok(bin(dir.path()).args(args).arg(&data)));
    let b = strip(run_ok(bin(dir.path()).args(args).arg(&data)));
    assert_eq!(a, b);
}

#[test]
fn bench_with_one_thread_has_unit_speedup() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 300);
    let out = run_ok(
        bin(dir.path())
            .args(["bench", "--algo", "svrg", "--eta", "0.2", "--epochs", "100", "--target-gap", "1e-6", "--threads", "1", "-o", "-", "--data"])
            .arg(&data),
    );
    let (header, rows) = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(header.join(","), "threads,wall_ms,speedup");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][2], "1.0");

    let out = bin(dir.path()).args(["bench", "--threads", "2,4", "--data"]).arg(&data).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diag_on_isotropic_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    // z in {e1, e2} equally often: mean gram is I/2, so mu = l = 1 for ls
    let data = dir.path().join("iso.svm");
    std::fs::write(&data, "1 1:1\n1 2:1\n-1 1:1\n-1 2:1\n").unwrap();
    let out = run_ok(bin(dir.path()).args(["diag", "--M", "1", "--m", "100", "--tau", "0", "--eta", "1e-4", "--data"]).arg(&data));
    let text = String::from_utf8(out.stdout).unwrap();
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line[key.len()..].split_whitespace().next().unwrap().parse().unwrap()
    };
    assert!((value("mu") - 1.0).abs() < 1e-12);
    assert!((value("l ") - 1.0).abs() < 1e-12);
    assert!((value("kappa(B)") - 1.0).abs() < 1e-12);
    assert_eq!(value("d + M"), 3.0);
    assert!(text.contains("contracts"));
}

#[test]
fn diag_refuses_hinge() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 50);
    let out = bin(dir.path()).args(["diag", "--model", "hinge", "--data"]).arg(&data).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diagnostics unavailable for nonsmooth loss"));
}

#[test]
fn diag_flags_step_beyond_delay_bound() {
    let dir = tempfile::tempdir().unwrap();
    let data = sim1(dir.path(), 200);
    let out = run_ok(bin(dir.path()).args(["diag", "--tau", "5", "--eta", "0.5", "--data"]).arg(&data));
    assert!(String::from_utf8(out.stdout).unwrap().contains("VIOLATION"));
}
