use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn confbal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confbal"))
        .args(args)
        .env("CONFBAL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "n = 40, 60\nreps = 3\ngamma = 0.2\nmethods = optz, ips, mean\n\
                     draws = 10\ngrid_size = 64\noracle_samples = 20000\nseed = 5\n";

#[test]
fn unknown_flag_prints_usage_and_exits_one() {
    let out = confbal(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(confbal(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.conf", "reps = 3\ngama = 0.2\n");
    let out = confbal(&["oracle", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
}

#[test]
fn missing_config_exits_one() {
    let out = confbal(&["oracle", "--config", "/nonexistent/x.conf"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_on_uniform_policy_linear_link_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = ["0"; 10].join(", ");
    let cfg = write_config(
        dir.path(),
        "u.conf",
        &format!("link = linear\nzeta0 = 0, 0\npsi1 = {zeros}\npsi2 = {zeros}\noracle_samples = 200000\n"),
    );
    let out = confbal(&["oracle", "--config", &cfg]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let nums: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == '(')
        .filter_map(|s| s.parse().ok())
        .collect();
    let (tau, se) = (nums[0], nums[1]);
    assert!(tau.abs() <= 3.0 * se, "{text}");
}

#[test]
fn run_then_table_reproduces_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.conf", SMALL);
    let out_dir = dir.path().join("res");
    let out = confbal(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("| Method |"));
    for f in [
        "replications.csv",
        "aggregate.csv",
        "tables.md",
        "config.txt",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let table = confbal(&[
        "table",
        "--in",
        out_dir.join("replications.csv").to_str().unwrap(),
    ]);
    assert_eq!(table.status.code(), Some(0));
    assert_eq!(
        String::from_utf8(table.stdout).unwrap(),
        fs::read_to_string(out_dir.join("aggregate.csv")).unwrap()
    );
    let md = confbal(&[
        "table",
        "--markdown",
        "--in",
        out_dir.join("replications.csv").to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&md.stdout).contains("## RMSE"));
}

#[test]
fn overrides_apply_and_output_path_is_not_numeric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.conf", SMALL);
    let run = |seed: &str, out: &str| {
        let o = dir.path().join(out);
        let res = confbal(&[
            "run",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--reps",
            "2",
            "--out",
            o.to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(0));
        fs::read_to_string(o.join("aggregate.csv")).unwrap()
    };
    let a = run("9", "a");
    assert_eq!(a, run("9", "b"));
    assert_ne!(a, run("10", "c"));
    assert!(a.lines().skip(1).all(|l| l.split(',').nth(4) == Some("2")));
}

#[test]
fn zero_reps_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.conf", SMALL);
    let out = confbal(&[
        "run",
        "--config",
        &cfg,
        "--reps",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reps"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        assert!(
            confbal_core::harness::ExperimentConfig::parse(&text).is_ok(),
            "{}",
            path.display()
        );
    }
}

#[test]
fn selftest_passes() {
    let out = confbal(&["selftest"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
