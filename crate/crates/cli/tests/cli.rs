use std::process::{Command, Output};

fn gridless(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridless"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn selftest_passes() {
    let out = gridless(&["selftest", "--instances", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.trim().is_empty());
}

#[test]
fn simulate_prints_csv_and_writes_the_plot() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("fig.svg");
    let out = gridless(&[
        "simulate",
        "--desk",
        "--trials",
        "1",
        "--snr-db",
        "-5,5",
        "--bits",
        "2",
        "--estimators",
        "nfcfgs_cv,oracle_stop",
        "--plot",
        plot.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "trial,seed,estimator,snr_db,bits,nmse,path_count,iterations,runtime_s");
    assert_eq!(rows.len(), 1 + 2 * 2);
    assert!(rows.iter().any(|r| r.contains(",oracle_stop,-5,2,")));
    assert!(std::fs::read_to_string(plot).unwrap().contains("<svg"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        "antennas = 8\nrf_chains = 2\nusers = 1\nslots = 60\npaths_per_user = [1]\nsnr_db = [10.0]\nbits = [3]\n",
    )
    .unwrap();
    let csv = dir.path().join("out.csv");
    let args = [
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ];
    assert!(gridless(&args).status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("# antennas = 8"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 2);
}

#[test]
fn fatal_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "antennas = 4\nrf_chains = 8\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--config", bad.to_str().unwrap()],
        vec!["simulate", "--config", "/nonexistent/exp.toml"],
        vec!["simulate", "--desk", "--bits", "0"],
        vec!["simulate", "--desk", "--estimators", "nomp"],
        vec!["simulate", "--desk", "--trials", "1", "--out", "/nonexistent/dir/out.csv"],
        vec!["bogus"],
    ];
    for args in cases {
        let out = gridless(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
