use std::process::Command;

fn multistop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multistop"))
}

const SMALL: &[&str] = &[
    "--horizon", "12", "--n1", "300", "--n2", "3000", "--n3", "20", "--n4", "8", "--no-timing",
];

#[test]
fn writes_a_csv_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let status = multistop()
        .args(SMALL)
        .args(["--delta", "1,2", "--rights", "1,2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "delta,L,lower,upper,ci_low,ci_high,std_lower,std_upper,seconds");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,1,"));
    assert!(lines[4].starts_with("2,2,"));
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn output_does_not_depend_on_workers() {
    let run = |workers: &str| {
        let out = multistop()
            .args(SMALL)
            .args(["--delta", "1,3", "--rights", "2", "--volume", "offpeak", "--workers", workers])
            .output()
            .unwrap();
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "horizon = 10\nn1 = 200\nn2 = 2000\nn3 = 10\nn4 = 5\nrights = [1, 2]\ndelta = 1\nseed = 4\npreset = \"exputil\"\n",
    )
    .unwrap();
    let out = multistop()
        .arg("--config")
        .arg(&cfg)
        .args(["--rights", "3", "--no-timing"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("1,3,-"), "{}", rows[0]);
}

#[test]
fn unknown_config_keys_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "sigmaa = 0.4\n").unwrap();
    let out = multistop().arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigmaa"));
}

#[test]
fn failing_rows_do_not_stop_the_table() {
    let out = multistop()
        .args(SMALL)
        .args(["--delta", "0,1", "--rights", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta=0"));
}

#[test]
fn saved_table_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("coeffs.csv");
    let theta = dir.path().join("theta.csv");
    let first = multistop()
        .args(SMALL)
        .arg("--table-out")
        .arg(&table)
        .arg("--dump-theta")
        .arg(&theta)
        .output()
        .unwrap();
    assert!(first.status.success());
    let second = multistop().args(SMALL).arg("--table-in").arg(&table).output().unwrap();
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
    let dumped = std::fs::read_to_string(&theta).unwrap();
    assert_eq!(dumped.lines().count(), 21);
}

#[test]
fn oracle_check_passes() {
    let out = multistop().args(["--oracle-check", "--oracle-instances", "30"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("oracle check passed"));
}
