use std::process::{Command, Output};

fn bathforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bathforge"))
        .args(args)
        .env("BATHFORGE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_on_every_subcommand() {
    for sub in [
        "steady", "evolve", "preset", "sweep", "fit", "design", "report",
    ] {
        let o = bathforge(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bathforge(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bathforge(&["design"]).status.code(), Some(2));
    assert_eq!(bathforge(&["preset", "nope"]).status.code(), Some(2));
    let o = bathforge(&["steady", "--set", "system.kappa_s=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("system.kappa_s"));
}

#[test]
fn domain_errors_exit_1() {
    let o = bathforge(&["design", "--target", "0.5,0.6"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time_us,P_g\n0,1\n").unwrap();
    let o = bathforge(&["fit", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`P_e`"));
}

#[test]
fn steady_prints_populations_and_mu() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"system": {"qubit_dim": 2, "kappa_q_down": 0, "kappa_q_up": 0},
            "drives": [{"kind": "sigma_ge", "g_eff": 0.1298}, {"kind": "delta_ge", "g_eff": 0.0649}]}"#,
    )
    .unwrap();
    let o = bathforge(&["steady", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(
        out.contains("P_g = 0.2000") && out.contains("P_e = 0.8000"),
        "{out}"
    );
    assert!(out.contains("mu") && out.contains("fermi-dirac"), "{out}");
    assert!(!out.contains("P_f+"));

    let o = bathforge(&["steady", "--set", "system.qubit_dim=3"]);
    assert!(stdout(&o).contains("P_f+"));
}

#[test]
fn design_forward_check_hits_target() {
    let o = bathforge(&["design", "--target", "0.2,0.8"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(
        out.contains("sigma_ge") && out.contains("delta_ge"),
        "{out}"
    );
    let err: f64 = out
        .split("max error")
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(err <= 1e-3, "{out}");
}

#[test]
fn preset_writes_report_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bathforge(&["preset", "balanced_ge", "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(out.join("report.json").exists());
    assert!(out.join("trajectory_00.csv").exists());
    assert!(out.join("trajectory_01.csv").exists());

    let o = bathforge(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("preset balanced_ge"));

    let o = bathforge(&["fit", out.join("trajectory_00.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let fits: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ge = fits[0]["params"]["ge"].as_f64().unwrap();
    assert!((ge - 0.054).abs() < 0.003, "{ge}");
}

#[test]
fn evolve_streams_csv_and_sweep_writes_dir() {
    let o = bathforge(&[
        "evolve",
        "--set",
        "system.qubit_dim=2",
        "--set",
        r#"sequence.segments=[{"duration": 1}]"#,
        "--set",
        "sequence.sample_dt=0.5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "time_us,P_g,P_e,P_fplus,P_snail0,P_snail1,trace_err"
    );
    // 0, 0.5, 1 µs pump, then 1.5, 2 and 2.2 µs through the window.
    let times: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(times, ["0", "0.5", "1", "1.5", "2", "2.2"]);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = bathforge(&[
        "sweep",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "system.qubit_dim=2",
        "--set",
        r#"drives=[{"kind":"sigma_ge","g_eff":0.2}]"#,
        "--set",
        r#"sweep={"drive":0,"g_eff":[0.1,0.2]}"#,
        "--set",
        r#"sequence.segments=[{"duration": 5}]"#,
        "--set",
        "sequence.sample_dt=0.25",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 3);
}
