use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tps_cli::{
    emit_report, run_command, sig6, CliError, Format, LoggedFrame, MeasurementLog, Outcome,
    STATE_COLUMNS,
};
use tps_core::powerflow::PowerflowError;
use tps_core::sim::{run_timeline, MetricsSummary, Scenario, SimError};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> Scenario {
    serde_json::from_str(&fs::read_to_string(scenario_path(name)).unwrap()).unwrap()
}

fn run(args: &[&str]) -> Result<Outcome, CliError> {
    run_command(std::iter::once("tps").chain(args.iter().copied()))
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn attack_table_matches_reference_block() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let sc = scenario_path("table2.json");
    let outcome = run(&[
        "attack",
        "--scenario",
        sc.to_str().unwrap(),
        "--kind",
        "efficiency",
        "--writable",
        "2",
        "--out",
        out,
    ])
    .unwrap();
    let Outcome::Attacked(av) = outcome else {
        panic!("unexpected outcome")
    };
    for (k, v) in [801.1, 847.7, 850.0, 805.2].into_iter().enumerate() {
        assert!(
            (av.induced_state.v[k] - v).abs() < 1.0,
            "V{} {}",
            k + 1,
            av.induced_state.v[k]
        );
    }
    assert!((av.v_prime[1] - 888.6).abs() < 1.0);
    assert!((av.i_prime[1] - 1409.6).abs() < 5.0);
    let csv = fs::read_to_string(dir.path().join("attack.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("node,role,s,V,I,P,s_prime,V_prime,I_prime,P_prime"));
    assert!(dir.path().join("attack.json").exists());
}

#[test]
fn empty_line_simulation_reports_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_path("empty-line.json");
    let outcome = run(&[
        "simulate",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .unwrap();
    let Outcome::Simulated(report) = outcome else {
        panic!("unexpected outcome")
    };
    assert_eq!(report.summary.efficiency_loss, 0.0);
    assert_eq!(report.summary.attacked_instants, 0);
    assert_eq!(
        header(&dir.path().join("state.csv")),
        STATE_COLUMNS.join(",")
    );
    for name in ["rates.csv", "roc.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), 1, "{name} should be header-only");
    }
}

#[test]
fn summary_round_trips_through_json() {
    let mut sc = load("fig9.json");
    sc.horizon = 60.0;
    sc.noise = 0.003;
    let report = run_timeline(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path(), Format::Csv).unwrap();
    let back: MetricsSummary =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(back, report.summary);
    let rows = fs::read_to_string(dir.path().join("state.csv")).unwrap();
    let nodes: usize = report.instants.iter().map(|r| r.nodes.len()).sum();
    assert_eq!(rows.lines().count(), 1 + nodes);
}

#[test]
fn same_manifest_gives_identical_bytes() {
    let mut sc = load("fig9.json");
    sc.horizon = 60.0;
    sc.noise = 0.003;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.json");
    fs::write(&path, serde_json::to_string(&sc).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        run(&[
            "simulate",
            "--scenario",
            path.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        outputs.push(out);
    }
    for name in ["state.csv", "verdicts.csv", "rates.csv", "summary.json"] {
        assert_eq!(
            fs::read(outputs[0].join(name)).unwrap(),
            fs::read(outputs[1].join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn json_report_feeds_report_command() {
    let mut sc = load("fig9.json");
    sc.horizon = 30.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.json");
    fs::write(&path, serde_json::to_string(&sc).unwrap()).unwrap();
    let json_dir = dir.path().join("json");
    let Outcome::Simulated(report) = run(&[
        "simulate",
        "--scenario",
        path.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        json_dir.to_str().unwrap(),
    ])
    .unwrap() else {
        panic!("unexpected outcome")
    };
    let csv_dir = dir.path().join("csv");
    let Outcome::Reported(summary) = run(&[
        "report",
        "--input",
        json_dir.join("report.json").to_str().unwrap(),
        "--out",
        csv_dir.to_str().unwrap(),
    ])
    .unwrap() else {
        panic!("unexpected outcome")
    };
    assert_eq!(*summary, report.summary);
    assert!(csv_dir.join("verdicts.csv").exists());
}

#[test]
fn roc_false_positive_column_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_path("table2.json");
    let Outcome::Roc(points) = run(&[
        "roc",
        "--scenario",
        sc.to_str().unwrap(),
        "--attack",
        "stealthy",
        "--tau-grid",
        "4:64:4",
        "--trials",
        "200",
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .unwrap() else {
        panic!("unexpected outcome")
    };
    assert_eq!(points.len(), 16);
    for w in points.windows(2) {
        assert!(w[1].fp <= w[0].fp, "{:?}", points);
    }
    // a stealthy attack leaves no residual, so BDD alarms track its false-alarm rate
    for p in &points {
        assert!(((1.0 - p.md_bdd) - p.fp_bdd).abs() <= 0.15, "{p:?}");
    }
    let text = fs::read_to_string(dir.path().join("roc.csv")).unwrap();
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn detect_flags_tampered_frame() {
    let sc = load("table2.json");
    let layout = sc.layout_at(0.0).unwrap();
    let honest = tps_core::powerflow::solve_steady_state(
        &layout.topology,
        &sc.params,
        &sc.thresholds,
        &layout.power_states,
        &Default::default(),
    )
    .unwrap();
    let frame = |dv: f64| {
        let mut v = honest.v.clone();
        v[1] += dv;
        LoggedFrame {
            t: 0.0,
            v,
            i: honest.i.clone(),
            s: layout.topology.positions().to_vec(),
        }
    };
    let log = MeasurementLog {
        frames: vec![frame(0.0), frame(0.0), frame(200.0)],
    };
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("log.json");
    fs::write(&log_path, serde_json::to_string(&log).unwrap()).unwrap();
    let Outcome::Detected(verdicts) = run(&[
        "detect",
        "--scenario",
        scenario_path("table2.json").to_str().unwrap(),
        "--measurements",
        log_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ])
    .unwrap() else {
        panic!("unexpected outcome")
    };
    assert!(!verdicts[0].gad_alarm && !verdicts[1].gad_alarm);
    assert!(verdicts[2].bdd_alarm && verdicts[2].gad_alarm);
    let text = fs::read_to_string(dir.path().join("verdicts.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn overrides_are_validated_before_running() {
    let sc = scenario_path("table2.json");
    for (flag, value) in [
        ("--tau", "-1"),
        ("--alpha", "1.5"),
        ("--window", "0"),
        ("--ds", "-0.1"),
    ] {
        let err = run(&["simulate", "--scenario", sc.to_str().unwrap(), flag, value]).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{flag} {value}: {err}");
    }
    let err = run(&[
        "attack",
        "--scenario",
        sc.to_str().unwrap(),
        "--kind",
        "efficiency",
        "--writable",
        "7",
    ])
    .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn sig6_formatting() {
    assert_eq!(sig6(815.58612), "815.586");
    assert_eq!(sig6(-3.6012849), "-3.60128");
    assert_eq!(sig6(0.0), "0");
    assert_eq!(sig6(1.2924712e-26), "1.29247e-26");
    assert_eq!(sig6(2.0), "2");
}

#[test]
fn binary_exit_codes_and_output_env() {
    let bin = env!("CARGO_BIN_EXE_tps");
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(bin)
        .args(["simulate", "--scenario"])
        .arg(scenario_path("empty-line.json"))
        .env("TPS_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("summary.json").exists());

    let missing = Command::new(bin)
        .args(["simulate", "--scenario", "/nonexistent/scenario.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(4));

    let bad = Command::new(bin)
        .args(["simulate", "--tau", "-3", "--scenario"])
        .arg(scenario_path("empty-line.json"))
        .env("TPS_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("detector"));
}

#[test]
fn solver_failures_map_to_exit_code_3() {
    let err = CliError::from(SimError::from(PowerflowError::Infeasible { residual: 1.0 }));
    assert_eq!(err.exit_code(), 3);
    let err = CliError::from(SimError::InvalidScenario {
        field: "horizon".into(),
        reason: "negative".into(),
    });
    assert_eq!(err.exit_code(), 2);
}
