use std::path::{Path, PathBuf};
use std::process::Command;

use emesh_harness::experiment::{run_experiment, run_repetition, ExperimentPlan};
use emesh_harness::report::{collect_dir, emit_plot, read_csv, write_result, PlotGroup, CSV_HEADER};
use emesh_harness::scenario::{load_scenario, LoadError, Role, ValidationError};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scn"))
}

#[test]
fn bundled_scenarios_have_the_testbed_shape() {
    let home = load_scenario(scenario_path("smart_home")).unwrap();
    assert_eq!(home.count(Role::Relay), 8);
    assert_eq!(home.count(Role::ProxyServer), 3);
    assert_eq!(home.count(Role::ProxyClient) + home.count(Role::Source), 3);
    assert_eq!(home.dimensions, (13.6, 9.25));

    let office = load_scenario(scenario_path("smart_office")).unwrap();
    assert_eq!(office.count(Role::Relay), 28);
    assert_eq!(office.count(Role::ProxyServer), 3);
    assert_eq!(office.dimensions, (85.0, 65.0));
}

#[test]
fn duplicate_id_file_rejected() {
    let text = std::fs::read_to_string(scenario_path("smart_home")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dup.scn");
    std::fs::write(&p, text.replace("R8 relay", "R7 relay")).unwrap();
    match load_scenario(&p) {
        Err(LoadError::Validation(ValidationError::DuplicateId(id))) => assert_eq!(id, "R7"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn total_loss_answers_nothing() {
    let mut cfg = load_scenario(scenario_path("smart_home")).unwrap();
    cfg.sim.radio.base_loss = 1.0;
    let r = run_experiment(&cfg, &ExperimentPlan::numbered(1, 3).unwrap().with_repetitions(1)).unwrap();
    assert_eq!(r.aggregates.requests, 60);
    assert_eq!(r.aggregates.loss_pct, 100.0);
    assert!(r.aggregates.response_ms.is_none());
    assert!(r.records().all(|m| m.first_offer_ms.is_none() && m.hops_out.is_none()));
}

#[test]
fn repetitions_are_deterministic_per_seed() {
    let mut cfg = load_scenario(scenario_path("smart_office")).unwrap();
    cfg.sim.radio.interference_loss = 0.5;
    let plan = ExperimentPlan::numbered(1, 42).unwrap();
    let (a, ta) = run_repetition(&cfg, &plan, 2).unwrap();
    let (b, tb) = run_repetition(&cfg, &plan, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_jsonl(), tb.to_jsonl());
    let (c, _) = run_repetition(&cfg, &plan, 3).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn csv_and_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut groups = Vec::new();
    for name in ["smart_home", "smart_office"] {
        let cfg = load_scenario(scenario_path(name)).unwrap();
        for k in 1..=3 {
            let r = run_experiment(&cfg, &ExperimentPlan::numbered(k, 1).unwrap().with_repetitions(1)).unwrap();
            write_result(&r, dir.path()).unwrap();
            groups.push(PlotGroup::from_result(&r));
        }
    }
    let csv = dir.path().join("smart_home_exp1_rep0.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(text.lines().count(), 61);
    assert_eq!(read_csv(&csv).unwrap().len(), 60);
    assert_eq!(collect_dir(dir.path()).unwrap().len(), 6);

    let svg = dir.path().join("fig.svg");
    emit_plot(&groups, &svg).unwrap();
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg"));
    assert!(emit_plot(&[], dir.path().join("empty.svg")).is_err());
}

#[test]
fn cli_validate_run_plot() {
    let bin = env!("CARGO_BIN_EXE_emesh");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin).args(["validate", "--scenario"]).arg(scenario_path("smart_office")).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("28 relays"));

    let trace = dir.path().join("trace.jsonl");
    let status = Command::new(bin)
        .args(["run", "--experiment", "2", "--seed", "5", "--reps", "2", "--scenario"])
        .arg(scenario_path("smart_home"))
        .arg("--out")
        .arg(dir.path())
        .arg("--trace")
        .arg(&trace)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(read_csv(dir.path().join("smart_home_exp2_rep1.csv")).unwrap().len(), 120);
    let first = std::fs::read_to_string(&trace).unwrap();
    assert!(first.lines().next().unwrap().starts_with("{\"event\":\"publish\""));

    let svg = dir.path().join("fig.svg");
    let out = Command::new(bin).args(["plot", "--in"]).arg(dir.path()).arg("--out").arg(&svg).output().unwrap();
    assert!(out.status.success());
    assert!(svg.exists());

    let empty = tempfile::tempdir().unwrap();
    let out = Command::new(bin).args(["plot", "--in"]).arg(empty.path()).arg("--out").arg(&svg).output().unwrap();
    assert!(!out.status.success());

    let out = Command::new(bin)
        .args(["run", "--experiment", "4", "--out", "x", "--scenario"])
        .arg(scenario_path("smart_home"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
