//! End-to-end tests of the binary against the bundled data files.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::{Command, Output};

use loadflow::harness::SegmentedCase;
use loadflow::io;
use loadflow::loads::ModelKind;
use loadflow::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loadflow"))
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn pf_json_on_bundled_case() {
    let out = run(&["pf", "--case", data("case2_pq.json").to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["v"].as_array().unwrap().len(), 2);
    assert!(parsed["residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn opf_csv_reports_bound_activity() {
    let out = run(&[
        "opf",
        "--case",
        data("case3_pq.json").to_str().unwrap(),
        "--output",
        "csv",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.starts_with("bus,v_r,v_i,v_mag,bind\n"), "{text}");
    // constant-power loads drive the tight load-bus band to its top
    assert_eq!(text.matches(",upper").count(), 2, "{text}");
}

#[test]
fn classify_matches_known_types() {
    let out = run(&[
        "classify",
        "--case",
        data("case2_big.json").to_str().unwrap(),
        "--at-voltage",
        "1,0",
        "--output",
        "csv",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("ImpedanceType"), "{text}");
    assert!(text.contains("1.5169"), "{text}");
}

#[test]
fn fit_runs_on_bundled_measurements() {
    let out = run(&[
        "fit",
        "--measurements",
        data("two_day_bus4.csv").to_str().unwrap(),
        "--model",
        "big",
        "--segments",
        "2",
        "--min-len",
        "8",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        parsed["bus"].as_u64(),
        Some(4),
        "bus id comes from the file name"
    );
    assert_eq!(parsed["result"]["segments"].as_array().unwrap().len(), 2);
}

#[test]
fn measurement_header_typo_fails_with_named_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad1.csv");
    std::fs::write(&path, "t,vr,v_i,i_r,i_i\n0,1,0,1,0\n").unwrap();
    let out = run(&[
        "fit",
        "--measurements",
        path.to_str().unwrap(),
        "--model",
        "pq",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("vr"), "{err}");
}

fn small_contrast_segmented() -> String {
    let base = synth::three_bus_case(ModelKind::Pq);
    let pq_family: BTreeMap<_, _> = base.loads().iter().map(|l| (l.bus, l.model)).collect();
    let y_case = synth::three_bus_case(ModelKind::Y);
    let y_family: BTreeMap<_, _> = y_case.loads().iter().map(|l| (l.bus, l.model)).collect();
    let families = BTreeMap::from([
        (ModelKind::Pq, vec![pq_family]),
        (ModelKind::Y, vec![y_family]),
    ]);
    let seg = SegmentedCase::new(base.with_loads(vec![]).unwrap(), families).unwrap();
    io::segmented_to_json(&seg)
}

#[test]
fn sweep_is_deterministic_and_clean() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("contrast.json");
    std::fs::write(&path, small_contrast_segmented()).unwrap();
    let args = [
        "sweep",
        "--segmented",
        path.to_str().unwrap(),
        "--kinds",
        "pq,y",
        "--output",
        "csv",
    ];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success());
    assert_eq!(
        first.stdout, second.stdout,
        "serialization must be byte-identical"
    );
    let text = stdout_str(&first);
    assert!(
        text.starts_with("segment,kind,status,objective,v1,v2,v3,"),
        "{text}"
    );
    assert_eq!(
        text.lines().count(),
        3,
        "header plus one row per (segment, kind)"
    );
}

#[test]
fn gap_same_family_is_tight() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("contrast.json");
    std::fs::write(&path, small_contrast_segmented()).unwrap();
    let out = run(&[
        "gap",
        "--segmented",
        path.to_str().unwrap(),
        "--from",
        "pq",
        "--to",
        "pq",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let delta = parsed["rows"][0]["delta"].as_f64().unwrap();
    assert!(delta.abs() <= 1e-5, "delta {delta}");
}

#[test]
fn segmented_with_missing_bus_is_rejected() {
    let text = small_contrast_segmented().replace(
        "\"3\": {\n          \"model\": \"y\"",
        "\"30\": {\n          \"model\": \"y\"",
    );
    assert_ne!(text, small_contrast_segmented(), "replacement must hit");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, text).unwrap();
    let out = run(&[
        "sweep",
        "--segmented",
        path.to_str().unwrap(),
        "--kinds",
        "pq,y",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing load bus 3"), "{err}");
}

#[test]
fn infeasible_sweep_cell_sets_exit_code() {
    // demand far beyond the generator box: the cell records an error and
    // the process exits nonzero, but the report is still produced
    let text = small_contrast_segmented().replace("\"p\": 0.44", "\"p\": 44.0");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hopeless.json");
    std::fs::write(&path, text).unwrap();
    let out = bin()
        .args([
            "sweep",
            "--segmented",
            path.to_str().unwrap(),
            "--kinds",
            "pq",
            "--output",
            "csv",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let report = stdout_str(&out);
    assert!(
        report.lines().count() >= 2,
        "report still emitted: {report}"
    );
    assert!(!report.contains(",ok,"), "{report}");
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pf.json");
    let out = run(&[
        "pf",
        "--case",
        data("case2_y.json").to_str().unwrap(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let parsed: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    assert!(parsed["iterations"].as_u64().unwrap() >= 1);
}
