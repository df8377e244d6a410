use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blackstart::caseio::{export_plan, parse_case, parse_plan};
use blackstart::plan::EventKind;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn blackstart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blackstart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn plan_into(dir: &Path, extra: &[&str]) -> Output {
    let case = fixture("bundled_case.json");
    let mut args = vec!["plan", "--case", s(&case), "--out", s(dir)];
    args.extend_from_slice(extra);
    blackstart(&args)
}

#[test]
fn plan_writes_all_artifacts() {
    let tmp = TempDir::new().unwrap();
    let out = plan_into(tmp.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["plan.json", "metrics.csv", "report.json", "final_case.json"] {
        assert!(tmp.path().join(name).is_file(), "{name} missing");
    }
    let metrics = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("time_s,"));
    parse_case(&fs::read_to_string(tmp.path().join("final_case.json")).unwrap()).unwrap();
    let report = fs::read_to_string(tmp.path().join("report.json")).unwrap();
    assert!(report.contains("\"status\": \"complete\""));
}

#[test]
fn missing_case_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let out = blackstart(&[
        "plan",
        "--case",
        "/nonexistent/case.json",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn bad_config_key_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "criterion9_gamma = 1.0\n").unwrap();
    assert_eq!(
        code(&plan_into(&tmp.path().join("out"), &["--config", s(&cfg)])),
        1
    );
}

#[test]
fn unreachable_target_exits_partial() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("full.toml");
    fs::write(&cfg, "criterion4_beta = 1.0\n").unwrap();
    let ov = tmp.path().join("ov.json");
    fs::write(
        &ov,
        r#"{"overrides": [{"kind": "load", "id": "D-A3", "available": false}]}"#,
    )
    .unwrap();
    let out = plan_into(
        &tmp.path().join("out"),
        &["--config", s(&cfg), "--overrides", s(&ov)],
    );
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    assert_eq!(code(&plan_into(&dir, &[])), 0);
    let case = fixture("bundled_case.json");
    let plan = dir.join("plan.json");
    assert_eq!(
        code(&blackstart(&[
            "validate",
            "--case",
            s(&case),
            "--plan",
            s(&plan)
        ])),
        0
    );

    let strict = tmp.path().join("strict.toml");
    fs::write(&strict, "[limits]\nbranch_loading_pct = 5.0\n").unwrap();
    let out = blackstart(&[
        "validate",
        "--case",
        s(&case),
        "--plan",
        s(&plan),
        "--config",
        s(&strict),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("violation"));

    let mut edited = parse_plan(&fs::read_to_string(&plan).unwrap()).unwrap();
    let step = edited
        .steps
        .iter_mut()
        .find(|s| s.events.iter().any(|e| e.kind == EventKind::LoadIncrement))
        .unwrap();
    step.events.retain(|e| e.kind != EventKind::LoadIncrement);
    let broken = tmp.path().join("broken.json");
    fs::write(&broken, export_plan(&edited)).unwrap();
    let out = blackstart(&["validate", "--case", s(&case), "--plan", s(&broken)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("divergence"));
}

#[test]
fn validate_with_overrides() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("out");
    let ov = fixture("bundled_overrides.json");
    assert_eq!(code(&plan_into(&dir, &["--overrides", s(&ov)])), 0);
    let case = fixture("bundled_case.json");
    let plan = dir.join("plan.json");
    assert_eq!(
        code(&blackstart(&[
            "validate",
            "--case",
            s(&case),
            "--plan",
            s(&plan)
        ])),
        0
    );
}

#[test]
fn convert_output_parses_back() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("nb.json");
    let case = fixture("bundled_case.json");
    assert_eq!(
        code(&blackstart(&[
            "convert",
            "--case",
            s(&case),
            "--out",
            s(&out)
        ])),
        0
    );
    let converted = parse_case(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(converted.node_breaker.is_some());
    // a converted case converts to itself
    let again = tmp.path().join("nb2.json");
    assert_eq!(
        code(&blackstart(&[
            "convert",
            "--case",
            s(&out),
            "--out",
            s(&again)
        ])),
        0
    );
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        fs::read_to_string(&again).unwrap()
    );
}

#[test]
fn inspect_blackout_has_no_energized_island() {
    let case = fixture("bundled_case.json");
    let out = blackstart(&["inspect", "--case", s(&case), "--blackout"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("energized islands: 0"), "{text}");
    let out = blackstart(&["inspect", "--case", s(&case)]);
    assert!(!String::from_utf8_lossy(&out.stdout).contains("energized islands: 0"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let runs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| tmp.path().join(n)).collect();
    assert_eq!(code(&plan_into(&runs[0], &["--jobs", "1"])), 0);
    assert_eq!(code(&plan_into(&runs[1], &["--jobs", "4"])), 0);
    assert_eq!(code(&plan_into(&runs[2], &["--jobs", "4"])), 0);
    for name in ["plan.json", "metrics.csv", "report.json", "final_case.json"] {
        let first = fs::read(runs[0].join(name)).unwrap();
        for dir in &runs[1..] {
            assert_eq!(first, fs::read(dir.join(name)).unwrap(), "{name} differs");
        }
    }
}
