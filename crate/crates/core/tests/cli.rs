use std::path::Path;
use std::process::{Command, Output};

use secmargin::cases::{builtin_twobus, save_case, LoadModel};

fn secmargin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secmargin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SECMARGIN_WORKERS")
        .output()
        .unwrap()
}

fn stress_column(path: &Path) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap()[0].parse().unwrap()).collect()
}

const SWEEP: &str = r#"{
  "configs": [
    {"name": "cp1", "zip": {"p": [0, 0, 1], "q": [0, 0, 1]}},
    {"name": "cp05", "zip": {"p": [0, 0.5, 0.5], "q": [0, 0, 1]}}
  ],
  "contingencies": ["none"],
  "schedule": {"fine_step": 10, "coarse_step": 50}
}"#;

#[test]
fn missing_case_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = secmargin(&["pcll", "/nonexistent/case.json", "none"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unknown_contingency_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = secmargin(&["pcll", "builtin:twobus", "Z"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains('Z'));
}

#[test]
fn bad_flag_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = secmargin(&["pcll", "builtin:twobus", "none", "--fine-step", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_accepts_builtins() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["twobus", "parallel-twobus", "two-area"] {
        let o = Command::new(env!("CARGO_BIN_EXE_secmargin"))
            .args(["validate", &format!("builtin:{name}")])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(o.status.success(), "{name}");
    }
}

#[test]
fn fine_step_flag_sets_level_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let o = secmargin(&["pcll", "builtin:twobus", "none", "--fine-step", "5"], dir.path());
    assert!(o.status.success());
    let levels = stress_column(&dir.path().join("pcll_levels.csv"));
    assert!(levels.len() > 10);
    assert!(levels.iter().all(|s| (s / 5.0).fract() == 0.0), "{levels:?}");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["settings"]["resolved"]["fine_step"], 5.0);

    let dir = tempfile::tempdir().unwrap();
    secmargin(&["pcll", "builtin:twobus", "none"], dir.path());
    let levels = stress_column(&dir.path().join("pcll_levels.csv"));
    assert!(levels.iter().any(|s| (s / 5.0).fract() != 0.0), "{levels:?}");
}

#[test]
fn sol_writes_a_trace_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let o = secmargin(
        &[
            "sol",
            "builtin:parallel-twobus",
            "trip_L1b",
            "--fine-step",
            "10",
            "--coarse-step",
            "10",
            "--trace-at",
            "50",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "sol_margin.csv",
        "sol_levels.csv",
        "sol_result.json",
        "trace.csv",
        "events.jsonl",
        "metadata.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn sweep_writes_one_row_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(&spec, SWEEP).unwrap();
    let o = secmargin(
        &["sweep", "builtin:twobus", spec.to_str().unwrap(), "--workers", "2"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("sweep_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "load_config,none_PCLL_MW,none_SOL_MW");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cp1,"));
}

#[test]
fn sweep_output_does_not_depend_on_worker_count() {
    let run = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let spec = dir.path().join("sweep.json");
        std::fs::write(&spec, SWEEP).unwrap();
        let o = secmargin(
            &["sweep", "builtin:twobus", spec.to_str().unwrap(), "--workers", workers],
            dir.path(),
        );
        assert!(o.status.success());
        ["sweep_table.csv", "margins.csv"].map(|f| std::fs::read(dir.path().join(f)).unwrap())
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn divergent_sweep_cell_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // base load beyond the 500 MW nose: no operating point exists
    let mut case = builtin_twobus();
    if let LoadModel::Zip(z) = &mut case.loads[0].model {
        z.p0_mw = 600.0;
    }
    let case_path = dir.path().join("case.json");
    save_case(&case, &case_path).unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(&spec, SWEEP).unwrap();
    let o = secmargin(
        &["sweep", case_path.to_str().unwrap(), spec.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("sweep_table.csv")).unwrap();
    assert!(table.contains("divergence"), "{table}");
}

#[test]
fn malformed_sweep_spec_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.json");
    std::fs::write(&spec, r#"{"configs": [], "contingencies": ["none"], "extra": 1}"#).unwrap();
    let o = secmargin(&["sweep", "builtin:twobus", spec.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
