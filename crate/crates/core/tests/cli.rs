use std::process::Command;

fn quenched(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_quenched")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

#[test]
fn matrix_check_writes_tables_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = quenched(&["--seed", "7", "--out", out, "matrix-check"]);
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("matrix_check.csv").exists());
    assert!(!dir.path().join("failures.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["tables"].as_array().is_some_and(|t| !t.is_empty()));
}

#[test]
fn malformed_config_exits_two_with_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let mut text = quenched::presets::example1().to_toml();
    text = text.replace("min_cells = 4096", "min_cells = -4");
    std::fs::write(&path, text).unwrap();
    let (code, _, err) = quenched(&["--config", path.to_str().unwrap(), "theta"]);
    assert_eq!(code, 2);
    assert!(err.contains("grid.min_cells") && err.contains("line"), "{err}");
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let (code, _, _) = quenched(&["--preset", "nope", "presets"]);
    assert_eq!(code, 2);
}

#[test]
fn presets_round_trip_through_config() {
    let (code, out, _) = quenched(&["presets"]);
    assert_eq!(code, 0);
    let names: Vec<&str> = out.lines().collect();
    assert_eq!(names.len(), quenched::presets::all().len());
    for name in names {
        let dir = tempfile::tempdir().unwrap();
        let (code, _, err) = quenched(&["--preset", name, "--out", dir.path().to_str().unwrap(), "config"]);
        assert_eq!(code, 0, "{err}");
        let text = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
        let cfg = quenched::config::ExperimentConfig::parse(&text, name).unwrap();
        assert_eq!(cfg.name, name);
    }
}
