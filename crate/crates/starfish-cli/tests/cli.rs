//! CLI behavior: exit codes, scenario diagnostics, overwrite protection.

use std::process::Command;

fn run(args: &[&str]) -> (String, String, i32) {
    let out = Command::new(env!("CARGO_BIN_EXE_starfish"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        String::from_utf8_lossy(&out.stdout).to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
        out.status.code().unwrap_or(-1),
    )
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("starfish-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn unknown_scenario_exits_2() {
    let (_, err, code) = run(&["trace", "no-such-scenario.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("cannot read scenario"), "{err}");
}

#[test]
fn schema_violation_exits_2_with_diagnostics() {
    let dir = tmp_dir("schema");
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"delta": 10, "parties": ["A"], "schedule": [
            {"round": 0, "party": "Z", "op": "close_channel", "args": {"channel": "c1"}}
        ]}"#,
    )
    .unwrap();
    let (_, err, code) = run(&["trace", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown party Z"), "{err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn empty_schedule_logs_only_ticks() {
    let dir = tmp_dir("ticks");
    let path = dir.join("empty.json");
    std::fs::write(&path, r#"{"delta": 2, "parties": ["A"], "max_rounds": 5}"#).unwrap();
    let out_dir = dir.join("out");
    let (_, _, code) = run(&[
        "trace",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let log = std::fs::read_to_string(out_dir.join("empty-events.jsonl")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().all(|l| l.contains("\"event\":\"tick\"")));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tmp_dir("force");
    let out = dir.join("out");
    let out_s = out.to_str().unwrap().to_string();
    let (_, _, first) = run(&["opcount", "--max-n", "4", "--out", &out_s]);
    assert_eq!(first, 0);
    let (_, err, second) = run(&["opcount", "--max-n", "4", "--out", &out_s]);
    assert_eq!(second, 2);
    assert!(err.contains("already exists"), "{err}");
    let (_, _, forced) = run(&["opcount", "--max-n", "4", "--out", &out_s, "--force"]);
    assert_eq!(forced, 0);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bad_sweep_config_exits_2() {
    let dir = tmp_dir("sweepcfg");
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"paymenst": 5}"#).unwrap();
    let (_, err, code) = run(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("config parse error"), "{err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn opcount_rejects_max_n_below_2() {
    let (_, err, code) = run(&["opcount", "--max-n", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("at least 2"), "{err}");
}
