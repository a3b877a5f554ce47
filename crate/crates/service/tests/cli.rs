//! The `scopevoice` binary end to end.

mod common;

use std::process::Command;

use common::scripts_dir;
use scopevoice_testkit::fixtures_dir;

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_scopevoice"))
        .arg("--cases-dir")
        .arg(fixtures_dir())
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn replay_reports_every_task() {
    let script = scripts_dir().join("case_a/tasks_1_to_4.llm.jsonl");
    let (code, out, err) = cli(&["replay", script.to_str().unwrap(), "--case", "case_a", "--mode", "llm"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.ends_with("4/4 tasks passed on case_a\n"), "{out}");

    let (code, out, _) = cli(&[
        "replay",
        script.to_str().unwrap(),
        "--case",
        "case_a",
        "--mode",
        "llm",
        "--json",
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["passed"], 4);
}

#[test]
fn failing_task_and_bad_input_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let wrong = dir.path().join("wrong.jsonl");
    std::fs::write(
        &wrong,
        "{\"at_ms\": 0, \"utterance\": \"tumor on\"}\n{\"expect_visible\": []}\n",
    )
    .unwrap();
    let (code, out, _) = cli(&[
        "replay",
        wrong.to_str().unwrap(),
        "--case",
        "case_a",
        "--mode",
        "grammar",
    ]);
    assert_eq!(code, 1);
    assert!(out.contains("FAIL"), "{out}");

    let broken = dir.path().join("broken.jsonl");
    std::fs::write(&broken, "# ok\n{\"at_ms\": 0}\n").unwrap();
    let (code, _, err) = cli(&[
        "replay",
        broken.to_str().unwrap(),
        "--case",
        "case_a",
        "--mode",
        "grammar",
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2"), "{err}");

    let (code, _, err) = cli(&["lexicon", "--case", "nope"]);
    assert_eq!(code, 2);
    assert!(err.contains("nope"), "{err}");
}

#[test]
fn lexicon_and_prompt() {
    let (code, out, _) = cli(&["lexicon", "--case", "case_a"]);
    assert_eq!(code, 0);
    assert!(
        out.lines()
            .any(|l| l.starts_with("liver artery") && l.contains("hepatic_artery")),
        "{out}"
    );
    assert!(out.ends_with("56 keywords\n"));

    let (code, out, _) = cli(&["prompt", "--case", "case_a"]);
    assert_eq!(code, 0);
    let golden = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/golden/case_a_prompt.json"
    ))
    .unwrap();
    assert_eq!(out, golden);
}
