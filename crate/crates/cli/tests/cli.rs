//! Exit codes and user-facing output of the `icprobe` binary.

use std::process::{Command, Output};

fn icprobe(args: &[&str], dir: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icprobe")).args(args).current_dir(dir).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = icprobe(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let help = text(&out.stdout);
    for key in ["[run]", "[[run.backend]]", "[stats]", "[[plot.figure]]", "seed"] {
        assert!(help.contains(key), "help lacks {key}");
    }
    assert_eq!(icprobe(&["--version"], dir.path()).status.code(), Some(0));
    assert_eq!(icprobe(&["run", "--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(icprobe(&[], dir.path()).status.code(), Some(2));
    assert_eq!(icprobe(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(icprobe(&["gen", "--kind", "poetry", "--out", "x"], dir.path()).status.code(), Some(2));
    assert_eq!(icprobe(&["run"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = icprobe(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).starts_with("error: "), "{}", text(&out.stderr));

    std::fs::write(dir.path().join("bad.toml"), "[run]\nexperiment = \"e1\"\nout = \"x.tsv\"\n[[run.backend]]\nname = \"nope\"\n").unwrap();
    let out = icprobe(&["run", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("nope") && err.contains("tiny-rnn") && err.contains("planted"), "{err}");

    std::fs::write(dir.path().join("typo.toml"), "sed = 1\n").unwrap();
    let out = icprobe(&["run", "--config", "typo.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("sed"), "{}", text(&out.stderr));
}

#[test]
fn gen_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = icprobe(&["gen", "--kind", "completion", "--out", "c.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("wrote 112 completion stimuli"));
    let out = icprobe(&["gen", "--out", "c.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn selfcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = icprobe(&["selfcheck"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    let stdout = text(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
}
