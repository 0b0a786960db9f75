//! End-to-end runs of the `pdfa` binary.

use std::path::Path;
use std::process::{Command, Output};

use pdfa_core::io;

const BIN: &str = env!("CARGO_BIN_EXE_pdfa");

fn pdfa(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn extract_uhl2_recovers_five_states() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdfa(
        dir.path(),
        &[
            "extract",
            "--target",
            "grammar://uhl/2",
            "--tolerance",
            "0.1",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("stop: accepted, 5 states"));
    let model = io::read_pdfa(&dir.path().join("extracted.json")).unwrap();
    assert_eq!(model.num_states(), 5);
    let report = std::fs::read_to_string(dir.path().join("extracted.json.report.json")).unwrap();
    assert!(report.contains("\"stop_reason\": \"accepted\""));
}

#[test]
fn extract_tomita1_recovers_two_states() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdfa(
        dir.path(),
        &[
            "extract",
            "--target",
            "grammar://tomita/1",
            "--out",
            "t1.json",
            "--dot",
            "t1.dot",
            "--quiet",
        ],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).is_empty());
    assert_eq!(
        io::read_pdfa(&dir.path().join("t1.json"))
            .unwrap()
            .num_states(),
        2
    );
    assert!(dir.path().join("t1.dot").exists());
}

#[test]
fn identical_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let files = |tag: &str| {
        let out = pdfa(
            dir.path(),
            &[
                "extract",
                "--target",
                "grammar://uhl/1",
                "--seed",
                "9",
                "--out",
                &format!("{tag}.json"),
                "--dot",
                &format!("{tag}.dot"),
            ],
        );
        assert_eq!(code(&out), 0);
        ["json", "json.report.json", "dot"]
            .map(|ext| std::fs::read(dir.path().join(format!("{tag}.{ext}"))).unwrap())
    };
    assert_eq!(files("a"), files("b"));

    let sample = |name: &str| {
        let out = pdfa(
            dir.path(),
            &[
                "sample",
                "--target",
                "grammar://uhl/3",
                "-n",
                "50",
                "--seed",
                "3",
                "--out",
                name,
            ],
        );
        assert_eq!(code(&out), 0);
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(sample("s1.txt"), sample("s2.txt"));
}

#[test]
fn export_dot_tomita1_has_two_nodes_and_four_edges() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdfa(dir.path(), &["export-dot", "grammar://tomita/1"]);
    assert_eq!(code(&out), 0);
    let dot = stdout(&out);
    let nodes = dot
        .lines()
        .filter(|l| l.trim_start().starts_with('s') && l.contains("[label=\"q"))
        .count();
    let edges = dot
        .lines()
        .filter(|l| l.contains(" -> s") && !l.contains("__start"))
        .count();
    assert_eq!((nodes, edges), (2, 4));
}

#[test]
fn sample_zero_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdfa(
        dir.path(),
        &[
            "sample",
            "--target",
            "grammar://uhl/1",
            "-n",
            "0",
            "--out",
            "empty.txt",
        ],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(dir.path().join("empty.txt")).unwrap(), b"");
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.pdfa"), "{\"alphabet\": [\"a\"").unwrap();
    std::fs::write(
        dir.path().join("unnormalized.json"),
        r#"{"alphabet":["a"],"initial":"q0","states":{"q0":{"next":{"a":"q0"},"weights":{"a":0.5,"$":0.4}}}}"#,
    )
    .unwrap();
    let cases: [&[&str]; 6] = [
        &["extract", "--target", "file:broken.pdfa"],
        &["extract", "--target", "file:missing.json"],
        &["extract", "--target", "unnormalized.json"],
        &["extract", "--target", "grammar://tomita/9"],
        &["extract", "--target", "grammar://uhl/1", "--tolerance", "2"],
        &[
            "evaluate",
            "--model",
            "grammar://uhl/2",
            "--reference",
            "grammar://uhl/1",
        ],
    ];
    for args in cases {
        let out = pdfa(dir.path(), args);
        assert_eq!(
            code(&out),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(!dir.path().join("extracted.json").exists());
}

#[test]
fn oracle_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    // Answers the alphabet request, then exits.
    let flaky = r#"external:read line; echo '{"id":1,"alphabet":["a","b"]}'"#;
    let out = pdfa(dir.path(), &["extract", "--target", flaky]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("extracted.json.report.json")).unwrap();
    assert!(report.contains("\"stop_reason\": \"error\""));

    let out = pdfa(dir.path(), &["extract", "--target", "external:true"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn external_target_round_trips_through_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let server = format!("external:'{BIN}' serve-pdfa --target grammar://uhl/3");
    let out = pdfa(
        dir.path(),
        &["extract", "--target", &server, "--out", "u3.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let learned = io::read_pdfa(&dir.path().join("u3.json")).unwrap();
    assert_eq!(learned.num_states(), 4);

    let out = pdfa(
        dir.path(),
        &[
            "evaluate",
            "--model",
            "u3.json",
            "--reference",
            &server,
            "--json",
        ],
    );
    assert_eq!(code(&out), 0);
    let row: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(row["wer"], 0.0);
    assert_eq!(row["ndcg"], 1.0);
}

#[test]
fn evaluate_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdfa(
        dir.path(),
        &[
            "evaluate",
            "--model",
            "grammar://uhl/3",
            "--reference",
            "grammar://uhl/3",
            "--wer",
            "--ndcg",
            "2",
        ],
    );
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("Model"));
    assert!(lines[1].contains("0.0000") && lines[1].contains("1.0000"));
}

#[test]
fn ngram_targets_read_sample_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdfa(
        dir.path(),
        &[
            "sample",
            "--target",
            "grammar://uhl/1",
            "-n",
            "2000",
            "--out",
            "s.txt",
        ],
    );
    assert_eq!(code(&out), 0);
    let out = pdfa(
        dir.path(),
        &[
            "evaluate",
            "--model",
            "ngram:3:s.txt",
            "--reference",
            "grammar://uhl/1",
            "--wer",
            "--json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let row: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(row["wer"].as_f64().unwrap() > 0.0);
}
