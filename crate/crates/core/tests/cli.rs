use std::fs;
use std::process::{Command, Output};

fn mvground(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvground"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn synth_validate_bench_ground() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_str().unwrap();
    let out = stdout(&mvground(&[
        "synth",
        "--out",
        root,
        "--scenes",
        "2",
        "--queries-per-scene",
        "2",
    ]));
    assert!(out.contains("4 queries"), "{out}");

    let bundle = format!("{root}/bundles/synth_001");
    assert!(stdout(&mvground(&["validate-bundle", &bundle])).starts_with("ok: scene synth_001"));

    let queries = format!("{root}/queries.jsonl");
    let results = format!("{root}/out");
    let report: serde_json::Value = serde_json::from_str(&stdout(&mvground(&[
        "bench",
        "--bundles",
        &format!("{root}/bundles"),
        "--queries",
        &queries,
        "--out",
        &results,
    ])))
    .unwrap();
    assert_eq!(report["overall"]["accuracy"]["Acc@0.5"], 1.0);
    assert_eq!(
        fs::read_to_string(format!("{results}/predictions.jsonl"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let seqs = format!("{root}/seq");
    let result: serde_json::Value = serde_json::from_str(&stdout(&mvground(&[
        "ground",
        "--bundle",
        &bundle,
        "--query",
        "the chair near the table",
        "--target-instance",
        "1",
        "--export-sequences",
        &seqs,
        "-L",
        "2",
    ])))
    .unwrap();
    assert_eq!(result["instance_id"], 1);
    assert_eq!(result["fallback"], false);
    assert!(fs::metadata(format!("{seqs}/synth_001/1.png")).is_ok());
}

#[test]
fn broken_bundle_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = mvground(&["validate-bundle", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene.json"));
}

#[test]
fn invalid_flags_are_rejected() {
    let o = mvground(&["ground", "--bundle", "x", "--query", "q", "-L", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch"));

    let o = mvground(&[
        "bench",
        "--bundles",
        "x",
        "--queries",
        "y",
        "--out",
        "z",
        "--judge",
        "replay",
    ]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--transcript"));
}
