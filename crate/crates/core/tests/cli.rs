//! The `polysent` binary, driven as a subprocess.

mod common;

use std::io::Write;
use std::process::{Command, Stdio};

use common::*;
use polysent::corpus::{LabeledSample, Reject};
use polysent::manifest::RunManifest;

fn read_lines(path: &std::path::Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn ingest_accepts_good_rows_and_logs_bad_ones() {
    let out = tempfile::tempdir().unwrap();
    let res = polysent(args!["ingest", "--input", fixture("tweets.csv"), "--out", out.path()]);
    assert_eq!(res.code, 0, "{}", res.stderr);
    let corpus: Vec<LabeledSample> = polysent::io::read_jsonl(&out.path().join("corpus.jsonl")).unwrap();
    let rejects: Vec<Reject> = polysent::io::read_jsonl(&out.path().join("rejects.jsonl")).unwrap();
    assert_eq!(corpus.len(), 181);
    assert_eq!(rejects.iter().map(|r| r.row).collect::<Vec<_>>(), vec![10, 47, 84]);
    assert!(corpus.iter().all(|s| s.id.starts_with("tweets:")));
    let manifest: RunManifest = polysent::io::read_json(&out.path().join("run-manifest.json")).unwrap();
    assert_eq!(manifest.entries.len(), 1);
    assert_eq!(manifest.entries[0].command, "ingest");
}

#[test]
fn ingest_names_the_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "tweet,sentiment\nhello,5\n").unwrap();
    let res = polysent(args!["ingest", "--input", input, "--out", dir.path()]);
    assert_eq!(res.code, 2);
    assert!(res.stderr.contains("language"), "{}", res.stderr);
}

#[test]
fn ingest_rejects_empty_and_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(polysent(args!["ingest", "--input", empty, "--out", dir.path()]).code, 2);
    let headers_only = dir.path().join("headers.csv");
    std::fs::write(&headers_only, "tweet,language,sentiment\n").unwrap();
    assert_eq!(polysent(args!["ingest", "--input", headers_only, "--out", dir.path()]).code, 2);
    let missing = dir.path().join("nope.csv");
    assert_eq!(polysent(args!["ingest", "--input", missing, "--out", dir.path()]).code, 2);
}

#[test]
fn preprocess_streams_stdin_to_stdout() {
    let s = sample("x:0", "Check https://t.co/abc @bob so good!!! 😀😀", "en", polysent::SentimentLabel::Positive);
    let empty = sample("x:1", "@bob 🎉", "en", polysent::SentimentLabel::Neutral);
    let mut input = serde_json::to_string(&s).unwrap() + "\n";
    input += &(serde_json::to_string(&empty).unwrap() + "\n");
    let mut child = Command::new(env!("CARGO_BIN_EXE_polysent"))
        .args(["preprocess", "--input", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<LabeledSample> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].text_clean, "Check so good!");
}

#[test]
fn full_pipeline_with_ensemble() {
    let out = tempfile::tempdir().unwrap();
    let root = out.path();
    let report = run_pipeline(root, 42);
    for file in ["report.json", "report-by-language.json", "confusion-overall.csv", "confusion-overall.svg",
                 "confusion-en.csv", "distribution.csv", "distribution.svg"] {
        assert!(report.join(file).is_file(), "{file} missing");
    }
    let manifest: RunManifest = polysent::io::read_json(&report.join("run-manifest.json")).unwrap();
    let commands: Vec<&str> = manifest.entries.iter().map(|e| e.command.as_str()).collect();
    assert_eq!(commands, ["ingest", "preprocess", "split", "train", "evaluate", "report"]);

    let split: serde_json::Value = polysent::io::read_json(&root.join("split-manifest.json")).unwrap();
    assert_eq!(split["seed"], 42);
    let predictions = read_lines(&root.join("predictions.jsonl"));
    assert_eq!(serde_json::json!(predictions.len()), split["counts"]["test"]);

    // A second member with another seed, then the ensemble.
    let config = fixture("pipeline.toml");
    let res = polysent(args![
        "--config", config, "--seed", "7", "--out", root,
        "train", "--data", root.join("split-manifest.json"), "--name", "second"
    ]);
    assert_eq!(res.code, 0, "{}", res.stderr);
    let ens = root.join("ensemble");
    let res = polysent(args![
        "--config", config, "--out", ens, "ensemble-eval",
        "--data", root.join("split-manifest.json"),
        "--member", root.join("runs/toy"), "--member", root.join("runs/second")
    ]);
    assert_eq!(res.code, 0, "{}", res.stderr);
    let records: Vec<polysent::ensemble::EnsembleRecord> =
        polysent::io::read_jsonl(&ens.join("predictions.jsonl")).unwrap();
    assert_eq!(records.len(), predictions.len());
    assert!(records.iter().all(|r| r.member_predictions.len() == 2));
    let res = polysent(args!["--out", ens.join("report"), "report", "--predictions", ens.join("predictions.jsonl")]);
    assert_eq!(res.code, 0, "{}", res.stderr);

    let res = polysent(args![
        "--config", config, "--out", ens, "ensemble-eval",
        "--data", root.join("split-manifest.json"), "--member", root.join("runs/toy")
    ]);
    assert_eq!(res.code, 2);
    assert!(res.stderr.contains("2 members"), "{}", res.stderr);
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[split]\nratios = [0.5, 0.1, 0.1]\n").unwrap();
    let res = polysent(args!["--config", config, "split", "--input", fixture("tweets.csv")]);
    assert_eq!(res.code, 2);
    let res = polysent(args!["frobnicate"]);
    assert_eq!(res.code, 2);
    let res = polysent(args!["--help"]);
    assert_eq!(res.code, 0);
    assert!(res.stdout.contains("ensemble-eval"));
}

fn write_predictions(path: &std::path::Path, matrix: [[u64; 3]; 3], languages: &[&str]) {
    let mut lines = String::new();
    let mut i = 0;
    for (t, row) in matrix.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                let lang = languages[i % languages.len()];
                let truth = polysent::SentimentLabel::ALL[t].name();
                let predicted = polysent::SentimentLabel::ALL[p].name();
                lines += &format!(r#"{{"sample_id":"p:{i}","language":"{lang}","true":"{truth}","predicted":"{predicted}"}}"#);
                lines.push('\n');
                i += 1;
            }
        }
    }
    std::fs::write(path, lines).unwrap();
}

#[test]
fn report_reproduces_published_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let predictions = dir.path().join("predictions.jsonl");
    write_predictions(&predictions, [[354, 18, 16], [20, 355, 14], [23, 25, 341]], &["en"]);
    let out = dir.path().join("report");
    let res = polysent(args!["--out", out, "report", "--predictions", predictions]);
    assert_eq!(res.code, 0, "{}", res.stderr);
    let report: serde_json::Value = polysent::io::read_json(&out.join("report.json")).unwrap();
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!((accuracy - 0.9005).abs() < 1e-4, "{accuracy}");
    let csv = std::fs::read_to_string(out.join("confusion-overall.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "negative,354,18,16");
}

#[test]
fn report_writes_one_matrix_per_language() {
    let dir = tempfile::tempdir().unwrap();
    let predictions = dir.path().join("predictions.jsonl");
    write_predictions(&predictions, [[3, 1, 0], [0, 2, 1], [1, 0, 4]], &["en", "es"]);
    let out = dir.path().join("report");
    assert_eq!(polysent(args!["--out", out, "report", "--predictions", predictions]).code, 0);
    let mut csvs: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("confusion-") && n.ends_with(".csv"))
        .collect();
    csvs.sort();
    assert_eq!(csvs, ["confusion-en.csv", "confusion-es.csv", "confusion-overall.csv"]);
}

#[test]
fn report_rejects_empty_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let predictions = dir.path().join("predictions.jsonl");
    std::fs::write(&predictions, "").unwrap();
    assert_eq!(polysent(args!["--out", dir.path(), "report", "--predictions", predictions]).code, 2);
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(polysent(args!["--out", dir.path(), "report", "--predictions", missing]).code, 2);
}
