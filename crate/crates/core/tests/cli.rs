mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{questions, write_questions, SECRET};
use spanconf::client::mock::{MockBehavior, MockServer};

fn spanconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spanconf"))
        .args(args)
        .env("SPANCONF_API_KEY", SECRET)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fetch(server: &MockServer, dir: &Path, n: usize) -> Output {
    let q = dir.join("questions.jsonl");
    write_questions(&q, &questions(n));
    spanconf(&[
        "fetch",
        "--questions",
        s(&q),
        "--base-url",
        &server.url(),
        "--model",
        "mock-model",
        "--backoff-ms",
        "1",
        "--out",
        s(dir),
    ])
}

#[test]
fn full_pipeline_writes_all_reports() {
    let server = MockServer::start(MockBehavior::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = fetch(&server, dir.path(), 10);
    assert!(out.status.success(), "{}", stderr(&out));
    let ds = dir.path().join("dataset.jsonl");
    assert_eq!(std::fs::read_to_string(&ds).unwrap().lines().count(), 10);
    let manifest = std::fs::read_to_string(dir.path().join("fetch_manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\": []"));

    for cmd in [
        &["score"][..],
        &["label"],
        &["evaluate"],
        &["sweep", "--kind", "window"],
        &["sweep", "--kind", "threshold"],
    ] {
        let mut args = cmd.to_vec();
        args.extend(["--dataset", s(&ds), "--out", s(dir.path())]);
        let o = spanconf(&args);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
    }
    for f in [
        "scores.jsonl",
        "labels.jsonl",
        "report.csv",
        "report.json",
        "roc.csv",
        "window_sweep.csv",
        "window_sweep.json",
        "threshold_sweep.csv",
        "threshold_sweep.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("# tool: spanconf"));
    assert!(csv.contains("method,params,AUC_s,AUC_r,PCC"));
    assert!(csv.contains("LSC,w=3,"));

    // Evaluating from a saved scores file gives the same report.
    let again = tempfile::tempdir().unwrap();
    let o = spanconf(&[
        "evaluate",
        "--scores",
        s(&dir.path().join("scores.jsonl")),
        "--dataset",
        s(&ds),
        "--out",
        s(again.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(again.path().join("report.csv")).unwrap(),
        csv.into_bytes()
    );

    let o = spanconf(&[
        "trajectory",
        "--id",
        "q002",
        "--dataset",
        s(&ds),
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t = std::fs::read_to_string(dir.path().join("trajectory_q002.csv")).unwrap();
    assert!(t.contains("position,token,p,mean_w1,mean_w3,mean_w8"));
}

#[test]
fn missing_key_exits_2_and_names_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.jsonl");
    write_questions(&q, &questions(1));
    let o = Command::new(env!("CARGO_BIN_EXE_spanconf"))
        .args([
            "fetch",
            "--questions",
            s(&q),
            "--base-url",
            "http://127.0.0.1:9",
            "--model",
            "m",
        ])
        .env_remove("SPANCONF_API_KEY")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("SPANCONF_API_KEY"));
}

#[test]
fn offline_fetch_is_a_configuration_error() {
    let o = spanconf(&["fetch", "--base-url", "http://127.0.0.1:9", "--model", "m", "--offline"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_items_exit_1_with_manifest() {
    let server = MockServer::start(MockBehavior {
        fail_prompt_containing: Some("number 1?".into()),
        ..Default::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let o = fetch(&server, dir.path(), 3);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(dir.path().join("fetch_manifest.json")).unwrap();
    assert!(manifest.contains("q001"));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("dataset.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    assert!(!stderr(&o).contains(SECRET));
    assert!(!manifest.contains(SECRET));
}

#[test]
fn degenerate_labels_exit_1() {
    let server = MockServer::start(MockBehavior::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    // Every reference unrelated: all records are hallucinations.
    let mut qs = questions(4);
    for q in &mut qs {
        q.references = vec!["nothing in common here".into()];
    }
    let qp = dir.path().join("q.jsonl");
    write_questions(&qp, &qs);
    let o = spanconf(&[
        "fetch",
        "--questions",
        s(&qp),
        "--base-url",
        &server.url(),
        "--model",
        "m",
        "--out",
        s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = dir.path().join("dataset.jsonl");
    let o = spanconf(&["evaluate", "--dataset", s(&ds), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("degenerate"));
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.contains("n/a"));
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let o = spanconf(&["score", "--dataset", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"));

    let o = spanconf(&["score", "--window", "0", "--dataset", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    let o = spanconf(&["evaluate", "--rouge-threshold", "1.5", "--dataset", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));

    let o = spanconf(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_trajectory_id_exits_2() {
    let server = MockServer::start(MockBehavior::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(fetch(&server, dir.path(), 2).status.success());
    let ds = dir.path().join("dataset.jsonl");
    let o = spanconf(&[
        "trajectory",
        "--id",
        "nope",
        "--dataset",
        s(&ds),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn help_shows_defaults() {
    let o = spanconf(&["--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    assert!(help.contains("[default: 3]"));
    assert!(help.contains("[default: 0.99]"));
}

mod offline {
    use super::*;
    use spanconf::trace::{write_dataset_string, Decoding, EmbeddingVector, GenerationTrace, QARecord, TokenEvent};

    fn record(id: &str, text: &str, reference: &str, lps: &[f64], embed: Option<(Vec<f64>, Vec<f64>)>) -> QARecord {
        let tokens = text
            .split(' ')
            .zip(lps)
            .map(|(t, &lp)| TokenEvent::new(t, lp))
            .collect();
        let (greedy_embedding, reference_embeddings) = match embed {
            Some((g, r)) => (
                Some(EmbeddingVector::new(g).unwrap()),
                Some(vec![EmbeddingVector::new(r).unwrap()]),
            ),
            None => (None, None),
        };
        QARecord {
            id: id.into(),
            question: format!("question {id}"),
            references: vec![reference.into()],
            greedy: GenerationTrace::new(text, tokens, Decoding::Greedy).unwrap(),
            samples: Vec::new(),
            greedy_embedding,
            reference_embeddings,
        }
    }

    /// Correct answers are confident; wrong ones contain a low-probability token.
    fn separable(with_embeddings: bool) -> Vec<QARecord> {
        (0..6)
            .map(|i| {
                let correct = i % 2 == 0;
                let emb = with_embeddings.then(|| {
                    if correct {
                        (vec![1.0, 0.0], vec![1.0, 0.0])
                    } else {
                        (vec![0.0, 1.0], vec![1.0, 0.0])
                    }
                });
                if correct {
                    record(&format!("r{i}"), "Mount Everest", "Mount Everest", &[-0.05, -0.02], emb)
                } else {
                    record(&format!("r{i}"), "the Andes range", "Mount Everest", &[-0.1, -2.5, -0.2], emb)
                }
            })
            .collect()
    }

    fn write(dir: &Path, records: &[QARecord]) -> std::path::PathBuf {
        let p = dir.join("dataset.jsonl");
        std::fs::write(&p, write_dataset_string(records)).unwrap();
        p
    }

    fn csv_rows(text: &str) -> Vec<Vec<String>> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn separable_dataset_scores_100() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), &separable(true));
        let o = spanconf(&["evaluate", "--dataset", s(&ds), "--out", s(dir.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = csv_rows(&std::fs::read_to_string(dir.path().join("report.csv")).unwrap());
        let lsc = rows.iter().find(|r| r[0] == "LSC").unwrap();
        assert_eq!(lsc[2], "100.0");
        assert_eq!(lsc[3], "100.0");
    }

    #[test]
    fn missing_embeddings_mark_semantic_columns_na() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), &separable(false));
        let o = spanconf(&["evaluate", "--dataset", s(&ds), "--out", s(dir.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = csv_rows(&std::fs::read_to_string(dir.path().join("report.csv")).unwrap());
        let lsc = rows.iter().find(|r| r[0] == "LSC").unwrap();
        assert_eq!(lsc[2], "n/a");
        assert_eq!(lsc[3], "100.0");
    }

    #[test]
    fn window_one_scores_equal_min_p() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), &separable(true));
        let o = spanconf(&["score", "--window", "1", "--dataset", s(&ds), "--out", s(dir.path())]);
        assert!(o.status.success(), "{}", stderr(&o));
        for line in std::fs::read_to_string(dir.path().join("scores.jsonl")).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let metrics = v["metrics"].as_array().unwrap();
            assert_eq!(metrics.len(), 7);
            let raw = |name: &str| metrics.iter().find(|m| m["metric"] == name).unwrap()["raw"].clone();
            assert_eq!(raw("lsc"), raw("min_p"));
        }
    }

    #[test]
    fn sweep_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), &separable(true));
        for kind in ["window", "threshold"] {
            let o = spanconf(&["sweep", "--kind", kind, "--dataset", s(&ds), "--out", s(dir.path())]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        let w = csv_rows(&std::fs::read_to_string(dir.path().join("window_sweep.csv")).unwrap());
        assert_eq!(w.len(), 1 + 8);
        let t = csv_rows(&std::fs::read_to_string(dir.path().join("threshold_sweep.csv")).unwrap());
        assert_eq!(t.len(), 1 + 6);
        assert_eq!(t.iter().filter(|r| r[0] == "rouge").count(), 3);
        assert_eq!(t.iter().filter(|r| r[0] == "semantic").count(), 3);
    }

    #[test]
    fn single_record_sweep_is_degenerate() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), &separable(true)[..1]);
        let o = spanconf(&["sweep", "--kind", "window", "--dataset", s(&ds), "--out", s(dir.path())]);
        assert_eq!(o.status.code(), Some(1));
        assert!(stderr(&o).contains("degenerate"));
    }

    #[test]
    fn constant_trace_gives_constant_columns() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record("flat", "a b c d e", "a", &[-0.5; 5], None);
        let ds = write(dir.path(), &[rec]);
        let o = spanconf(&[
            "trajectory", "--id", "flat", "--windows", "1,3,8", "--dataset", s(&ds), "--out", s(dir.path()),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let rows = csv_rows(&std::fs::read_to_string(dir.path().join("trajectory_flat.csv")).unwrap());
        assert_eq!(rows[0], ["position", "token", "p", "mean_w1", "mean_w3", "mean_w8"]);
        let p = rows[1][2].clone();
        for r in &rows[1..] {
            assert_eq!(r[2], p);
            for cell in &r[3..] {
                assert!(cell.is_empty() || *cell == p, "{cell} vs {p}");
            }
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = write(dir.path(), &separable(true));
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        for out in [&a, &b] {
            assert!(spanconf(&["evaluate", "--dataset", s(&ds), "--out", s(out)]).status.success());
        }
        for f in ["report.csv", "report.json", "roc.csv"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn unreachable_service_lists_every_id() {
        let dir = tempfile::tempdir().unwrap();
        let q = dir.path().join("q.jsonl");
        write_questions(&q, &questions(3));
        // Port 9 (discard) is closed on test hosts, so connections are refused.
        let o = spanconf(&[
            "fetch", "--questions", s(&q), "--base-url", "http://127.0.0.1:9", "--model", "m", "--max-retries", "0",
            "--out", s(dir.path()),
        ]);
        assert_ne!(o.status.code(), Some(0));
        let manifest = std::fs::read_to_string(dir.path().join("fetch_manifest.json")).unwrap();
        for id in ["q000", "q001", "q002"] {
            assert!(manifest.contains(id), "{id} missing");
        }
    }
}
