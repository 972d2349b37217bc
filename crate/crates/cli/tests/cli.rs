use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn hopmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopmix")).args(args).output().expect("spawn hopmix")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    serde_json::from_str(text.trim()).unwrap()
}

fn synth_dir(dir: &Path) {
    let out = hopmix(&[
        "synth", "--n-docs", "20", "--paras", "6", "--sents", "4", "--dim", "16", "--seed", "7", "--out-dir", p(dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    for f in ["docs.jsonl", "train.jsonl", "test.jsonl", "embeddings.hmix", "chains.jsonl"] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    let ckpt = d.join("model.hckp");
    let train = stdout_json(&hopmix(&[
        "train", "--docs", p(&d.join("docs.jsonl")), "--embeddings", p(&d.join("embeddings.hmix")),
        "--train", p(&d.join("train.jsonl")), "--output", p(&ckpt), "--steps", "5", "--seed", "3",
    ]));
    let losses = train["epoch_losses"].as_array().unwrap();
    assert_eq!(losses.len(), 5);
    assert!(losses[4].as_f64().unwrap() < losses[0].as_f64().unwrap());

    let report = stdout_json(&hopmix(&[
        "eval", "--docs", p(&d.join("docs.jsonl")), "--embeddings", p(&d.join("embeddings.hmix")),
        "--queries", p(&d.join("test.jsonl")), "--checkpoint", p(&ckpt), "--lambda1", "0", "--lambda2", "0",
    ]));
    assert!(report["n_queries"].as_u64().unwrap() > 0);
    for key in ["hits_at_1", "evidence_coverage", "em", "f1"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(report["throughput_qps"].as_f64().unwrap() > 0.0);
}

#[test]
fn retrieve_writes_predictions_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_dir(d);
    let ckpt = d.join("model.hckp");
    let out = hopmix(&[
        "train", "--docs", p(&d.join("docs.jsonl")), "--embeddings", p(&d.join("embeddings.hmix")),
        "--train", p(&d.join("train.jsonl")), "--output", p(&ckpt), "--steps", "1",
    ]);
    assert!(out.status.success());
    let preds = d.join("pred.jsonl");
    let trace = d.join("trace.jsonl");
    let out = hopmix(&[
        "retrieve", "--docs", p(&d.join("docs.jsonl")), "--embeddings", p(&d.join("embeddings.hmix")),
        "--queries", p(&d.join("test.jsonl")), "--checkpoint", p(&ckpt), "--output", p(&preds),
        "--trace", p(&trace), "--top-k", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let n_queries = std::fs::read_to_string(d.join("test.jsonl")).unwrap().lines().count();
    let pred_lines: Vec<Value> =
        std::fs::read_to_string(&preds).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(pred_lines.len(), n_queries);
    assert_eq!(pred_lines[0]["ranked"].as_array().unwrap().len(), 3);
    let trace_lines: Vec<Value> =
        std::fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(trace_lines.len(), 2 * n_queries);
    assert_eq!(trace_lines[0]["hop"], 0);
    assert_eq!(trace_lines[0]["retrieved"]["kind"], "paragraph");
    assert_eq!(trace_lines[1]["retrieved"]["kind"], "sentence");
    let alpha: f64 = trace_lines[0]["alpha"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((alpha - 1.0).abs() < 1e-9);
}

fn gold(id: &str, class: &str, evidence: Value, answers: Value) -> Value {
    json!({
        "query_id": id,
        "doc_id": "d",
        "query": {"units": ["is it allowed?", "Q: are you a resident? A: yes"], "kind": "conversational"},
        "labels": {},
        "class": class,
        "evidence": evidence,
        "answers": answers,
    })
}

fn para(p: usize) -> Value {
    json!({"kind": "paragraph", "para": p})
}

fn sent(p: usize, s: usize) -> Value {
    json!({"kind": "sentence", "para": p, "sent": s})
}

fn pred(id: &str, class: &str, answer: &str, retrieved: Value) -> Value {
    json!({"query_id": id, "ranked": [], "answer": answer, "class": class, "retrieved": retrieved})
}

fn write_lines(path: &Path, values: &[Value]) {
    let text: String = values.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn eval_strict_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let gold_path = dir.path().join("gold.jsonl");
    let pred_path = dir.path().join("pred.jsonl");
    write_lines(
        &gold_path,
        &[
            gold("a", "yes", json!([para(0)]), json!(["the cat sat"])),
            gold("b", "yes", json!([sent(2, 0)]), json!(["a b c"])),
            gold("c", "irrelevant", json!([para(1), sent(1, 0)]), json!([])),
            gold("d", "inquire", json!([]), json!([])),
        ],
    );
    write_lines(
        &pred_path,
        &[
            // class right, evidence retrieved: easy and strict
            pred("a", "yes", "The cat sat.", json!([para(0), sent(0, 1)])),
            // class wrong: neither
            pred("b", "no", "a b", json!([sent(2, 0)])),
            // class right, one evidence entry missing: easy only
            pred("c", "irrelevant", "", json!([para(1)])),
            // class right, no evidence required: easy and strict
            pred("d", "inquire", "", json!([])),
        ],
    );
    let report = stdout_json(&hopmix(&[
        "eval", "--queries", p(&gold_path), "--predictions", p(&pred_path), "--strict",
    ]));
    assert_eq!(report["n_queries"], 4);
    assert_eq!(report["easy_acc"].as_f64(), Some(0.75));
    assert_eq!(report["strict_acc"].as_f64(), Some(0.5));
    assert_eq!(report["evidence_coverage"].as_f64(), Some(0.75));
    // answers: exact on "a"; "a b" against "a b c" has precision 1, recall 2/3
    assert_eq!(report["em"].as_f64(), Some(0.5));
    assert!((report["f1"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    assert!(report["hits_at_1"].is_null());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    assert_eq!(hopmix(&["--help"]).status.code(), Some(0));
    assert_eq!(hopmix(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hopmix(&["bench", "--no-such-flag"]).status.code(), Some(1));
    let missing = d.join("missing.jsonl");
    assert_eq!(hopmix(&["embed", "--docs", p(&missing), "--output", p(&d.join("e.hmix"))]).status.code(), Some(1));

    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\", \"paragraphs\": 3}\n").unwrap();
    assert_eq!(hopmix(&["embed", "--docs", p(&bad), "--output", p(&d.join("e.hmix"))]).status.code(), Some(2));

    synth_dir(d);
    let out = hopmix(&[
        "train", "--docs", p(&d.join("docs.jsonl")), "--embeddings", p(&d.join("embeddings.hmix")),
        "--train", p(&d.join("train.jsonl")), "--output", p(&d.join("m.hckp")), "--steps", "3", "--lr", "1e300",
        "--momentum", "0",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!d.join("m.hckp").exists());
}

#[test]
fn ingest_embed_index_with_toy_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tables = d.join("tables.jsonl");
    let table = json!({
        "id": "t1",
        "headers": ["Name", "Year"],
        "rows": [{"cells": ["Ada", "1815"]}, {"cells": ["Alan", "1912"]}],
    });
    write_lines(&tables, &[table]);
    let docs = d.join("docs.jsonl");
    assert!(hopmix(&["ingest", "--input", p(&tables), "--format", "tables", "--output", p(&docs)]).status.success());
    let doc: Value = serde_json::from_str(std::fs::read_to_string(&docs).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(doc["paragraphs"].as_array().unwrap().len(), 2);

    let emb = d.join("e.hmix");
    assert!(hopmix(&["embed", "--docs", p(&docs), "--dim", "8", "--output", p(&emb)]).status.success());
    let out_dir = d.join("idx");
    let out = hopmix(&["index", "--docs", p(&docs), "--embeddings", p(&emb), "--out-dir", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index = hopmix::index::load_index(&out_dir.join("t1.hidx")).unwrap();
    assert_eq!(index.doc_id(), "t1");
    assert_eq!(index.n_paragraphs(), 2);
}

#[test]
fn bench_reports_stage_breakdown() {
    let report = stdout_json(&hopmix(&[
        "bench", "--paragraphs", "50", "--sents", "4", "--dim", "16", "--queries", "120",
    ]));
    assert_eq!(report["queries"], 120);
    assert_eq!(report["entries"], 250);
    assert_eq!(report["parallel"], false);
    let total = report["total_secs"].as_f64().unwrap();
    let stages: f64 = ["score_secs", "mix_secs", "update_secs"].iter().map(|k| report[*k].as_f64().unwrap()).sum();
    assert!(stages <= total * 1.05 + 1e-3);
}
