//! End-to-end checks of the binary: exit codes, artifact layout, and
//! run-to-run reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn heron(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heron"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_toy_corpus(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("toy.tuples");
    let mut text = String::new();
    // 8 docs x 6 distinct words each, with repeats.
    for d in 0..8 {
        for w in 0..6 {
            text.push_str(&format!("{d},{},{}\n", (d + w) % 10, 1 + (w % 3)));
        }
    }
    std::fs::write(&path, text).unwrap();
    path
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let out = dir.path().join("run");
    let result = heron(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--k",
        "3",
        "--split",
        "0.7",
        "--iters",
        "20",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
    for file in [
        "manifest.json",
        "trace.csv",
        "theta.csv",
        "phi.csv",
        "train.tuples",
        "test.tuples",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(json["config"]["k"], 3);
    assert!(json["timing"]["median_iter_millis"].as_f64().is_some());
}

#[test]
fn zero_topics_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let result = heron(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--k",
        "0",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn missing_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let result = heron(&[
        "train",
        "--corpus",
        dir.path().join("nope.tuples").to_str().unwrap(),
        "--k",
        "2",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn unknown_flag_exits_with_clap_code() {
    let result = heron(&["train", "--definitely-not-a-flag"]);
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn same_seed_reproduces_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let result = heron(&[
            "train",
            "--corpus",
            corpus.to_str().unwrap(),
            "--k",
            "2",
            "--backend",
            "heron",
            "--iters",
            "15",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&result), 0, "{result:?}");
        out
    };
    let a = run("a");
    let b = run("b");
    let trace_a = std::fs::read(a.join("trace.csv")).unwrap();
    let trace_b = std::fs::read(b.join("trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b);
    // Manifests match once timing (and the out path itself) are stripped.
    let strip = |p: &Path| -> serde_json::Value {
        let text = std::fs::read_to_string(p.join("manifest.json")).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        v["config"].as_object_mut().unwrap().remove("out");
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn eval_reports_both_top_n_settings() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let out = dir.path().join("run");
    let result = heron(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--k",
        "2",
        "--split",
        "0.7",
        "--iters",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0);
    let result = heron(&[
        "eval",
        "--artifacts",
        out.to_str().unwrap(),
        "--corpus",
        out.join("test.tuples").to_str().unwrap(),
        "--top-n",
        "3,5",
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
    let report = std::fs::read_to_string(out.join("eval.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    let entries = json["coherence"].as_array().unwrap();
    // 2 top-n settings x 3 metrics.
    assert_eq!(entries.len(), 6);
    assert!(json["perplexity"].as_f64().unwrap() > 0.0);
    // Deterministic evaluation: run again and compare bytes.
    let before = std::fs::read(out.join("eval.json")).unwrap();
    let result = heron(&[
        "eval",
        "--artifacts",
        out.to_str().unwrap(),
        "--corpus",
        out.join("test.tuples").to_str().unwrap(),
        "--top-n",
        "3,5",
    ]);
    assert_eq!(exit_code(&result), 0);
    let after = std::fs::read(out.join("eval.json")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn eval_rejects_vocabulary_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let out = dir.path().join("run");
    let result = heron(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--k",
        "2",
        "--iters",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0);
    // A corpus with a larger vocabulary than phi covers.
    let big = dir.path().join("big.tuples");
    std::fs::write(&big, "0,50,1\n0,1,1\n").unwrap();
    let result = heron(&[
        "eval",
        "--artifacts",
        out.to_str().unwrap(),
        "--corpus",
        big.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 2);
}

#[test]
fn bench_single_cell_emits_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let csv_path = dir.path().join("bench.csv");
    let result = heron(&[
        "bench",
        "--corpus",
        corpus.to_str().unwrap(),
        "--backends",
        "heron",
        "--k",
        "2",
        "--batches",
        "1",
        "--iters",
        "10",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("backend,k,batches,perplexity"));
    assert!(lines[1].starts_with("heron,2,1,"));
    assert!(lines[1].ends_with(",ok"));
}

#[test]
fn bench_continues_past_failing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_toy_corpus(dir.path());
    let csv_path = dir.path().join("bench.csv");
    // batches=100000 exceeds the tuple count -> that heron cell fails,
    // but the cgs cell (which ignores batching) still runs.
    let result = heron(&[
        "bench",
        "--corpus",
        corpus.to_str().unwrap(),
        "--backends",
        "heron,cgs",
        "--k",
        "2",
        "--batches",
        "100000",
        "--iters",
        "5",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.contains("error:"), "{csv}");
    assert!(csv
        .lines()
        .any(|l| l.starts_with("cgs,2,") && l.ends_with(",ok")));
}

#[test]
fn bench_time_per_iteration_grows_with_k() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("synth.tuples");
    let result = heron(&[
        "synth",
        "--docs",
        "500",
        "--vocab",
        "400",
        "--topics",
        "5",
        "--len-min",
        "30",
        "--len-max",
        "50",
        "--seed",
        "3",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0);
    let csv_path = dir.path().join("bench.csv");
    let result = heron(&[
        "bench",
        "--corpus",
        corpus.to_str().unwrap(),
        "--backends",
        "cgs,same,heron",
        "--k",
        "3,40",
        "--iters",
        "10",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let time_of = |backend: &str, k: &str| -> f64 {
        csv.lines()
            .find(|l| l.starts_with(&format!("{backend},{k},")))
            .and_then(|l| l.split(',').nth(4))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("missing cell {backend},{k} in {csv}"))
    };
    for backend in ["cgs", "same", "heron"] {
        let small = time_of(backend, "3");
        let large = time_of(backend, "40");
        assert!(
            large > small,
            "{backend}: {small} ms at K=3 vs {large} ms at K=40\n{csv}"
        );
    }
}

#[test]
fn synth_output_roundtrips_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("synth.tuples");
    let result = heron(&[
        "synth",
        "--docs",
        "30",
        "--vocab",
        "40",
        "--topics",
        "3",
        "--seed",
        "2",
        "--labels",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
    assert!(corpus.exists());
    assert!(dir.path().join("synth.tuples.labels").exists());
    let out = dir.path().join("run");
    // Labels ride along, so a supervised run works off the sidecar.
    let result = heron(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--model",
        "slda",
        "--k",
        "3",
        "--eta",
        "0.5",
        "--a",
        "0.25",
        "--iters",
        "10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&result), 0, "{result:?}");
}
