use std::path::Path;
use std::process::{Command, Output};

fn mixqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixqa"))
        .args(args)
        .env_remove("MIXQA_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_MODEL: &[&str] = &[
    "--d-model", "8", "--layers", "1", "--heads", "2", "--d-ff", "16", "--max-seq-len", "64",
    "--batch-qa", "2", "--batch-score", "2", "--max-candidates", "4", "--lr-qa", "1e-3",
];

/// bench-gen + index + train on a small synthetic set; returns (squad, index, checkpoint).
fn pipeline(dir: &Path, seed: &str) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    ok(&mixqa(&["bench-gen", "--docs", "12", "--questions", "12", "--seed", "3", "--out-dir", s(dir)]));
    let index = dir.join("index.bin");
    let squad = dir.join("squad.json");
    ok(&mixqa(&["index", "--corpus", s(&dir.join("corpus.jsonl")), "--out", s(&index)]));
    let ckpt = dir.join("model.ckpt");
    let mut args = vec!["train", "--squad", s(&squad), "--index", s(&index), "--out", s(&ckpt), "--steps", "6", "--seed", seed];
    args.extend_from_slice(TINY_MODEL);
    ok(&mixqa(&args));
    (squad, index, ckpt)
}

#[test]
fn index_defaults_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mixqa(&["bench-gen", "--docs", "5", "--questions", "5", "--out-dir", s(dir.path())]));
    let out = ok(&mixqa(&[
        "index",
        "--corpus",
        s(&dir.path().join("corpus.jsonl")),
        "--out",
        s(&dir.path().join("i.bin")),
    ]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["granularity"], 100);
    assert_eq!(v["stride"], 50);
    assert_eq!(v["documents"], 5);

    let out = ok(&mixqa(&[
        "index",
        "--from-squad",
        s(&dir.path().join("squad.json")),
        "--out",
        s(&dir.path().join("j.bin")),
        "--granularity",
        "400",
        "--stride",
        "300",
    ]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["granularity"], 400);
    assert_eq!(v["stride"], 300);
}

#[test]
fn missing_corpus_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixqa(&["index", "--corpus", "/definitely/not/here.jsonl", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not/here.jsonl"));
}

#[test]
fn invalid_chunking_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mixqa(&["bench-gen", "--docs", "2", "--questions", "2", "--out-dir", s(dir.path())]));
    let out = mixqa(&[
        "index",
        "--corpus",
        s(&dir.path().join("corpus.jsonl")),
        "--out",
        s(&dir.path().join("x")),
        "--granularity",
        "10",
        "--stride",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_zero_steps_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mixqa(&["bench-gen", "--docs", "4", "--questions", "4", "--out-dir", s(dir.path())]));
    let index = dir.path().join("i.bin");
    ok(&mixqa(&["index", "--corpus", s(&dir.path().join("corpus.jsonl")), "--out", s(&index)]));
    let out = mixqa(&[
        "train",
        "--squad",
        s(&dir.path().join("squad.json")),
        "--index",
        s(&index),
        "--out",
        s(&dir.path().join("m")),
        "--steps",
        "0",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_steps"));
}

#[test]
fn train_is_reproducible_and_eval_emits_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (squad, index, ckpt_a) = pipeline(a.path(), "5");
    let (_, index_b, ckpt_b) = pipeline(b.path(), "5");
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&index), read(&index_b));
    assert_eq!(read(&ckpt_a), read(&ckpt_b));
    let log = |d: &Path| std::fs::read_to_string(d.join("model.ckpt.losses.csv")).unwrap();
    assert_eq!(log(a.path()), log(b.path()));
    assert!(log(a.path()).starts_with("step,task,loss,lr\n0,qa,"));

    let out = ok(&mixqa(&[
        "eval",
        "--squad",
        s(&squad),
        "--index",
        s(&index),
        "--checkpoint",
        s(&ckpt_a),
        "--n-retrieve",
        "5",
        "--k",
        "1,2,3",
    ]));
    let reports: Vec<serde_json::Value> =
        out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 3);
    let ems: Vec<f64> = reports.iter().map(|r| r["em"].as_f64().unwrap()).collect();
    assert!(ems[0] <= ems[1] && ems[1] <= ems[2]);
    assert_eq!(reports[0]["n_examples"], 12);
    assert_eq!(reports[2]["k"], 3);

    // An empty question file yields a zero-example report.
    let empty = a.path().join("empty.json");
    std::fs::write(&empty, r#"{"data":[]}"#).unwrap();
    let out = ok(&mixqa(&[
        "eval",
        "--squad",
        s(&empty),
        "--index",
        s(&index),
        "--checkpoint",
        s(&ckpt_a),
    ]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["n_examples"], 0);

    // Sweep over one setting writes one row per (n, k).
    let csv = ok(&mixqa(&[
        "sweep",
        "--corpus",
        s(&a.path().join("corpus.jsonl")),
        "--squad",
        s(&squad),
        "--setting",
        &format!("100:50:{}", s(&ckpt_a)),
        "--n-retrieve",
        "3,5",
        "--k",
        "1",
    ]));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "granularity,stride,n_retrieve,k,em,f1");
    assert_eq!(lines.len(), 3);
}

#[test]
fn config_file_supplies_paths_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (squad, index, ckpt) = pipeline(dir.path(), "1");
    let cfg = dir.path().join("svc.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "index_path": index,
            "checkpoint_path": ckpt,
            "n_retrieve": 4,
            "k": 1
        })
        .to_string(),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mixqa"))
        .args(["eval", "--squad", s(&squad), "--n-retrieve", "6"])
        .env("MIXQA_CONFIG", &cfg)
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(ok(&out).trim()).unwrap();
    assert_eq!(v["n_retrieve"], 6);
    assert_eq!(v["k"], 1);
}

#[test]
fn bench_gen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&mixqa(&["bench-gen", "--docs", "30", "--questions", "40", "--seed", "9", "--out-dir", s(d.path())]));
    }
    for f in ["corpus.jsonl", "squad.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap()
        );
    }
}
