use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
iterations = 1
candidate_size = 8
retrieval_depth = 16
budgets = [40, 100]

[corpus]
languages = 2
passages = 80
concepts = 8
words_per_language = 64
entity_words = 12
filler_words = 4
topic_words_per_concept = 3
detail_words_per_passage = 3
min_passage_len = 12
max_passage_len = 20
max_query_len = 8
query_topic_words = 1
min_query_detail_words = 1
max_query_detail_words = 2
pretrain_samples = 40
train_samples = 24
dev_samples = 12
language_weights = []

[encoder]
d_model = 16
d_out = 16
shared = true

[generator]
d_model = 8
hidden = 8

[cross_scorer]
d_model = 8
hidden = 8

[warmup_pretrain]
steps = 20
batch_size = 8

[warmup_target]
steps = 10
batch_size = 8

[generator_qg]
steps = 20
batch_size = 8

[generator_rerank]
steps = 5
batch_size = 4

[cross_scorer_train]
steps = 20
batch_size = 8

[iter_retriever]
steps = 6
batch_size = 8

[iter_teacher]
steps = 4
batch_size = 4
"#;

fn xlr(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_xlr"))
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("xlr runs");
    assert!(
        out.status.success(),
        "xlr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn full_workflow_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = dir.path().join("out");

    xlr(dir.path(), &["gen-corpus"]);
    assert!(out.join("corpus.json").exists());

    let warm = xlr(dir.path(), &["warmup"]);
    assert!(String::from_utf8_lossy(&warm.stderr).contains("override:"));
    assert!(out.join("warmup.ckpt").exists());

    xlr(dir.path(), &["iterate", "--n", "1"]);
    assert!(out.join("state.ckpt").exists());
    let eval = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(eval.starts_with("tag,iteration,split,language,queries,budget,recall\n"));
    assert!(eval.lines().any(|l| l.starts_with("full,1,dev,avg,")));

    let e = xlr(dir.path(), &["evaluate", "--budgets", "40,100,200", "--split", "train"]);
    assert!(String::from_utf8_lossy(&e.stdout).contains("R@200t="));
    assert!(out.join("eval_train.csv").exists());

    xlr(dir.path(), &["rerank-compare", "--fractions", "1.0,0.5", "--depths", "10", "--budget", "100"]);
    let rerank = std::fs::read_to_string(out.join("rerank.csv")).unwrap();
    assert_eq!(rerank.lines().count(), 1 + 2 * 2);

    let report = xlr(dir.path(), &["report"]);
    assert!(String::from_utf8_lossy(&report.stdout).contains("1 iteration(s) complete"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nbogus = 2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xlr"))
        .arg("--config")
        .arg(dir.path().join("bad.toml"))
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .arg("gen-corpus")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn iterate_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xlr"))
        .arg("--out-dir")
        .arg(dir.path())
        .args(["iterate", "--n", "1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run warmup first"));
}
