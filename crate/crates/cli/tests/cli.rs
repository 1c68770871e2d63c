use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mgtd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgtd"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("MGTD_MODEL_DIR")
        .args(args)
        .output()
        .expect("spawn mgtd")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mgtd(dir, args);
    assert!(
        out.status.success(),
        "mgtd {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = mgtd(dir, args);
    assert!(!out.status.success(), "mgtd {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// A small synthetic corpus with its two generator models.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out-dir", ".", "--train-per-class", "30", "--dev-per-class", "10"]);
    dir
}

fn width_of_first_record(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    let record: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    record["features"][0].as_array().unwrap().len()
}

#[test]
fn svm_train_predict_evaluate() {
    let dir = workspace();
    let d = dir.path();
    let out = ok(d, &["train-svm", "--train", "train.csv", "--model-out", "svm.json"]);
    assert!(out.contains("accuracy"), "{out}");
    assert!(d.join("svm.json").is_file());

    ok(d, &["predict", "--model", "svm.json", "--input", "dev.csv", "--out", "pred.csv"]);
    let preds = fs::read_to_string(d.join("pred.csv")).unwrap();
    assert!(preds.starts_with("id,label\n"));
    assert_eq!(preds.lines().count(), 21);

    let report = ok(d, &["evaluate", "--predictions", "pred.csv", "--gold", "dev.csv", "--system", "svm"]);
    assert!(report.contains("System"), "{report}");
}

#[test]
fn model_dir_env_sets_default_output() {
    let dir = workspace();
    let d = dir.path();
    fs::create_dir(d.join("models")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mgtd"))
        .current_dir(d)
        .env("MGTD_MODEL_DIR", "models")
        .args(["train-svm", "--train", "train.csv"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("models/svm.json").is_file());
}

#[test]
fn missing_label_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "id,text\na,some words here\nb,other words there\n").unwrap();
    let err = fails(dir.path(), &["train-svm", "--train", "bad.csv", "--model-out", "m.json"]);
    assert!(err.contains("label"), "{err}");
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn feature_width_follows_scorer_count() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["extract-features", "--input", "dev.csv", "--scorer", "scorer-a.json", "--out", "one.jsonl"]);
    assert_eq!(width_of_first_record(&d.join("one.jsonl")), 3);

    let four = [
        "extract-features", "--input", "dev.csv", "--scorer", "scorer-a.json", "--scorer", "scorer-b.json",
        "--scorer", "scorer-a.json", "--scorer", "scorer-b.json", "--out", "four.jsonl",
    ];
    ok(d, &four);
    assert_eq!(width_of_first_record(&d.join("four.jsonl")), 12);
    assert_eq!(fs::read_to_string(d.join("four.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn scorer_with_foreign_vocabulary_is_rejected() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["fit-scorer", "--input", "dev.csv", "--out", "narrow.json"]);
    let err = fails(
        d,
        &["extract-features", "--input", "dev.csv", "--scorer", "scorer-a.json", "--scorer", "narrow.json", "--out", "f.jsonl"],
    );
    assert!(err.contains("tokenizer"), "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workspace();
    let d = dir.path();
    for name in ["a", "b"] {
        ok(d, &["fit-scorer", "--input", "train.csv", "--out", &format!("lm-{name}.json"), "--id", "lm"]);
        ok(d, &["extract-features", "--input", "train.csv", "--scorer", &format!("lm-{name}.json"), "--out", &format!("f-{name}.jsonl")]);
        ok(d, &["train-svm", "--train", "train.csv", "--model-out", &format!("svm-{name}.json")]);
    }
    for (a, b) in [("lm-a.json", "lm-b.json"), ("f-a.jsonl", "f-b.jsonl"), ("svm-a.json", "svm-b.json")] {
        assert_eq!(fs::read(d.join(a)).unwrap(), fs::read(d.join(b)).unwrap(), "{a} vs {b}");
    }
}

#[test]
fn candace_train_predict_and_determinism() {
    let dir = workspace();
    let d = dir.path();
    for split in ["train", "dev"] {
        ok(
            d,
            &["extract-features", "--input", &format!("{split}.csv"), "--scorer", "scorer-a.json", "--scorer", "scorer-b.json", "--out", &format!("{split}.jsonl")],
        );
    }
    let train = |out: &str| {
        ok(
            d,
            &[
                "train-candace", "--train-features", "train.jsonl", "--dev-features", "dev.jsonl", "--labels", "train.csv",
                "dev.csv", "--model-out", out, "--epochs", "2", "--d-model", "16", "--ffn-dim", "32", "--layers", "1",
            ],
        )
    };
    let first = train("c1.json");
    assert!(first.contains("best epoch"), "{first}");
    train("c2.json");
    assert_eq!(fs::read(d.join("c1.json")).unwrap(), fs::read(d.join("c2.json")).unwrap());
    let log = fs::read_to_string(d.join("c1.metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert_eq!(log, fs::read_to_string(d.join("c2.metrics.jsonl")).unwrap());

    ok(d, &["predict", "--model", "c1.json", "--input", "dev.jsonl", "--out", "p1.csv"]);
    ok(d, &["predict", "--model", "c1.json", "--input", "dev.csv", "--scorer", "scorer-a.json", "--scorer", "scorer-b.json", "--out", "p2.csv"]);
    assert_eq!(fs::read(d.join("p1.csv")).unwrap(), fs::read(d.join("p2.csv")).unwrap());

    // one scorer gives 3 columns, the model expects 6
    ok(d, &["extract-features", "--input", "dev.csv", "--scorer", "scorer-a.json", "--out", "narrow.jsonl"]);
    let err = fails(d, &["predict", "--model", "c1.json", "--input", "narrow.jsonl", "--out", "p3.csv"]);
    assert!(err.contains("expects 6"), "{err}");
}

#[test]
fn missing_dev_file_fails_before_training() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["extract-features", "--input", "train.csv", "--scorer", "scorer-a.json", "--out", "train.jsonl"]);
    let err = fails(
        d,
        &["train-candace", "--train-features", "train.jsonl", "--dev-features", "nope.jsonl", "--labels", "train.csv", "--model-out", "c.json"],
    );
    assert!(err.contains("nope.jsonl"), "{err}");
    assert!(!d.join("c.json").exists());
}

#[test]
fn perfect_predictions_score_100() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gold.csv"), "id,text,label\na,x y,human\nb,y z,machine\nc,z w,machine\n").unwrap();
    fs::write(d.join("pred.csv"), "id,label\nc,machine\na,human\nb,machine\n").unwrap();
    let out = ok(d, &["evaluate", "--predictions", "pred.csv", "--gold", "gold.csv"]);
    assert!(out.contains("accuracy 100.00"), "{out}");
    assert!(out.contains("100.00 100.00 100.00 100.00"), "{out}");
}

#[test]
fn mismatched_prediction_ids_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gold.csv"), "id,text,label\na,x y,human\nb,y z,machine\n").unwrap();
    fs::write(d.join("pred.csv"), "id,label\na,human\nq,machine\n").unwrap();
    let err = fails(d, &["evaluate", "--predictions", "pred.csv", "--gold", "gold.csv"]);
    assert!(err.contains("`b`"), "{err}");
}
