use std::fs;
use std::path::Path;
use std::process::Command;

use cksc::io;
use cksc::kernelcore::TimeSeries;
use cksc::{KernelMatrix, LabelMatrix};
use nalgebra::DMatrix;

fn cksc(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cksc")).current_dir(dir).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, stdout, stderr) = cksc(dir, args);
    assert_eq!(code, 0, "cksc {args:?}: {stderr}");
    stdout
}

/// Small synthetic dataset plus its kernel in `dir/k`.
fn prepare(dir: &Path) {
    ok(dir, &["synthetic", "--out", "data", "--samples-per-class", "8", "--length", "20", "--seed", "2"]);
    ok(dir, &["kernel", "--manifest", "data/manifest.csv", "--out", "k"]);
}

fn train(dir: &Path, out: &str) {
    ok(dir, &["train", "--kernel", "k/kernel.csv", "--labels", "k/labels.csv", "--meta", "k/kernel.json", "--out", out, "--trace", "trace.csv", "--threads", "1"]);
}

#[test]
fn identical_samples_have_unit_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = TimeSeries::from_steps(&[vec![0.0, 1.0], vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap();
    let b = TimeSeries::from_steps(&[vec![3.0, 1.0], vec![2.0, 2.0]]).unwrap();
    for (name, s) in [("a.csv", &a), ("a2.csv", &a), ("b.csv", &b)] {
        io::write_series(&d.join(name), s).unwrap();
    }
    fs::write(d.join("manifest.csv"), "path,label\na.csv,x\na2.csv,x\nb.csv,y\n").unwrap();
    ok(d, &["kernel", "--manifest", "manifest.csv", "--out", "k"]);
    let k = io::read_kernel(&d.join("k/kernel.csv")).unwrap();
    assert_eq!(k.values()[(0, 1)], 1.0);
    assert!(k.values()[(0, 2)] < 1.0);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("k/kernel.json")).unwrap()).unwrap();
    assert_eq!(meta["n"], 3);
    assert!(d.join("k/spectrum.json").exists());
}

#[test]
fn precomputed_kernel_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let k = KernelMatrix::new(DMatrix::from_row_slice(3, 3, &[1.0, 0.1234567890123, 0.3, 0.1234567890123, 1.0, 1.0 / 3.0, 0.3, 1.0 / 3.0, 1.0])).unwrap();
    io::write_kernel(&d.join("in.csv"), &k).unwrap();
    io::write_labels(&d.join("labels.csv"), &LabelMatrix::from_names(&["a", "b", "a"]).unwrap()).unwrap();
    ok(d, &["kernel", "--kernel", "in.csv", "--labels", "labels.csv", "--out", "k"]);
    assert_eq!(io::read_kernel(&d.join("k/kernel.csv")).unwrap(), k);
}

#[test]
fn training_is_reproducible_and_predicts_its_training_set() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    train(d, "m1.json");
    train(d, "m2.json");
    assert_eq!(fs::read(d.join("m1.json")).unwrap(), fs::read(d.join("m2.json")).unwrap());

    ok(d, &["predict", "--model", "m1.json", "--kernel", "k/kernel.csv", "--train-manifest", "data/manifest.csv", "--test-manifest", "data/manifest.csv", "--out", "pred.jsonl"]);
    let labels = fs::read_to_string(d.join("k/labels.csv")).unwrap();
    let truth: Vec<&str> = labels.lines().skip(1).collect();
    let preds: Vec<serde_json::Value> = fs::read_to_string(d.join("pred.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(preds.len(), truth.len());
    let hits = preds.iter().zip(&truth).filter(|(p, t)| p["class_label"].as_str() == Some(t)).count();
    assert!(hits * 100 >= 95 * truth.len(), "{hits}/{}", truth.len());
}

#[test]
fn empty_test_set_writes_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    train(d, "model.json");
    fs::write(d.join("empty.csv"), "").unwrap();
    ok(d, &["predict", "--model", "model.json", "--kernel", "k/kernel.csv", "--cross-kernel", "empty.csv", "--out", "pred.jsonl"]);
    assert_eq!(fs::read_to_string(d.join("pred.jsonl")).unwrap(), "");
}

#[test]
fn corrupted_model_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    train(d, "model.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    doc["beta"] = serde_json::json!("not a number");
    fs::write(d.join("bad.json"), doc.to_string()).unwrap();
    let (code, _, stderr) = cksc(d, &["predict", "--model", "bad.json", "--kernel", "k/kernel.csv", "--cross-kernel", "k/kernel.csv", "--out", "p.jsonl"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("`beta`"), "{stderr}");

    doc.as_object_mut().unwrap().remove("beta");
    fs::write(d.join("bad.json"), doc.to_string()).unwrap();
    let (code, _, stderr) = cksc(d, &["predict", "--model", "bad.json", "--kernel", "k/kernel.csv", "--cross-kernel", "k/kernel.csv", "--out", "p.jsonl"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("`beta`"), "{stderr}");
}

#[test]
fn kernel_hash_mismatch_is_an_integrity_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    train(d, "model.json");
    let mut k = io::read_kernel(&d.join("k/kernel.csv")).unwrap().into_inner();
    k[(0, 1)] *= 0.5;
    k[(1, 0)] *= 0.5;
    io::write_kernel(&d.join("other.csv"), &KernelMatrix::new(k).unwrap()).unwrap();
    let (code, _, stderr) = cksc(d, &["predict", "--model", "model.json", "--kernel", "other.csv", "--cross-kernel", "other.csv", "--out", "p.jsonl"]);
    assert_eq!(code, 4, "{stderr}");
}

#[test]
fn single_class_trace_has_no_discriminant() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synthetic", "--out", "data", "--classes", "1", "--samples-per-class", "6", "--length", "15"]);
    ok(d, &["kernel", "--manifest", "data/manifest.csv", "--out", "k"]);
    train(d, "model.json");
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    let mut rows = trace.lines();
    assert_eq!(rows.next(), Some("iteration,half_step,objective,reconstruction,ridge,discriminant"));
    for row in rows {
        assert_eq!(row.rsplit(',').next().unwrap().parse::<f64>().unwrap(), 0.0, "{row}");
    }
}

#[test]
fn synthetic_generation_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        ok(d, &["synthetic", "--out", out, "--samples-per-class", "3", "--seed", "8"]);
    }
    let names = ["manifest.csv", "series/sample_0004.csv", "spec.json"];
    for name in names {
        assert_eq!(fs::read(d.join("a").join(name)).unwrap(), fs::read(d.join("b").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn nqp_solve_reports_solution() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("p.json"), r#"{"q": [[1, 0], [0, 1]], "b": [-2, -1], "t": 1}"#).unwrap();
    ok(d, &["nqp-solve", "--problem", "p.json", "--out", "s.json"]);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    assert_eq!(s["x"], serde_json::json!([1.0, 0.0]));
    assert_eq!(s["objective"], serde_json::json!(-1.0));

    fs::write(d.join("bad.json"), r#"{"q": [[1, 2], [0, 1]], "b": [-2, -1], "t": 1}"#).unwrap();
    assert_eq!(cksc(d, &["nqp-solve", "--problem", "bad.json"]).0, 2);
}

#[test]
fn malformed_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("k.csv"), "1,0.5\n0.5,oops\n").unwrap();
    fs::write(d.join("l.csv"), "label\na\nb\n").unwrap();
    let (code, _, stderr) = cksc(d, &["eval", "--kernel", "k.csv", "--labels", "l.csv", "--out", "r.json"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("k.csv") && stderr.contains("line 2"), "{stderr}");

    fs::write(d.join("run.toml"), "alpha = 0.1\nlambda = 0.2\n").unwrap();
    let (code, _, stderr) = cksc(d, &["eval", "--kernel", "k.csv", "--labels", "l.csv", "--out", "r.json", "--config", "run.toml"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("lambda"), "{stderr}");
}

#[test]
fn sweep_writes_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let args = ["sweep", "--kernel", "k/kernel.csv", "--labels", "k/labels.csv", "--param", "alpha", "--values", "0.1,0.4", "--folds", "2", "--threads", "1"];
    ok(d, &[&args[..], &["--out", "s1.csv", "--json", "s.json"]].concat());
    ok(d, &[&args[..], &["--out", "s2.csv"]].concat());
    let table = fs::read_to_string(d.join("s1.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(table, fs::read_to_string(d.join("s2.csv")).unwrap());
}
