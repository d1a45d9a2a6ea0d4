use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hmaflow::io::{make_synthetic_pair, read_flo, save_image, save_model, write_flo};
use hmaflow::{HmaFlow, ModelConfig, Tensor};

fn hmaflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmaflow")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a synthetic pair with its ground truth and a small model.
fn fixture(dir: &Path, size: (usize, usize)) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let pair = make_synthetic_pair(size, "translate:2,1".parse().unwrap(), 4).unwrap();
    let (a, b, gt, w) = (dir.join("a.png"), dir.join("b.png"), dir.join("gt.flo"), dir.join("m.hmaw"));
    save_image(&a, &pair.image1).unwrap();
    save_image(&b, &pair.image2).unwrap();
    write_flo(&gt, &pair.gt_flow).unwrap();
    let model = HmaFlow::new(ModelConfig { radii: vec![1, 2], ..ModelConfig::default() }).unwrap();
    let mut params = model.init_params(1);
    let head = params.get("update.head2.weight").unwrap().clone();
    params.insert("update.head2.weight", Tensor::full(head.shape(), 1e-3));
    save_model(&w, &model, &params).unwrap();
    (a, b, gt, w)
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(hmaflow(&[]).status.code(), Some(2));
    assert_eq!(hmaflow(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(hmaflow(&["overfit", "--size", "64"]).status.code(), Some(2));
    assert_eq!(hmaflow(&["overfit", "--motion", "shear:3"]).status.code(), Some(2));
    assert_eq!(hmaflow(&["overfit", "--alignment", "conv5x5"]).status.code(), Some(2));
    assert_eq!(hmaflow(&["infer", "--image1", "a.png"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.hmaw");
    let out = hmaflow(&["infer", "--image1", "a.png", "--image2", "b.png", "--weights", s(&missing), "--out", "o.flo"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.hmaw"));
    let out = hmaflow(&["overfit", "--size", "60x64", "--steps", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("multiple of 8"));
}

#[test]
fn infer_pads_crops_and_warm_starts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (a, b, _, w) = fixture(d, (36, 44));
    let (out, viz) = (d.join("o.flo"), d.join("o.png"));
    let r = hmaflow(&["infer", "--image1", s(&a), "--image2", s(&b), "--weights", s(&w), "--out", s(&out), "--viz", s(&viz), "--iters", "2"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let f = read_flo(&out).unwrap();
    assert_eq!((f.height(), f.width()), (36, 44));
    assert!(viz.exists());

    let out2 = d.join("o2.flo");
    let r = hmaflow(&["infer", "--image1", s(&a), "--image2", s(&b), "--weights", s(&w), "--out", s(&out2), "--iters", "2", "--warm-start", s(&out)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_ne!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());

    let wrong = d.join("wrong.flo");
    write_flo(&wrong, &hmaflow::FlowField::zeros(1, 10, 10, hmaflow::Resolution::Full)).unwrap();
    let r = hmaflow(&["infer", "--image1", s(&a), "--image2", s(&b), "--weights", s(&w), "--out", s(&out2), "--warm-start", s(&wrong)]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn eval_reports_per_pair_and_mean() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, _, _, w) = fixture(d, (32, 32));
    std::fs::write(d.join("pairs.txt"), "# synthetic\na.png b.png gt.flo\n\na.png b.png gt.flo\n").unwrap();
    let json = d.join("r.json");
    let r = Command::new(env!("CARGO_BIN_EXE_hmaflow"))
        .args(["eval", "--pairs", s(&d.join("pairs.txt")), "--weights", s(&w), "--iters", "2", "--json", s(&json)])
        .env("HMAFLOW_THREADS", "2")
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("mean over 2 pairs"), "{text}");
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(doc["pairs"].as_array().unwrap().len(), 2);
    let e = doc["mean_epe"].as_f64().unwrap();
    assert!(e.is_finite() && e > 0.0);
    std::fs::write(d.join("bad.txt"), "a.png b.png\n").unwrap();
    assert_eq!(hmaflow(&["eval", "--pairs", s(&d.join("bad.txt")), "--weights", s(&w)]).status.code(), Some(1));
}

#[test]
fn short_overfit_writes_report_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (report, weights) = (dir.path().join("r.json"), dir.path().join("w.hmaw"));
    let r = hmaflow(&[
        "overfit", "--size", "16x24", "--steps", "2", "--iters", "3", "--radii", "1,2", "--no-pe",
        "--alignment", "maxpool", "--report", s(&report), "--weights-out", s(&weights),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(doc["steps"], 2);
    assert_eq!(doc["per_iter_epe"].as_array().unwrap().len(), 3);
    let (model, _) = hmaflow::io::load_model(&weights).unwrap();
    assert_eq!(model.config().radii, vec![1, 2]);
    assert!(!model.config().position_embedding);
    assert_eq!(model.config().alignment, hmaflow::Alignment::MaxPool);
}

#[test]
fn selftest_passes() {
    let r = hmaflow(&["selftest"]);
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(r.status.success(), "{text}");
    assert!(text.contains("0 failed"));
}
