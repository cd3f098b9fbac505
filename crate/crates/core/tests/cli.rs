use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).output().expect("binary runs")
}

#[test]
fn wl_prints_colorings_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("g.svg");
    let out = lab(&["wl", "--graph", "dicyclic:4,6", "--svg", svg.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["dicyclic"]["symmetry"], "asymmetric");
    assert!(v["trace"]["per_iteration"].as_array().unwrap().len() > 1);
    assert_eq!(std::fs::read_to_string(svg).unwrap().matches("<circle").count(), 10);
}

#[test]
fn cycle_with_marked_node() {
    let out = lab(&["wl", "--graph", "cycle:7", "--marked"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trace"]["num_classes"], 4);
    assert_eq!(v["trace"]["stable_at"], 3);
}

#[test]
fn words_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["words", "--encoding", "one_hot,haar", "--trials", "2", "--epochs", "20", "--hidden", "8", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["result.json", "result.csv", "ratings.svg", "timing.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let results = idlab::experiments::emit::read_results(&dir.path().join("result.json")).unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0].trials.len(), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = idlab::experiments::ExperimentConfig::words(idlab::encodings::EncodingKind::OneHot, idlab::gnn::ModelKind::GconvGlob, 2);
    cfg.hidden = 4;
    cfg.train.epochs = 10;
    cfg.trials = 3;
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = lab(&["words", "--config", path.to_str().unwrap(), "--trials", "1", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &idlab::experiments::emit::read_results(&dir.path().join("result.json")).unwrap()[0];
    assert_eq!((r.config.trials, r.config.layers, r.config.hidden), (1, 2, 4));
}

#[test]
fn failing_check_exits_one_and_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // the pair-swap fallback is not an orthogonal symmetry of Gaussian codes
    let out = lab(&["invariance", "--mode", "gradient", "--encoding", "gaussian:16", "--draws", "2", "--out", d]);
    assert_eq!(out.status.code(), Some(1));
    let out = lab(&["invariance", "--mode", "gradient", "--draws", "2", "--out", d]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(lab(&["words", "--encoding", "nope", "--out", d]).status.code(), Some(2));
    assert_eq!(lab(&["wl", "--graph", "dicyclic:2,5"]).status.code(), Some(2));
}
