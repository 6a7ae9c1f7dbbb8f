use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use koa_core::cli::{main_with_args, RunConfig};
use koa_core::metrics::read_reports_csv;

const TINY: &str = r#"{
  "synth": {"counts": [12, 12, 12, 12, 12], "image_size": 32},
  "preprocess": {"target_width": 16, "target_height": 16},
  "backbones": [
    {"name": "a", "channels": [2], "epochs": 2},
    {"name": "b", "channels": [3], "epochs": 2}
  ],
  "train": {"lr": 0.01},
  "selection": {"threshold": 0.0},
  "meta": {
    "grids": [
      {"space": {"kind": "knn", "k": [1, 3]}, "folds": 3, "mode": {"type": "exhaustive"}},
      {"space": {"kind": "random_forest", "n_trees": [5], "max_depth": [null], "features_per_split": [null]}, "folds": 3, "mode": {"type": "exhaustive"}},
      {"space": {"kind": "gbdt", "depth": [2], "iterations": [5], "learning_rate": [0.1]}, "folds": 3, "mode": {"type": "exhaustive"}}
    ]
  }
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.in.json");
    fs::write(&p, text).unwrap();
    p
}

fn koa(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("koa").chain(args.iter().copied()))
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    koa(&args)
}

fn files_under(root: &Path, sub: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.join(sub)];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_writes_classes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"synth": {"counts": [9, 4, 6, 3, 1], "image_size": 32}}"#);
    for out in ["a", "b"] {
        let o = dir.path().join(out);
        assert_eq!(koa(&["synth", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]), 0);
    }
    let a = dir.path().join("a");
    for g in 0..5 {
        assert!(a.join("data").join(g.to_string()).is_dir());
    }
    let manifest = fs::read_to_string(a.join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 23);
    for (g, want) in [9, 4, 6, 3, 1].into_iter().enumerate() {
        assert_eq!(fs::read_dir(a.join("data").join(g.to_string())).unwrap().count(), want);
    }
    let files = files_under(&a, "data");
    assert_eq!(files, files_under(&dir.path().join("b"), "data"));
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(dir.path().join("b").join(&f)).unwrap(), "{f:?}");
    }
}

#[test]
fn end_to_end_run_emits_reports_and_eval_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    assert_eq!(run(&cfg, &out, &[]), 0);
    for f in [
        "config.json",
        "splits.csv",
        "models/a.json",
        "models/b.json",
        "histories/a.csv",
        "probs/a_train.csv",
        "probs/b_test.csv",
        "search/knn.csv",
        "search/random_forest.csv",
        "search/gbdt.csv",
        "search/selection.json",
        "meta/knn.json",
        "meta/final.json",
        "reports/base.csv",
        "reports/meta.csv",
        "summary.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let hist = fs::read_to_string(out.join("histories/a.csv")).unwrap();
    assert!(hist.starts_with("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n"));
    assert_eq!(hist.lines().count(), 3);
    let search = fs::read_to_string(out.join("search/knn.csv")).unwrap();
    assert!(search.starts_with("cell,kind,params,fold_0,fold_1,fold_2,mean\n"), "{search}");

    let base = read_reports_csv(&out.join("reports/base.csv")).unwrap();
    let meta = read_reports_csv(&out.join("reports/meta.csv")).unwrap();
    assert_eq!(base.len(), 6);
    assert!(base.iter().chain(&meta).all(|r| r.confusion.len() == 5));

    // Pass-through head reproduces the strongest selected base learner.
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let top = summary["selected_base_learners"][0].as_str().unwrap();
    let pt = meta.iter().find(|r| r.model == "pass_through" && r.split == "test").unwrap();
    let b = base.iter().find(|r| r.model == top && r.split == "test").unwrap();
    assert_eq!((pt.accuracy, pt.balanced_accuracy, &pt.confusion), (b.accuracy, b.balanced_accuracy, &b.confusion));

    let final_kind = summary["final_meta_learner"].as_str().unwrap();
    for (model, want) in [
        ("meta/final.json", meta.iter().find(|r| r.model == final_kind && r.split == "test").unwrap()),
        ("models/b.json", base.iter().find(|r| r.model == "b" && r.split == "test").unwrap()),
    ] {
        let m = out.join(model);
        assert_eq!(koa(&["eval", "--model", m.to_str().unwrap(), "--data", out.to_str().unwrap()]), 0);
        let stem = Path::new(model).file_stem().unwrap().to_str().unwrap();
        let got = read_reports_csv(&out.join("eval").join(format!("{stem}_test.csv"))).unwrap();
        assert_eq!(&got[0], want);
    }
    let missing = out.join("models/none.json");
    assert_ne!(koa(&["eval", "--model", missing.to_str().unwrap(), "--data", out.to_str().unwrap()]), 0);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--seed", "5"]), 0);
    assert_eq!(run(&cfg, &b, &["--seed", "5"]), 0);
    let mut compared = 0;
    for sub in ["reports", "models", "meta", "search", "probs", "histories"] {
        let files = files_under(&a, sub);
        assert_eq!(files, files_under(&b, sub));
        for f in files {
            assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f:?} differs");
            compared += 1;
        }
    }
    assert!(compared > 10);
}

#[test]
fn binary_task_reports_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("bin");
    assert_eq!(run(&cfg, &out, &["--task", "binary"]), 0);
    let saved = RunConfig::from_json(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved.threshold(), 0.0);
    for r in read_reports_csv(&out.join("reports/meta.csv")).unwrap() {
        assert_eq!(r.confusion.len(), 2);
    }
    let probs = fs::read_to_string(out.join("probs/a_test.csv")).unwrap();
    assert!(probs.starts_with("id,class_0,class_1\n"));
}

#[test]
fn resume_skips_verified_stages_and_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let fresh = dir.path().join("fresh");
    assert_eq!(
        koa(&["stack", "--config", cfg.to_str().unwrap(), "--out", fresh.to_str().unwrap()]),
        3,
        "stack without upstream artifacts"
    );

    assert_eq!(run(&cfg, &out, &[]), 0);
    let model = out.join("models/a.json");
    let before = fs::metadata(&model).unwrap().modified().unwrap();
    assert_eq!(run(&cfg, &out, &["--stage-resume"]), 0);
    assert_eq!(fs::metadata(&model).unwrap().modified().unwrap(), before);

    // A different seed is a different config.
    assert_eq!(run(&cfg, &out, &["--stage-resume", "--seed", "99"]), 3);

    let mut text = fs::read_to_string(&model).unwrap();
    text = text.replacen("\"values\": [", "\"values\": [0.5, ", 1);
    fs::write(&model, text).unwrap();
    assert_eq!(run(&cfg, &out, &["--stage-resume"]), 3);
    fs::remove_file(out.join("search/best.json")).unwrap();
    assert_eq!(koa(&["stack", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 3);
}

#[test]
fn out_of_fold_mode_shares_test_features() {
    let dir = tempfile::tempdir().unwrap();
    let in_sample = write_config(dir.path(), TINY);
    let oof_text = TINY.replacen("\"meta\": {", "\"meta\": {\n    \"mode\": {\"type\": \"out_of_fold\", \"folds\": 2},", 1);
    let oof_dir = dir.path().join("oof_cfg");
    fs::create_dir(&oof_dir).unwrap();
    let oof = write_config(&oof_dir, &oof_text);
    let (a, b) = (dir.path().join("in_sample"), dir.path().join("oof"));
    assert_eq!(run(&in_sample, &a, &[]), 0);
    assert_eq!(run(&oof, &b, &[]), 0);
    for f in ["probs/a_test.csv", "probs/b_test.csv", "probs/a_val.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let oof_train = fs::read_to_string(b.join("probs/a_train_oof.csv")).unwrap();
    assert_ne!(oof_train, fs::read_to_string(b.join("probs/a_train.csv")).unwrap());
    assert!(!a.join("probs/a_train_oof.csv").exists());
}

#[test]
fn exit_codes_follow_error_classes() {
    let bin = env!("CARGO_BIN_EXE_koa");
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), r#"{"train": {"momentum": 1.5}}"#);
    let code = |args: &[&str]| Command::new(bin).args(args).env("RUST_LOG", "off").status().unwrap().code();
    assert_eq!(code(&["run", "--config", bad.to_str().unwrap()]), Some(2));
    assert_eq!(code(&["run", "--task", "ternary"]), Some(2));
    assert_eq!(code(&["eval", "--model", "/nonexistent/m.json", "--data", dir.path().to_str().unwrap()]), Some(3));

    let nan_dir = tempfile::tempdir().unwrap();
    let nan = write_config(nan_dir.path(), &TINY.replace("\"lr\": 0.01", "\"lr\": 1e200"));
    let out = nan_dir.path().join("run");
    assert_eq!(code(&["run", "--config", nan.to_str().unwrap(), "--out", out.to_str().unwrap()]), Some(4));
    assert_eq!(code(&["--help"]), Some(0));
}
