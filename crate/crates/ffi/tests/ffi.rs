use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use koa_core::ensemble::{MetaLearnerSpec, MetaModel};
use koa_core::imaging::{clahe, ClaheParams, GrayImage};
use koa_core::nn::{Model, ModelConfig, OutputKind};
use koa_core::tensor::Tensor;
use koa_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(koa_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn remap_is_exhaustive_and_rejects_bad_grades() {
    let mut out = 9usize;
    for (g, want) in [(0, 0), (1, 0), (2, 1), (3, 1), (4, 1)] {
        assert_eq!(unsafe { koa_remap_binary(g, &mut out) }, KoaStatus::Ok);
        assert_eq!(out, want);
    }
    assert_eq!(unsafe { koa_remap_binary(5, &mut out) }, KoaStatus::InvalidArgument);
    assert!(last_error().contains('5'), "{}", last_error());
    assert_eq!(unsafe { koa_remap_binary(1, ptr::null_mut()) }, KoaStatus::NullPointer);
}

#[test]
fn metrics_match_core() {
    let scores = [0.8, 0.3, 0.5, 0.1];
    let labels = [1u8, 1, 0, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { koa_auc_binary(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) }, KoaStatus::Ok);
    assert_eq!(auc, 0.75);
    let ones = [1u8; 4];
    assert_eq!(unsafe { koa_auc_binary(scores.as_ptr(), ones.as_ptr(), 4, &mut auc) }, KoaStatus::InvalidArgument);

    let mut truth = vec![0usize; 10];
    truth.extend([1; 10]);
    let mut pred = vec![0usize; 8];
    pred.extend([1; 2]);
    pred.extend([0; 4]);
    pred.extend([1; 6]);
    let mut ba = 0.0;
    let st = unsafe { koa_balanced_accuracy(pred.as_ptr(), truth.as_ptr(), 20, 2, &mut ba) };
    assert_eq!(st, KoaStatus::Ok);
    assert!((ba - 0.7).abs() < 1e-12);
}

#[test]
fn clahe_matches_core() {
    let img = GrayImage::from_fn(40, 24, |x, y| ((x * 7 + y * 13) % 256) as u8).unwrap();
    let mut out = vec![0u8; 40 * 24];
    let st = unsafe { koa_clahe(img.pixels().as_ptr(), 40, 24, 3.0, 4, 2, out.as_mut_ptr()) };
    assert_eq!(st, KoaStatus::Ok);
    let p = ClaheParams {
        tiles_x: 4,
        tiles_y: 2,
        ..ClaheParams::default()
    };
    assert_eq!(out, clahe(&img, &p).unwrap().pixels());
    let st = unsafe { koa_clahe(img.pixels().as_ptr(), 40, 24, 0.5, 4, 2, out.as_mut_ptr()) };
    assert_eq!(st, KoaStatus::InvalidArgument);
}

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn cnn_handle_predicts_like_core() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = Model::new(ModelConfig::new("m", (8, 8), vec![2], OutputKind::Softmax(5), 3)).unwrap();
    model.save(&path, None).unwrap();

    let mut h: *mut KoaCnn = ptr::null_mut();
    assert_eq!(unsafe { koa_cnn_load(cstr(&path).as_ptr(), &mut h) }, KoaStatus::Ok);
    let (mut k, mut hh, mut ww) = (0, 0, 0);
    assert_eq!(unsafe { koa_cnn_shape(h, &mut k, &mut hh, &mut ww) }, KoaStatus::Ok);
    assert_eq!((k, hh, ww), (5, 8, 8));

    let pixels: Vec<f64> = (0..2 * 64).map(|i| (i % 17) as f64 / 16.0).collect();
    let mut out = vec![0.0; 10];
    assert_eq!(unsafe { koa_cnn_predict_proba(h, pixels.as_ptr(), 2, out.as_mut_ptr()) }, KoaStatus::Ok);
    let inputs: Vec<Tensor> = pixels.chunks(64).map(|c| Tensor::new(vec![8, 8, 1], c.to_vec()).unwrap()).collect();
    let want: Vec<f64> = model.predict_proba(&inputs).unwrap().concat();
    assert_eq!(out, want);
    unsafe { koa_cnn_free(h) };

    let missing = dir.path().join("missing.json");
    assert_eq!(unsafe { koa_cnn_load(cstr(&missing).as_ptr(), &mut h) }, KoaStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("missing.json"));
    assert_eq!(unsafe { koa_cnn_load(ptr::null(), &mut h) }, KoaStatus::NullPointer);
}

#[test]
fn meta_handle_predicts_like_core() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meta.json");
    let rows = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.2, 0.8], vec![0.1, 0.9]];
    let meta = MetaModel::fit(&MetaLearnerSpec::Knn { k: 3 }, &rows, &[0, 0, 1, 1], 2, 0).unwrap();
    meta.save(&path, None).unwrap();

    let mut h: *mut KoaMeta = ptr::null_mut();
    assert_eq!(unsafe { koa_meta_load(cstr(&path).as_ptr(), &mut h) }, KoaStatus::Ok);
    let (mut k, mut w) = (0, 0);
    assert_eq!(unsafe { koa_meta_shape(h, &mut k, &mut w) }, KoaStatus::Ok);
    assert_eq!((k, w), (2, 2));
    let q = [0.7, 0.3, 0.3, 0.7];
    let mut out = [0.0; 4];
    assert_eq!(unsafe { koa_meta_predict_proba(h, q.as_ptr(), 2, out.as_mut_ptr()) }, KoaStatus::Ok);
    let want = meta.predict_proba(&[vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap().concat();
    assert_eq!(out.to_vec(), want);
    unsafe { koa_meta_free(h) };

    let cnn = dir.path().join("cnn.json");
    Model::new(ModelConfig::new("m", (8, 8), vec![2], OutputKind::Sigmoid, 1)).unwrap().save(&cnn, None).unwrap();
    assert_eq!(unsafe { koa_meta_load(cstr(&cnn).as_ptr(), &mut h) }, KoaStatus::Format);
}

fn header() -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/koa.h")).unwrap()
}

#[test]
fn header_declares_the_api() {
    let h = header();
    for needle in [
        "#pragma once",
        "typedef struct KoaCnn KoaCnn;",
        "typedef struct KoaMeta KoaMeta;",
        "KOA_STATUS_OK = 0",
        "KOA_STATUS_PANIC = 7",
        "KoaStatus koa_cnn_load(const char *path, KoaCnn **out);",
        "KoaStatus koa_meta_predict_proba(",
        "KoaStatus koa_clahe(",
        "const char *koa_last_error(void);",
    ] {
        assert!(h.contains(needle), "header lacks {needle:?}\n{h}");
    }
}

/// Directory holding the static library built alongside this test binary.
fn lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let deps = exe.parent()?;
    let found = [deps.parent()?, deps].into_iter().find(|d| d.join("libkoa_ffi.a").exists()).map(PathBuf::from);
    found
}

#[test]
fn c_program_links_and_runs() {
    let lib = lib_dir().expect("libkoa_ffi.a next to the test binary");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "koa.h"
int main(void) {
    size_t out = 7;
    if (koa_remap_binary(3, &out) != KOA_STATUS_OK || out != 1) return 1;
    if (koa_remap_binary(9, &out) != KOA_STATUS_INVALID_ARGUMENT) return 2;
    double s[4] = {0.8, 0.3, 0.5, 0.1};
    unsigned char l[4] = {1, 1, 0, 0};
    double auc = 0.0;
    if (koa_auc_binary(s, l, 4, &auc) != KOA_STATUS_OK || auc != 0.75) return 3;
    KoaCnn *m = NULL;
    if (koa_cnn_load("/nonexistent/model.json", &m) != KOA_STATUS_IO || m != NULL) return 4;
    printf("%s\n", koa_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(lib.join("libkoa_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
