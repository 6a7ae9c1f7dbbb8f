//! C ABI over `koa-core`.
//!
//! Every function returns a [`KoaStatus`]; on failure the message is
//! available from [`koa_last_error`] on the same thread. Models are opaque
//! handles released with their `_free` function. Buffers are caller-owned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use koa_core::ensemble::MetaModel;
use koa_core::imaging::{clahe, ClaheParams, GrayImage};
use koa_core::metrics;
use koa_core::nn::Model;
use koa_core::tensor::Tensor;
use koa_core::{dataset, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KoaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numeric = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> KoaStatus {
    match e {
        Error::InvalidParam(_) | Error::Config(_) => KoaStatus::InvalidArgument,
        Error::Data(_) | Error::Shape { .. } | Error::Csv(_) => KoaStatus::Data,
        Error::NonFiniteLoss { .. } | Error::Numeric(_) => KoaStatus::Numeric,
        Error::Io { .. } | Error::Image { .. } | Error::MissingArtifact { .. } | Error::StaleArtifact { .. } => {
            KoaStatus::Io
        }
        Error::Format(_) | Error::Json(_) => KoaStatus::Format,
    }
}

struct Fail(KoaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(KoaStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KoaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KoaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KoaStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or valid for `n` reads.
unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or valid for `n` writes.
unsafe fn output<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(KoaStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn koa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn koa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A trained CNN base learner.
pub struct KoaCnn {
    model: Model,
}

/// A fitted meta-learner over stacked probabilities.
pub struct KoaMeta {
    model: MetaModel,
}

/// Loads a CNN model file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn koa_cnn_load(path: *const c_char, out: *mut *mut KoaCnn) -> KoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let (model, _) = Model::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KoaCnn { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`koa_cnn_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn koa_cnn_free(model: *mut KoaCnn) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the class count and the expected input height and width.
///
/// # Safety
/// `model` must be a live handle; out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn koa_cnn_shape(
    model: *const KoaCnn,
    n_classes: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> KoaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = m.model.config();
        for (p, v) in [(n_classes, c.output.n_classes()), (height, c.input_height), (width, c.input_width)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Class probabilities for `n_images` row-major `height x width` images
/// with intensities in `[0, 1]`. `out` receives `n_images * n_classes`
/// values.
///
/// # Safety
/// `pixels` must hold `n_images * height * width` values and `out`
/// `n_images * n_classes`.
#[no_mangle]
pub unsafe extern "C" fn koa_cnn_predict_proba(
    model: *const KoaCnn,
    pixels: *const f64,
    n_images: usize,
    out: *mut f64,
) -> KoaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = m.model.config();
        let (h, w, k) = (c.input_height, c.input_width, c.output.n_classes());
        let px = input(pixels, n_images * h * w, "pixels")?;
        let out = output(out, n_images * k, "out")?;
        let inputs = px
            .chunks(h * w)
            .map(|img| Tensor::new(vec![h, w, 1], img.to_vec()))
            .collect::<koa_core::Result<Vec<_>>>()?;
        for (dst, row) in out.chunks_mut(k).zip(m.model.predict_proba(&inputs)?) {
            dst.copy_from_slice(&row);
        }
        Ok(())
    })
}

/// Loads a meta-learner model file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn koa_meta_load(path: *const c_char, out: *mut *mut KoaMeta) -> KoaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let (model, _) = MetaModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KoaMeta { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`koa_meta_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn koa_meta_free(model: *mut KoaMeta) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the class count and the stacked feature width.
///
/// # Safety
/// `model` must be a live handle; out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn koa_meta_shape(model: *const KoaMeta, n_classes: *mut usize, width: *mut usize) -> KoaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        for (p, v) in [(n_classes, m.model.n_classes()), (width, m.model.width())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Class probabilities for `n_rows` stacked feature rows.
///
/// # Safety
/// `rows` must hold `n_rows * width` values and `out` `n_rows * n_classes`.
#[no_mangle]
pub unsafe extern "C" fn koa_meta_predict_proba(
    model: *const KoaMeta,
    rows: *const f64,
    n_rows: usize,
    out: *mut f64,
) -> KoaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let (w, k) = (m.model.width(), m.model.n_classes());
        if w == 0 {
            return Err(Fail(KoaStatus::Data, "model has zero feature width".into()));
        }
        let x: Vec<Vec<f64>> = input(rows, n_rows * w, "rows")?.chunks(w).map(<[f64]>::to_vec).collect();
        let out = output(out, n_rows * k, "out")?;
        for (dst, row) in out.chunks_mut(k).zip(m.model.predict_proba(&x)?) {
            dst.copy_from_slice(&row);
        }
        Ok(())
    })
}

/// CLAHE on a row-major 8-bit image with 256 bins.
///
/// # Safety
/// `pixels` and `out` must each hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn koa_clahe(
    pixels: *const u8,
    width: usize,
    height: usize,
    clip_limit: f64,
    tiles_x: usize,
    tiles_y: usize,
    out: *mut u8,
) -> KoaStatus {
    guard(|| {
        let n = width.checked_mul(height).ok_or_else(|| Fail(KoaStatus::InvalidArgument, "image too large".into()))?;
        let img = GrayImage::new(width, height, input(pixels, n, "pixels")?.to_vec())?;
        let p = ClaheParams {
            clip_limit,
            tiles_x,
            tiles_y,
            ..ClaheParams::default()
        };
        output(out, n, "out")?.copy_from_slice(clahe(&img, &p)?.pixels());
        Ok(())
    })
}

/// Binary ROC AUC; `labels` holds 0 or 1 (nonzero counts as positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn koa_auc_binary(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> KoaStatus {
    guard(|| {
        let s = input(scores, n, "scores")?;
        let l: Vec<bool> = input(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        *output(out, 1, "out")?.first_mut().expect("one slot") = metrics::auc_binary(s, &l)?;
        Ok(())
    })
}

/// Mean per-class recall.
///
/// # Safety
/// `pred` and `truth` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn koa_balanced_accuracy(
    pred: *const usize,
    truth: *const usize,
    n: usize,
    n_classes: usize,
    out: *mut f64,
) -> KoaStatus {
    guard(|| {
        let v = metrics::balanced_accuracy(input(pred, n, "pred")?, input(truth, n, "truth")?, n_classes)?;
        *output(out, 1, "out")?.first_mut().expect("one slot") = v;
        Ok(())
    })
}

/// KL grade 0–4 to the binary label (grades 0–1 → 0, 2–4 → 1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn koa_remap_binary(grade: usize, out: *mut usize) -> KoaStatus {
    guard(|| {
        *output(out, 1, "out")?.first_mut().expect("one slot") = dataset::remap_binary(grade)?;
        Ok(())
    })
}
