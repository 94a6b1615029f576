//! C interface to probekit.
//!
//! Objects cross the boundary as opaque handles created by `pk_*_read` or
//! `pk_*_fit` and released with the matching `pk_*_free`. Every fallible
//! call returns a [`PkStatus`]; on failure [`pk_last_error`] describes the
//! most recent error on the calling thread. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::Array2;
use probekit::embedding::{fit_normalizer, normalize, read_embeddings, Embedding, EmbeddingSet, NormalizationStats};
use probekit::metrics::{self, ScoreTable};
use probekit::pooling::{linear_softmax_pool, FrameSequence};
use probekit::probe::{predict, read_model, ProbeModel, TaskKind};
use probekit::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimMismatch = 3,
    Format = 4,
    Io = 5,
    Domain = 6,
    Label = 7,
    Panic = 8,
}

/// A set of clip embeddings read from an embedding file.
pub struct PkEmbeddingSet(EmbeddingSet);

/// Per-dimension statistics for z-score plus l2 normalization.
pub struct PkNormalizer(NormalizationStats);

/// A trained linear probe.
pub struct PkModel(ProbeModel);

struct Failure(PkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimMismatch { .. } => PkStatus::DimMismatch,
            Error::FormatError(_) | Error::TruncatedFile(_) | Error::Json(_) | Error::Audio(_) => PkStatus::Format,
            Error::Io(_) => PkStatus::Io,
            Error::DomainError(_) | Error::ZeroWeight { .. } => PkStatus::Domain,
            Error::LabelError(_) => PkStatus::Label,
            _ => PkStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PkStatus::InvalidArgument, msg.into())
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PkStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PkStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(PkStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null with `len == 0`, or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be valid for `len` writes.
unsafe fn output<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len < needed {
        return Err(invalid(format!("{what} holds {len} values, {needed} needed")));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    non_null(out, "output pointer")?;
    out.write(value);
    Ok(())
}

fn matrix(values: &[f64], rows: usize, cols: usize) -> Result<Array2<f64>, Failure> {
    Array2::from_shape_vec((rows, cols), values.to_vec()).map_err(|e| invalid(e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads an embedding file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_embeddings_read(path: *const c_char, out: *mut *mut PkEmbeddingSet) -> PkStatus {
    guard(|| {
        non_null(out, "out")?;
        let set = read_embeddings(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(PkEmbeddingSet(set))))
    })
}

/// Number of embeddings; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pk_embeddings_len(set: *const PkEmbeddingSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Vector dimension; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pk_embeddings_dim(set: *const PkEmbeddingSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies embedding `index` into `out`, which holds `out_len` values.
///
/// # Safety
/// `set` must be a live handle and `out` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn pk_embeddings_vector(
    set: *const PkEmbeddingSet,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> PkStatus {
    guard(|| {
        non_null(set, "set")?;
        let s = &(*set).0;
        let item = s
            .items()
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} outside 0..{}", s.len())))?;
        output(out, out_len, s.dim(), "out")?.copy_from_slice(&item.vector);
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pk_embeddings_free(set: *mut PkEmbeddingSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Fits normalization statistics on every vector of `set`.
///
/// # Safety
/// `set` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_normalizer_fit(
    set: *const PkEmbeddingSet,
    epsilon: f64,
    out: *mut *mut PkNormalizer,
) -> PkStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(out, "out")?;
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(invalid("epsilon must be positive"));
        }
        let stats = fit_normalizer(&(*set).0, epsilon)?;
        write_out(out, Box::into_raw(Box::new(PkNormalizer(stats))))
    })
}

/// Normalizes one vector of length `dim` into `out`. `degenerate`, when not
/// null, receives whether the result is the zero vector.
///
/// # Safety
/// `x` must be valid for `dim` reads, `out` for `out_len` writes, and
/// `degenerate` null or writable.
#[no_mangle]
pub unsafe extern "C" fn pk_normalizer_apply(
    norm: *const PkNormalizer,
    x: *const f64,
    dim: usize,
    out: *mut f64,
    out_len: usize,
    degenerate: *mut bool,
) -> PkStatus {
    guard(|| {
        non_null(norm, "normalizer")?;
        let v = input(x, dim, "x")?;
        let n = normalize(&(*norm).0, &Embedding::new("ffi", v.to_vec()))?;
        output(out, out_len, dim, "out")?.copy_from_slice(&n.embedding.vector);
        if !degenerate.is_null() {
            degenerate.write(n.degenerate);
        }
        Ok(())
    })
}

/// # Safety
/// `norm` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pk_normalizer_free(norm: *mut PkNormalizer) {
    if !norm.is_null() {
        drop(Box::from_raw(norm));
    }
}

/// Reads a probe model file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_model_read(path: *const c_char, out: *mut *mut PkModel) -> PkStatus {
    guard(|| {
        non_null(out, "out")?;
        let model = read_model(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(PkModel(model))))
    })
}

/// Number of classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pk_model_n_classes(model: *const PkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_classes())
}

/// Input dimension; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pk_model_dim(model: *const PkModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// True for independent sigmoid outputs, false for softmax.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pk_model_is_multilabel(model: *const PkModel) -> bool {
    model.as_ref().is_some_and(|m| m.0.task() == TaskKind::Multilabel)
}

/// Class probabilities for one vector of length `dim`.
///
/// # Safety
/// `x` must be valid for `dim` reads and `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn pk_model_predict(
    model: *const PkModel,
    x: *const f64,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> PkStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &(*model).0;
        let p = predict(m, &Embedding::new("ffi", input(x, dim, "x")?.to_vec()))?;
        output(out, out_len, m.n_classes(), "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pk_model_free(model: *mut PkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Average precision of `n` scores against 0/1 truths. Fails with
/// `DOMAIN` when no truth is positive.
///
/// # Safety
/// `scores` and `truths` must be valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_average_precision(
    scores: *const f64,
    truths: *const u8,
    n: usize,
    out: *mut f64,
) -> PkStatus {
    guard(|| {
        let s = input(scores, n, "scores")?;
        let t: Vec<bool> = input(truths, n, "truths")?.iter().map(|&b| b != 0).collect();
        let ap = metrics::average_precision(s, &t)
            .ok_or_else(|| Failure(PkStatus::Domain, "no positive item".into()))?;
        write_out(out, ap)
    })
}

unsafe fn table(scores: *const f64, truths: *const u8, n: usize, c: usize) -> Result<ScoreTable, Failure> {
    let len = n.checked_mul(c).ok_or_else(|| invalid("n * c overflows"))?;
    let s = matrix(input(scores, len, "scores")?, n, c)?;
    let t = input(truths, len, "truths")?;
    let t = Array2::from_shape_fn((n, c), |(i, j)| t[i * c + j] != 0);
    Ok(ScoreTable::unnamed(s, t)?)
}

/// Mean average precision over the classes of an `n × c` table.
///
/// # Safety
/// `scores` and `truths` must be valid for `n * c` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_map(scores: *const f64, truths: *const u8, n: usize, c: usize, out: *mut f64) -> PkStatus {
    guard(|| write_out(out, metrics::map(&table(scores, truths, n, c)?).value))
}

/// Macro-averaged ROC AUC of an `n × c` table.
///
/// # Safety
/// `scores` and `truths` must be valid for `n * c` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_mauc(scores: *const f64, truths: *const u8, n: usize, c: usize, out: *mut f64) -> PkStatus {
    guard(|| write_out(out, metrics::mauc(&table(scores, truths, n, c)?).value))
}

/// Label-weighted label-ranking average precision of an `n × c` table.
///
/// # Safety
/// `scores` and `truths` must be valid for `n * c` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_lwlrap(
    scores: *const f64,
    truths: *const u8,
    n: usize,
    c: usize,
    out: *mut f64,
) -> PkStatus {
    guard(|| write_out(out, metrics::lwlrap(&table(scores, truths, n, c)?).value))
}

/// Fraction of rows whose label is among the `k` highest of `c` scores.
///
/// # Safety
/// `scores` must be valid for `n * c` reads, `labels` for `n`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pk_top_k_accuracy(
    scores: *const f64,
    labels: *const usize,
    n: usize,
    c: usize,
    k: usize,
    out: *mut f64,
) -> PkStatus {
    guard(|| {
        let len = n.checked_mul(c).ok_or_else(|| invalid("n * c overflows"))?;
        let s = matrix(input(scores, len, "scores")?, n, c)?;
        let names = (0..c).map(|i| format!("c{i}")).collect();
        let t = ScoreTable::from_labels(s, input(labels, n, "labels")?, names)?;
        write_out(out, metrics::top_k_accuracy(&t, k)?)
    })
}

/// Linear-softmax pooling of `t` frames of `c` probabilities into `out`.
///
/// # Safety
/// `probs` must be valid for `t * c` reads and `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn pk_linear_softmax_pool(
    probs: *const f64,
    t: usize,
    c: usize,
    out: *mut f64,
    out_len: usize,
) -> PkStatus {
    guard(|| {
        let len = t.checked_mul(c).ok_or_else(|| invalid("t * c overflows"))?;
        let fs = FrameSequence::new(matrix(input(probs, len, "probs")?, t, c)?, 1.0)?;
        let pooled = linear_softmax_pool(&fs)?;
        output(out, out_len, c, "out")?.copy_from_slice(&pooled);
        Ok(())
    })
}
