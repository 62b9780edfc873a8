//! C ABI over `past-core`.
//!
//! Datasets and models are opaque heap handles released with their `_free`
//! function. Every fallible call returns a `PastStatus`; on failure the
//! message is available from `past_last_error` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use past_core::cluster::hdbscan;
use past_core::config::Config;
use past_core::eval::evaluate;
use past_core::matrix::Matrix;
use past_core::model::EmbedderParams;
use past_core::rerank::{jaccard_matrix, RerankParams};
use past_core::store::{pairwise_euclidean, Dataset};
use past_core::trainer::{extract_features, pretrain_source, run_past, PretrainConfig};
use past_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PastStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    ShapeMismatch = 5,
    NonFinite = 6,
    Training = 7,
    Evaluation = 8,
    Panic = 9,
}

/// A labeled or unlabeled set of feature rows.
pub struct PastDataset {
    inner: Dataset,
}

/// An embedding network.
pub struct PastModel {
    inner: EmbedderParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PastStatus {
    match e {
        Error::Io(_) | Error::File { .. } => PastStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Config(_) => PastStatus::Parse,
        Error::ShapeMismatch(_) | Error::LabelOutOfRange { .. } => PastStatus::ShapeMismatch,
        Error::NonFinite { .. } | Error::ZeroVectorRow { .. } => PastStatus::NonFinite,
        Error::InvalidK(_)
        | Error::InvalidMinSamples(_)
        | Error::InvalidEps(_)
        | Error::EtaTooLarge { .. }
        | Error::InvalidSpec(_) => PastStatus::InvalidArgument,
        Error::NotEnoughClusters { .. }
        | Error::DegenerateBatch(_)
        | Error::EmptyCluster(_)
        | Error::StaleCache
        | Error::EmptySelection { .. } => PastStatus::Training,
        Error::MissingLabels | Error::NoValidGallery | Error::NoClusteredSamples => {
            PastStatus::Evaluation
        }
    }
}

struct Fail(PastStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PastStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for `past_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PastStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PastStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PastStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn matrix_arg(data: *const f64, rows: usize, cols: usize) -> Result<Matrix, Fail> {
    if data.is_null() {
        return Err(null("data"));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Fail(PastStatus::InvalidArgument, "rows * cols overflows".into()))?;
    Ok(Matrix::from_vec(
        rows,
        cols,
        slice::from_raw_parts(data, len).to_vec(),
    )?)
}

unsafe fn out_slice<'a, T>(out: *mut T, len: usize, needed: usize) -> Result<&'a mut [T], Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < needed {
        return Err(Fail(
            PastStatus::ShapeMismatch,
            format!("output buffer holds {len} values, {needed} needed"),
        ));
    }
    Ok(slice::from_raw_parts_mut(out, needed))
}

unsafe fn labels_arg(p: *const u32, n: usize) -> Option<Vec<u32>> {
    (!p.is_null()).then(|| slice::from_raw_parts(p, n).to_vec())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn past_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads the `id,identity,camera,f0,...` CSV format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn past_dataset_read_csv(
    path: *const c_char,
    out: *mut *mut PastDataset,
) -> PastStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Dataset::read_csv(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PastDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from a row-major `rows x cols` array. `identities` and
/// `cameras` may be NULL; otherwise they hold `rows` entries.
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn past_dataset_from_features(
    data: *const f64,
    rows: usize,
    cols: usize,
    identities: *const u32,
    cameras: *const u32,
    out: *mut *mut PastDataset,
) -> PastStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let features = matrix_arg(data, rows, cols)?;
        let inner = Dataset::from_parts(
            features,
            labels_arg(identities, rows),
            labels_arg(cameras, rows),
        )?;
        *out = Box::into_raw(Box::new(PastDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn past_dataset_len(dataset: *const PastDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn past_dataset_dim(dataset: *const PastDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.dim())
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn past_dataset_free(dataset: *mut PastDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn past_model_load(
    path: *const c_char,
    out: *mut *mut PastModel,
) -> PastStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = EmbedderParams::load(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PastModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn past_model_save(
    model: *const PastModel,
    path: *const c_char,
) -> PastStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        model.inner.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn past_model_input_dim(model: *const PastModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn past_model_embedding_dim(model: *const PastModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.output_dim())
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn past_model_free(model: *mut PastModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trains an embedder on a labeled source dataset with the default
/// pretraining settings and the given seed.
///
/// # Safety
/// `source` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn past_pretrain(
    source: *const PastDataset,
    seed: u64,
    out: *mut *mut PastModel,
) -> PastStatus {
    guard(|| {
        let source = source.as_ref().ok_or_else(|| null("source"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = PretrainConfig {
            seed,
            ..PretrainConfig::default()
        };
        let inner = pretrain_source(&source.inner, &cfg)?;
        *out = Box::into_raw(Box::new(PastModel { inner }));
        Ok(())
    })
}

/// Adapts `initial` to the unlabeled `target`. `config_path` names a
/// `key = value` file and may be NULL for the defaults.
///
/// # Safety
/// Handles must be live, `config_path` NULL or NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn past_adapt(
    initial: *const PastModel,
    source: *const PastDataset,
    target: *const PastDataset,
    config_path: *const c_char,
    out: *mut *mut PastModel,
) -> PastStatus {
    guard(|| {
        let initial = initial.as_ref().ok_or_else(|| null("initial"))?;
        let source = source.as_ref().ok_or_else(|| null("source"))?;
        let target = target.as_ref().ok_or_else(|| null("target"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_path.is_null() {
            Config::default()
        } else {
            Config::load(path_arg(config_path, "config_path")?)?
        };
        let (inner, _) = run_past(
            &source.inner,
            &target.inner,
            &initial.inner,
            &cfg.adapt,
            None,
        )?;
        *out = Box::into_raw(Box::new(PastModel { inner }));
        Ok(())
    })
}

/// Writes `len(dataset) x embedding_dim` unit-norm embeddings, row-major.
///
/// # Safety
/// Handles must be live and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn past_extract_features(
    model: *const PastModel,
    dataset: *const PastDataset,
    out: *mut f64,
    out_len: usize,
) -> PastStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let dataset = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let f = extract_features(&model.inner, &dataset.inner)?;
        out_slice(out, out_len, f.as_slice().len())?.copy_from_slice(f.as_slice());
        Ok(())
    })
}

/// k-reciprocal Jaccard distances between the rows of a `rows x cols`
/// feature array, written as a row-major `rows x rows` matrix.
///
/// # Safety
/// `features` must hold `rows * cols` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn past_jaccard(
    features: *const f64,
    rows: usize,
    cols: usize,
    k1: usize,
    k2: usize,
    out: *mut f64,
    out_len: usize,
) -> PastStatus {
    guard(|| {
        let f = matrix_arg(features, rows, cols)?;
        let params = RerankParams {
            k1,
            k2,
            jaccard_blend: 0.0,
        };
        let j = jaccard_matrix(&pairwise_euclidean(&f), &params)?;
        let m = j.as_matrix().as_slice();
        out_slice(out, out_len, m.len())?.copy_from_slice(m);
        Ok(())
    })
}

/// HDBSCAN over an `n x n` distance matrix. Writes one label per sample
/// (`-1` for noise) and the number of clusters.
///
/// # Safety
/// `dist` must hold `n * n` doubles, `labels` `n` ints, `num_clusters` valid.
#[no_mangle]
pub unsafe extern "C" fn past_hdbscan(
    dist: *const f64,
    n: usize,
    s_min: usize,
    labels: *mut i32,
    num_clusters: *mut usize,
) -> PastStatus {
    guard(|| {
        let d = matrix_arg(dist, n, n)?;
        if num_clusters.is_null() {
            return Err(null("num_clusters"));
        }
        let l = hdbscan(&d, s_min)?;
        out_slice(labels, n, n)?.copy_from_slice(l.labels());
        *num_clusters = l.num_clusters();
        Ok(())
    })
}

/// Rank-1 and mAP of `model` on a labeled query/gallery split.
///
/// # Safety
/// Handles must be live and the output pointers valid.
#[no_mangle]
pub unsafe extern "C" fn past_evaluate(
    model: *const PastModel,
    query: *const PastDataset,
    gallery: *const PastDataset,
    rank1: *mut f64,
    map: *mut f64,
) -> PastStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let query = query.as_ref().ok_or_else(|| null("query"))?;
        let gallery = gallery.as_ref().ok_or_else(|| null("gallery"))?;
        if rank1.is_null() || map.is_null() {
            return Err(null("output"));
        }
        let r = evaluate(&query.inner, &gallery.inner, &model.inner, &[1])?;
        *rank1 = r.rank1();
        *map = r.map_score;
        Ok(())
    })
}
