//! C ABI over the trained artifacts of `autohead`: single networks, their
//! AUC-weighted fusion and the composite auto-classifier.
//!
//! Every handle is opaque and owned by the caller once created; release it
//! with the matching `*_free`. Functions return an [`AhStatus`]; on failure
//! [`ah_last_error_message`] describes the problem for the calling thread.
//! Images are passed as `f64` pixel buffers in `[0, 1]`, channel-major, of
//! length `*_input_len`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use autohead::classifiers::ProbabilisticClassifier;
use autohead::cnn::{TrainedNetwork, POSITIVE_CLASS};
use autohead::fusion::{fuse_predictions, normalize_auc_weights, FusionWeights, PredictionMatrix, ValidationScores};
use autohead::headsearch::AutoClassifierModel;
use autohead::metrics::roc_auc;
use autohead::tensor::Tensor;
use autohead::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Data = 4,
    Format = 5,
    Io = 6,
    Training = 7,
    Search = 8,
    Config = 9,
    AucUndefined = 10,
    BufferTooSmall = 11,
    Panic = 99,
}

/// A trained CNN.
pub struct AhNetwork {
    inner: TrainedNetwork,
}

/// A fixed set of networks with weights from their validation AUCs.
pub struct AhFusion {
    networks: Vec<TrainedNetwork>,
    weights: FusionWeights,
}

/// Truncated CNN followed by the searched head.
pub struct AhAutoClassifier {
    inner: AutoClassifierModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AhStatus {
    match e {
        Error::Shape(_) => AhStatus::Shape,
        Error::Config(_) => AhStatus::Config,
        Error::Validation(_) => AhStatus::InvalidArgument,
        Error::AucUndefined(_) | Error::DegenerateWeights(_) => AhStatus::AucUndefined,
        Error::Training(_) => AhStatus::Training,
        Error::Search(_) => AhStatus::Search,
        Error::Data(_) => AhStatus::Data,
        Error::Format(_) => AhStatus::Format,
        Error::Io { .. } => AhStatus::Io,
    }
}

struct Fail(AhStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure and turns panics into [`AhStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AhStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside autohead".into());
            AhStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: the caller promises `p` is null or points to a live `T`
    unsafe { p.as_ref() }.ok_or_else(|| Fail(AhStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: as above, for a writable location
    unsafe { p.as_mut() }.ok_or_else(|| Fail(AhStatus::NullPointer, format!("{what} is null")))
}

fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(AhStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller promises `len` readable elements at `p`
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(AhStatus::NullPointer, "path is null".into()));
    }
    // SAFETY: the caller passes a NUL-terminated string
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Fail(AhStatus::InvalidArgument, format!("path is not UTF-8: {e}")))?;
    Ok(PathBuf::from(s))
}

fn image(shape: &[usize], pixels: *const f64, len: usize) -> Result<Tensor, Fail> {
    let expected: usize = shape.iter().product();
    if len != expected {
        return Err(Fail(
            AhStatus::Shape,
            format!("expected {expected} pixels for shape {shape:?}, got {len}"),
        ));
    }
    Ok(Tensor::new(shape.to_vec(), slice(pixels, len, "pixels")?.to_vec())?)
}

fn copy_out(values: &[f64], out: *mut f64, cap: usize) -> Result<(), Fail> {
    if cap < values.len() {
        return Err(Fail(
            AhStatus::BufferTooSmall,
            format!("output buffer holds {cap} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(Fail(AhStatus::NullPointer, "output buffer is null".into()));
    }
    // SAFETY: `out` has room for `cap >= values.len()` elements
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ah_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ah_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Area under the ROC curve of `scores` against `labels` (non-zero = defect).
#[no_mangle]
pub unsafe extern "C" fn ah_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> AhStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&b| b != 0).collect();
        *out_ptr(out, "out")? = roc_auc(s, &l)?;
        Ok(())
    })
}

/// Loads a network saved by `train-cnns` (`.acnn`).
#[no_mangle]
pub unsafe extern "C" fn ah_network_load(path: *const c_char, out: *mut *mut AhNetwork) -> AhStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        let inner = TrainedNetwork::load(&path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(AhNetwork { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ah_network_free(handle: *mut AhNetwork) {
    if !handle.is_null() {
        // SAFETY: `handle` came from `ah_network_load` and is freed once
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Pixels per input image, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ah_network_input_len(handle: *const AhNetwork) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.inner.network.spec.input_shape.iter().product())
}

/// Number of output classes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ah_network_class_count(handle: *const AhNetwork) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.inner.network.spec.classes)
}

#[no_mangle]
pub unsafe extern "C" fn ah_network_validation_auc(handle: *const AhNetwork, out: *mut f64) -> AhStatus {
    guard(|| {
        *out_ptr(out, "out")? = non_null(handle, "network")?.inner.validation_auc;
        Ok(())
    })
}

/// Class probabilities for one image into `probs[0..class_count]`.
#[no_mangle]
pub unsafe extern "C" fn ah_network_predict(
    handle: *const AhNetwork,
    pixels: *const f64,
    len: usize,
    probs: *mut f64,
    cap: usize,
) -> AhStatus {
    guard(|| {
        let h = non_null(handle, "network")?;
        let x = image(&h.inner.network.spec.input_shape, pixels, len)?;
        copy_out(&h.inner.predict(&x)?, probs, cap)
    })
}

/// Builds a fusion over copies of `count` networks. The networks stay owned
/// by the caller.
#[no_mangle]
pub unsafe extern "C" fn ah_fusion_new(
    networks: *const *const AhNetwork,
    count: usize,
    out: *mut *mut AhFusion,
) -> AhStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        if count == 0 {
            return Err(Fail(AhStatus::InvalidArgument, "fusion needs at least one network".into()));
        }
        let nets = slice(networks, count, "networks")?
            .iter()
            .map(|&p| non_null(p, "network").map(|h| h.inner.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let first = &nets[0].network.spec;
        if nets
            .iter()
            .any(|n| n.network.spec.input_shape != first.input_shape || n.network.spec.classes != first.classes)
        {
            return Err(Fail(AhStatus::Shape, "networks disagree on input shape or class count".into()));
        }
        let weights = normalize_auc_weights(&ValidationScores::from_networks(&nets)?)?;
        *slot = Box::into_raw(Box::new(AhFusion { networks: nets, weights }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ah_fusion_free(handle: *mut AhFusion) {
    if !handle.is_null() {
        // SAFETY: `handle` came from `ah_fusion_new` and is freed once
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Normalised weight of network `index`.
#[no_mangle]
pub unsafe extern "C" fn ah_fusion_weight(handle: *const AhFusion, index: usize, out: *mut f64) -> AhStatus {
    guard(|| {
        let h = non_null(handle, "fusion")?;
        let w = h.weights.weights.get(index).copied().ok_or_else(|| {
            Fail(
                AhStatus::InvalidArgument,
                format!("index {index} out of range for {} networks", h.networks.len()),
            )
        })?;
        *out_ptr(out, "out")? = w;
        Ok(())
    })
}

/// Fused class scores into `scores[0..classes]` and the winning class (the
/// lowest index among ties) into `winner`.
#[no_mangle]
pub unsafe extern "C" fn ah_fusion_predict(
    handle: *const AhFusion,
    pixels: *const f64,
    len: usize,
    winner: *mut usize,
    scores: *mut f64,
    cap: usize,
) -> AhStatus {
    guard(|| {
        let h = non_null(handle, "fusion")?;
        let x = image(&h.networks[0].network.spec.input_shape, pixels, len)?;
        let columns = h.networks.iter().map(|n| n.predict(&x)).collect::<Result<Vec<_>, _>>()?;
        let (w, fused) = fuse_predictions(&PredictionMatrix::from_columns(&columns)?, &h.weights)?;
        copy_out(&fused, scores, cap)?;
        *out_ptr(winner, "winner")? = w;
        Ok(())
    })
}

/// Loads a composite saved by `search-head` (`auto-classifier.model`).
#[no_mangle]
pub unsafe extern "C" fn ah_auto_classifier_load(path: *const c_char, out: *mut *mut AhAutoClassifier) -> AhStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = ptr::null_mut();
        let inner = AutoClassifierModel::load(&path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(AhAutoClassifier { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ah_auto_classifier_free(handle: *mut AhAutoClassifier) {
    if !handle.is_null() {
        // SAFETY: `handle` came from `ah_auto_classifier_load` and is freed once
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Pixels per input image, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ah_auto_classifier_input_len(handle: *const AhAutoClassifier) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.inner.extractor().input_shape.iter().product())
}

/// Width of the extracted feature vector, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ah_auto_classifier_feature_dim(handle: *const AhAutoClassifier) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.inner.extractor().dim)
}

/// Probability that the image shows a defect.
#[no_mangle]
pub unsafe extern "C" fn ah_auto_classifier_predict_proba(
    handle: *const AhAutoClassifier,
    pixels: *const f64,
    len: usize,
    out: *mut f64,
) -> AhStatus {
    guard(|| {
        let h = non_null(handle, "auto-classifier")?;
        let x = image(&h.inner.extractor().input_shape, pixels, len)?;
        *out_ptr(out, "out")? = h.inner.predict_proba(&x)?;
        Ok(())
    })
}

/// Head probability for an already extracted feature vector.
#[no_mangle]
pub unsafe extern "C" fn ah_auto_classifier_head_proba(
    handle: *const AhAutoClassifier,
    features: *const f64,
    len: usize,
    out: *mut f64,
) -> AhStatus {
    guard(|| {
        let h = non_null(handle, "auto-classifier")?;
        let f = slice(features, len, "features")?;
        *out_ptr(out, "out")? = h.inner.head().predict_proba(f)?;
        Ok(())
    })
}

/// Index of the defect class in network and fusion outputs.
#[no_mangle]
pub extern "C" fn ah_positive_class() -> usize {
    POSITIVE_CLASS
}
