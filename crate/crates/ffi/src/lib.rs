//! C ABI for the patchmask library.
//!
//! Handles are opaque pointers owned by Rust; every function returns a
//! [`PmStatus`] code and writes results through out-parameters. Pass
//! `INFINITY` for an unbounded upper clip. The header is generated into
//! `include/patchmask.h` at build time.

use libc::{c_char, c_double, size_t};
use patchmask::aggregate::{robust_masking, MaskingConfig};
use patchmask::certify::certify_masking;
use patchmask::geometry::window_size;
use patchmask::model::{extract_features, load_model, predict_insecure, save_model, PatchEnsembleModel};
use patchmask::tensor::{ClipBounds, FeatureKind, FeatureTensor, ImageTensor};
use std::ffi::CStr;
use std::path::Path;
use std::ptr;

/// Status codes returned by every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IoError = 3,
    FormatError = 4,
    ContractViolation = 5,
}

/// Opaque model handle.
pub struct PmModel {
    inner: PatchEnsembleModel,
}

/// Opaque local-feature-tensor handle.
pub struct PmFeatures {
    inner: FeatureTensor,
}

/// Feature kinds for `pm_extract_features` and the masked pipeline.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmFeatureKind {
    Logits = 0,
    Confidence = 1,
    Prediction = 2,
}

impl From<PmFeatureKind> for FeatureKind {
    fn from(kind: PmFeatureKind) -> FeatureKind {
        match kind {
            PmFeatureKind::Logits => FeatureKind::Logits,
            PmFeatureKind::Confidence => FeatureKind::Confidence,
            PmFeatureKind::Prediction => FeatureKind::Prediction,
        }
    }
}

fn status_of(err: &patchmask::Error) -> PmStatus {
    match err {
        patchmask::Error::Io(_) => PmStatus::IoError,
        patchmask::Error::Format { .. } => PmStatus::FormatError,
        patchmask::Error::Contract(_) => PmStatus::ContractViolation,
        _ => PmStatus::InvalidArgument,
    }
}

/// # Safety
/// `path` must be a valid NUL-terminated string.
unsafe fn path_from(path: *const c_char) -> Option<std::path::PathBuf> {
    if path.is_null() {
        return None;
    }
    CStr::from_ptr(path).to_str().ok().map(|s| Path::new(s).to_path_buf())
}

/// Loads a model checkpoint. On success writes a new handle to `out`; free it
/// with [`pm_model_free`].
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pm_model_load(path: *const c_char, out: *mut *mut PmModel) -> PmStatus {
    if out.is_null() {
        return PmStatus::NullPointer;
    }
    let Some(path) = path_from(path) else {
        return PmStatus::NullPointer;
    };
    match load_model(&path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PmModel { inner }));
            PmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Writes a model checkpoint.
///
/// # Safety
/// `model` must be a live handle from this library; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pm_model_save(model: *const PmModel, path: *const c_char) -> PmStatus {
    let Some(model) = model.as_ref() else {
        return PmStatus::NullPointer;
    };
    let Some(path) = path_from(path) else {
        return PmStatus::NullPointer;
    };
    match save_model(&model.inner, &path) {
        Ok(()) => PmStatus::Ok,
        Err(e) => status_of(&e),
    }
}

/// # Safety
/// `model` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_model_free(model: *mut PmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model dimensions: image rows, cols, channels, and class count.
///
/// # Safety
/// All pointers must be valid; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_model_dims(
    model: *const PmModel,
    rows: *mut size_t,
    cols: *mut size_t,
    channels: *mut size_t,
    classes: *mut size_t,
) -> PmStatus {
    let Some(model) = model.as_ref() else {
        return PmStatus::NullPointer;
    };
    if rows.is_null() || cols.is_null() || channels.is_null() || classes.is_null() {
        return PmStatus::NullPointer;
    }
    *rows = model.inner.geom().image_rows();
    *cols = model.inner.geom().image_cols();
    *channels = model.inner.channels();
    *classes = model.inner.classes();
    PmStatus::Ok
}

unsafe fn image_from(
    model: &PatchEnsembleModel,
    pixels: *const c_double,
    len: size_t,
) -> Result<ImageTensor, PmStatus> {
    if pixels.is_null() {
        return Err(PmStatus::NullPointer);
    }
    let geom = model.geom();
    let expected = geom.image_rows() * geom.image_cols() * model.channels();
    if len != expected {
        return Err(PmStatus::InvalidArgument);
    }
    let slice = std::slice::from_raw_parts(pixels, len);
    ImageTensor::new(geom.image_rows(), geom.image_cols(), model.channels(), slice.to_vec())
        .map_err(|e| status_of(&e))
}

/// Extracts the local feature tensor of an image. `pixels` is row-major
/// (row, column, channel) in [0, 1] with exactly rows*cols*channels entries.
///
/// # Safety
/// `model` must be a live handle; `pixels` must point to `len` doubles;
/// `out` must be valid. Free the result with [`pm_features_free`].
#[no_mangle]
pub unsafe extern "C" fn pm_extract_features(
    model: *const PmModel,
    pixels: *const c_double,
    len: size_t,
    kind: PmFeatureKind,
    out: *mut *mut PmFeatures,
) -> PmStatus {
    let Some(model) = model.as_ref() else {
        return PmStatus::NullPointer;
    };
    if out.is_null() {
        return PmStatus::NullPointer;
    }
    let image = match image_from(&model.inner, pixels, len) {
        Ok(i) => i,
        Err(s) => return s,
    };
    match extract_features(&model.inner, &image, kind.into()) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PmFeatures { inner }));
            PmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Feature tensor dimensions: grid rows, grid cols, classes.
///
/// # Safety
/// All pointers must be valid; `features` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pm_features_dims(
    features: *const PmFeatures,
    rows: *mut size_t,
    cols: *mut size_t,
    classes: *mut size_t,
) -> PmStatus {
    let Some(features) = features.as_ref() else {
        return PmStatus::NullPointer;
    };
    if rows.is_null() || cols.is_null() || classes.is_null() {
        return PmStatus::NullPointer;
    }
    *rows = features.inner.rows();
    *cols = features.inner.cols();
    *classes = features.inner.classes();
    PmStatus::Ok
}

/// Copies the feature values (row-major, class innermost) into `out`, which
/// must hold rows*cols*classes doubles.
///
/// # Safety
/// `features` must be a live handle; `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pm_features_values(
    features: *const PmFeatures,
    out: *mut c_double,
    len: size_t,
) -> PmStatus {
    let Some(features) = features.as_ref() else {
        return PmStatus::NullPointer;
    };
    if out.is_null() {
        return PmStatus::NullPointer;
    }
    let values = features.inner.values();
    if len != values.len() {
        return PmStatus::InvalidArgument;
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    PmStatus::Ok
}

/// # Safety
/// `features` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pm_features_free(features: *mut PmFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Insecure baseline prediction (argmax of mean local logits).
///
/// # Safety
/// As [`pm_extract_features`]; `out_class` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pm_predict_insecure(
    model: *const PmModel,
    pixels: *const c_double,
    len: size_t,
    out_class: *mut size_t,
) -> PmStatus {
    let Some(model) = model.as_ref() else {
        return PmStatus::NullPointer;
    };
    if out_class.is_null() {
        return PmStatus::NullPointer;
    }
    let image = match image_from(&model.inner, pixels, len) {
        Ok(i) => i,
        Err(s) => return s,
    };
    match predict_insecure(&model.inner, &image) {
        Ok(class) => {
            *out_class = class;
            PmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

fn masking_config(
    clip_lo: c_double,
    clip_hi: c_double,
    threshold: c_double,
    mask_rows: size_t,
    mask_cols: size_t,
) -> Result<MaskingConfig, PmStatus> {
    let bounds = ClipBounds::new(clip_lo, clip_hi).map_err(|e| status_of(&e))?;
    MaskingConfig::new(bounds, threshold, (mask_rows, mask_cols)).map_err(|e| status_of(&e))
}

/// Robust-masking prediction of an image under the defended pipeline.
///
/// # Safety
/// As [`pm_extract_features`]; `out_class` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pm_predict_masked(
    model: *const PmModel,
    pixels: *const c_double,
    len: size_t,
    kind: PmFeatureKind,
    clip_lo: c_double,
    clip_hi: c_double,
    threshold: c_double,
    mask_rows: size_t,
    mask_cols: size_t,
    out_class: *mut size_t,
) -> PmStatus {
    let Some(model) = model.as_ref() else {
        return PmStatus::NullPointer;
    };
    if out_class.is_null() {
        return PmStatus::NullPointer;
    }
    let image = match image_from(&model.inner, pixels, len) {
        Ok(i) => i,
        Err(s) => return s,
    };
    let config = match masking_config(clip_lo, clip_hi, threshold, mask_rows, mask_cols) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let features = match extract_features(&model.inner, &image, kind.into()) {
        Ok(f) => f,
        Err(e) => return status_of(&e),
    };
    match robust_masking(&features, &config) {
        Ok(outcome) => {
            *out_class = outcome.predicted;
            PmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Certifies that no in-model patch attack confined to one mask-shaped window
/// can change the masked prediction away from `true_label`. Writes 1 into
/// `out_certified` when certified, 0 otherwise.
///
/// # Safety
/// As [`pm_predict_masked`]; `out_certified` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pm_certify_masked(
    model: *const PmModel,
    pixels: *const c_double,
    len: size_t,
    true_label: size_t,
    kind: PmFeatureKind,
    clip_lo: c_double,
    clip_hi: c_double,
    threshold: c_double,
    mask_rows: size_t,
    mask_cols: size_t,
    out_certified: *mut u8,
) -> PmStatus {
    let Some(model) = model.as_ref() else {
        return PmStatus::NullPointer;
    };
    if out_certified.is_null() {
        return PmStatus::NullPointer;
    }
    let image = match image_from(&model.inner, pixels, len) {
        Ok(i) => i,
        Err(s) => return s,
    };
    let config = match masking_config(clip_lo, clip_hi, threshold, mask_rows, mask_cols) {
        Ok(c) => c,
        Err(s) => return s,
    };
    let features = match extract_features(&model.inner, &image, kind.into()) {
        Ok(f) => f,
        Err(e) => return status_of(&e),
    };
    match certify_masking(&features, true_label, &config) {
        Ok(result) => {
            *out_certified = result.certified as u8;
            PmStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

/// Worst-case count of feature cells per axis a patch of size `p` can corrupt
/// with receptive field `r` and stride `s` (all in pixels, all nonzero).
#[no_mangle]
pub extern "C" fn pm_window_size(p: size_t, r: size_t, s: size_t) -> size_t {
    if p == 0 || r == 0 || s == 0 {
        return 0;
    }
    window_size(p, r, s)
}
