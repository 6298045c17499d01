//! C ABI over `edgeuda`.
//!
//! Every fallible function returns an [`EuStatus`]; on failure a message is
//! stored per thread and read back with [`eu_last_error`]. Models and
//! confusion matrices are opaque handles owned by the caller and released
//! with their `_free` function. Images cross the boundary as row-major,
//! channel-interleaved `H×W×3` doubles in `[0, 1]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use edgeuda::adapt::CheckpointMeta;
use edgeuda::edges::{boundary_oracle, canny, edge_union, CannyParams};
use edgeuda::evalkit::{iou_from_confusion, ConfusionMatrix};
use edgeuda::nn::{checkpoint, entropy_map, AblationVariant, ArchConfig, ProbMap, SegModel, Shape, Tensor, IGNORE_LABEL};
use edgeuda::scenegen::{generate_scene, SceneConfig};
use edgeuda::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Dataset = 5,
    Shape = 6,
    Numeric = 7,
    Domain = 8,
    InputSize = 9,
    Protocol = 10,
    Checkpoint = 11,
    NoClassesPresent = 12,
    Panic = 13,
}

/// Opaque segmentation model.
pub struct EuModel {
    inner: SegModel,
}

/// Opaque confusion matrix accumulator.
pub struct EuConfusion {
    inner: ConfusionMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EuStatus {
    match e {
        Error::Config(_) | Error::UnknownKey(_) => EuStatus::Config,
        Error::Io { .. } => EuStatus::Io,
        Error::Dataset { .. } => EuStatus::Dataset,
        Error::Shape(_) => EuStatus::Shape,
        Error::Numeric(_) => EuStatus::Numeric,
        Error::Domain(_) | Error::EmptyTarget | Error::DegeneratePseudoLabels { .. } => EuStatus::Domain,
        Error::InputSize(_) => EuStatus::InputSize,
        Error::Protocol(_) => EuStatus::Protocol,
        Error::Checkpoint(_) => EuStatus::Checkpoint,
        Error::NoClassesPresent => EuStatus::NoClassesPresent,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EuStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            EuStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            EuStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            EuStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn path(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::Invalid("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn hwc_to_tensor(rgb: &[f64], height: usize, width: usize) -> Result<Tensor, Failure> {
    let mut t = Tensor::zeros(Shape::new(1, 3, height, width));
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            t.set(0, c, i / width, i % width, v);
        }
    }
    Ok(t)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn eu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Label used for unscored pixels.
#[no_mangle]
pub extern "C" fn eu_ignore_label() -> u8 {
    IGNORE_LABEL
}

/// Creates a freshly initialised model with the default architecture for
/// `num_classes` classes and `depth_bins` depth bins over `[1, 666.36]` m.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn eu_model_new(num_classes: usize, depth_bins: usize, seed: u64, out: *mut *mut EuModel) -> EuStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let arch = ArchConfig {
            num_classes,
            depth_bins,
            ..ArchConfig::default()
        };
        let scene = SceneConfig::default();
        let inner = SegModel::new(arch, scene.depth_min, scene.depth_max, seed)?;
        *out = Box::into_raw(Box::new(EuModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint written by `edgeuda train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eu_model_load(path: *const c_char, out: *mut *mut EuModel) -> EuStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let (_, inner) = CheckpointMeta::load_model(&self::path(path)?)?;
        *out = Box::into_raw(Box::new(EuModel { inner }));
        Ok(())
    })
}

/// Writes the model as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn eu_model_save(model: *const EuModel, path: *const c_char) -> EuStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let meta = CheckpointMeta {
            arch: m.inner.arch().clone(),
            depth_min: m.inner.bins().z_min(),
            depth_max: m.inner.bins().z_max(),
            variant: AblationVariant::default(),
            tag: "ffi".into(),
            epoch: None,
            eval_miou: None,
        };
        checkpoint::save(&self::path(path)?, &meta, &m.inner.params)?;
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eu_model_free(model: *mut EuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of semantic classes, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn eu_model_num_classes(model: *const EuModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_classes())
}

/// Number of learnable generator parameters, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn eu_model_param_count(model: *const EuModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.params.count())
}

/// Segments one image. `labels_out` receives `H×W` refined-head labels.
/// `entropy_out` (total refined entropy per pixel), `edge_out` (edge
/// probability) and `depth_out` (metres) are optional `H×W` buffers.
///
/// # Safety
/// `rgb` must hold `height·width·3` doubles; each non-NULL output must hold
/// `height·width` elements.
#[no_mangle]
pub unsafe extern "C" fn eu_model_predict(
    model: *const EuModel,
    rgb: *const f64,
    height: usize,
    width: usize,
    labels_out: *mut u8,
    entropy_out: *mut f64,
    edge_out: *mut f64,
    depth_out: *mut f64,
) -> EuStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let n = height * width;
        let x = hwc_to_tensor(slice(rgb, n * 3, "rgb")?, height, width)?;
        let labels = slice_mut(labels_out, n, "labels_out")?;
        let pred = m.inner.predict(&x)?;
        labels.copy_from_slice(&pred.labels());
        if !entropy_out.is_null() {
            let e = entropy_map(&ProbMap::new(pred.ref_prob.clone())?).total();
            slice_mut(entropy_out, n, "entropy_out")?.copy_from_slice(e.data());
        }
        if !edge_out.is_null() {
            slice_mut(edge_out, n, "edge_out")?.copy_from_slice(pred.edge_prob.data());
        }
        if !depth_out.is_null() {
            slice_mut(depth_out, n, "depth_out")?.copy_from_slice(pred.depth.data());
        }
        Ok(())
    })
}

/// Creates an empty `num_classes × num_classes` confusion matrix.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eu_confusion_new(num_classes: usize, out: *mut *mut EuConfusion) -> EuStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if num_classes == 0 || num_classes > 255 {
            return Err(Failure::Invalid(format!("num_classes {num_classes} outside 1..=255")));
        }
        *out = Box::into_raw(Box::new(EuConfusion {
            inner: ConfusionMatrix::new(num_classes),
        }));
        Ok(())
    })
}

/// Accumulates `len` pixels; ground-truth pixels equal to the ignore label
/// are skipped.
///
/// # Safety
/// `cm` must come from this library; `pred` and `gt` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn eu_confusion_add(cm: *mut EuConfusion, pred: *const u8, gt: *const u8, len: usize) -> EuStatus {
    guard(|| {
        let cm = cm.as_mut().ok_or(Failure::Null("cm"))?;
        cm.inner.add(slice(pred, len, "pred")?, slice(gt, len, "gt")?, IGNORE_LABEL)?;
        Ok(())
    })
}

/// Count for ground truth `gt` predicted as `pred`; 0 for NULL or out of range.
///
/// # Safety
/// `cm` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn eu_confusion_get(cm: *const EuConfusion, gt: usize, pred: usize) -> u64 {
    match cm.as_ref() {
        Some(cm) if gt < cm.inner.classes() && pred < cm.inner.classes() => cm.inner.get(gt, pred),
        _ => 0,
    }
}

/// Mean IoU over present classes. `per_class_out` (optional) receives one
/// IoU per class, NaN for absent classes.
///
/// # Safety
/// `cm` must come from this library; `miou_out` must be writable;
/// `per_class_out`, if non-NULL, must hold `num_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn eu_confusion_miou(cm: *const EuConfusion, miou_out: *mut f64, per_class_out: *mut f64) -> EuStatus {
    guard(|| {
        let cm = cm.as_ref().ok_or(Failure::Null("cm"))?;
        if miou_out.is_null() {
            return Err(Failure::Null("miou_out"));
        }
        let report = iou_from_confusion(&cm.inner)?;
        *miou_out = report.miou;
        if !per_class_out.is_null() {
            let out = slice_mut(per_class_out, cm.inner.classes(), "per_class_out")?;
            for (o, v) in out.iter_mut().zip(&report.per_class) {
                *o = v.unwrap_or(f64::NAN);
            }
        }
        Ok(())
    })
}

/// Releases a confusion matrix. NULL is ignored.
///
/// # Safety
/// `cm` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eu_confusion_free(cm: *mut EuConfusion) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

/// Canny edges of a grayscale image into `out` as `{0, 255}`.
///
/// # Safety
/// `gray` and `out` must hold `height·width` elements.
#[no_mangle]
pub unsafe extern "C" fn eu_canny(
    gray: *const f64,
    height: usize,
    width: usize,
    sigma: f64,
    low: f64,
    high: f64,
    out: *mut u8,
) -> EuStatus {
    guard(|| {
        let n = height * width;
        let params = CannyParams {
            gaussian_sigma: sigma,
            low_threshold: low,
            high_threshold: high,
        };
        let e = canny(slice(gray, n, "gray")?, height, width, &params)?;
        slice_mut(out, n, "out")?.copy_from_slice(&e.data);
        Ok(())
    })
}

/// 4-neighbour label boundary into `out` as `{0, 255}`.
///
/// # Safety
/// `labels` and `out` must hold `height·width` bytes.
#[no_mangle]
pub unsafe extern "C" fn eu_boundary_oracle(labels: *const u8, height: usize, width: usize, out: *mut u8) -> EuStatus {
    guard(|| {
        let n = height * width;
        let e = boundary_oracle(slice(labels, n, "labels")?, height, width)?;
        slice_mut(out, n, "out")?.copy_from_slice(&e.data);
        Ok(())
    })
}

/// Union of per-class Canny edges with default parameters.
///
/// # Safety
/// `labels` and `out` must hold `height·width` bytes.
#[no_mangle]
pub unsafe extern "C" fn eu_edge_ground_truth(
    labels: *const u8,
    height: usize,
    width: usize,
    num_classes: usize,
    out: *mut u8,
) -> EuStatus {
    guard(|| {
        let n = height * width;
        let e = edge_union(slice(labels, n, "labels")?, height, width, num_classes, &CannyParams::default())?;
        slice_mut(out, n, "out")?.copy_from_slice(&e.data);
        Ok(())
    })
}

/// Per-channel `-p ln p` of a channel-major `C×H×W` probability map.
///
/// # Safety
/// `probs` and `out` must hold `channels·height·width` doubles.
#[no_mangle]
pub unsafe extern "C" fn eu_entropy_map(probs: *const f64, channels: usize, height: usize, width: usize, out: *mut f64) -> EuStatus {
    guard(|| {
        let n = channels * height * width;
        let t = Tensor::from_vec(Shape::new(1, channels, height, width), slice(probs, n, "probs")?.to_vec())?;
        let e = entropy_map(&ProbMap::new(t)?);
        slice_mut(out, n, "out")?.copy_from_slice(e.tensor().data());
        Ok(())
    })
}

/// Renders scene `index` of the default generator with `seed`, sized
/// `height × width`. Outputs are `H×W×3` image, `H×W` labels and depth;
/// any output may be NULL.
///
/// # Safety
/// Non-NULL outputs must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn eu_generate_scene(
    seed: u64,
    index: u64,
    height: usize,
    width: usize,
    num_classes: usize,
    rgb_out: *mut f64,
    labels_out: *mut u8,
    depth_out: *mut f64,
) -> EuStatus {
    guard(|| {
        let cfg = SceneConfig {
            height,
            width,
            num_classes,
            seed,
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, index)?;
        let n = height * width;
        if !rgb_out.is_null() {
            let out = slice_mut(rgb_out, n * 3, "rgb_out")?;
            for i in 0..n {
                for c in 0..3 {
                    out[i * 3 + c] = s.image.channel(0, c)[i];
                }
            }
        }
        if !labels_out.is_null() {
            slice_mut(labels_out, n, "labels_out")?.copy_from_slice(&s.labels);
        }
        if !depth_out.is_null() {
            slice_mut(depth_out, n, "depth_out")?.copy_from_slice(&s.depth);
        }
        Ok(())
    })
}
