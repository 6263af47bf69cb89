//! C ABI over the canopy library.
//!
//! Every entry point returns a [`CanopyStatus`]; on failure the message is
//! kept per thread and read with [`canopy_last_error`]. Models are opaque
//! handles created by `canopy_model_load` / `canopy_model_build` and
//! released with `canopy_model_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use canopy::change::{detect_change, AreaEstimate, ChangeCounts};
use canopy::eval::{auc_pr, confusion_labels, metrics, ConfusionCounts};
use canopy::models::{Arch, Checkpoint, ModelConfig, SegmentationModel};
use canopy::nn::Tensor;
use canopy::preprocess::NormalizationStats;
use canopy::raster::{BinaryMask, GeoGrid};
use canopy::ErrorKind;
use ndarray::{ArrayView2, ArrayView4};

/// Result code of every call. Values 2–4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CanopyStatus {
    Ok = 0,
    NullPointer = 1,
    ConfigError = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

/// Loaded segmentation model with its input normalization, if any.
pub struct CanopyModel {
    model: SegmentationModel,
    stats: Option<NormalizationStats>,
    band_names: Vec<String>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CanopyConfusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CanopyMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Non-zero when some ratio had a zero denominator and was reported as 0.
    pub degenerate: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CanopyChangeCounts {
    pub stable_forest: u64,
    pub stable_nonforest: u64,
    pub deforested: u64,
    pub afforested: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CanopyArea {
    pub deforested_km2: f64,
    pub afforested_km2: f64,
    pub forest_t0_km2: f64,
    /// Valid only when `rate_defined` is non-zero.
    pub deforestation_rate: f64,
    pub rate_defined: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(canopy::Error),
}

impl From<canopy::Error> for Failure {
    fn from(e: canopy::Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> CanopyStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CanopyStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            CanopyStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            match e.kind() {
                ErrorKind::Config => CanopyStatus::ConfigError,
                ErrorKind::Data => CanopyStatus::DataError,
                ErrorKind::Numerical => CanopyStatus::NumericalError,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            CanopyStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> FfiResult<*const T> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

fn out_ptr<T>(p: *mut T, what: &'static str) -> FfiResult<*mut T> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(non_null(p, what)?, len))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn string(p: *const c_char, what: &'static str) -> FfiResult<String> {
    let s = CStr::from_ptr(non_null(p, what)?);
    s.to_str()
        .map(str::to_owned)
        .map_err(|_| canopy::Error::InvalidArgument(format!("`{what}` is not UTF-8")).into())
}

fn flat_mask(labels: &[u8], pixel_size_m: f64) -> FfiResult<BinaryMask> {
    let grid = GeoGrid::from_origin(0.0, 0.0, pixel_size_m, labels.len().max(1), 1)?;
    let arr = ndarray::Array2::from_shape_vec((1, labels.len()), labels.to_vec())
        .map_err(|e| canopy::Error::InvalidArgument(e.to_string()))?;
    Ok(BinaryMask::new(grid, arr)?)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn canopy_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn canopy_model_load(path: *const c_char, out: *mut *mut CanopyModel) -> CanopyStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = string(path, "path")?;
        let ck = Checkpoint::load(Path::new(&path))?;
        let band_names = match ck.meta.scenario {
            Some(s) => s.bands().into_iter().map(String::from).collect(),
            None => Vec::new(),
        };
        let handle = CanopyModel {
            model: ck.model,
            stats: ck.meta.normalization,
            band_names,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Build a freshly initialized model. `arch` is one of `unet`,
/// `attention_unet`, `segnet_resnet50`, `fcn32_vgg16`.
///
/// # Safety
/// `arch` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn canopy_model_build(
    arch: *const c_char,
    in_channels: usize,
    base_width: usize,
    depth: usize,
    seed: u64,
    out: *mut *mut CanopyModel,
) -> CanopyStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let arch: Arch = string(arch, "arch")?.parse()?;
        let config = ModelConfig::new(arch, in_channels)
            .with_base_width(base_width)
            .with_depth(depth)
            .with_seed(seed);
        let handle = CanopyModel {
            model: SegmentationModel::build(config)?,
            stats: None,
            band_names: Vec::new(),
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Release a model handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn canopy_model_free(model: *mut CanopyModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input channel count of a model, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn canopy_model_in_channels(model: *const CanopyModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().in_channels)
}

/// Height and width must be multiples of this.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn canopy_model_size_divisor(model: *const CanopyModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().divisor())
}

/// Forest probabilities for `n` images stored N×H×W×C (row-major,
/// channels last). With `normalize` non-zero the checkpoint's percentile
/// normalization is applied first. Writes N×H×W values to `out`.
///
/// # Safety
/// `input` must hold `n*h*w*c` values and `out` room for `n*h*w`.
#[no_mangle]
pub unsafe extern "C" fn canopy_model_predict(
    model: *const CanopyModel,
    input: *const f64,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    normalize: u8,
    out: *mut f64,
) -> CanopyStatus {
    guard(|| {
        let m = non_null(model, "model")?.as_ref().expect("checked");
        let data = slice(input, n * h * w * c, "input")?;
        let out = out_ptr(out, "out")?;
        m.model.check_input(n, c, h, w)?;
        let mut x = ArrayView4::from_shape((n, h, w, c), data)
            .map_err(|e| canopy::Error::InvalidArgument(e.to_string()))?
            .to_owned();
        if normalize != 0 {
            let stats = m.stats.as_ref().ok_or_else(|| {
                canopy::Error::Config("model carries no normalization statistics".into())
            })?;
            for (ch, name) in m.band_names.iter().enumerate() {
                let bs = stats
                    .get(name)
                    .ok_or_else(|| canopy::Error::MissingBand(name.clone()))?;
                x.index_axis_mut(ndarray::Axis(3), ch)
                    .mapv_inplace(|v| stats.apply(bs, v));
            }
        }
        let probs = m.model.predict(&Tensor::from_nhwc(x.view()))?;
        std::slice::from_raw_parts_mut(out, n * h * w).copy_from_slice(probs.data());
        Ok(())
    })
}

/// Confusion counts of binary label arrays (forest = 1 is positive).
///
/// # Safety
/// `pred` and `target` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn canopy_confusion(
    pred: *const u8,
    target: *const u8,
    len: usize,
    out: *mut CanopyConfusion,
) -> CanopyStatus {
    guard(|| {
        let p = slice(pred, len, "pred")?;
        let t = slice(target, len, "target")?;
        let out = out_ptr(out, "out")?;
        let pv = ArrayView2::from_shape((1, len), p).expect("length matches");
        let tv = ArrayView2::from_shape((1, len), t).expect("length matches");
        let c = confusion_labels(pv, tv)?;
        *out = CanopyConfusion {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
        };
        Ok(())
    })
}

/// Accuracy, precision, recall and F1 from counts.
///
/// # Safety
/// `counts` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn canopy_metrics(counts: *const CanopyConfusion, out: *mut CanopyMetrics) -> CanopyStatus {
    guard(|| {
        let c = *non_null(counts, "counts")?;
        let out = out_ptr(out, "out")?;
        let m = metrics(&ConfusionCounts {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
        })?;
        *out = CanopyMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            degenerate: u8::from(m.degenerate.any()),
        };
        Ok(())
    })
}

/// Area under the precision–recall curve over `n_thresholds` uniform thresholds.
///
/// # Safety
/// `probs` and `target` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn canopy_auc_pr(
    probs: *const f64,
    target: *const u8,
    len: usize,
    n_thresholds: usize,
    out: *mut f64,
) -> CanopyStatus {
    guard(|| {
        let p = slice(probs, len, "probs")?;
        let t = slice(target, len, "target")?;
        let out = out_ptr(out, "out")?;
        let pv = ArrayView2::from_shape((1, len), p).expect("length matches");
        let tv = ArrayView2::from_shape((1, len), t).expect("length matches");
        *out = auc_pr(pv, tv, n_thresholds)?;
        Ok(())
    })
}

/// Per-pixel change states (0 stable forest, 1 stable non-forest,
/// 2 deforested, 3 afforested) and their counts. `states` may be null.
///
/// # Safety
/// `t0` and `t1` must hold `len` values; `states`, if not null, room for
/// `len`; `counts` must be writable.
#[no_mangle]
pub unsafe extern "C" fn canopy_detect_change(
    t0: *const u8,
    t1: *const u8,
    len: usize,
    states: *mut u8,
    counts: *mut CanopyChangeCounts,
) -> CanopyStatus {
    guard(|| {
        let a = flat_mask(slice(t0, len, "t0")?, 10.0)?;
        let b = flat_mask(slice(t1, len, "t1")?, 10.0)?;
        let counts = out_ptr(counts, "counts")?;
        let change = detect_change(&a, &b)?;
        if !states.is_null() {
            std::slice::from_raw_parts_mut(states, len)
                .iter_mut()
                .zip(change.states())
                .for_each(|(o, &s)| *o = s);
        }
        let c = change.counts();
        *counts = CanopyChangeCounts {
            stable_forest: c.stable_forest,
            stable_nonforest: c.stable_nonforest,
            deforested: c.deforested,
            afforested: c.afforested,
        };
        Ok(())
    })
}

/// Areas in km² for change counts at a ground resolution in metres.
///
/// # Safety
/// `counts` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn canopy_area_estimate(
    counts: *const CanopyChangeCounts,
    pixel_size_m: f64,
    out: *mut CanopyArea,
) -> CanopyStatus {
    guard(|| {
        let c = *non_null(counts, "counts")?;
        let out = out_ptr(out, "out")?;
        let a = AreaEstimate::from_counts(
            ChangeCounts {
                stable_forest: c.stable_forest,
                stable_nonforest: c.stable_nonforest,
                deforested: c.deforested,
                afforested: c.afforested,
            },
            pixel_size_m,
        )?;
        *out = CanopyArea {
            deforested_km2: a.deforested_km2,
            afforested_km2: a.afforested_km2,
            forest_t0_km2: a.forest_t0_km2,
            deforestation_rate: a.deforestation_rate.unwrap_or(0.0),
            rate_defined: u8::from(a.deforestation_rate.is_some()),
        };
        Ok(())
    })
}
