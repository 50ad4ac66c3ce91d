//! C ABI over the cxray toolkit: opaque model handles, status codes and a
//! thread-local last-error message.
//!
//! Every function returns a [`CxStatus`]; on failure
//! [`cx_last_error`] describes the cause. Buffers are caller-owned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cxray::explain::grad_cam;
use cxray::metrics::{roc_auc, spearman};
use cxray::model::{build_model, Depth, Freeze, ModelConfig, Model, NUM_LABELS};
use cxray::tensor::ops::NormMode;
use cxray::tensor::{no_grad, Tensor};
use cxray::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CxStatus {
    CxOk = 0,
    CxErrNullPointer = 1,
    CxErrUsage = 2,
    CxErrShape = 3,
    CxErrValidation = 4,
    CxErrNumeric = 5,
    CxErrIo = 6,
    CxErrFormat = 7,
    CxErrIntegrity = 8,
    CxErrState = 9,
    CxErrUndefined = 10,
    CxErrBufferTooSmall = 11,
    CxErrPanic = 12,
}

/// Freeze policy codes for [`CxModelSpec::freeze`].
pub const CX_FREEZE_NONE: u32 = 0;
pub const CX_FREEZE_OFF_THE_SHELF: u32 = 1;
pub const CX_FREEZE_FINE_TUNE: u32 = 2;

/// Number of outputs of every classifier.
pub const CX_NUM_LABELS: usize = 15;

/// Plain description of a ResNet classifier.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CxModelSpec {
    /// 38, 50 or 101.
    pub depth: u32,
    /// 1 or 3.
    pub input_channels: u32,
    pub input_size: u32,
    pub extra_pool: u8,
    pub use_meta: u8,
    /// One of the `CX_FREEZE_*` codes.
    pub freeze: u32,
    /// 1 for the published widths.
    pub width_divisor: u32,
}

/// Opaque model handle.
pub struct CxModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CxStatus {
    match e {
        Error::Usage(_) | Error::Config(_) => CxStatus::CxErrUsage,
        Error::Shape(_) | Error::Alignment(_) => CxStatus::CxErrShape,
        Error::Validation(_) | Error::ParamMismatch { .. } | Error::Quota(_) => CxStatus::CxErrValidation,
        Error::Numeric { .. } | Error::Diverged { .. } => CxStatus::CxErrNumeric,
        Error::Io { .. } | Error::Image { .. } => CxStatus::CxErrIo,
        Error::Format(_) | Error::Csv(_) | Error::Json(_) => CxStatus::CxErrFormat,
        Error::Integrity(_) => CxStatus::CxErrIntegrity,
        Error::State(_) => CxStatus::CxErrState,
        Error::UndefinedAuc(_) => CxStatus::CxErrUndefined,
    }
}

struct Failure(CxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CxStatus::CxErrNullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CxStatus::CxOk,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CxStatus::CxErrPanic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CxStatus::CxErrUsage, format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const CxModel) -> Result<&'a Model, Failure> {
    m.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn config_of(spec: &CxModelSpec) -> Result<ModelConfig, Failure> {
    let depth = Depth::try_from(spec.depth).map_err(|m| Failure(CxStatus::CxErrValidation, m))?;
    let freeze = match spec.freeze {
        CX_FREEZE_NONE => Freeze::None,
        CX_FREEZE_OFF_THE_SHELF => Freeze::OffTheShelf,
        CX_FREEZE_FINE_TUNE => Freeze::FineTune,
        other => return Err(Failure(CxStatus::CxErrValidation, format!("unknown freeze code {other}"))),
    };
    let c = ModelConfig {
        depth,
        input_channels: spec.input_channels as usize,
        input_size: spec.input_size as usize,
        extra_pool_after_conv2: spec.extra_pool != 0,
        use_meta: spec.use_meta != 0,
        num_labels: NUM_LABELS,
        freeze,
        width_divisor: spec.width_divisor as usize,
    };
    c.validate()?;
    Ok(c)
}

fn spec_of(c: &ModelConfig) -> CxModelSpec {
    CxModelSpec {
        depth: c.depth.number(),
        input_channels: c.input_channels as u32,
        input_size: c.input_size as u32,
        extra_pool: c.extra_pool_after_conv2 as u8,
        use_meta: c.use_meta as u8,
        freeze: match c.freeze {
            Freeze::None => CX_FREEZE_NONE,
            Freeze::OffTheShelf => CX_FREEZE_OFF_THE_SHELF,
            Freeze::FineTune => CX_FREEZE_FINE_TUNE,
        },
        width_divisor: c.width_divisor as u32,
    }
}

fn image_config(model: &Model) -> Result<ModelConfig, Failure> {
    model
        .architecture()
        .image_config()
        .copied()
        .ok_or_else(|| Failure(CxStatus::CxErrUsage, "model has no image branch".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn cx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized classifier.
///
/// # Safety
/// `spec` must point to a valid spec and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cx_model_build(spec: *const CxModelSpec, seed: u64, out: *mut *mut CxModel) -> CxStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let model = build_model(&config_of(spec)?, seed)?;
        *out = Box::into_raw(Box::new(CxModel { model }));
        Ok(())
    })
}

/// Loads a checkpoint manifest (with its `.bin` blob beside it).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cx_model_load(path: *const c_char, out: *mut *mut CxModel) -> CxStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let model = Model::load(&path)?;
        *out = Box::into_raw(Box::new(CxModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cx_model_save(model: *const CxModel, path: *const c_char) -> CxStatus {
    guard(|| {
        let model = model_ref(model)?;
        model.save(&path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cx_model_free(model: *mut CxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the layout of an image classifier to `out`.
///
/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn cx_model_spec(model: *const CxModel, out: *mut CxModelSpec) -> CxStatus {
    guard(|| {
        let c = image_config(model_ref(model)?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = spec_of(&c);
        Ok(())
    })
}

/// Sigmoid outputs for `n` images laid out `[n, C, S, S]`; `meta` is
/// `[n, 3]` (scaled age, gender, view) for metadata models and null
/// otherwise. `out` receives `[n, 15]`.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn cx_model_predict(
    model: *const CxModel,
    images: *const f32,
    n: usize,
    meta: *const f32,
    out: *mut f32,
) -> CxStatus {
    guard(|| {
        let model = model_ref(model)?;
        let c = image_config(model)?;
        let per = c.input_channels * c.input_size * c.input_size;
        let x = Tensor::new(
            vec![n, c.input_channels, c.input_size, c.input_size],
            slice(images, n * per, "images")?.to_vec(),
        )?;
        let m = if meta.is_null() {
            None
        } else {
            Some(Tensor::new(vec![n, 3], slice(meta, n * 3, "meta")?.to_vec())?)
        };
        let y = no_grad(|| model.forward(Some(&x), m.as_ref(), NormMode::Eval))?;
        slice_mut(out, n * NUM_LABELS, "out")?.copy_from_slice(&y.output.data());
        Ok(())
    })
}

/// Area under the ROC curve of `scores` against 0/1 `labels`.
///
/// # Safety
/// Both arrays must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cx_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> CxStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        *out.as_mut().ok_or_else(|| null("out"))? = roc_auc(s, &l)?;
        Ok(())
    })
}

/// Spearman rank correlation of two length-`n` vectors.
///
/// # Safety
/// Both arrays must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cx_spearman(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> CxStatus {
    guard(|| {
        let v = spearman(slice(a, n, "a")?, slice(b, n, "b")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Grad-CAM of `label` for one image `[C, S, S]`. The raw grid is written
/// row-major to `grid` (capacity `grid_capacity`) with its dimensions in
/// `grid_height`/`grid_width`; `rendering`, when non-null, receives the
/// normalized `S x S` map.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn cx_grad_cam(
    model: *const CxModel,
    image: *const f32,
    meta: *const f32,
    label: usize,
    grid: *mut f32,
    grid_capacity: usize,
    grid_height: *mut usize,
    grid_width: *mut usize,
    rendering: *mut f32,
) -> CxStatus {
    guard(|| {
        let model = model_ref(model)?;
        let c = image_config(model)?;
        let per = c.input_channels * c.input_size * c.input_size;
        let x = Tensor::new(
            vec![1, c.input_channels, c.input_size, c.input_size],
            slice(image, per, "image")?.to_vec(),
        )?;
        let m = if meta.is_null() {
            None
        } else {
            Some(Tensor::new(vec![1, 3], slice(meta, 3, "meta")?.to_vec())?)
        };
        let hm = grad_cam(model, &x, m.as_ref(), label)?.remove(0);
        *grid_height.as_mut().ok_or_else(|| null("grid_height"))? = hm.grid_height;
        *grid_width.as_mut().ok_or_else(|| null("grid_width"))? = hm.grid_width;
        if grid_capacity < hm.grid.len() {
            return Err(Failure(
                CxStatus::CxErrBufferTooSmall,
                format!("grid needs {} floats, capacity is {grid_capacity}", hm.grid.len()),
            ));
        }
        slice_mut(grid, hm.grid.len(), "grid")?.copy_from_slice(&hm.grid);
        if !rendering.is_null() {
            slice_mut(rendering, hm.rendering.len(), "rendering")?.copy_from_slice(&hm.rendering);
        }
        Ok(())
    })
}
