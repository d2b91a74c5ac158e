//! C ABI for loading a trained pipeline and inspecting images.
//!
//! Every fallible call returns a [`DfStatus`]; on failure the message is
//! kept per thread and read with [`df_last_error`]. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use defect_forge::config::Config;
use defect_forge::data::read_rgb;
use defect_forge::pipeline::{InspectionResult, Pipeline};
use defect_forge::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Config = 5,
    Image = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// A loaded pipeline.
pub struct DfPipeline(Pipeline);

/// The outcome of one inspection.
pub struct DfInspection(InspectionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DfStatus {
    match e {
        Error::Io(_) => DfStatus::Io,
        Error::Checkpoint(_) => DfStatus::Checkpoint,
        Error::UnknownConfigKey(_) | Error::ConfigValue { .. } => DfStatus::Config,
        Error::Image { .. } => DfStatus::Image,
        _ => DfStatus::InvalidArgument,
    }
}

/// Run `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), (DfStatus, String)>) -> DfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DfStatus::Internal
        }
    }
}

fn lift<T>(r: defect_forge::Result<T>) -> Result<T, (DfStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (DfStatus, String) {
    (DfStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, (DfStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (DfStatus::NullArgument, format!("`{what}` is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn df_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by `defect-forge train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_pipeline_load(path: *const c_char, out: *mut *mut DfPipeline) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_arg(path, "path")?;
        let pipe = lift(Pipeline::load(p))?;
        *out = Box::into_raw(Box::new(DfPipeline(pipe)));
        Ok(())
    })
}

/// An untrained pipeline built from `key = value` config text; null `config`
/// means the defaults. Useful for wiring tests.
///
/// # Safety
/// `config` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_pipeline_new(config: *const c_char, out: *mut *mut DfPipeline) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config.is_null() {
            Config::default()
        } else {
            let text = CStr::from_ptr(config)
                .to_str()
                .map_err(|_| (DfStatus::NullArgument, "`config` is not UTF-8".to_string()))?;
            lift(Config::parse(text))?
        };
        let pipe = lift(Pipeline::new(cfg))?;
        *out = Box::into_raw(Box::new(DfPipeline(pipe)));
        Ok(())
    })
}

/// # Safety
/// `pipeline` must come from `df_pipeline_load`/`df_pipeline_new` and not
/// have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn df_pipeline_free(pipeline: *mut DfPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

fn inspect(
    pipeline: *const DfPipeline,
    image: &image::RgbImage,
    skip_stage1: bool,
    out: *mut *mut DfInspection,
) -> Result<(), (DfStatus, String)> {
    let pipe = unsafe { pipeline.as_ref() }.ok_or_else(|| null("pipeline"))?;
    let result = lift(pipe.0.inspect(image, skip_stage1))?;
    unsafe { *out = Box::into_raw(Box::new(DfInspection(result))) };
    Ok(())
}

/// Inspect an interleaved 8-bit RGB buffer of `width * height * 3` bytes.
///
/// # Safety
/// `rgb` must point to at least `len` readable bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_inspect_rgb(
    pipeline: *const DfPipeline,
    rgb: *const u8,
    len: usize,
    width: u32,
    height: u32,
    skip_stage1: bool,
    out: *mut *mut DfInspection,
) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let need = width as usize * height as usize * 3;
        if len != need {
            return Err((
                DfStatus::InvalidArgument,
                format!("buffer holds {len} bytes, a {width}x{height} RGB image needs {need}"),
            ));
        }
        let bytes = std::slice::from_raw_parts(rgb, len).to_vec();
        let img = image::RgbImage::from_raw(width, height, bytes)
            .ok_or_else(|| (DfStatus::InvalidArgument, "bad image dimensions".to_string()))?;
        inspect(pipeline, &img, skip_stage1, out)
    })
}

/// Inspect an image file (PNG).
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_inspect_file(
    pipeline: *const DfPipeline,
    path: *const c_char,
    skip_stage1: bool,
    out: *mut *mut DfInspection,
) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let img = lift(read_rgb(path_arg(path, "path")?))?;
        inspect(pipeline, &img, skip_stage1, out)
    })
}

/// Image width of the inspected image, or 0 for null.
///
/// # Safety
/// `r` must be null or a live inspection handle.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_width(r: *const DfInspection) -> u32 {
    r.as_ref().map_or(0, |r| r.0.width as u32)
}

/// # Safety
/// `r` must be null or a live inspection handle.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_height(r: *const DfInspection) -> u32 {
    r.as_ref().map_or(0, |r| r.0.height as u32)
}

/// Number of patches stage 1 passed on to stage 2.
///
/// # Safety
/// `r` must be null or a live inspection handle.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_selected_count(r: *const DfInspection) -> usize {
    r.as_ref().map_or(0, |r| r.0.selected_count())
}

/// Number of patches the image was sliced into.
///
/// # Safety
/// `r` must be null or a live inspection handle.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_patch_count(r: *const DfInspection) -> usize {
    r.as_ref().map_or(0, |r| r.0.verdicts.len())
}

/// # Safety
/// `r` must be null or a live inspection handle.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_defect_pixels(r: *const DfInspection) -> usize {
    r.as_ref().map_or(0, |r| r.0.defect_pixels)
}

/// Copy the row-major defect mask (1 = defect) into `buf`, which must hold
/// exactly `width * height` bytes.
///
/// # Safety
/// `r` must be a live inspection handle; `buf` must be writable for `len`
/// bytes.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_mask(r: *const DfInspection, buf: *mut u8, len: usize) -> DfStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("inspection"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let mask = lift(r.0.mask())?;
        let need = mask.width * mask.height;
        if len != need {
            return Err((DfStatus::InvalidArgument, format!("mask needs {need} bytes, got {len}")));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(mask.as_slice());
        Ok(())
    })
}

/// The full result as JSON. Release it with [`df_string_free`].
///
/// # Safety
/// `r` must be a live inspection handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_json(r: *const DfInspection, out: *mut *mut c_char) -> DfStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("inspection"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = serde_json::to_string(&r.0).map_err(|e| (DfStatus::Internal, e.to_string()))?;
        *out = CString::new(text).map_err(|e| (DfStatus::Internal, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `r` must be null or come from an inspect call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn df_inspection_free(r: *mut DfInspection) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn df_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
