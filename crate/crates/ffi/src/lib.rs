//! C ABI over the caitts synthesis and evaluation core.
//!
//! Every fallible function returns a [`CaittsStatus`]; on failure a
//! message is kept per thread and can be read with
//! [`caitts_last_error`]. Models and synthesized mels are opaque heap
//! handles released with their `_free` function.
//!
//! # Safety
//!
//! Pointer arguments must be non-null unless documented otherwise,
//! aligned, and valid for the stated length for the duration of the call.
//! Handles must come from this library and must not be used after free.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use caitts::corpus::phoneme_id;
use caitts::eval::mcd_dtw;
use caitts::model::{load_checkpoint, CaiTts, ModelConfig, Synthesis, SynthesisRequest};
use caitts::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaittsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IntensityRange = 3,
    Io = 4,
    Format = 5,
    Domain = 6,
    Panic = 7,
}

/// Loaded acoustic model.
pub struct CaittsModel {
    inner: CaiTts,
}

/// Result of one synthesis call.
pub struct CaittsMel {
    inner: Synthesis,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CaittsStatus {
    match e {
        Error::IntensityRange(_) => CaittsStatus::IntensityRange,
        Error::Io(_) | Error::MissingAsset(_) | Error::Wav(_) => CaittsStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) | Error::ParseError { .. } => CaittsStatus::Format,
        Error::IndexError { .. } | Error::EmptyInput(_) | Error::DimMismatch { .. } | Error::ShapeError(_) => {
            CaittsStatus::InvalidArgument
        }
        _ => CaittsStatus::Domain,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), CaittsStatus>>(f: F) -> CaittsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CaittsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            CaittsStatus::Panic
        }
    }
}

fn fail(e: Error) -> CaittsStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> CaittsStatus {
    set_error(format!("{what} is null"));
    CaittsStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, CaittsStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        CaittsStatus::InvalidArgument
    })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn caitts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn caitts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `caitts train-tts`.
#[no_mangle]
pub unsafe extern "C" fn caitts_model_load(path: *const c_char, out: *mut *mut CaittsModel) -> CaittsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let (inner, _) = load_checkpoint(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(CaittsModel { inner }));
        Ok(())
    })
}

/// Freshly initialized model from a named preset: "full", "desk" or "toy".
#[no_mangle]
pub unsafe extern "C" fn caitts_model_new(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut CaittsModel,
) -> CaittsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = match str_arg(preset, "preset")? {
            "full" => ModelConfig::full(),
            "desk" => ModelConfig::desk(),
            "toy" => ModelConfig::toy(),
            other => {
                set_error(format!("unknown preset {other:?}"));
                return Err(CaittsStatus::InvalidArgument);
            }
        };
        let inner = CaiTts::new(config, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(CaittsModel { inner }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn caitts_model_free(model: *mut CaittsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the mel frames the model produces.
#[no_mangle]
pub unsafe extern "C" fn caitts_model_mel_dim(model: *const CaittsModel, out: *mut usize) -> CaittsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.inner.config.mel_dim;
        Ok(())
    })
}

/// Index of an ARPAbet symbol (stress digits ignored).
#[no_mangle]
pub unsafe extern "C" fn caitts_phoneme_id(symbol: *const c_char, out: *mut u32) -> CaittsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = str_arg(symbol, "symbol")?;
        match phoneme_id(s) {
            Some(id) => {
                *out = id as u32;
                Ok(())
            }
            None => {
                set_error(format!("unknown phoneme {s:?}"));
                Err(CaittsStatus::InvalidArgument)
            }
        }
    })
}

/// Eval-mode synthesis. `intensity` must lie in (0, 1).
#[no_mangle]
pub unsafe extern "C" fn caitts_synthesize(
    model: *const CaittsModel,
    phoneme_ids: *const u32,
    n_phonemes: usize,
    speaker_id: u32,
    accent_id: u32,
    intensity: f64,
    out: *mut *mut CaittsMel,
) -> CaittsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if phoneme_ids.is_null() && n_phonemes > 0 {
            return Err(null("phoneme_ids"));
        }
        let ids: Vec<usize> = if n_phonemes == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(phoneme_ids, n_phonemes)
                .iter()
                .map(|&p| p as usize)
                .collect()
        };
        let req = SynthesisRequest {
            phoneme_ids: ids,
            speaker_id: speaker_id as usize,
            accent_id: accent_id as usize,
            intensity,
        };
        let inner = m.inner.synthesize(&req).map_err(fail)?;
        *out = Box::into_raw(Box::new(CaittsMel { inner }));
        Ok(())
    })
}

/// Frame count and width of a synthesized mel.
#[no_mangle]
pub unsafe extern "C" fn caitts_mel_shape(mel: *const CaittsMel, frames: *mut usize, dims: *mut usize) -> CaittsStatus {
    guard(|| {
        let m = mel.as_ref().ok_or_else(|| null("mel"))?;
        if frames.is_null() || dims.is_null() {
            return Err(null("frames/dims"));
        }
        *frames = m.inner.mel.rows();
        *dims = m.inner.mel.cols();
        Ok(())
    })
}

/// Row-major `frames × dims` values, owned by the handle.
#[no_mangle]
pub unsafe extern "C" fn caitts_mel_data(mel: *const CaittsMel) -> *const f64 {
    match mel.as_ref() {
        Some(m) => m.inner.mel.data().as_ptr(),
        None => ptr::null(),
    }
}

/// Copies the predicted per-phoneme durations (in frames) into `buf`.
/// `len` receives the phoneme count; fails if `cap` is smaller.
#[no_mangle]
pub unsafe extern "C" fn caitts_mel_durations(
    mel: *const CaittsMel,
    buf: *mut usize,
    cap: usize,
    len: *mut usize,
) -> CaittsStatus {
    guard(|| {
        let m = mel.as_ref().ok_or_else(|| null("mel"))?;
        if len.is_null() {
            return Err(null("len"));
        }
        let d = &m.inner.durations;
        *len = d.len();
        if cap < d.len() {
            set_error(format!("buffer holds {cap} durations, need {}", d.len()));
            return Err(CaittsStatus::InvalidArgument);
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(d.as_ptr(), buf, d.len());
        Ok(())
    })
}

/// Releases a mel; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn caitts_mel_free(mel: *mut CaittsMel) {
    if !mel.is_null() {
        drop(Box::from_raw(mel));
    }
}

/// Intensity the model's predictor reads from `mel`.
#[no_mangle]
pub unsafe extern "C" fn caitts_measure_intensity(
    model: *const CaittsModel,
    mel: *const CaittsMel,
    out: *mut f64,
) -> CaittsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let s = mel.as_ref().ok_or_else(|| null("mel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.inner.measure_intensity(&s.inner.mel).map_err(fail)?;
        Ok(())
    })
}

/// Mel-cepstral distortion in dB after DTW between two row-major
/// `[frames, dims]` log-mel arrays of equal width.
#[no_mangle]
pub unsafe extern "C" fn caitts_mcd_dtw(
    a: *const f64,
    a_frames: usize,
    b: *const f64,
    b_frames: usize,
    dims: usize,
    out: *mut f64,
) -> CaittsStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("a/b/out"));
        }
        if dims == 0 {
            set_error("dims must be positive".into());
            return Err(CaittsStatus::InvalidArgument);
        }
        let rows = |p: *const f64, n: usize| -> Vec<Vec<f64>> {
            std::slice::from_raw_parts(p, n * dims)
                .chunks(dims)
                .map(<[f64]>::to_vec)
                .collect()
        };
        *out = mcd_dtw(&rows(a, a_frames), &rows(b, b_frames)).map_err(fail)?;
        Ok(())
    })
}
