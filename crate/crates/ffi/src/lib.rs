//! C ABI for separating and transcribing mono 16 kHz audio with trained
//! `weaksep` checkpoints.
//!
//! Every fallible call returns a [`WsStatus`]; on failure a message is
//! kept per thread and read with [`ws_last_error_message`]. Models are
//! opaque handles from [`ws_model_load`], released with [`ws_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use weaksep::autodiff::Checkpoint;
use weaksep::dsp::{frame_count, si_sdr, Stft};
use weaksep::eval::separate_waveform;
use weaksep::nn::{Model, ModelKind};
use weaksep::score::NUM_NOTES;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    WrongModel = 4,
    BufferTooSmall = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WsModelKind {
    Transcriptor = 0,
    Separator = 1,
    Classifier = 2,
}

/// Loaded model.
pub struct WsModel {
    model: Model,
    stft: Stft,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: WsStatus, msg: impl Into<String>) -> WsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> WsStatus) -> WsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(WsStatus::Internal, "internal panic"),
    }
}

unsafe fn samples<'a>(data: *const f64, len: usize) -> Result<&'a [f64], WsStatus> {
    if data.is_null() {
        return Err(fail(WsStatus::NullPointer, "sample pointer is null"));
    }
    if len == 0 {
        return Err(fail(WsStatus::InvalidArgument, "no samples"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn model_ref<'a>(model: *const WsModel) -> Result<&'a WsModel, WsStatus> {
    model.as_ref().ok_or_else(|| fail(WsStatus::NullPointer, "model handle is null"))
}

fn expect_kind(m: &WsModel, kind: ModelKind) -> Result<(), WsStatus> {
    if m.model.kind() != kind {
        return Err(fail(WsStatus::WrongModel, format!("expected a {kind}, handle holds a {}", m.model.kind())));
    }
    Ok(())
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failure on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ws_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint of any model kind into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ws_model_load(path: *const c_char, out: *mut *mut WsModel) -> WsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(WsStatus::NullPointer, "path and out must be non-null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(WsStatus::InvalidArgument, "path is not UTF-8");
        };
        let model = match Checkpoint::load(Path::new(path)).map_err(|e| e.to_string()).and_then(|c| {
            Model::from_checkpoint(&c).map_err(|e| e.to_string())
        }) {
            Ok(m) => m,
            Err(e) => return fail(WsStatus::Io, format!("{path}: {e}")),
        };
        *out = Box::into_raw(Box::new(WsModel { model, stft: Stft::new() }));
        WsStatus::Ok
    })
}

/// Releases a handle from [`ws_model_load`]; null is ignored.
///
/// # Safety
/// `model` must come from [`ws_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ws_model_free(model: *mut WsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ws_model_kind(model: *const WsModel, out: *mut WsModelKind) -> WsStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        if out.is_null() {
            return fail(WsStatus::NullPointer, "out is null");
        }
        *out = match m.model.kind() {
            ModelKind::Transcriptor => WsModelKind::Transcriptor,
            ModelKind::Separator => WsModelKind::Separator,
            ModelKind::Classifier => WsModelKind::Classifier,
        };
        WsStatus::Ok
    })
}

/// Number of instruments, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ws_model_num_instruments(model: *const WsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_instruments())
}

/// Copies instrument `index`'s name, NUL-terminated, into `buf`.
///
/// # Safety
/// `model` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ws_model_instrument_name(
    model: *const WsModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> WsStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        let Some(name) = m.model.instruments().get(index) else {
            return fail(WsStatus::InvalidArgument, format!("instrument {index} out of range"));
        };
        if buf.is_null() {
            return fail(WsStatus::NullPointer, "buf is null");
        }
        if len < name.len() + 1 {
            return fail(WsStatus::BufferTooSmall, format!("name needs {} bytes", name.len() + 1));
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        WsStatus::Ok
    })
}

/// Spectrogram frames for a signal of `len` samples.
#[no_mangle]
pub extern "C" fn ws_frame_count(len: usize) -> usize {
    frame_count(len)
}

/// Separates `mixture` into `out`, laid out instrument-major as
/// `I * len` samples.
///
/// # Safety
/// `mixture` must hold `len` samples and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn ws_separate(
    model: *const WsModel,
    mixture: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> WsStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        tri!(expect_kind(m, ModelKind::Separator));
        let x = tri!(samples(mixture, len));
        if out.is_null() {
            return fail(WsStatus::NullPointer, "out is null");
        }
        let need = m.model.num_instruments() * len;
        if out_len < need {
            return fail(WsStatus::BufferTooSmall, format!("need {need} samples"));
        }
        let stems = match separate_waveform(&m.stft, &m.model, x) {
            Ok(s) => s,
            Err(e) => return fail(WsStatus::Internal, e.to_string()),
        };
        let out = std::slice::from_raw_parts_mut(out, need);
        for (dst, stem) in out.chunks_mut(len).zip(&stems) {
            dst.copy_from_slice(stem);
        }
        WsStatus::Ok
    })
}

/// Note probabilities for `mixture`, written as `I * 88 * T` values with
/// `T = ws_frame_count(len)`, time fastest. Notes are MIDI 21 to 108.
///
/// # Safety
/// `mixture` must hold `len` samples and `out` room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn ws_transcribe(
    model: *const WsModel,
    mixture: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> WsStatus {
    guard(|| {
        let m = tri!(model_ref(model));
        tri!(expect_kind(m, ModelKind::Transcriptor));
        let x = tri!(samples(mixture, len));
        if out.is_null() {
            return fail(WsStatus::NullPointer, "out is null");
        }
        let need = m.model.num_instruments() * NUM_NOTES * frame_count(len);
        if out_len < need {
            return fail(WsStatus::BufferTooSmall, format!("need {need} values"));
        }
        let p = match m.stft.analyze(x).map_err(|e| e.to_string()).and_then(|s| {
            m.model.predict(&s.magnitude).map_err(|e| e.to_string())
        }) {
            Ok(p) => p,
            Err(e) => return fail(WsStatus::Internal, e),
        };
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(p.data());
        WsStatus::Ok
    })
}

/// Scale-invariant SDR in dB of `estimate` against `reference`.
///
/// # Safety
/// Both arrays must hold `len` samples; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ws_si_sdr(estimate: *const f64, reference: *const f64, len: usize, out: *mut f64) -> WsStatus {
    guard(|| {
        let e = tri!(samples(estimate, len));
        let r = tri!(samples(reference, len));
        if out.is_null() {
            return fail(WsStatus::NullPointer, "out is null");
        }
        match si_sdr(e, r) {
            Ok(v) => {
                *out = v;
                WsStatus::Ok
            }
            Err(err) => fail(WsStatus::InvalidArgument, err.to_string()),
        }
    })
}
