use std::ffi::{CStr, CString};
use std::ptr;

use weaksep::dsp::{frame_count, si_sdr, Stft};
use weaksep::eval::separate_waveform;
use weaksep::nn::{Model, ModelKind, TcnConfig};
use weaksep::score::NUM_NOTES;
use weaksep_ffi::*;

fn names() -> Vec<String> {
    ["bass", "guitar", "piano"].map(String::from).to_vec()
}

fn tcn() -> TcnConfig {
    TcnConfig { repeats: 1, blocks_per_repeat: 2, channels: 6, ..TcnConfig::default() }
}

fn signal(len: usize) -> Vec<f64> {
    (0..len).map(|n| (n as f64 * 0.031).sin() * 0.5 + (n as f64 * 0.117).sin() * 0.2).collect()
}

struct Loaded {
    _dir: tempfile::TempDir,
    model: Model,
    handle: *mut WsModel,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe { ws_model_free(self.handle) };
    }
}

fn load(kind: ModelKind) -> Loaded {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(kind, names(), tcn(), 9).unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ws_model_load(c.as_ptr(), &mut handle) }, WsStatus::Ok);
    assert!(!handle.is_null());
    Loaded { _dir: dir, model, handle }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ws_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn separate_matches_the_library() {
    let m = load(ModelKind::Separator);
    let mut kind = WsModelKind::Transcriptor;
    assert_eq!(unsafe { ws_model_kind(m.handle, &mut kind) }, WsStatus::Ok);
    assert_eq!(kind, WsModelKind::Separator);
    assert_eq!(unsafe { ws_model_num_instruments(m.handle) }, 3);

    let x = signal(6000);
    let mut out = vec![0.0; 3 * x.len()];
    assert_eq!(unsafe { ws_separate(m.handle, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) }, WsStatus::Ok);
    let want = separate_waveform(&Stft::new(), &m.model, &x).unwrap();
    for (i, stem) in want.iter().enumerate() {
        assert_eq!(&out[i * x.len()..(i + 1) * x.len()], &stem[..]);
    }

    let mut small = vec![0.0; 3 * x.len() - 1];
    let s = unsafe { ws_separate(m.handle, x.as_ptr(), x.len(), small.as_mut_ptr(), small.len()) };
    assert_eq!(s, WsStatus::BufferTooSmall);
    assert!(last_error().contains("18000"), "{}", last_error());
}

#[test]
fn transcribe_matches_the_library() {
    let m = load(ModelKind::Transcriptor);
    let x = signal(4000);
    let t = unsafe { ws_frame_count(x.len()) };
    assert_eq!(t, frame_count(x.len()));
    let mut out = vec![0.0; 3 * NUM_NOTES * t];
    assert_eq!(unsafe { ws_transcribe(m.handle, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) }, WsStatus::Ok);
    let want = m.model.predict(&Stft::new().analyze(&x).unwrap().magnitude).unwrap();
    assert_eq!(&out[..], want.data());

    let mut stems = vec![0.0; 3 * x.len()];
    let s = unsafe { ws_separate(m.handle, x.as_ptr(), x.len(), stems.as_mut_ptr(), stems.len()) };
    assert_eq!(s, WsStatus::WrongModel);
    assert!(last_error().contains("separator"), "{}", last_error());
}

#[test]
fn instrument_names_copy_with_terminator() {
    let m = load(ModelKind::Classifier);
    let mut buf = [1 as std::ffi::c_char; 8];
    assert_eq!(unsafe { ws_model_instrument_name(m.handle, 2, buf.as_mut_ptr(), buf.len()) }, WsStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "piano");
    assert_eq!(unsafe { ws_model_instrument_name(m.handle, 1, buf.as_mut_ptr(), 6) }, WsStatus::BufferTooSmall);
    assert_eq!(unsafe { ws_model_instrument_name(m.handle, 3, buf.as_mut_ptr(), buf.len()) }, WsStatus::InvalidArgument);
}

#[test]
fn null_and_bad_inputs_are_reported() {
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { ws_model_load(ptr::null(), &mut handle) }, WsStatus::NullPointer);
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { ws_model_load(missing.as_ptr(), &mut handle) }, WsStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));
    assert_eq!(unsafe { ws_model_num_instruments(ptr::null()) }, 0);
    let mut out = [0.0; 4];
    assert_eq!(unsafe { ws_separate(ptr::null(), out.as_ptr(), 1, out.as_mut_ptr(), 4) }, WsStatus::NullPointer);
    unsafe { ws_model_free(ptr::null_mut()) };

    let m = load(ModelKind::Separator);
    assert_eq!(unsafe { ws_separate(m.handle, ptr::null(), 10, out.as_mut_ptr(), 4) }, WsStatus::NullPointer);
    assert_eq!(unsafe { ws_separate(m.handle, out.as_ptr(), 0, out.as_mut_ptr(), 4) }, WsStatus::InvalidArgument);
}

#[test]
fn si_sdr_matches_the_library() {
    let r = signal(500);
    let e: Vec<f64> = r.iter().enumerate().map(|(n, v)| 2.0 * v + 0.01 * (n as f64).cos()).collect();
    let mut v = 0.0;
    assert_eq!(unsafe { ws_si_sdr(e.as_ptr(), r.as_ptr(), r.len(), &mut v) }, WsStatus::Ok);
    assert_eq!(v, si_sdr(&e, &r).unwrap());
    let zero = vec![0.0; 500];
    assert_eq!(unsafe { ws_si_sdr(e.as_ptr(), zero.as_ptr(), 500, &mut v) }, WsStatus::InvalidArgument);
}
