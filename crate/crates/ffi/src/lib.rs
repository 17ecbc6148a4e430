//! C interface to the dialogue engine.
//!
//! Every function returns a [`GendsStatus`]. On failure a description is
//! available from [`gends_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`gends_string_free`], engines
//! with [`gends_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gends::inference::{DecodeMode, DecodeOptions, Engine};
use gends::kb::KnowledgeBase;
use gends::service::{reply, ReplyRequest};
use gends::training::load_checkpoint;
use gends::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GendsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Checkpoint = 6,
    Input = 7,
    Internal = 8,
    Panic = 9,
}

/// Opaque handle to a loaded model and knowledge base.
pub struct GendsEngine {
    engine: Engine,
    options: DecodeOptions,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GendsStatus {
    match e {
        Error::Io { .. } => GendsStatus::Io,
        Error::Parse { .. } => GendsStatus::Parse,
        Error::Validation(_) | Error::Config(_) => GendsStatus::Validation,
        Error::Checkpoint(_) => GendsStatus::Checkpoint,
        Error::Input(_) => GendsStatus::Input,
        Error::Diverged(_) | Error::Internal(_) => GendsStatus::Internal,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (GendsStatus, String)>) -> GendsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GendsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside the gends library".into());
            GendsStatus::Panic
        }
    }
}

fn fail(e: Error) -> (GendsStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GendsStatus, String)> {
    if p.is_null() {
        return Err((GendsStatus::NullArgument, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GendsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Loads a checkpoint and a knowledge base (JSON lines) and stores a new
/// engine in `*out`. `*out` is left untouched on failure.
///
/// # Safety
/// `model_path` and `kb_path` must be NUL-terminated strings; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gends_engine_load(
    model_path: *const c_char,
    kb_path: *const c_char,
    out: *mut *mut GendsEngine,
) -> GendsStatus {
    guard(|| {
        if out.is_null() {
            return Err((GendsStatus::NullArgument, "out is NULL".into()));
        }
        let model_path = read_str(model_path, "model_path")?;
        let kb_path = read_str(kb_path, "kb_path")?;
        let (kb, _) = KnowledgeBase::load(kb_path).map_err(fail)?;
        let ckpt = load_checkpoint(model_path).map_err(fail)?;
        let engine = Engine::from_checkpoint(ckpt, kb).map_err(fail)?;
        let handle = Box::new(GendsEngine {
            engine,
            options: DecodeOptions::default(),
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Selects greedy decoding (`width == 0`) or beam search of the given width.
///
/// # Safety
/// `engine` must come from [`gends_engine_load`] and not be shared with a
/// concurrent call.
#[no_mangle]
pub unsafe extern "C" fn gends_engine_set_beam_width(engine: *mut GendsEngine, width: u32) -> GendsStatus {
    guard(|| {
        let engine = engine
            .as_mut()
            .ok_or((GendsStatus::NullArgument, "engine is NULL".to_string()))?;
        engine.options.mode = match width {
            0 => DecodeMode::Greedy,
            w => DecodeMode::Beam(w as usize),
        };
        Ok(())
    })
}

/// Answers `message` and writes the reply object as a JSON string to
/// `*out_json` (fields `response_text`, `entities`, `gate_trace`, `score`).
///
/// # Safety
/// `engine` must come from [`gends_engine_load`]; `message` must be a
/// NUL-terminated string; `out_json` must be a valid pointer. The engine may
/// be used from several threads at once.
#[no_mangle]
pub unsafe extern "C" fn gends_engine_reply_json(
    engine: *const GendsEngine,
    message: *const c_char,
    out_json: *mut *mut c_char,
) -> GendsStatus {
    guard(|| {
        if out_json.is_null() {
            return Err((GendsStatus::NullArgument, "out_json is NULL".into()));
        }
        let engine = engine
            .as_ref()
            .ok_or((GendsStatus::NullArgument, "engine is NULL".to_string()))?;
        let message = read_str(message, "message")?;
        let request = ReplyRequest {
            message: message.to_string(),
            session_id: None,
        };
        let resp = reply(&engine.engine, request, &engine.options).map_err(fail)?;
        let json = serde_json::to_string(&resp).map_err(|e| (GendsStatus::Internal, e.to_string()))?;
        let c = CString::new(json).map_err(|e| (GendsStatus::Internal, e.to_string()))?;
        *out_json = c.into_raw();
        Ok(())
    })
}

/// Releases an engine. NULL is ignored.
///
/// # Safety
/// `engine` must come from [`gends_engine_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gends_engine_free(engine: *mut GendsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gends_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gends_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gends_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
