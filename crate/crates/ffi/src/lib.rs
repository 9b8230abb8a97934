//! C interface to the transit-reid library.
//!
//! A store is loaded or generated into an opaque [`TrStore`] handle. Every
//! fallible call returns a [`TrStatus`]; on failure the message is kept per
//! thread and read with [`tr_last_error_message`]. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`tr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use transit_reid::cotravel::CoTravelIndex;
use transit_reid::query::{self, Constraint};
use transit_reid::synth::{self, SyntheticPopulationConfig};
use transit_reid::unicity::{self, UnicityParams};
use transit_reid::{csv_io, CardId, Error, EventStore};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    UnreadableSource = 3,
    UnwritableSink = 4,
    MissingColumn = 5,
    InvalidConfig = 6,
    InvalidParams = 7,
    UnknownCard = 8,
    Json = 9,
    Internal = 10,
}

impl From<&Error> for TrStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::UnreadableSource(_) => TrStatus::UnreadableSource,
            Error::UnwritableSink(_) => TrStatus::UnwritableSink,
            Error::MissingColumn(_) => TrStatus::MissingColumn,
            Error::InvalidConfig(_) => TrStatus::InvalidConfig,
            Error::InvalidParams(_) | Error::InvalidBlock(_) | Error::StoreTooLarge { .. } => TrStatus::InvalidParams,
            Error::UnknownCard(_) => TrStatus::UnknownCard,
            Error::Json(_) => TrStatus::Json,
            _ => TrStatus::Internal,
        }
    }
}

/// Opaque handle to a loaded event store.
pub struct TrStore {
    store: EventStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(status: TrStatus, message: impl Into<Vec<u8>>) -> TrStatus {
    let mut bytes = message.into();
    bytes.retain(|&b| b != 0);
    let message = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
    status
}

fn fail(e: Error) -> TrStatus {
    set_error(TrStatus::from(&e), e.to_string())
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Run `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), TrStatus>) -> TrStatus {
    clear_error();
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => set_error(TrStatus::Internal, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, TrStatus> {
    if p.is_null() {
        return Err(set_error(TrStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| set_error(TrStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn store_arg<'a>(p: *const TrStore) -> Result<&'a EventStore, TrStatus> {
    p.as_ref()
        .map(|h| &h.store)
        .ok_or_else(|| set_error(TrStatus::NullArgument, "null store handle"))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), TrStatus> {
    if out.is_null() {
        return Err(set_error(TrStatus::NullArgument, "null output pointer"));
    }
    let c = CString::new(s).map_err(|_| set_error(TrStatus::Internal, "output contains nul"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_store(out: *mut *mut TrStore, store: EventStore) -> Result<(), TrStatus> {
    if out.is_null() {
        return Err(set_error(TrStatus::NullArgument, "null output pointer"));
    }
    *out = Box::into_raw(Box::new(TrStore { store }));
    Ok(())
}

/// Load a CSV file or directory. Malformed rows are skipped; their count is
/// written to `malformed_rows` when it is not null.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_store_load_csv(path: *const c_char, out: *mut *mut TrStore, malformed_rows: *mut u64) -> TrStatus {
    guard(|| {
        let path = str_arg(path)?;
        let outcome = csv_io::load_path(Path::new(path)).map_err(fail)?;
        if !malformed_rows.is_null() {
            *malformed_rows = outcome.errors.len() as u64;
        }
        put_store(out, outcome.store)
    })
}

/// Generate a synthetic population from a JSON config.
///
/// # Safety
/// `config_json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_store_generate(config_json: *const c_char, out: *mut *mut TrStore) -> TrStatus {
    guard(|| {
        let config: SyntheticPopulationConfig = serde_json::from_str(str_arg(config_json)?).map_err(|e| fail(e.into()))?;
        put_store(out, synth::generate_population(&config).map_err(fail)?)
    })
}

/// Release a store handle. Null is ignored.
///
/// # Safety
/// `store` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tr_store_free(store: *mut TrStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of cards in the store, 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_store_card_count(store: *const TrStore) -> u64 {
    store.as_ref().map_or(0, |h| h.store.card_count() as u64)
}

/// Number of tap events in the store, 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_store_event_count(store: *const TrStore) -> u64 {
    store.as_ref().map_or(0, |h| h.store.event_count() as u64)
}

/// Unicity report as CSV. `params_json` may be null for the defaults.
///
/// # Safety
/// `store` must be live; `params_json` null or a valid C string; `out_csv` writable.
#[no_mangle]
pub unsafe extern "C" fn tr_unicity_csv(store: *const TrStore, params_json: *const c_char, out_csv: *mut *mut c_char) -> TrStatus {
    guard(|| {
        let store = store_arg(store)?;
        let params: UnicityParams = if params_json.is_null() {
            UnicityParams::default()
        } else {
            serde_json::from_str(str_arg(params_json)?).map_err(|e| fail(e.into()))?
        };
        let report = unicity::run_unicity(store, &params).map_err(fail)?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(fail)?;
        put_string(out_csv, String::from_utf8(buf).expect("csv is ascii"))
    })
}

/// Evaluate a JSON constraint list; writes `{"total":..,"preview":[..]}`.
///
/// # Safety
/// `store` must be live; `constraints_json` a valid C string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tr_query_json(
    store: *const TrStore,
    constraints_json: *const c_char,
    max_preview: u32,
    out_json: *mut *mut c_char,
) -> TrStatus {
    guard(|| {
        let store = store_arg(store)?;
        let constraints: Vec<Constraint> = serde_json::from_str(str_arg(constraints_json)?).map_err(|e| fail(e.into()))?;
        let candidates = query::evaluate(store, &constraints).map_err(fail)?;
        let summary = query::summarize(store, &candidates, max_preview as usize).map_err(fail)?;
        put_string(out_json, serde_json::to_string(&summary).map_err(|e| fail(e.into()))?)
    })
}

/// Co-travellers of `card_id` as JSON, over the whole store.
///
/// # Safety
/// `store` must be live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tr_cotravellers_json(
    store: *const TrStore,
    card_id: u64,
    window_seconds: i64,
    out_json: *mut *mut c_char,
) -> TrStatus {
    guard(|| {
        let store = store_arg(store)?;
        let matches = CoTravelIndex::build(store)
            .cotravellers(store, CardId(card_id), window_seconds, None)
            .map_err(fail)?;
        put_string(out_json, serde_json::to_string(&matches).map_err(|e| fail(e.into()))?)
    })
}

/// Message of the last failure on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn tr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
