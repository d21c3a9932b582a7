//! C ABI for the certificate library.
//!
//! The surface mirrors the CLI: a run configuration (the same JSON document
//! the `pacb` binary consumes) is parsed into an opaque handle, and each
//! command returns its report as a newly allocated JSON or CSV string. All
//! strings returned by this library must be released with
//! [`pacb_string_free`]; configs with [`pacb_config_free`].
//!
//! Status codes mirror the CLI exit codes: 0 ok, 1 configuration error,
//! 2 diverged/infeasible bound; negative codes are FFI usage errors.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pacb::cli;
use pacb::config::RunConfig;
use pacb::Error;

/// Opaque run configuration handle.
pub struct PacbConfig {
    inner: RunConfig,
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacbStatus {
    Ok = 0,
    ConfigError = 1,
    Diverged = 2,
    NullPointer = -1,
    InvalidUtf8 = -2,
    Panic = -3,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).ok();
    });
}

fn status_of(err: &Error) -> PacbStatus {
    match err {
        Error::Diverged(_) => PacbStatus::Diverged,
        _ => PacbStatus::ConfigError,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pacb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error on this thread, or NULL. Owned by the library;
/// do not free. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pacb_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Parse a JSON run configuration. Returns NULL on error (see
/// `pacb_last_error`).
///
/// # Safety
/// `json` must be a valid NUL-terminated string or NULL.
#[no_mangle]
pub unsafe extern "C" fn pacb_config_parse(json: *const c_char) -> *mut PacbConfig {
    if json.is_null() {
        set_last_error("config JSON pointer is null");
        return std::ptr::null_mut();
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(text) => text,
        Err(_) => {
            set_last_error("config JSON is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    match RunConfig::from_json(text) {
        Ok(inner) => Box::into_raw(Box::new(PacbConfig { inner })),
        Err(err) => {
            set_last_error(&err.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Release a configuration handle. NULL is a no-op.
///
/// # Safety
/// `config` must have been returned by `pacb_config_parse` and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pacb_config_free(config: *mut PacbConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Release a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must have been returned by one of the `*_json`/`*_csv` calls and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn pacb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn run_to_string<F>(
    config: *const PacbConfig,
    out: *mut *mut c_char,
    run: F,
) -> PacbStatus
where
    F: FnOnce(&RunConfig) -> pacb::Result<String>,
{
    if config.is_null() || out.is_null() {
        set_last_error("null pointer argument");
        return PacbStatus::NullPointer;
    }
    *out = std::ptr::null_mut();
    let config = &(*config).inner;
    let outcome = catch_unwind(AssertUnwindSafe(|| run(config)));
    match outcome {
        Ok(Ok(text)) => match CString::new(text.replace('\0', " ")) {
            Ok(cstring) => {
                *out = cstring.into_raw();
                PacbStatus::Ok
            }
            Err(_) => {
                set_last_error("output contained interior NUL");
                PacbStatus::Panic
            }
        },
        Ok(Err(err)) => {
            set_last_error(&err.to_string());
            status_of(&err)
        }
        Err(_) => {
            set_last_error("internal panic");
            PacbStatus::Panic
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> pacb::Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

/// Assemble a certificate; `out` receives the certificate report JSON.
/// Returns `Diverged` (with the JSON still produced) when the complexity
/// term is infinite for the configuration.
///
/// # Safety
/// `config` must be a live handle from `pacb_config_parse`; `out` must be a
/// valid pointer to a `char*`.
#[no_mangle]
pub unsafe extern "C" fn pacb_certify_json(
    config: *const PacbConfig,
    out: *mut *mut c_char,
) -> PacbStatus {
    let mut diverged = false;
    let status = run_to_string(config, out, |cfg| {
        let report = cli::certify_value(cfg)?;
        diverged = !report.rhs.is_finite();
        to_json(&report)
    });
    if status == PacbStatus::Ok && diverged {
        set_last_error("complexity term diverged for this configuration");
        return PacbStatus::Diverged;
    }
    status
}

/// Coverage experiment; `out` receives the full run (report, psi, rows) as JSON.
///
/// # Safety
/// As for [`pacb_certify_json`].
#[no_mangle]
pub unsafe extern "C" fn pacb_coverage_json(
    config: *const PacbConfig,
    out: *mut *mut c_char,
) -> PacbStatus {
    run_to_string(config, out, |cfg| to_json(&cli::coverage_value(cfg)?))
}

/// Bound comparison table as JSON.
///
/// # Safety
/// As for [`pacb_certify_json`].
#[no_mangle]
pub unsafe extern "C" fn pacb_compare_json(
    config: *const PacbConfig,
    out: *mut *mut c_char,
) -> PacbStatus {
    run_to_string(config, out, |cfg| to_json(&cli::compare_value(cfg)?))
}

/// Convergence or asymptote sweep as JSON.
///
/// # Safety
/// As for [`pacb_certify_json`].
#[no_mangle]
pub unsafe extern "C" fn pacb_sweep_json(
    config: *const PacbConfig,
    out: *mut *mut c_char,
) -> PacbStatus {
    run_to_string(config, out, |cfg| to_json(&cli::sweep_value(cfg)?))
}

/// Minimal-eigenvalue sequence as CSV (columns n,rho_n).
///
/// # Safety
/// As for [`pacb_certify_json`].
#[no_mangle]
pub unsafe extern "C" fn pacb_spectrum_csv(
    config: *const PacbConfig,
    out: *mut *mut c_char,
) -> PacbStatus {
    run_to_string(config, out, cli::spectrum_csv_value)
}

/// Sampled dataset as CSV (header x1,...,xd,y).
///
/// # Safety
/// As for [`pacb_certify_json`].
#[no_mangle]
pub unsafe extern "C" fn pacb_simulate_csv(
    config: *const PacbConfig,
    out: *mut *mut c_char,
) -> PacbStatus {
    run_to_string(config, out, cli::simulate_csv_value)
}
