//! C ABI over the `floquet-hb` solvers.
//!
//! Every entry point returns an [`FhbStatus`]; on failure the message is
//! available from [`fhb_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use floquet_hb::config::{Experiment, RunConfig};
use floquet_hb::hb::{self, ForwardProblem, HbSolution};
use floquet_hb::oracles;
use floquet_hb::runner::{self, RunError};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Solver = 4,
    Io = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Parsed and validated run configuration.
pub struct FhbConfig {
    inner: RunConfig,
}

/// Converged forward harmonic-balance solution.
pub struct FhbSolution {
    inner: HbSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: FhbStatus, msg: impl Into<String>) -> FhbStatus {
    set_error(msg);
    status
}

impl From<RunError> for FhbStatus {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::Config(_) => FhbStatus::Config,
            RunError::Solver(_) => FhbStatus::Solver,
            RunError::Io(_) => FhbStatus::Io,
        };
        fail(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> FhbStatus) -> FhbStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FhbStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, FhbStatus> {
    if s.is_null() {
        return Err(fail(FhbStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(FhbStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn null(name: &str) -> FhbStatus {
    fail(FhbStatus::NullPointer, format!("`{name}` is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fhb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null.
///
/// The pointer stays valid until the next call into the library on the
/// same thread.
#[no_mangle]
pub extern "C" fn fhb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhb_config_from_toml(toml: *const c_char, out: *mut *mut FhbConfig) -> FhbStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml_str(text).and_then(|c| c.validate().map(|()| c)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FhbConfig { inner }));
                FhbStatus::Ok
            }
            Err(e) => fail(FhbStatus::Config, e.0),
        }
    })
}

/// Reads and parses a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhb_config_load(path: *const c_char, out: *mut *mut FhbConfig) -> FhbStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match RunConfig::load(Path::new(path)).and_then(|c| c.validate().map(|()| c)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FhbConfig { inner }));
                FhbStatus::Ok
            }
            Err(e) => fail(FhbStatus::Config, e.0),
        }
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `cfg` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fhb_config_free(cfg: *mut FhbConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs an experiment (`forward`, `engineer`, `sweep`, `compare-magnus`,
/// `verify`) and writes its artifacts and manifest into `out_dir`.
///
/// # Safety
/// `cfg` must be a live handle; the strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fhb_run(cfg: *const FhbConfig, experiment: *const c_char, out_dir: *const c_char) -> FhbStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return null("cfg");
        };
        let (name, dir) = match (str_arg(experiment, "experiment"), str_arg(out_dir, "out_dir")) {
            (Ok(n), Ok(d)) => (n, d),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let exp = match name {
            "forward" => Experiment::Forward,
            "engineer" => Experiment::Engineer,
            "sweep" => Experiment::Sweep,
            "compare-magnus" => Experiment::CompareMagnus,
            "verify" => Experiment::Verify,
            other => return fail(FhbStatus::Config, format!("unknown experiment `{other}`")),
        };
        match runner::run(exp, &cfg.inner, Path::new(dir)) {
            Ok(_) => FhbStatus::Ok,
            Err(e) => e.into(),
        }
    })
}

/// Forward NEFS solve of the configured model at `initial.a01`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhb_forward_solve(cfg: *const FhbConfig, out: *mut *mut FhbSolution) -> FhbStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            return null("cfg");
        };
        if out.is_null() {
            return null("out");
        }
        let cfg = &cfg.inner;
        let problem = cfg.build_model().and_then(|model| {
            let set = cfg.index_set()?;
            let grid = cfg.grid_for(&set);
            Ok(ForwardProblem::new(model, set, cfg.initial.a01)
                .with_grid(grid)
                .with_theta(cfg.initial.theta))
        });
        let problem = match problem {
            Ok(p) => p,
            Err(e) => return fail(FhbStatus::Config, e.0),
        };
        match hb::solve_forward(&problem) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FhbSolution { inner }));
                FhbStatus::Ok
            }
            Err(e) => RunError::from(e).into(),
        }
    })
}

/// Releases a solution; null is ignored.
///
/// # Safety
/// `sol` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fhb_solution_free(sol: *mut FhbSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Secular angular frequency and normalized frequency `β`.
///
/// # Safety
/// `sol` must be a live handle; `omega` and `beta` may be null.
#[no_mangle]
pub unsafe extern "C" fn fhb_solution_frequency(sol: *const FhbSolution, omega: *mut f64, beta: *mut f64) -> FhbStatus {
    guard(|| {
        let Some(sol) = sol.as_ref() else {
            return null("sol");
        };
        if let Some(o) = omega.as_mut() {
            *o = sol.inner.omega;
        }
        if let Some(b) = beta.as_mut() {
            *b = sol.inner.beta;
        }
        FhbStatus::Ok
    })
}

/// Number of harmonic coefficients in the solution.
///
/// # Safety
/// `sol` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhb_solution_len(sol: *const FhbSolution, len: *mut usize) -> FhbStatus {
    guard(|| {
        let Some(sol) = sol.as_ref() else {
            return null("sol");
        };
        let Some(len) = len.as_mut() else {
            return null("len");
        };
        *len = sol.inner.coeffs.amplitudes.len();
        FhbStatus::Ok
    })
}

/// Copies the harmonic indices `(m, k)` and amplitudes into caller
/// buffers of capacity `cap`.
///
/// # Safety
/// Each buffer must hold at least `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn fhb_solution_coefficients(
    sol: *const FhbSolution,
    m: *mut i32,
    k: *mut u32,
    amplitude: *mut f64,
    cap: usize,
) -> FhbStatus {
    guard(|| {
        let Some(sol) = sol.as_ref() else {
            return null("sol");
        };
        if m.is_null() || k.is_null() || amplitude.is_null() {
            return null("buffer");
        }
        let coeffs = &sol.inner.coeffs;
        let n = coeffs.amplitudes.len();
        if cap < n {
            return fail(FhbStatus::BufferTooSmall, format!("need {n} elements, got {cap}"));
        }
        for (i, (&(mi, ki), &a)) in coeffs.index_set.entries().iter().zip(&coeffs.amplitudes).enumerate() {
            *m.add(i) = mi;
            *k.add(i) = ki;
            *amplitude.add(i) = a;
        }
        FhbStatus::Ok
    })
}

/// Characteristic exponent `β` of the linear Mathieu equation.
///
/// # Safety
/// `beta` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fhb_mathieu_exponent(q: f64, a: f64, beta: *mut f64) -> FhbStatus {
    guard(|| {
        let Some(beta) = beta.as_mut() else {
            return null("beta");
        };
        match oracles::characteristic_exponent(q, a) {
            Ok(b) => {
                *beta = b;
                FhbStatus::Ok
            }
            Err(e) => RunError::from(e).into(),
        }
    })
}
