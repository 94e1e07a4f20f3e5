//! C ABI over the conformal heat flow library.
//!
//! Handles are opaque pointers created and destroyed here; never free them
//! with anything but the matching `*_free`. Functions that can fail return a
//! status: 0 success, 2 numerical blow-up, 3 configuration or I/O error,
//! 4 solver failure. The message behind the most recent nonzero status on the
//! current thread is available through `chf_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use chf::config::RunConfig;
use chf::diagnostics::{energy, volume};
use chf::experiment::{compare_baseline, run_experiment};
use chf::flow::{step, FlowState};
use chf::ChfError;

pub const CHF_OK: i32 = 0;
pub const CHF_ERR_DIVERGED: i32 = 2;
pub const CHF_ERR_CONFIG: i32 = 3;
pub const CHF_ERR_SOLVER: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
}

fn fail(err: &ChfError) -> i32 {
    set_error(&err.to_string());
    err.exit_code()
}

/// Run a closure, converting panics into a solver-class error so unwinding
/// never crosses the ABI.
fn guarded<T>(fallback: T, body: impl FnOnce() -> T) -> T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(v) => v,
        Err(_) => {
            set_error("internal panic");
            fallback
        }
    }
}

/// Parsed run configuration.
pub struct ChfConfig {
    text: String,
    overrides: Vec<(String, String)>,
    built: RunConfig,
}

/// A stepping simulation: one flow state plus its grid and parameters.
pub struct ChfSim {
    cfg: RunConfig,
    state: FlowState,
    dead: bool,
}

/// Copy the most recent error message on this thread into `buf` (NUL
/// terminated, truncated to `cap` bytes) and return the full message length.
/// A `buf` of NULL or `cap` of 0 just returns the length.
///
/// # Safety
/// `buf`, when non-NULL, must point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn chf_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, ChfError> {
    if p.is_null() {
        return Err(ChfError::Config("NULL string argument".into()));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| ChfError::Config("string argument is not valid UTF-8".into()))
}

fn build_config(text: String, overrides: Vec<(String, String)>) -> Result<ChfConfig, ChfError> {
    let built = RunConfig::from_text(&text, &overrides)?;
    Ok(ChfConfig { text, overrides, built })
}

/// Load a configuration file. Returns NULL on failure (see `chf_last_error`).
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn chf_config_load(path: *const c_char) -> *mut ChfConfig {
    guarded(std::ptr::null_mut(), || {
        let result = (|| {
            let path = unsafe { cstr(path) }?;
            let text = std::fs::read_to_string(Path::new(path))?;
            build_config(text, Vec::new())
        })();
        match result {
            Ok(cfg) => Box::into_raw(Box::new(cfg)),
            Err(e) => {
                fail(&e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Parse a configuration from text instead of a file. Returns NULL on failure.
///
/// # Safety
/// `text` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn chf_config_parse(text: *const c_char) -> *mut ChfConfig {
    guarded(std::ptr::null_mut(), || {
        let result = (|| build_config(unsafe { cstr(text) }?.to_string(), Vec::new()))();
        match result {
            Ok(cfg) => Box::into_raw(Box::new(cfg)),
            Err(e) => {
                fail(&e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Apply one `key = value` override (key as on the command line, e.g. "dt" or
/// "params.dt"). The whole configuration is revalidated.
///
/// # Safety
/// `cfg` must be a live handle from `chf_config_load`/`chf_config_parse`;
/// `key` and `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn chf_config_override(
    cfg: *mut ChfConfig,
    key: *const c_char,
    value: *const c_char,
) -> i32 {
    guarded(CHF_ERR_SOLVER, || {
        let Some(cfg) = (unsafe { cfg.as_mut() }) else {
            set_error("NULL config handle");
            return CHF_ERR_CONFIG;
        };
        let result = (|| {
            let key = unsafe { cstr(key) }?.to_string();
            let value = unsafe { cstr(value) }?.to_string();
            let mut overrides = cfg.overrides.clone();
            overrides.push((key, value));
            build_config(cfg.text.clone(), overrides)
        })();
        match result {
            Ok(next) => {
                *cfg = next;
                CHF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// # Safety
/// `cfg` must be NULL or a live handle; it is invalid after this call.
#[no_mangle]
pub unsafe extern "C" fn chf_config_free(cfg: *mut ChfConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Create a simulation positioned at t = 0 with the configured scenario.
/// Returns NULL on failure.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn chf_sim_new(cfg: *const ChfConfig) -> *mut ChfSim {
    guarded(std::ptr::null_mut(), || {
        let Some(cfg) = (unsafe { cfg.as_ref() }) else {
            set_error("NULL config handle");
            return std::ptr::null_mut();
        };
        let run_cfg = cfg.built.clone();
        let result = (|| {
            let f0 = run_cfg.scenario.build_initial_data(&run_cfg.geometry, &run_cfg.target)?;
            FlowState::new(f0, &run_cfg.geometry)
        })();
        match result {
            Ok(state) => Box::into_raw(Box::new(ChfSim { cfg: run_cfg, state, dead: false })),
            Err(e) => {
                fail(&e);
                std::ptr::null_mut()
            }
        }
    })
}

/// Advance the simulation by `n` time steps of the configured dt.
///
/// # Safety
/// `sim` must be a live handle from `chf_sim_new`.
#[no_mangle]
pub unsafe extern "C" fn chf_sim_step(sim: *mut ChfSim, n: u64) -> i32 {
    guarded(CHF_ERR_SOLVER, || {
        let Some(sim) = (unsafe { sim.as_mut() }) else {
            set_error("NULL simulation handle");
            return CHF_ERR_CONFIG;
        };
        if sim.dead {
            set_error("simulation already diverged");
            return CHF_ERR_DIVERGED;
        }
        for _ in 0..n {
            if let Err(e) = step(&mut sim.state, &sim.cfg.params, &sim.cfg.geometry, &sim.cfg.target)
            {
                if e.exit_code() == CHF_ERR_DIVERGED {
                    sim.dead = true;
                }
                return fail(&e);
            }
        }
        CHF_OK
    })
}

/// Current simulation time; NaN for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chf_sim_time(sim: *const ChfSim) -> f64 {
    match unsafe { sim.as_ref() } {
        Some(s) => s.state.t,
        None => f64::NAN,
    }
}

/// Dirichlet energy of the current map; NaN for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chf_sim_energy(sim: *const ChfSim) -> f64 {
    guarded(f64::NAN, || match unsafe { sim.as_ref() } {
        Some(s) => energy(&s.state.f, &s.cfg.geometry).unwrap_or(f64::NAN),
        None => f64::NAN,
    })
}

/// Volume of the evolving metric; NaN for a NULL handle.
///
/// # Safety
/// `sim` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chf_sim_volume(sim: *const ChfSim) -> f64 {
    guarded(f64::NAN, || match unsafe { sim.as_ref() } {
        Some(s) => volume(&s.state.u, &s.cfg.geometry),
        None => f64::NAN,
    })
}

/// # Safety
/// `sim` must be NULL or a live handle; it is invalid after this call.
#[no_mangle]
pub unsafe extern "C" fn chf_sim_free(sim: *mut ChfSim) {
    if !sim.is_null() {
        drop(unsafe { Box::from_raw(sim) });
    }
}

/// Run the full experiment for this configuration, writing artifacts to the
/// configured output directory. Returns 0, or 2 if the run diverged (partial
/// artifacts are kept), or an error status.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn chf_run_experiment(cfg: *const ChfConfig) -> i32 {
    guarded(CHF_ERR_SOLVER, || {
        let Some(cfg) = (unsafe { cfg.as_ref() }) else {
            set_error("NULL config handle");
            return CHF_ERR_CONFIG;
        };
        match run_experiment(&cfg.built) {
            Ok(summary) if summary.diverged() => {
                set_error("run diverged; partial artifacts kept");
                CHF_ERR_DIVERGED
            }
            Ok(_) => CHF_OK,
            Err(e) => fail(&e),
        }
    })
}

/// Run the conformal-vs-classic comparison for this configuration.
///
/// # Safety
/// `cfg` must be a live config handle.
#[no_mangle]
pub unsafe extern "C" fn chf_compare_baseline(cfg: *const ChfConfig) -> i32 {
    guarded(CHF_ERR_SOLVER, || {
        let Some(cfg) = (unsafe { cfg.as_ref() }) else {
            set_error("NULL config handle");
            return CHF_ERR_CONFIG;
        };
        match compare_baseline(&cfg.built) {
            Ok(_) => CHF_OK,
            Err(e) => fail(&e),
        }
    })
}
