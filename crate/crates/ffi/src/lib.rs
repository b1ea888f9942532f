//! C ABI over `fbcsf`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_parse`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an `int32_t` status: [`FBCSF_OK`] on success, one of the
//! `FBCSF_ERR_*` codes below, or the library's own error code (10 and up).
//! The message of the most recent failure on the calling thread is available
//! through [`fbcsf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fbcsf::config::RunConfig;
use fbcsf::linearized::{mode_decay_fit, LinearOptions};
use fbcsf::pipeline::{pipeline_exit_code, Pipeline};
use fbcsf::solver::{estimate_extinction, make_initial, run, Trajectory};

pub const FBCSF_OK: i32 = 0;
pub const FBCSF_ERR_NULL: i32 = 1;
pub const FBCSF_ERR_UTF8: i32 = 2;
pub const FBCSF_ERR_RANGE: i32 = 3;
pub const FBCSF_ERR_PANIC: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FBCSF_OK
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            FBCSF_ERR_PANIC
        }
    }
}

fn lib_err(e: fbcsf::Error) -> (i32, String) {
    (e.code(), e.to_string())
}

fn null(what: &str) -> (i32, String) {
    (FBCSF_ERR_NULL, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (i32, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FBCSF_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), (i32, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// Parsed run configuration.
pub struct FbcsfConfig(RunConfig);

/// Result of a solver run.
pub struct FbcsfTrajectory(Trajectory);

/// One row of trajectory diagnostics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FbcsfSample {
    pub t: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Angular width of the arc.
    pub big_theta: f64,
    /// Enclosed area between the curve and the barrier.
    pub area: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

/// Extinction time and point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FbcsfExtinction {
    pub t_ext: f64,
    pub x: f64,
    pub y: f64,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fbcsf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread (empty after a success).
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn fbcsf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_config_parse(text: *const c_char, out: *mut *mut FbcsfConfig) -> i32 {
    guard(|| {
        let text = str_arg(text, "text")?;
        let cfg = RunConfig::parse(text).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(FbcsfConfig(cfg))), "out")
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from [`fbcsf_config_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_config_free(cfg: *mut FbcsfConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Writes the canonical text of `cfg` into `buf` (NUL-terminated, truncated to
/// `len`) and the full length without the terminator into `needed`.
///
/// # Safety
/// `buf` must hold `len` bytes (or be null with `len == 0`).
#[no_mangle]
pub unsafe extern "C" fn fbcsf_config_text(cfg: *const FbcsfConfig, buf: *mut c_char, len: usize, needed: *mut usize) -> i32 {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let text = cfg.0.to_text();
        if !needed.is_null() {
            needed.write(text.len());
        }
        if len > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            let n = text.len().min(len - 1);
            std::ptr::copy_nonoverlapping(text.as_ptr().cast(), buf, n);
            buf.add(n).write(0);
        }
        Ok(())
    })
}

/// Builds the initial data of `cfg` and runs the solver.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_simulate(cfg: *const FbcsfConfig, out: *mut *mut FbcsfTrajectory) -> i32 {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let domain = cfg.domain.build().map_err(lib_err)?;
        let s0 = make_initial(&domain, cfg.initial.r0, &cfg.perturbation(), cfg.initial.theta_window, cfg.solver.n)
            .map_err(lib_err)?;
        let traj = run(&s0, &domain, &cfg.solver.options).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(FbcsfTrajectory(traj))), "out")
    })
}

/// Releases a trajectory. Null is ignored.
///
/// # Safety
/// `traj` must come from [`fbcsf_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_trajectory_free(traj: *mut FbcsfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of diagnostics rows (0 for a null handle).
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_trajectory_len(traj: *const FbcsfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.samples.len())
}

/// Copies diagnostics row `index`.
///
/// # Safety
/// `traj` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_trajectory_sample(traj: *const FbcsfTrajectory, index: usize, out: *mut FbcsfSample) -> i32 {
    guard(|| {
        let traj = &traj.as_ref().ok_or_else(|| null("traj"))?.0;
        let s = traj
            .samples
            .get(index)
            .ok_or_else(|| (FBCSF_ERR_RANGE, format!("sample {index} of {}", traj.samples.len())))?;
        let row = FbcsfSample {
            t: s.t,
            theta_lo: s.theta_lo,
            theta_hi: s.theta_hi,
            big_theta: s.big_theta,
            area: s.area,
            kappa_min: s.kappa_min,
            kappa_max: s.kappa_max,
        };
        write_out(out, row, "out")
    })
}

/// Estimates the extinction time and point of a finished run.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_estimate_extinction(
    cfg: *const FbcsfConfig,
    traj: *const FbcsfTrajectory,
    out: *mut FbcsfExtinction,
) -> i32 {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let traj = &traj.as_ref().ok_or_else(|| null("traj"))?.0;
        let domain = cfg.domain.build().map_err(lib_err)?;
        let est = estimate_extinction(traj, &domain).map_err(lib_err)?;
        let row = FbcsfExtinction {
            t_ext: est.t_ext,
            x: est.p_star[0],
            y: est.p_star[1],
        };
        write_out(out, row, "out")
    })
}

/// Fitted decay exponent of `cos(j theta)` under the linearized flow
/// (`j^2 - 2` in the continuum).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_linear_mode_exponent(j: usize, n: usize, horizon: f64, steps: usize, out: *mut f64) -> i32 {
    guard(|| {
        if n < 16 || j > n / 8 || steps == 0 || !(horizon > 0.0) || horizon / steps as f64 > std::f64::consts::PI / n as f64 {
            return Err((FBCSF_ERR_RANGE, format!("unresolved mode {j} on {n} cells with {steps} steps")));
        }
        let fit = mode_decay_fit(j, &LinearOptions { n, horizon, steps }).map_err(lib_err)?;
        write_out(out, fit.exponent, "out")
    })
}

/// Runs every enabled stage into `out_dir` (the configured directory when
/// null) and stores the CLI exit status in `exit_code`: 0 when all enabled
/// acceptance flags pass, otherwise the failing stage's code or 4. A failing
/// stage also makes the call itself return that stage's library error.
///
/// # Safety
/// `cfg` must be a live handle, `out_dir` null or NUL-terminated, `exit_code` valid.
#[no_mangle]
pub unsafe extern "C" fn fbcsf_run_pipeline(cfg: *const FbcsfConfig, out_dir: *const c_char, exit_code: *mut i32) -> i32 {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(Path::new(str_arg(out_dir, "out_dir")?))
        };
        let result = Pipeline::new(cfg, dir).run_all(None);
        let code = pipeline_exit_code(&result, false);
        write_out(exit_code, code, "exit_code")?;
        result.map(|_| ()).map_err(|e| (e.source.code(), e.to_string()))
    })
}
