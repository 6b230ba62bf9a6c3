//! C ABI for the `steap` library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`SteapStatus`]; on failure
//! a message is available from [`steap_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Vector2;
use steap::bench::{problem_for_seed, BenchConfig};
use steap::env::SignedDistanceField;
use steap::runtime::{compute_metrics, run, Mode, RunRecord, SimConfig};
use steap::SteapError;

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numerical = 5,
    /// The library panicked; the handle arguments should be considered unusable.
    Panic = 6,
}

/// Closed-loop mode of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SteapMode {
    OpenLoop = 0,
    Slap = 1,
    Steap = 2,
}

fn mode_from_raw(raw: u32) -> Result<Mode, (SteapStatus, String)> {
    match raw {
        x if x == SteapMode::OpenLoop as u32 => Ok(Mode::OpenLoop),
        x if x == SteapMode::Slap as u32 => Ok(Mode::Slap),
        x if x == SteapMode::Steap as u32 => Ok(Mode::Steap),
        _ => Err((SteapStatus::InvalidArgument, format!("unknown mode {raw}"))),
    }
}

/// Summary of a finished run. Estimation fields are NaN when the mode has none.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteapMetrics {
    pub success: bool,
    pub steps: usize,
    pub goal_err_trans: f64,
    pub goal_err_rot: f64,
    pub est_err_trans: f64,
    pub est_err_rot: f64,
    pub meas_err_trans: f64,
    pub mean_step_time: f64,
}

/// Benchmark configuration (problem template, world generator and sweep settings).
pub struct SteapConfig(BenchConfig);

/// Record of one closed-loop run.
pub struct SteapRun(RunRecord);

/// Signed distance field over a 2D grid.
pub struct SteapSdf(SignedDistanceField);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &SteapError) -> SteapStatus {
    match e {
        SteapError::Parse(_) => SteapStatus::Parse,
        SteapError::Io(_) => SteapStatus::Io,
        SteapError::NonFiniteResidual { .. } | SteapError::RankDeficient(_) => SteapStatus::Numerical,
        _ => SteapStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SteapStatus, String)>) -> SteapStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SteapStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SteapStatus::Panic
        }
    }
}

fn lib_err(e: SteapError) -> (SteapStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SteapStatus, String) {
    (SteapStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, (SteapStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SteapStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SteapStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), (SteapStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn steap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn steap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn steap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default benchmark configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn steap_config_default(out: *mut *mut SteapConfig) -> SteapStatus {
    guard(|| write_out(out, SteapConfig(BenchConfig::default())))
}

/// Parses a TOML configuration; missing keys take their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steap_config_from_toml(toml: *const c_char, out: *mut *mut SteapConfig) -> SteapStatus {
    guard(|| {
        let text = read_str(toml, "toml")?;
        let cfg = BenchConfig::from_toml(text).map_err(lib_err)?;
        write_out(out, SteapConfig(cfg))
    })
}

/// Serializes a configuration to TOML; free the result with `steap_string_free`.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steap_config_to_toml(config: *const SteapConfig, out: *mut *mut c_char) -> SteapStatus {
    guard(|| {
        let cfg = borrow(config, "config")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = cfg.0.to_toml().map_err(lib_err)?;
        *out = CString::new(text)
            .map_err(|_| (SteapStatus::InvalidArgument, "embedded NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn steap_config_free(config: *mut SteapConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one episode on the world generated for `seed`; `mode` is a `SteapMode` value.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steap_run(
    config: *const SteapConfig,
    mode: u32,
    seed: u64,
    n_dyn: f64,
    n_cam: f64,
    out: *mut *mut SteapRun,
) -> SteapStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.0;
        let mode = mode_from_raw(mode)?;
        let problem = problem_for_seed(cfg, seed).map_err(lib_err)?;
        let sim = SimConfig {
            n_dyn,
            n_cam,
            seed,
            exec_substeps: cfg.sweep.exec_substeps,
        };
        let record = run(mode, &problem, &sim).map_err(lib_err)?;
        write_out(out, SteapRun(record))
    })
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steap_run_metrics(run: *const SteapRun, out: *mut SteapMetrics) -> SteapStatus {
    guard(|| {
        let rec = &borrow(run, "run")?.0;
        let out = out.as_mut().ok_or_else(|| null("output pointer"))?;
        let m = compute_metrics(rec).map_err(lib_err)?;
        *out = SteapMetrics {
            success: m.success,
            steps: rec.steps.len(),
            goal_err_trans: m.goal_err_trans,
            goal_err_rot: m.goal_err_rot,
            est_err_trans: m.est_err_trans.unwrap_or(f64::NAN),
            est_err_rot: m.est_err_rot.unwrap_or(f64::NAN),
            meas_err_trans: m.meas_err_trans.unwrap_or(f64::NAN),
            mean_step_time: m.mean_step_time,
        };
        Ok(())
    })
}

/// Number of configurations on the ground-truth trajectory (start included).
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn steap_run_len(run: *const SteapRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.ground_truth.len())
}

/// Writes ground-truth configuration `index` as `[x, y, theta, q1, ..]` into `out`.
///
/// `capacity` is the length of `out`; `written` receives the configuration size.
///
/// # Safety
/// `run` must be a live handle, `out` must hold `capacity` doubles and `written` be valid.
#[no_mangle]
pub unsafe extern "C" fn steap_run_ground_truth(
    run: *const SteapRun,
    index: usize,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> SteapStatus {
    guard(|| {
        let rec = &borrow(run, "run")?.0;
        if out.is_null() || written.is_null() {
            return Err(null("output pointer"));
        }
        let state = rec.ground_truth.states.get(index).ok_or_else(|| {
            (
                SteapStatus::InvalidArgument,
                format!("index {index} outside trajectory of {}", rec.ground_truth.len()),
            )
        })?;
        let c = &state.config;
        let mut values = Vec::with_capacity(c.tangent_dim());
        if let Some(b) = &c.base {
            values.extend([b.x, b.y, b.yaw]);
        }
        values.extend(c.arm.iter());
        if capacity < values.len() {
            return Err((
                SteapStatus::InvalidArgument,
                format!("buffer of {capacity} for {} values", values.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(&values);
        *written = values.len();
        Ok(())
    })
}

/// Serializes the full run record to JSON; free the result with `steap_string_free`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steap_run_to_json(run: *const SteapRun, out: *mut *mut c_char) -> SteapStatus {
    guard(|| {
        let rec = &borrow(run, "run")?.0;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let text = rec.to_json().map_err(lib_err)?;
        *out = CString::new(text)
            .map_err(|_| (SteapStatus::InvalidArgument, "embedded NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn steap_run_free(run: *mut SteapRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Signed distance field of a row-major occupancy grid (non-zero = occupied).
///
/// `origin_x`, `origin_y` locate the centre of cell (0, 0).
///
/// # Safety
/// `occupied` must hold `nx * ny` bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steap_sdf_from_occupancy(
    occupied: *const u8,
    nx: usize,
    ny: usize,
    origin_x: f64,
    origin_y: f64,
    cell_size: f64,
    out: *mut *mut SteapSdf,
) -> SteapStatus {
    guard(|| {
        if occupied.is_null() {
            return Err(null("occupied"));
        }
        let cells = nx
            .checked_mul(ny)
            .ok_or_else(|| (SteapStatus::InvalidArgument, "grid too large".to_string()))?;
        let occ: Vec<bool> = std::slice::from_raw_parts(occupied, cells).iter().map(|&b| b != 0).collect();
        let sdf = SignedDistanceField::from_occupancy(&occ, nx, ny, [origin_x, origin_y], cell_size)
            .map_err(lib_err)?;
        write_out(out, SteapSdf(sdf))
    })
}

/// Interpolated distance and gradient at `(x, y)`. `gradient` may be NULL.
///
/// # Safety
/// `sdf` must be a live handle, `distance` valid and `gradient` NULL or two doubles.
#[no_mangle]
pub unsafe extern "C" fn steap_sdf_query(
    sdf: *const SteapSdf,
    x: f64,
    y: f64,
    distance: *mut f64,
    gradient: *mut f64,
) -> SteapStatus {
    guard(|| {
        let sdf = &borrow(sdf, "sdf")?.0;
        let d = distance.as_mut().ok_or_else(|| null("distance"))?;
        let q = sdf.query(&Vector2::new(x, y));
        *d = q.distance;
        if !gradient.is_null() {
            std::slice::from_raw_parts_mut(gradient, 2).copy_from_slice(&[q.gradient.x, q.gradient.y]);
        }
        Ok(())
    })
}

/// # Safety
/// `sdf` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn steap_sdf_free(sdf: *mut SteapSdf) {
    if !sdf.is_null() {
        drop(Box::from_raw(sdf));
    }
}
