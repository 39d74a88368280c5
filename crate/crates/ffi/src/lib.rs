//! C ABI for the averseek toolkit.
//!
//! The surface follows the usual handle-and-status pattern: opaque handles
//! own Rust objects, every fallible call returns an [`AverseekStatus`], and
//! the last error message is kept per thread for retrieval with
//! [`averseek_last_error_message`]. The generated header lives in
//! `include/averseek.h`.
//!
//! Handles must be released with their matching `_free` function exactly
//! once; all pointers must be non-null unless documented otherwise.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use averseek::classical;
use averseek::quad;
use averseek::scenario::{self, HarnessError, ScenarioConfig};
use averseek::source::{self, AveragedObjective2D};

/// Status codes mirroring the CLI exit-code contract (0 ok, 2 config,
/// 3 numerical), with FFI-specific argument errors on top.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverseekStatus {
    Ok = 0,
    ConfigError = 2,
    NumericalError = 3,
    NullPointer = 4,
    InvalidArgument = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &HarnessError) -> AverseekStatus {
    set_error(&err.to_string());
    match err.exit_code() {
        2 => AverseekStatus::ConfigError,
        _ => AverseekStatus::NumericalError,
    }
}

fn guard<F: FnOnce() -> AverseekStatus>(f: F) -> AverseekStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            AverseekStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, AverseekStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(AverseekStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        AverseekStatus::InvalidArgument
    })
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn averseek_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Opaque scenario handle.
pub struct AverseekScenario {
    cfg: ScenarioConfig,
}

/// Opaque result table: labelled columns of sampled values.
pub struct AverseekTable {
    columns: Vec<CString>,
    rows: Vec<Vec<f64>>,
}

/// Parses a scenario from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn averseek_scenario_from_json(
    json: *const c_char,
    out: *mut *mut AverseekScenario,
) -> AverseekStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AverseekStatus::NullPointer;
        }
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match ScenarioConfig::from_json(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(AverseekScenario { cfg }));
                AverseekStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Builds one of the built-in figure scenarios
/// ("fig2a", "fig2b", "fig3", "fig4-center", "fig4-right").
///
/// # Safety
/// `figure_id` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn averseek_scenario_builtin(
    figure_id: *const c_char,
    out: *mut *mut AverseekScenario,
) -> AverseekStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AverseekStatus::NullPointer;
        }
        let id = match str_arg(figure_id) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match ScenarioConfig::builtin(id) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(AverseekScenario { cfg }));
                AverseekStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Runs the scenario and returns the sampled trajectory table.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn averseek_scenario_run(
    scenario: *const AverseekScenario,
    out: *mut *mut AverseekTable,
) -> AverseekStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            set_error("null handle");
            return AverseekStatus::NullPointer;
        }
        let cfg = &(*scenario).cfg;
        match scenario::run_scenario_in_memory(cfg) {
            Ok((table, _summary)) => {
                let columns = table
                    .columns
                    .iter()
                    .map(|c| CString::new(c.as_str()).unwrap_or_default())
                    .collect();
                *out = Box::into_raw(Box::new(AverseekTable {
                    columns,
                    rows: table.rows,
                }));
                AverseekStatus::Ok
            }
            Err(err) => status_of(&err),
        }
    })
}

/// Runs the scenario and writes its artifacts under `out_dir`.
///
/// # Safety
/// `scenario` must be a live handle; `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn averseek_scenario_write(
    scenario: *const AverseekScenario,
    out_dir: *const c_char,
) -> AverseekStatus {
    guard(|| {
        if scenario.is_null() {
            set_error("null handle");
            return AverseekStatus::NullPointer;
        }
        let dir = match str_arg(out_dir) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match scenario::run_scenario(&(*scenario).cfg, Path::new(dir)) {
            Ok(_) => AverseekStatus::Ok,
            Err(err) => status_of(&err),
        }
    })
}

/// # Safety
/// `scenario` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn averseek_scenario_free(scenario: *mut AverseekScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `table` must be a live handle (or null, a no-op).
#[no_mangle]
pub unsafe extern "C" fn averseek_table_rows(table: *const AverseekTable) -> usize {
    if table.is_null() {
        return 0;
    }
    (*table).rows.len()
}

/// # Safety
/// `table` must be a live handle (or null, a no-op).
#[no_mangle]
pub unsafe extern "C" fn averseek_table_cols(table: *const AverseekTable) -> usize {
    if table.is_null() {
        return 0;
    }
    (*table).columns.len()
}

/// Borrowed column label; valid while the table lives. Null when out of
/// range.
///
/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn averseek_table_column_name(
    table: *const AverseekTable,
    col: usize,
) -> *const c_char {
    if table.is_null() {
        return std::ptr::null();
    }
    let table = &*table;
    match table.columns.get(col) {
        Some(name) => name.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Reads one cell; NaN on out-of-range indices.
///
/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn averseek_table_value(
    table: *const AverseekTable,
    row: usize,
    col: usize,
) -> f64 {
    if table.is_null() {
        return f64::NAN;
    }
    let table = &*table;
    table
        .rows
        .get(row)
        .and_then(|r| r.get(col))
        .copied()
        .unwrap_or(f64::NAN)
}

/// Copies one column into a caller buffer of `len` doubles; `len` must be at
/// least the row count.
///
/// # Safety
/// `table` must be a live handle and `dst` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn averseek_table_copy_column(
    table: *const AverseekTable,
    col: usize,
    dst: *mut f64,
    len: usize,
) -> AverseekStatus {
    guard(|| {
        if table.is_null() || dst.is_null() {
            set_error("null handle or buffer");
            return AverseekStatus::NullPointer;
        }
        let t = &*table;
        if col >= t.columns.len() {
            set_error("column index out of range");
            return AverseekStatus::InvalidArgument;
        }
        if len < t.rows.len() {
            set_error("destination buffer too small");
            return AverseekStatus::InvalidArgument;
        }
        for (i, row) in t.rows.iter().enumerate() {
            *dst.add(i) = row[col];
        }
        AverseekStatus::Ok
    })
}

/// # Safety
/// `table` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn averseek_table_free(table: *mut AverseekTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Steady-state output of the scalar demonstration problem.
#[no_mangle]
pub extern "C" fn averseek_demo_output(theta: f64) -> f64 {
    classical::demo_psi(theta)
}

/// Semicircle-kernel average of the scalar demonstration output
/// (quadrature-backed). NaN on invalid radius.
#[no_mangle]
pub extern "C" fn averseek_demo_output_averaged(a: f64, theta: f64) -> f64 {
    quad::semicircle_average(classical::demo_psi, theta, a, 64).unwrap_or(f64::NAN)
}

/// Planar demonstration signal.
#[no_mangle]
pub extern "C" fn averseek_demo_signal(x: f64, y: f64) -> f64 {
    source::demo_signal([x, y])
}

/// Disk average of the planar demonstration signal.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn averseek_demo_signal_averaged(
    a: f64,
    x: f64,
    y: f64,
    out: *mut f64,
) -> AverseekStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AverseekStatus::NullPointer;
        }
        let obj = match AveragedObjective2D::disk(source::demo_signal, a, 1.0) {
            Ok(obj) => obj,
            Err(err) => {
                set_error(&err.to_string());
                return AverseekStatus::ConfigError;
            }
        };
        match obj.averaged([x, y]) {
            Ok(v) => {
                *out = v;
                AverseekStatus::Ok
            }
            Err(err) => {
                set_error(&err.to_string());
                AverseekStatus::NumericalError
            }
        }
    })
}

/// Runs the identity-check battery with the given threshold multiplier.
/// Writes the number of failed checks to `failed` when non-null.
///
/// # Safety
/// `failed` must be null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn averseek_verify(tol_scale: f64, failed: *mut usize) -> AverseekStatus {
    guard(|| match scenario::run_verify(tol_scale) {
        Ok(checks) => {
            let bad = checks.iter().filter(|c| !c.passed).count();
            if !failed.is_null() {
                *failed = bad;
            }
            if bad == 0 {
                AverseekStatus::Ok
            } else {
                set_error("verification battery failed");
                AverseekStatus::NumericalError
            }
        }
        Err(err) => status_of(&err),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenario_runs_through_the_c_abi() {
        unsafe {
            let id = CString::new("fig2a").unwrap();
            let mut sc: *mut AverseekScenario = std::ptr::null_mut();
            assert_eq!(
                averseek_scenario_builtin(id.as_ptr(), &mut sc),
                AverseekStatus::Ok
            );

            // Shorten the run for the test.
            (*sc).cfg.horizon = 1.0;
            (*sc).cfg.integrator.output_points = 9;

            let mut table: *mut AverseekTable = std::ptr::null_mut();
            assert_eq!(averseek_scenario_run(sc, &mut table), AverseekStatus::Ok);
            assert_eq!(averseek_table_rows(table), 9);
            assert!(averseek_table_cols(table) >= 7);

            let name = averseek_table_column_name(table, 0);
            assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "t");

            let mut buf = vec![0.0f64; 9];
            assert_eq!(
                averseek_table_copy_column(table, 0, buf.as_mut_ptr(), buf.len()),
                AverseekStatus::Ok
            );
            assert_eq!(buf[0], 0.0);
            assert!(buf.windows(2).all(|w| w[1] > w[0]));

            averseek_table_free(table);
            averseek_scenario_free(sc);
        }
    }

    #[test]
    fn bad_json_reports_config_error_with_message() {
        unsafe {
            let text = CString::new("{\"schema_version\": 1}").unwrap();
            let mut sc: *mut AverseekScenario = std::ptr::null_mut();
            let status = averseek_scenario_from_json(text.as_ptr(), &mut sc);
            assert_eq!(status, AverseekStatus::ConfigError);
            let mut buf = vec![0i8; 256];
            let len = averseek_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len());
            assert!(len > 0);
            let msg = CStr::from_ptr(buf.as_ptr() as *const c_char)
                .to_str()
                .unwrap();
            assert!(msg.contains("missing field"), "{msg}");
        }
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            let mut sc: *mut AverseekScenario = std::ptr::null_mut();
            assert_eq!(
                averseek_scenario_from_json(std::ptr::null(), &mut sc),
                AverseekStatus::NullPointer
            );
            assert_eq!(
                averseek_scenario_run(std::ptr::null(), std::ptr::null_mut()),
                AverseekStatus::NullPointer
            );
            assert_eq!(averseek_table_rows(std::ptr::null()), 0);
            averseek_scenario_free(std::ptr::null_mut());
            averseek_table_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn demo_evaluators_match_the_library() {
        assert_eq!(averseek_demo_output(0.0), 10.0);
        assert!((averseek_demo_output_averaged(1.0, 0.0) - 10.175).abs() < 1e-11);
        assert_eq!(averseek_demo_signal(0.0, 0.0), 8.0);
        unsafe {
            let mut v = 0.0;
            assert_eq!(
                averseek_demo_signal_averaged(1.0, 0.0, 0.0, &mut v),
                AverseekStatus::Ok
            );
            assert!(v > 5.0 && v < 8.0, "averaged peak {v}");
            assert_eq!(
                averseek_demo_signal_averaged(-1.0, 0.0, 0.0, &mut v),
                AverseekStatus::ConfigError
            );
        }
    }

    #[test]
    fn scenario_write_emits_artifacts() {
        unsafe {
            let id = CString::new("fig2a").unwrap();
            let mut sc: *mut AverseekScenario = std::ptr::null_mut();
            assert_eq!(
                averseek_scenario_builtin(id.as_ptr(), &mut sc),
                AverseekStatus::Ok
            );
            (*sc).cfg.horizon = 1.0;
            (*sc).cfg.integrator.output_points = 9;

            let dir = std::env::temp_dir().join(format!("averseek-ffi-{}", std::process::id()));
            let dir_str = CString::new(dir.to_str().unwrap()).unwrap();
            assert_eq!(
                averseek_scenario_write(sc, dir_str.as_ptr()),
                AverseekStatus::Ok
            );
            assert!(dir.join("fig2a/trajectory.csv").exists());
            assert!(dir.join("fig2a/summary.json").exists());
            std::fs::remove_dir_all(&dir).ok();
            averseek_scenario_free(sc);
        }
    }

    #[test]
    fn generated_header_exists_and_declares_the_surface() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("include")
            .join("averseek.h");
        let text = std::fs::read_to_string(&header).expect("header generated by build script");
        for symbol in [
            "averseek_scenario_from_json",
            "averseek_scenario_run",
            "averseek_table_copy_column",
            "averseek_last_error_message",
            "AverseekStatus",
        ] {
            assert!(text.contains(symbol), "header missing {symbol}");
        }
    }
}
