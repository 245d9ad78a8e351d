//! C ABI over `pal-core`.
//!
//! Every fallible function returns a [`PalStatus`]. On failure the message is
//! kept per thread and can be read with [`pal_last_error_message`]. Objects
//! are opaque handles created by `*_new`/`*_default`/`pal_run` and released
//! with the matching `*_free`. Matrices are dense, row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pal_core::analytic::{one_hot, RlsHead};
use pal_core::harness::{run_pal, RunOutcome};
use pal_core::numerics::Matrix;
use pal_core::verify::{run_verify, VerifyOptions};
use pal_core::{PalError, RunConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numerical = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Recursive ridge classifier over fixed-width features.
pub struct PalRls(RlsHead);

/// Validated run configuration.
pub struct PalConfig(RunConfig);

/// Accuracy matrix and summary metrics of a finished run.
pub struct PalReport(RunOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PalStatus, msg: impl Into<String>) -> PalStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &PalError) -> PalStatus {
    match e {
        PalError::Input(_) => PalStatus::InvalidInput,
        PalError::Numerical(_) => PalStatus::Numerical,
        PalError::Config { .. } | PalError::ConfigAt { .. } => PalStatus::Config,
        PalError::Checkpoint(_) => PalStatus::Checkpoint,
        PalError::Io(_) => PalStatus::Io,
    }
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), PalStatus>) -> PalStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PalStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(PalStatus::Panic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, PalStatus>;
}

impl<T> OrStatus<T> for pal_core::Result<T> {
    fn or_status(self) -> Result<T, PalStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, PalStatus> {
    p.as_ref()
        .ok_or_else(|| fail(PalStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PalStatus> {
    p.as_mut()
        .ok_or_else(|| fail(PalStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PalStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PalStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], PalStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(PalStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(data: *const f64, rows: usize, cols: usize) -> Result<Matrix, PalStatus> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(PalStatus::InvalidInput, "rows * cols overflows"))?;
    Matrix::from_vec(rows, cols, slice(data, len, "features")?.to_vec()).or_status()
}

unsafe fn read_labels(data: *const u32, rows: usize) -> Result<Vec<usize>, PalStatus> {
    Ok(slice(data, rows, "labels")?
        .iter()
        .map(|&l| l as usize)
        .collect())
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), PalStatus> {
    *deref_mut(out, what)? = value;
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next `pal_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a head with no classes and `R = I / reg`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_new(dim: usize, reg: f64, out: *mut *mut PalRls) -> PalStatus {
    guard(|| {
        let head = RlsHead::empty(dim, reg).or_status()?;
        put(out, Box::into_raw(Box::new(PalRls(head))), "out")
    })
}

/// # Safety
/// `head` must be null or a handle from `pal_rls_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_free(head: *mut PalRls) {
    release(head)
}

/// Replaces the head with the closed-form ridge fit of the first task.
/// `features` is `rows × dim`; labels lie in `0..num_classes`.
///
/// # Safety
/// `features` must hold `rows * dim` doubles and `labels` `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_fit_first(
    head: *mut PalRls,
    features: *const f64,
    rows: usize,
    labels: *const u32,
    num_classes: usize,
) -> PalStatus {
    guard(|| {
        let head = deref_mut(head, "head")?;
        let h = matrix(features, rows, head.0.dim())?;
        let y = one_hot(&read_labels(labels, rows)?, num_classes).or_status()?;
        head.0 = RlsHead::init_first(&h, &y, head.0.reg).or_status()?;
        Ok(())
    })
}

/// Adds `count` zero-initialized class columns.
///
/// # Safety
/// `head` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_expand(head: *mut PalRls, count: usize) -> PalStatus {
    guard(|| deref_mut(head, "head")?.0.expand_classes(count).or_status())
}

/// Absorbs a block of labelled rows with the exact recursive update.
///
/// # Safety
/// `features` must hold `rows * dim` doubles and `labels` `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_update(
    head: *mut PalRls,
    features: *const f64,
    rows: usize,
    labels: *const u32,
) -> PalStatus {
    guard(|| {
        let head = deref_mut(head, "head")?;
        let h = matrix(features, rows, head.0.dim())?;
        let y = one_hot(&read_labels(labels, rows)?, head.0.num_classes()).or_status()?;
        head.0.rls_update(&h, &y).or_status()
    })
}

/// # Safety
/// `head` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_num_classes(head: *const PalRls, out: *mut usize) -> PalStatus {
    guard(|| put(out, deref(head, "head")?.0.num_classes(), "out"))
}

/// Arg-max class per row into `out` (`rows` entries).
///
/// # Safety
/// `features` must hold `rows * dim` doubles and `out` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_predict(
    head: *const PalRls,
    features: *const f64,
    rows: usize,
    out: *mut u32,
) -> PalStatus {
    guard(|| {
        let head = deref(head, "head")?;
        let h = matrix(features, rows, head.0.dim())?;
        let predicted = head.0.predict(&h).or_status()?;
        let out = slice_mut(out, rows, "out")?;
        for (o, p) in out.iter_mut().zip(predicted) {
            *o = p as u32;
        }
        Ok(())
    })
}

/// Copies the `dim × num_classes` weight matrix into `out`. When `out_len`
/// is too small nothing is copied, `*needed` is still set and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `out` must hold `out_len` doubles; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_rls_weights(
    head: *const PalRls,
    out: *mut f64,
    out_len: usize,
    needed: *mut usize,
) -> PalStatus {
    guard(|| {
        let w = &deref(head, "head")?.0.weights;
        let len = w.as_slice().len();
        put(needed, len, "needed")?;
        if out_len < len {
            return Err(fail(
                PalStatus::BufferTooSmall,
                format!("weights need {len} doubles, buffer holds {out_len}"),
            ));
        }
        slice_mut(out, len, "out")?.copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_config_default(out: *mut *mut PalConfig) -> PalStatus {
    guard(|| {
        put(
            out,
            Box::into_raw(Box::new(PalConfig(RunConfig::default()))),
            "out",
        )
    })
}

/// Scaled-down configuration that runs in milliseconds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_config_small(out: *mut *mut PalConfig) -> PalStatus {
    guard(|| {
        put(
            out,
            Box::into_raw(Box::new(PalConfig(RunConfig::small()))),
            "out",
        )
    })
}

/// Parses and validates a TOML document (UTF-8, nul-terminated).
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_config_from_toml(
    toml: *const c_char,
    out: *mut *mut PalConfig,
) -> PalStatus {
    guard(|| {
        if toml.is_null() {
            return Err(fail(PalStatus::NullPointer, "toml is null"));
        }
        let src = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| fail(PalStatus::InvalidInput, "config text is not UTF-8"))?;
        let cfg = RunConfig::from_toml_str(src, "<string>").or_status()?;
        put(out, Box::into_raw(Box::new(PalConfig(cfg))), "out")
    })
}

/// Sets `seeds.run_seed`.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pal_config_set_run_seed(config: *mut PalConfig, seed: u64) -> PalStatus {
    guard(|| {
        deref_mut(config, "config")?.0.seeds.run_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pal_config_free(config: *mut PalConfig) {
    release(config)
}

/// Runs the configured method over its stream. Writes nothing to disk.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_run(config: *const PalConfig, out: *mut *mut PalReport) -> PalStatus {
    guard(|| {
        let outcome = run_pal(&deref(config, "config")?.0).or_status()?;
        put(out, Box::into_raw(Box::new(PalReport(outcome))), "out")
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_report_num_tasks(
    report: *const PalReport,
    out: *mut usize,
) -> PalStatus {
    guard(|| put(out, deref(report, "report")?.0.matrix.num_tasks(), "out"))
}

/// Mean of the final accuracy row.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_report_acc(report: *const PalReport, out: *mut f64) -> PalStatus {
    guard(|| put(out, deref(report, "report")?.0.average_accuracy(), "out"))
}

/// Average forgetting. Fails with `InvalidInput` on single-task runs.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_report_fg(report: *const PalReport, out: *mut f64) -> PalStatus {
    guard(|| {
        let fg = deref(report, "report")?.0.matrix.forgetting().or_status()?;
        put(out, fg, "out")
    })
}

/// Accuracy on `task` after training step `step` (both 0-based, `task <= step`).
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_report_accuracy(
    report: *const PalReport,
    task: usize,
    step: usize,
    out: *mut f64,
) -> PalStatus {
    guard(|| {
        let value = deref(report, "report")?
            .0
            .matrix
            .get(task, step)
            .ok_or_else(|| {
                fail(
                    PalStatus::InvalidInput,
                    format!("no entry for task {task} at step {step}"),
                )
            })?;
        put(out, value, "out")
    })
}

/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pal_report_free(report: *mut PalReport) {
    release(report)
}

/// Runs the oracle suite. `seed` may be null for the built-in seed.
/// `*passed` is 1 when every check passed, else 0; the status reflects only
/// whether the suite could run.
///
/// # Safety
/// `seed` must be null or readable; `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pal_verify(seed: *const u64, passed: *mut i32) -> PalStatus {
    guard(|| {
        let report = run_verify(VerifyOptions {
            seed: seed.as_ref().copied(),
            corrupt_update: false,
        });
        if let Some(bad) = report.checks.iter().find(|c| !c.passed) {
            set_error(format!("{} failed: {}", bad.name, bad.detail));
        }
        put(passed, i32::from(report.passed()), "passed")
    })
}
