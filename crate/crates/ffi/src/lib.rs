//! C ABI for the kdrl laboratory.
//!
//! The surface follows the usual opaque-handle pattern: constructors return a
//! status code and write the handle through an out-pointer, every handle has
//! a `_free`, and the most recent failure message on the calling thread is
//! available via [`kdrl_last_error_message`]. Strings returned by the library
//! are released with [`kdrl_string_free`]. The generated header lands in
//! `include/kdrl.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use kdrl_core::config::{execute_train, load_run_config, Overrides};
use kdrl_core::oracle::run_identity_suite;
use kdrl_core::policy::{load_checkpoint, PolicyParams};
use kdrl_core::tasks::{read_dataset, TaskInstance};
use kdrl_core::trainer::mean_pass_rate;
use kdrl_core::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KdrlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation.
    InvalidArgument = 2,
    /// The config file failed to parse or validate.
    InvalidConfig = 3,
    /// Filesystem problem (missing file, unwritable directory, ...).
    Io = 4,
    /// Checkpoint, dataset, and policy shapes do not fit together.
    Incompatible = 5,
    /// Numeric failure (non-finite loss, enumeration budget, weak teacher).
    Numeric = 6,
    /// Unexpected internal failure; details in the error message.
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let sanitized = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(sanitized));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(error: &Error) -> KdrlStatus {
    match error {
        Error::InvalidVocabulary(_)
        | Error::VocabularyTooSmall { .. }
        | Error::InvalidArgument(_)
        | Error::GroupTooSmall(_) => KdrlStatus::InvalidArgument,
        Error::InvalidConfig(_) | Error::InvalidObjective(_) | Error::EstimatorNotAllowed { .. } => {
            KdrlStatus::InvalidConfig
        }
        Error::Io { .. } | Error::MalformedFile { .. } | Error::Json(_) => KdrlStatus::Io,
        Error::IncompatibleCheckpoint(_) => KdrlStatus::Incompatible,
        Error::NonFiniteParameters(_)
        | Error::NonFiniteLoss { .. }
        | Error::BudgetExceeded { .. }
        | Error::WeakTeacher { .. }
        | Error::EmptyDataset { .. }
        | Error::EmptyBatch(_)
        | Error::MissingTeacherScores => KdrlStatus::Numeric,
    }
}

fn fail(error: Error) -> KdrlStatus {
    let status = status_of(&error);
    set_error(error.to_string());
    status
}

/// Runs a closure with panic containment; panics become `Internal`.
fn guarded(body: impl FnOnce() -> KdrlStatus) -> KdrlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            KdrlStatus::Internal
        }
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, KdrlStatus> {
    if ptr.is_null() {
        set_error("null path argument".into());
        return Err(KdrlStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            Err(KdrlStatus::InvalidArgument)
        }
    }
}

/// Opaque handle: a policy loaded from a checkpoint.
pub struct KdrlPolicy {
    params: PolicyParams,
}

/// Opaque handle: a question dataset.
pub struct KdrlDataset {
    task: TaskInstance,
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn kdrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Most recent error message raised on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kdrl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Load a policy checkpoint.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer. On success `*out` owns the policy and must be released with
/// [`kdrl_policy_free`].
#[no_mangle]
pub unsafe extern "C" fn kdrl_policy_load(
    path: *const c_char,
    out: *mut *mut KdrlPolicy,
) -> KdrlStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return KdrlStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_checkpoint(&path) {
            Ok((params, _, _)) => {
                clear_error();
                *out = Box::into_raw(Box::new(KdrlPolicy { params }));
                KdrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `policy` must be null or a pointer returned by [`kdrl_policy_load`], not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn kdrl_policy_free(policy: *mut KdrlPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Load a dataset file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer. On success `*out` must be released with [`kdrl_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn kdrl_dataset_load(
    path: *const c_char,
    out: *mut *mut KdrlDataset,
) -> KdrlStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer".into());
            return KdrlStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match read_dataset(&path) {
            Ok(task) => {
                clear_error();
                *out = Box::into_raw(Box::new(KdrlDataset { task }));
                KdrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `dataset` must be null or a pointer returned by [`kdrl_dataset_load`],
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kdrl_dataset_free(dataset: *mut KdrlDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of questions in a dataset.
///
/// # Safety
/// `dataset` must be a live handle from [`kdrl_dataset_load`].
#[no_mangle]
pub unsafe extern "C" fn kdrl_dataset_len(dataset: *const KdrlDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).task.questions.len()
}

/// Mean pass rate of a policy over a dataset at `n_samples` decoding runs per
/// question (temperature 1).
///
/// # Safety
/// `policy` and `dataset` must be live handles; `out_rate` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kdrl_eval_mean_pass_rate(
    policy: *const KdrlPolicy,
    dataset: *const KdrlDataset,
    n_samples: u32,
    seed: u64,
    max_len: u32,
    out_rate: *mut f64,
) -> KdrlStatus {
    guarded(|| {
        if policy.is_null() || dataset.is_null() || out_rate.is_null() {
            set_error("null handle or out pointer".into());
            return KdrlStatus::NullArgument;
        }
        let policy = &(*policy).params;
        let task = &(*dataset).task;
        if policy.vocab_size() != task.vocab.size {
            set_error(format!(
                "policy vocabulary {} does not match dataset vocabulary {}",
                policy.vocab_size(),
                task.vocab.size
            ));
            return KdrlStatus::Incompatible;
        }
        match mean_pass_rate(policy, task, n_samples as usize, max_len as usize, seed) {
            Ok(rate) => {
                clear_error();
                *out_rate = rate;
                KdrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run a full training job from a TOML config file, writing the manifest,
/// metrics stream, and checkpoints. `out_dir` (optional) overrides the
/// config's output directory; `out_final_reward_ema` (optional) receives the
/// final smoothed training reward.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string; `out_dir` must be
/// null or a valid NUL-terminated string; `out_final_reward_ema` must be
/// null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdrl_train_from_config(
    config_path: *const c_char,
    out_dir: *const c_char,
    out_final_reward_ema: *mut f64,
) -> KdrlStatus {
    guarded(|| {
        let config_path = match path_arg(config_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let out_override = if out_dir.is_null() {
            None
        } else {
            match path_arg(out_dir) {
                Ok(p) => Some(p),
                Err(status) => return status,
            }
        };
        let run = || -> kdrl_core::Result<f64> {
            let mut config = load_run_config(&config_path)?;
            kdrl_core::config::apply_overrides(
                &mut config,
                &Overrides {
                    out_dir: out_override,
                    ..Overrides::default()
                },
            )?;
            Ok(execute_train(config)?.final_reward_ema)
        };
        match run() {
            Ok(final_reward) => {
                clear_error();
                if !out_final_reward_ema.is_null() {
                    *out_final_reward_ema = final_reward;
                }
                KdrlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run the exact-oracle identity suite. `out_all_passed` (optional) receives
/// the verdict; `out_report_jsonl` (optional) receives a newly allocated
/// JSONL report to be released with [`kdrl_string_free`].
///
/// # Safety
/// Out-pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn kdrl_oracle_check(
    budget: f64,
    seed: u64,
    out_all_passed: *mut bool,
    out_report_jsonl: *mut *mut c_char,
) -> KdrlStatus {
    guarded(|| {
        if budget <= 0.0 || !budget.is_finite() {
            set_error(format!("budget must be finite and > 0, got {budget}"));
            return KdrlStatus::InvalidArgument;
        }
        let report = run_identity_suite(budget, seed);
        if !out_all_passed.is_null() {
            *out_all_passed = report.all_passed;
        }
        if !out_report_jsonl.is_null() {
            match CString::new(report.to_jsonl()) {
                Ok(s) => *out_report_jsonl = s.into_raw(),
                Err(_) => {
                    set_error("report contained an interior NUL".into());
                    return KdrlStatus::Internal;
                }
            }
        }
        clear_error();
        KdrlStatus::Ok
    })
}

/// Release a string allocated by this library.
///
/// # Safety
/// `s` must be null or a pointer produced by this library's `out_*` string
/// parameters, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kdrl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// Keep the header self-contained for the one path type cbindgen can't infer.
#[allow(dead_code)]
fn _path_is_internal(_: &Path) {}
