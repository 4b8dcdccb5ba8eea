//! C ABI over `freehand`.
//!
//! Every fallible call returns an [`FhStatus`]; on failure the message is
//! available from [`fh_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles released by their `_free` function, and
//! strings returned by the library are released with [`fh_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use freehand::analysis::{
    concentrability_per_step, concentrability_per_trajectory, instance_pair_kl, lower_bound_instance, prop2_instance,
    BoundKind,
};
use freehand::harness::config::{ExperimentConfig, InstanceSpec};
use freehand::harness::instances::{build_instance, ExperimentInstance};
use freehand::harness::{fit_rate, run_experiment};
use freehand::mdp::{trajectory_distribution, DEFAULT_ENUMERATION_CAP};
use freehand::preference::{kappa, Link, PreferenceDataset};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FhStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or parameters rejected by validation.
    InvalidArgument = 3,
    /// The computation itself failed (enumeration cap, non-convergence, ...).
    Runtime = 4,
    Panic = 5,
}

/// An instance with its data laws and comparator policy.
pub struct FhInstance(ExperimentInstance);

/// A trajectory-comparison dataset.
pub struct FhDataset(PreferenceDataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FhStatus, String);

impl From<freehand::Error> for Failure {
    fn from(e: freehand::Error) -> Self {
        use freehand::Error as E;
        let status = match e {
            E::InvalidParams(_)
            | E::InvalidMdp(_)
            | E::InvalidPolicy(_)
            | E::InvalidReward(_)
            | E::InvalidEpsilon(_)
            | E::InvalidDelta(_)
            | E::InvalidDataset(_)
            | E::Parse(_)
            | E::Json(_) => FhStatus::InvalidArgument,
            _ => FhStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(FhStatus::InvalidArgument, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FhStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside freehand".into());
            FhStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(FhStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(FhStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// owned by the library and valid until the next failing call.
#[no_mangle]
pub extern "C" fn fh_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds an instance from an instance-spec JSON object (the `instance`
/// field of an experiment config).
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_instance_from_json(spec_json: *const c_char, out: *mut *mut FhInstance) -> FhStatus {
    guard(|| {
        let spec: InstanceSpec = serde_json::from_str(text(spec_json, "spec_json")?)?;
        let inst = build_instance(&spec)?;
        write(out, Box::into_raw(Box::new(FhInstance(inst))), "out")
    })
}

/// # Safety
/// `inst` must come from [`fh_instance_from_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fh_instance_free(inst: *mut FhInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// # Safety
/// `inst` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_instance_dims(
    inst: *const FhInstance,
    horizon: *mut usize,
    states: *mut usize,
    actions: *mut usize,
) -> FhStatus {
    guard(|| {
        let mdp = &inst.as_ref().ok_or_else(|| null("inst"))?.0.mdp;
        write(horizon, mdp.horizon(), "horizon")?;
        write(states, mdp.num_states(), "states")?;
        write(actions, mdp.num_actions(), "actions")
    })
}

/// Per-step and per-trajectory concentrability of the comparator policy
/// against the instance's first data law.
///
/// # Safety
/// `inst` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_instance_coefficients(inst: *const FhInstance, c_st: *mut f64, c_tr: *mut f64) -> FhStatus {
    guard(|| {
        let inst = &inst.as_ref().ok_or_else(|| null("inst"))?.0;
        let d = trajectory_distribution(&inst.mdp, &inst.target, DEFAULT_ENUMERATION_CAP)?;
        write(c_st, concentrability_per_step(&d, &inst.mu0, inst.mdp.horizon()), "c_st")?;
        write(c_tr, concentrability_per_trajectory(&d, &inst.mu0), "c_tr")
    })
}

/// Samples the dataset of sweep cell `(n, seed)` under the sigmoid link.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_dataset_generate(
    inst: *const FhInstance,
    n: usize,
    seed: u64,
    out: *mut *mut FhDataset,
) -> FhStatus {
    guard(|| {
        let inst = &inst.as_ref().ok_or_else(|| null("inst"))?.0;
        let ds = inst.sample_preferences(&Link::Sigmoid, n, seed)?;
        write(out, Box::into_raw(Box::new(FhDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must come from [`fh_dataset_generate`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fh_dataset_free(ds: *mut FhDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of records, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fh_dataset_len(ds: *const FhDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// The dataset in its text format; free with [`fh_string_free`].
///
/// # Safety
/// `ds` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_dataset_to_text(ds: *const FhDataset, out: *mut *mut c_char) -> FhStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.0;
        write(out, owned_string(ds.to_text()), "out")
    })
}

/// `C_st` and `C_tr` of the constructed instance with a uniform chain and
/// uniform target.
///
/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_prop2_coefficients(
    states: usize,
    actions: usize,
    horizon: usize,
    c: f64,
    c_st: *mut f64,
    c_tr: *mut f64,
) -> FhStatus {
    guard(|| {
        let (st, tr) = prop2_instance(states, actions, horizon, c, None, None)?.coefficients()?;
        write(c_st, st, "c_st")?;
        write(c_tr, tr, "c_tr")
    })
}

/// Exact KL between the two label laws of a hard pair and the closed-form
/// bound it must respect. `kind` is 0 for per-step, 1 for per-trajectory.
///
/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_lower_bound_kl(
    kind: u32,
    c: f64,
    horizon: usize,
    n: usize,
    kl: *mut f64,
    bound: *mut f64,
) -> FhStatus {
    guard(|| {
        let kind = match kind {
            0 => BoundKind::St,
            1 => BoundKind::Tr,
            k => return Err(Failure(FhStatus::InvalidArgument, format!("unknown bound kind {k}"))),
        };
        let pair = lower_bound_instance(kind, c, horizon, n)?;
        write(kl, instance_pair_kl(&pair), "kl")?;
        write(bound, pair.kl_bound(), "bound")
    })
}

/// Sigmoid `κ = 1 / min Φ'` over reward differences in `[-bound, bound]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_kappa_sigmoid(bound: f64, out: *mut f64) -> FhStatus {
    guard(|| write(out, kappa(&Link::Sigmoid, bound)?, "out"))
}

/// Runs an experiment config (JSON) and returns the results CSV.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_csv` must be
/// writable. Free the result with [`fh_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fh_run_experiment(config_json: *const c_char, out_csv: *mut *mut c_char) -> FhStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(text(config_json, "config_json")?)?;
        let table = run_experiment(&cfg)?;
        write(out_csv, owned_string(table.to_csv()), "out_csv")
    })
}

/// Log-log least squares of per-`N` means of `(ns[i], values[i])`.
///
/// # Safety
/// `ns` and `values` must point to `len` readable elements; the out
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fh_fit_rate(
    ns: *const usize,
    values: *const f64,
    len: usize,
    slope: *mut f64,
    intercept: *mut f64,
    r_squared: *mut f64,
) -> FhStatus {
    guard(|| {
        if len > 0 && (ns.is_null() || values.is_null()) {
            return Err(null("ns or values"));
        }
        let pts: Vec<(usize, f64)> = if len == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(ns, len).iter().copied().zip(std::slice::from_raw_parts(values, len).iter().copied()).collect()
        };
        let fit = fit_rate(&pts)?;
        write(slope, fit.slope, "slope")?;
        write(intercept, fit.intercept, "intercept")?;
        write(r_squared, fit.r_squared, "r_squared")
    })
}
