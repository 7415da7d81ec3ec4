//! C ABI over the numeric and utility parts of `adopt-core`.
//!
//! Every function returns an [`AdoptStatus`]; on failure the message is
//! available from [`adopt_last_error`] on the same thread. Output pointers
//! are written only on success. Strings handed out by the library must be
//! released with [`adopt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adopt_core::backend::{request_digest, ModelRequest};
use adopt_core::shapley::{
    allocate_budgets, exact_shapley, kernel_shap, shapley_weight, Coalition, ValueSample, ValueTable,
    MAX_EXACT_STEPS,
};
use adopt_core::tasks::{evaluate_metric, simulate_allocation, Policy, SimulationSettings};
use adopt_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    InfeasibleBudget = 4,
    Panic = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: AdoptStatus, msg: impl Into<String>) -> AdoptStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> AdoptStatus {
    let status = match e {
        Error::Domain(_) | Error::MissingCoalitions(_) => AdoptStatus::Domain,
        Error::InfeasibleBudget { .. } => AdoptStatus::InfeasibleBudget,
        Error::Config(_) | Error::Contract(_) | Error::Json(_) => AdoptStatus::InvalidArgument,
        _ => AdoptStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Runs `body`, turning panics into [`AdoptStatus::Panic`].
fn guard(body: impl FnOnce() -> Result<(), AdoptStatus>) -> AdoptStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AdoptStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(AdoptStatus::Panic, "panic inside adopt"),
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), AdoptStatus> {
    if p.is_null() {
        Err(fail(AdoptStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, AdoptStatus> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AdoptStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn adopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn adopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Coalition value samples collected for one `m`-step pipeline.
pub struct AdoptSampleSet {
    m: usize,
    samples: Vec<ValueSample>,
}

/// New empty sample set; null if `m` is 0 or above 64.
#[no_mangle]
pub extern "C" fn adopt_sample_set_new(m: usize) -> *mut AdoptSampleSet {
    if m == 0 || m > 64 {
        set_error(format!("sample set width must be in 1..=64, got {m}"));
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(AdoptSampleSet {
        m,
        samples: Vec::new(),
    }))
}

/// Adds one sample; bit `i` of `mask` marks step `i` as a member.
///
/// # Safety
/// `set` must be a live pointer from [`adopt_sample_set_new`].
#[no_mangle]
pub unsafe extern "C" fn adopt_sample_set_push(
    set: *mut AdoptSampleSet,
    mask: u64,
    value: f64,
) -> AdoptStatus {
    guard(|| {
        non_null(set, "set")?;
        let set = &mut *set;
        if set.m < 64 && mask >> set.m != 0 {
            return Err(fail(
                AdoptStatus::InvalidArgument,
                format!("mask {mask:#x} has bits beyond {} steps", set.m),
            ));
        }
        if !value.is_finite() {
            return Err(fail(AdoptStatus::Domain, "sample value is not finite"));
        }
        set.samples.push(ValueSample {
            coalition: Coalition::from_mask(mask, set.m),
            value,
        });
        Ok(())
    })
}

/// Number of samples in `set`, or 0 for null.
///
/// # Safety
/// `set` must be null or a live pointer from [`adopt_sample_set_new`].
#[no_mangle]
pub unsafe extern "C" fn adopt_sample_set_len(set: *const AdoptSampleSet) -> usize {
    if set.is_null() {
        0
    } else {
        (*set).samples.len()
    }
}

/// # Safety
/// `set` must be null or a live pointer from [`adopt_sample_set_new`].
#[no_mangle]
pub unsafe extern "C" fn adopt_sample_set_free(set: *mut AdoptSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Kernel SHAP estimate from the samples in `set`; writes `m` values.
///
/// # Safety
/// `set` must be live; `phi_out` must hold at least `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn adopt_kernel_shap(set: *const AdoptSampleSet, phi_out: *mut f64) -> AdoptStatus {
    guard(|| {
        non_null(set, "set")?;
        non_null(phi_out, "phi_out")?;
        let set = &*set;
        let est = kernel_shap(&set.samples, set.m).map_err(from_error)?;
        ptr::copy_nonoverlapping(est.phi.as_ptr(), phi_out, set.m);
        Ok(())
    })
}

/// Exact Shapley values from a full table: `values[mask]` for every mask
/// below `2^m`.
///
/// # Safety
/// `values` must hold `2^m` doubles and `phi_out` at least `m`.
#[no_mangle]
pub unsafe extern "C" fn adopt_exact_shapley(values: *const f64, m: usize, phi_out: *mut f64) -> AdoptStatus {
    guard(|| {
        non_null(values, "values")?;
        non_null(phi_out, "phi_out")?;
        if m == 0 || m > MAX_EXACT_STEPS {
            return Err(fail(
                AdoptStatus::Domain,
                format!("exact Shapley needs 1..={MAX_EXACT_STEPS} steps, got {m}"),
            ));
        }
        let table_values = std::slice::from_raw_parts(values, 1usize << m);
        let table = ValueTable::from_fn(m, |mask| table_values[mask as usize]);
        let est = exact_shapley(&table, m).map_err(from_error)?;
        ptr::copy_nonoverlapping(est.phi.as_ptr(), phi_out, m);
        Ok(())
    })
}

/// Shapley weight of a size-`s` coalition in an `m`-player game.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn adopt_shapley_weight(s: usize, m: usize, out: *mut f64) -> AdoptStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = shapley_weight(s, m).map_err(from_error)?;
        Ok(())
    })
}

/// Splits `total` candidates over `m` steps by contribution.
///
/// # Safety
/// `phi` must hold `m` doubles and `budgets_out` room for `m` sizes.
#[no_mangle]
pub unsafe extern "C" fn adopt_allocate_budgets(
    phi: *const f64,
    m: usize,
    total: usize,
    b_min: usize,
    budgets_out: *mut usize,
) -> AdoptStatus {
    guard(|| {
        non_null(phi, "phi")?;
        non_null(budgets_out, "budgets_out")?;
        let phi = std::slice::from_raw_parts(phi, m);
        let alloc = allocate_budgets(phi, total, b_min).map_err(from_error)?;
        ptr::copy_nonoverlapping(alloc.budgets.as_ptr(), budgets_out, m);
        Ok(())
    })
}

/// Scores `prediction` against `label` with the metric named `metric_id`
/// (`exact_match` or `token_f1`).
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adopt_metric_score(
    metric_id: *const c_char,
    prediction: *const c_char,
    label: *const c_char,
    out: *mut f64,
) -> AdoptStatus {
    guard(|| {
        non_null(out, "out")?;
        let metric_id = c_str(metric_id, "metric_id")?;
        let prediction = c_str(prediction, "prediction")?;
        let label = c_str(label, "label")?;
        *out = evaluate_metric(metric_id, prediction, label).map_err(from_error)?;
        Ok(())
    })
}

/// Runs the allocation simulator with default steps for `m` and reports the
/// mean and standard deviation of iterations to target.
///
/// # Safety
/// `policy` must be NUL-terminated; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn adopt_simulate_allocation(
    policy: *const c_char,
    m: usize,
    runs: usize,
    seed: u64,
    mean_out: *mut f64,
    std_out: *mut f64,
) -> AdoptStatus {
    guard(|| {
        non_null(mean_out, "mean_out")?;
        non_null(std_out, "std_out")?;
        let policy: Policy = c_str(policy, "policy")?.parse().map_err(from_error)?;
        if m == 0 {
            return Err(fail(AdoptStatus::Domain, "m must be at least 1"));
        }
        let mut settings = SimulationSettings::new(m, policy);
        settings.runs = runs;
        settings.seed = seed;
        let result = simulate_allocation(&settings).map_err(from_error)?;
        *mean_out = result.mean;
        *std_out = result.std_dev;
        Ok(())
    })
}

/// Cache key of a request given as JSON
/// (`{"model_ref", "messages", "temperature", "top_p", "seed"}`). The
/// returned hex string must be freed with [`adopt_string_free`].
///
/// # Safety
/// `request_json` must be NUL-terminated; `digest_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn adopt_request_digest(
    request_json: *const c_char,
    digest_out: *mut *mut c_char,
) -> AdoptStatus {
    guard(|| {
        non_null(digest_out, "digest_out")?;
        let text = c_str(request_json, "request_json")?;
        let request: ModelRequest =
            serde_json::from_str(text).map_err(|e| fail(AdoptStatus::InvalidArgument, e.to_string()))?;
        let digest = CString::new(request_digest(&request)).expect("hex has no NUL");
        *digest_out = digest.into_raw();
        Ok(())
    })
}
