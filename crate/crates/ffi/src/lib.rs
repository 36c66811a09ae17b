//! C ABI over the dosguard classifier, reputation scheduler and EOS
//! suppression hook.
//!
//! Every fallible function returns a status code (`DG_OK` on success) and
//! writes its result through an out pointer. On failure the message is kept
//! per thread and can be read with `dg_last_error_message`. Handles are
//! opaque and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dosguard_core::index::{self, Action, Classifier, ClassifierConfig, Region, RiskVerdict};
use dosguard_core::scheduler::{QueuedRequest, ReputationScheduler, SchedulerConfig};
use dosguard_core::suppression::{self, SuppressionConfig, Suppressor};
use dosguard_core::telemetry::ResourceVector;
use dosguard_core::Error;

pub const DG_OK: i32 = 0;
/// A required pointer argument was null.
pub const DG_ERR_NULL_POINTER: i32 = 1;
/// An argument is out of range or malformed.
pub const DG_ERR_INVALID_ARGUMENT: i32 = 2;
/// The inputs make the requested quantity undefined (zero norm, constant vector, too few samples).
pub const DG_ERR_DEGENERATE: i32 = 3;
/// The call is not valid in the handle's current state.
pub const DG_ERR_STATE: i32 = 4;
/// JSON could not be parsed or produced.
pub const DG_ERR_JSON: i32 = 5;
/// A caller-provided buffer is too small.
pub const DG_ERR_BUFFER_TOO_SMALL: i32 = 6;
/// An internal error; the handle should be discarded.
pub const DG_ERR_INTERNAL: i32 = 7;

pub const DG_ACTION_REWARD: u32 = 0;
pub const DG_ACTION_MILD_PENALTY: u32 = 1;
pub const DG_ACTION_DOS_PENALTY: u32 = 2;

pub const DG_REGION_A: u32 = 0;
pub const DG_REGION_B: u32 = 1;
pub const DG_REGION_C: u32 = 2;
pub const DG_REGION_D: u32 = 3;
pub const DG_REGION_E: u32 = 4;
pub const DG_REGION_F: u32 = 5;

/// Per-request resource vector.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DgResourceVector {
    /// Completion time in seconds.
    pub t: f64,
    /// Memory in GB.
    pub m: f64,
    /// Utilization in percent.
    pub g: f64,
    pub l_in: f64,
    pub l_out: f64,
}

/// Classification of one request.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DgVerdict {
    pub i_c: f64,
    pub i_t: f64,
    /// One of the region codes, 0 (A) to 5 (F).
    pub region: u32,
    /// One of the `DG_ACTION_*` codes.
    pub action: u32,
    pub cluster_id: u32,
}

/// Opaque classifier handle.
pub struct DgClassifier(Classifier);

/// Opaque scheduler handle.
pub struct DgScheduler(ReputationScheduler);

/// Opaque suppression state for one generation.
pub struct DgSuppressor(Suppressor);

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DegenerateReference
            | Error::DegenerateTendency
            | Error::InsufficientHistory { .. } => DG_ERR_DEGENERATE,
            Error::NotWarmedUp
            | Error::NoActiveRound
            | Error::UnservedVerdict(_)
            | Error::MissingVerdict(_) => DG_ERR_STATE,
            Error::Json(_) => DG_ERR_JSON,
            Error::EmptyProjection | Error::LengthMismatch(..) | Error::Validation { .. } => {
                DG_ERR_INVALID_ARGUMENT
            }
            _ => DG_ERR_INTERNAL,
        };
        Failure(code, e.to_string())
    }
}

fn fail<T>(code: i32, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records any failure and converts it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DG_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic".into());
            DG_ERR_INTERNAL
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(DG_ERR_NULL_POINTER, format!("`{name}` is null")))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(DG_ERR_NULL_POINTER, format!("`{name}` is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(DG_ERR_NULL_POINTER, format!("`{name}` is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn vector(v: &DgResourceVector) -> Result<ResourceVector, Failure> {
    let r = ResourceVector::new(v.t, v.m, v.g, v.l_in, v.l_out);
    if !r.is_valid() {
        return fail(
            DG_ERR_INVALID_ARGUMENT,
            "resource vector must be finite and non-negative",
        );
    }
    Ok(r)
}

const REGIONS: [Region; 6] = [
    Region::A,
    Region::B,
    Region::C,
    Region::D,
    Region::E,
    Region::F,
];
const ACTIONS: [Action; 3] = [Action::Reward, Action::MildPenalty, Action::DosPenalty];

fn to_c(v: &RiskVerdict) -> DgVerdict {
    DgVerdict {
        i_c: v.i_c,
        i_t: v.i_t,
        region: REGIONS
            .iter()
            .position(|r| *r == v.region)
            .expect("known region") as u32,
        action: ACTIONS
            .iter()
            .position(|a| *a == v.action)
            .expect("known action") as u32,
        cluster_id: v.cluster_id as u32,
    }
}

fn from_c(v: &DgVerdict) -> Result<RiskVerdict, Failure> {
    let region = *REGIONS.get(v.region as usize).ok_or_else(|| {
        Failure(
            DG_ERR_INVALID_ARGUMENT,
            format!("unknown region code {}", v.region),
        )
    })?;
    let action = *ACTIONS.get(v.action as usize).ok_or_else(|| {
        Failure(
            DG_ERR_INVALID_ARGUMENT,
            format!("unknown action code {}", v.action),
        )
    })?;
    Ok(RiskVerdict {
        i_c: v.i_c,
        i_t: v.i_t,
        region,
        action,
        cluster_id: v.cluster_id as usize,
    })
}

/// Message of the last failed call on this thread, or null if there was
/// none. The pointer stays valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn dg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// I_c = ||current|| / ||reference||.
///
/// # Safety
/// `current` and `reference` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_consumption_index(
    current: *const f64,
    reference: *const f64,
    len: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let x = slice(current, len, "current")?;
        let r = slice(reference, len, "reference")?;
        *out_ref(out, "out")? = index::consumption_index(x, r)?;
        Ok(())
    })
}

/// Centred cosine similarity of two equal-length vectors.
///
/// # Safety
/// `current` and `reference` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_tendency_index(
    current: *const f64,
    reference: *const f64,
    len: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let x = slice(current, len, "current")?;
        let r = slice(reference, len, "reference")?;
        *out_ref(out, "out")? = index::tendency_index(x, r)?;
        Ok(())
    })
}

/// IQR fences of `len` samples (at least 4).
///
/// # Safety
/// `samples` must point to `len` doubles; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_iqr_thresholds(
    samples: *const f64,
    len: usize,
    lambda: f64,
    out_lower: *mut f64,
    out_upper: *mut f64,
) -> i32 {
    guard(|| {
        let xs = slice(samples, len, "samples")?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return fail(
                DG_ERR_INVALID_ARGUMENT,
                "lambda must be finite and non-negative",
            );
        }
        let t = index::iqr_thresholds(xs, lambda)?;
        *out_ref(out_lower, "out_lower")? = t.lower;
        *out_ref(out_upper, "out_upper")? = t.upper;
        Ok(())
    })
}

/// Per-user output cap, clamped to [l_min, l_max].
#[no_mangle]
pub extern "C" fn dg_output_cap(score: f64, initial_score: f64, l_min: f64, l_max: f64) -> f64 {
    suppression::output_cap(score, initial_score, l_min, l_max)
}

/// True when generation stops at step `n`.
#[no_mangle]
pub extern "C" fn dg_should_terminate(
    corrected_eos: f64,
    top_excluding_eos: f64,
    n: u32,
    l_max: u32,
) -> bool {
    suppression::should_terminate(corrected_eos, top_excluding_eos, n, l_max)
}

/// Restores a classifier from the JSON written by `dg_classifier_to_json`
/// or by the CLI (`classifier_state.json`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_classifier_from_json(
    json: *const c_char,
    out: *mut *mut DgClassifier,
) -> i32 {
    guard(|| {
        let out = out_ref(out, "out")?;
        let text = CStr::from_ptr(in_ref(json, "json")?)
            .to_str()
            .map_err(|e| Failure(DG_ERR_INVALID_ARGUMENT, format!("json is not UTF-8: {e}")))?;
        *out = Box::into_raw(Box::new(DgClassifier(Classifier::from_json(text)?)));
        Ok(())
    })
}

/// Fits a classifier with default settings on `len` benign vectors.
///
/// # Safety
/// `history` must point to `len` vectors; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_classifier_from_history(
    history: *const DgResourceVector,
    len: usize,
    out: *mut *mut DgClassifier,
) -> i32 {
    guard(|| {
        let out = out_ref(out, "out")?;
        let h = slice(history, len, "history")?
            .iter()
            .map(vector)
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(DgClassifier(Classifier::from_history(
            ClassifierConfig::default(),
            &h,
        )?)));
        Ok(())
    })
}

/// Classifies one vector without changing the classifier.
///
/// # Safety
/// `handle` must be a live classifier; `v` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_classifier_classify(
    handle: *const DgClassifier,
    v: *const DgResourceVector,
    out: *mut DgVerdict,
) -> i32 {
    guard(|| {
        let c = in_ref(handle, "handle")?;
        let v = vector(in_ref(v, "v")?)?;
        *out_ref(out, "out")? = to_c(&c.0.classify(&v)?);
        Ok(())
    })
}

/// Feeds a finished request back. Only Reward verdicts move the reference.
///
/// # Safety
/// `handle` must be a live classifier; `v` and `verdict` readable.
#[no_mangle]
pub unsafe extern "C" fn dg_classifier_learn(
    handle: *mut DgClassifier,
    v: *const DgResourceVector,
    verdict: *const DgVerdict,
) -> i32 {
    guard(|| {
        let c = out_ref(handle, "handle")?;
        let v = vector(in_ref(v, "v")?)?;
        let verdict = from_c(in_ref(verdict, "verdict")?)?;
        c.0.learn(&v, &verdict);
        Ok(())
    })
}

/// Serializes the classifier. Free the string with `dg_string_free`.
///
/// # Safety
/// `handle` must be a live classifier; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_classifier_to_json(
    handle: *const DgClassifier,
    out: *mut *mut c_char,
) -> i32 {
    guard(|| {
        let c = in_ref(handle, "handle")?;
        let out = out_ref(out, "out")?;
        let json = c.0.to_json()?;
        *out = CString::new(json)
            .map_err(|e| Failure(DG_ERR_INTERNAL, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a classifier not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dg_classifier_free(handle: *mut DgClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Creates a scheduler serving `parallelism` users per round.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_scheduler_new(
    parallelism: usize,
    gamma: f64,
    mu: f64,
    delta: f64,
    initial_score: f64,
    out: *mut *mut DgScheduler,
) -> i32 {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = SchedulerConfig {
            parallelism,
            gamma,
            mu,
            delta,
            initial_score,
            gamma_reward: None,
        };
        cfg.validate("")?;
        *out = Box::into_raw(Box::new(DgScheduler(ReputationScheduler::new(cfg))));
        Ok(())
    })
}

/// Queues a request. During a round it becomes visible once the round ends.
///
/// # Safety
/// `handle` must be a live scheduler.
#[no_mangle]
pub unsafe extern "C" fn dg_scheduler_enqueue(
    handle: *mut DgScheduler,
    user: u32,
    request_id: u64,
    arrival: f64,
) -> i32 {
    guard(|| {
        out_ref(handle, "handle")?.0.enqueue(
            user,
            QueuedRequest {
                request_id,
                arrival,
            },
        );
        Ok(())
    })
}

/// Starts a round. Writes up to `capacity` picks and their count to
/// `out_len`; zero picks means no work is queued and no round was started.
///
/// # Safety
/// `handle` must be a live scheduler; `users` and `requests` must hold
/// `capacity` elements; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_scheduler_select(
    handle: *mut DgScheduler,
    users: *mut u32,
    requests: *mut u64,
    capacity: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let s = &mut out_ref(handle, "handle")?.0;
        let out_len = out_ref(out_len, "out_len")?;
        if s.in_round() {
            return fail(DG_ERR_STATE, "a round is already in progress");
        }
        let need = s.ranking().len();
        if need > capacity {
            return fail(
                DG_ERR_BUFFER_TOO_SMALL,
                format!("{need} picks, capacity {capacity}"),
            );
        }
        if need > 0 && (users.is_null() || requests.is_null()) {
            return fail(DG_ERR_NULL_POINTER, "`users` or `requests` is null");
        }
        let picks = s.select_round().unwrap_or_default();
        for (i, (u, r)) in picks.iter().enumerate() {
            *users.add(i) = *u;
            *requests.add(i) = r.request_id;
        }
        *out_len = picks.len();
        Ok(())
    })
}

/// Ends the round with one verdict per served user.
///
/// # Safety
/// `handle` must be a live scheduler; `users` and `verdicts` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn dg_scheduler_apply(
    handle: *mut DgScheduler,
    users: *const u32,
    verdicts: *const DgVerdict,
    len: usize,
) -> i32 {
    guard(|| {
        let s = &mut out_ref(handle, "handle")?.0;
        let users = slice(users, len, "users")?;
        let verdicts = slice(verdicts, len, "verdicts")?;
        let mut map = BTreeMap::new();
        for (u, v) in users.iter().zip(verdicts) {
            if map.insert(*u, from_c(v)?).is_some() {
                return fail(DG_ERR_INVALID_ARGUMENT, format!("user {u} listed twice"));
            }
        }
        s.apply_round_updates(&map)?;
        Ok(())
    })
}

/// Current reputation score of a known user.
///
/// # Safety
/// `handle` must be a live scheduler; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_scheduler_score(
    handle: *const DgScheduler,
    user: u32,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let s = &in_ref(handle, "handle")?.0;
        let out = out_ref(out, "out")?;
        *out = s
            .score(user)
            .ok_or_else(|| Failure(DG_ERR_INVALID_ARGUMENT, format!("unknown user {user}")))?;
        Ok(())
    })
}

/// # Safety
/// `handle` must be null or a scheduler not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dg_scheduler_free(handle: *mut DgScheduler) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Starts suppression for one generation with output cap `cap`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_suppressor_new(
    cap: u32,
    l_max: u32,
    eta: f64,
    gamma_supp: f64,
    out: *mut *mut DgSuppressor,
) -> i32 {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg = SuppressionConfig {
            l_max,
            eta,
            gamma_supp,
            ..SuppressionConfig::default()
        };
        cfg.validate("")?;
        *out = Box::into_raw(Box::new(DgSuppressor(Suppressor::new(cfg, cap))));
        Ok(())
    })
}

/// Feeds one decoding step: the best non-EOS logit, the raw EOS logit and
/// the best non-EOS token. Writes the corrected EOS logit and whether
/// decoding should stop at this step.
///
/// # Safety
/// `handle` must be a live suppressor; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn dg_suppressor_step(
    handle: *mut DgSuppressor,
    top_logit: f64,
    eos_logit: f64,
    candidate: u32,
    out_corrected: *mut f64,
    out_stop: *mut bool,
) -> i32 {
    guard(|| {
        let s = &mut out_ref(handle, "handle")?.0;
        if !(top_logit.is_finite() && eos_logit.is_finite()) {
            return fail(DG_ERR_INVALID_ARGUMENT, "logits must be finite");
        }
        let out_corrected = out_ref(out_corrected, "out_corrected")?;
        let out_stop = out_ref(out_stop, "out_stop")?;
        let sample = s.step(top_logit, eos_logit, candidate);
        *out_corrected = sample.eos_corrected;
        *out_stop = suppression::should_terminate(
            sample.eos_corrected,
            top_logit,
            sample.n,
            s.config.l_max,
        );
        Ok(())
    })
}

/// Steps seen so far.
///
/// # Safety
/// `handle` must be null or a live suppressor.
#[no_mangle]
pub unsafe extern "C" fn dg_suppressor_steps(handle: *const DgSuppressor) -> u32 {
    handle.as_ref().map_or(0, |s| s.0.state.n)
}

/// # Safety
/// `handle` must be null or a suppressor not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dg_suppressor_free(handle: *mut DgSuppressor) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_codes_round_trip() {
        for (r, region) in REGIONS.iter().enumerate() {
            for (a, action) in ACTIONS.iter().enumerate() {
                let v = RiskVerdict {
                    i_c: 1.5,
                    i_t: -0.2,
                    region: *region,
                    action: *action,
                    cluster_id: 1,
                };
                let c = to_c(&v);
                assert_eq!((c.region, c.action), (r as u32, a as u32));
                assert_eq!(from_c(&c).ok(), Some(v));
            }
        }
    }

    #[test]
    fn panics_become_internal_errors() {
        assert_eq!(guard(|| panic!("boom")), DG_ERR_INTERNAL);
        let msg = unsafe { CStr::from_ptr(dg_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }
}
