//! C ABI for the energy-management library: load traces, surrogates, and
//! trained policies from the files the `hems` CLI produces, query them, and
//! run deterministic evaluations. Handles are opaque pointers owned by this
//! library; every fallible call either returns a status code or a null
//! pointer, and the failure message is retrievable per thread via
//! [`hems_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use hems_core::bench::{evaluate, Metrics, PolicyController, RuleConfig, RuleController};
use hems_core::env::{EnvConfig, HomeState};
use hems_core::ppo::GaussianPolicy;
use hems_core::surrogate::Surrogate;
use hems_core::traces::{synth_traces, SynthProfile, TraceSet};

// --- status and error reporting ----------------------------------------------

/// Result of a fallible call. Anything other than `Ok` leaves a message in
/// the thread-local error slot.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HemsStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidString = 2,
    /// An argument value was out of range.
    InvalidArgument = 3,
    /// The operation itself failed; see `hems_last_error`.
    Failure = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(msg: &str) -> HemsStatus {
    set_last_error(msg);
    HemsStatus::Failure
}

/// Copies the current thread's last error message (NUL-terminated) into
/// `buf` and returns the full message length in bytes excluding the NUL.
/// When `buf` is null or too small nothing is truncated mid-call: the
/// message is copied up to `cap - 1` bytes and always NUL-terminated, and
/// the return value tells the caller the size a full copy needs.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn hems_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Runs a fallible body, translating panics into `Failure` instead of
/// unwinding across the ABI boundary.
fn guarded(body: impl FnOnce() -> HemsStatus) -> HemsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail("internal panic"),
    }
}

fn guarded_ptr<T>(body: impl FnOnce() -> Result<T, String>) -> *mut T {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => Box::into_raw(Box::new(value)),
        Ok(Err(msg)) => {
            set_last_error(&msg);
            std::ptr::null_mut()
        }
        Err(_) => {
            set_last_error("internal panic");
            std::ptr::null_mut()
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, String> {
    if path.is_null() {
        return Err("path is null".to_string());
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| "path is not valid UTF-8".to_string())
}

// --- metrics -------------------------------------------------------------------

/// Evaluation totals: `tec` is the summed energy cost ($), `mtd` the mean
/// temperature deviation (°C), `total_dev` the summed deviation, and `slots`
/// the number of hourly slots evaluated.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HemsMetrics {
    pub tec: f64,
    pub mtd: f64,
    pub total_dev: f64,
    pub slots: usize,
}

impl From<Metrics> for HemsMetrics {
    fn from(m: Metrics) -> Self {
        Self {
            tec: m.tec,
            mtd: m.mtd,
            total_dev: m.total_dev,
            slots: m.slots,
        }
    }
}

// --- opaque handles --------------------------------------------------------------

/// Opaque handle to an hourly exogenous trace set.
pub struct HemsTraces {
    inner: Arc<TraceSet>,
}

/// Opaque handle to a trained thermal surrogate.
pub struct HemsSurrogate {
    inner: Surrogate,
}

/// Opaque handle to a trained control policy.
pub struct HemsPolicy {
    inner: GaussianPolicy,
}

// --- traces -----------------------------------------------------------------------

/// Loads a trace CSV in the format `hems synth` writes. Returns null on
/// failure (see `hems_last_error`).
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hems_traces_load(path: *const c_char) -> *mut HemsTraces {
    let path = path_arg(path);
    guarded_ptr(move || {
        let path = path?;
        let ts = TraceSet::load_csv(path).map_err(|e| format!("traces {path}: {e}"))?;
        Ok(HemsTraces { inner: Arc::new(ts) })
    })
}

/// Generates `days` synthetic summer days under the default scenario shape.
/// Returns null on failure.
#[no_mangle]
pub extern "C" fn hems_traces_synth(seed: u64, days: usize) -> *mut HemsTraces {
    guarded_ptr(move || {
        let ts = synth_traces(seed, days, &SynthProfile::default()).map_err(|e| e.to_string())?;
        Ok(HemsTraces { inner: Arc::new(ts) })
    })
}

/// Number of hourly slots in the trace set; 0 for a null handle.
///
/// # Safety
/// `traces` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hems_traces_slots(traces: *const HemsTraces) -> usize {
    if traces.is_null() {
        return 0;
    }
    (*traces).inner.len()
}

/// Releases a trace handle. Null is ignored.
///
/// # Safety
/// `traces` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hems_traces_free(traces: *mut HemsTraces) {
    if !traces.is_null() {
        drop(Box::from_raw(traces));
    }
}

// --- surrogate ----------------------------------------------------------------------

/// Loads a surrogate model JSON written by `hems train-surrogate`. Returns
/// null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hems_surrogate_load(path: *const c_char) -> *mut HemsSurrogate {
    let path = path_arg(path);
    guarded_ptr(move || {
        let path = path?;
        let sur = Surrogate::load_json(path).map_err(|e| format!("surrogate {path}: {e}"))?;
        Ok(HemsSurrogate { inner: sur })
    })
}

/// Predicts the next indoor temperature from the current indoor and outdoor
/// temperatures (°C) and HVAC power (kW).
///
/// # Safety
/// `surrogate` must be a live handle; `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn hems_surrogate_next_t_in(
    surrogate: *const HemsSurrogate,
    t_in: f64,
    t_out: f64,
    h: f64,
    out: *mut f64,
) -> HemsStatus {
    if surrogate.is_null() || out.is_null() {
        return HemsStatus::NullArgument;
    }
    guarded(|| {
        *out = (*surrogate).inner.next_t_in(t_in, t_out, h);
        HemsStatus::Ok
    })
}

/// Releases a surrogate handle. Null is ignored.
///
/// # Safety
/// `surrogate` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hems_surrogate_free(surrogate: *mut HemsSurrogate) {
    if !surrogate.is_null() {
        drop(Box::from_raw(surrogate));
    }
}

// --- policy --------------------------------------------------------------------------

/// Loads a policy JSON written by `hems train` or `hems train-baseline`.
/// Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hems_policy_load(path: *const c_char) -> *mut HemsPolicy {
    let path = path_arg(path);
    guarded_ptr(move || {
        let path = path?;
        let policy = GaussianPolicy::load_json(path).map_err(|e| format!("policy {path}: {e}"))?;
        Ok(HemsPolicy { inner: policy })
    })
}

/// Deterministic action for one state. `state` holds 7 doubles in the order
/// PV power (kW), load (kW), battery level (kWh), outdoor °C, indoor °C,
/// buy price ($/kWh), hour of day (0–23). `action` receives 2 doubles:
/// battery power (kW, charge positive) and HVAC power (kW).
///
/// # Safety
/// `policy` must be a live handle; `state` must point to 7 readable doubles
/// and `action` to 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hems_policy_action(
    policy: *const HemsPolicy,
    state: *const f64,
    action: *mut f64,
) -> HemsStatus {
    if policy.is_null() || state.is_null() || action.is_null() {
        return HemsStatus::NullArgument;
    }
    let s = std::slice::from_raw_parts(state, HomeState::DIM);
    let hour = s[6];
    if !(0.0..24.0).contains(&hour) || hour.fract() != 0.0 {
        set_last_error(&format!("hour must be an integer in [0, 24), got {hour}"));
        return HemsStatus::InvalidArgument;
    }
    if s.iter().any(|v| !v.is_finite()) {
        set_last_error("state contains a non-finite value");
        return HemsStatus::InvalidArgument;
    }
    let home = HomeState {
        p: s[0],
        l: s[1],
        e_level: s[2],
        t_out: s[3],
        t_in: s[4],
        u: s[5],
        hour: hour as u8,
    };
    guarded(|| {
        let a = (*policy).inner.deterministic(&home);
        *action = a.e;
        *action.add(1) = a.h;
        HemsStatus::Ok
    })
}

/// Releases a policy handle. Null is ignored.
///
/// # Safety
/// `policy` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hems_policy_free(policy: *mut HemsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

// --- evaluation -------------------------------------------------------------------------

fn eval_env() -> EnvConfig {
    EnvConfig {
        noise_sigma: 0.0,
        ..EnvConfig::default()
    }
}

/// Evaluates the policy (deterministic actions) over the whole trace in the
/// default noise-free home and writes the metrics to `out`.
///
/// # Safety
/// `policy` and `traces` must be live handles; `out` must point to a
/// writable `HemsMetrics`.
#[no_mangle]
pub unsafe extern "C" fn hems_evaluate_policy(
    policy: *const HemsPolicy,
    traces: *const HemsTraces,
    seed: u64,
    out: *mut HemsMetrics,
) -> HemsStatus {
    if policy.is_null() || traces.is_null() || out.is_null() {
        return HemsStatus::NullArgument;
    }
    guarded(|| {
        let mut controller = PolicyController::new((*policy).inner.clone());
        match evaluate(&eval_env(), &(*traces).inner, &mut controller, seed) {
            Ok(eval) => {
                *out = eval.metrics.into();
                HemsStatus::Ok
            }
            Err(e) => fail(&e.to_string()),
        }
    })
}

/// Evaluates the default rule-based controller over the whole trace in the
/// default noise-free home and writes the metrics to `out`.
///
/// # Safety
/// `traces` must be a live handle; `out` must point to a writable
/// `HemsMetrics`.
#[no_mangle]
pub unsafe extern "C" fn hems_evaluate_rule(
    traces: *const HemsTraces,
    seed: u64,
    out: *mut HemsMetrics,
) -> HemsStatus {
    if traces.is_null() || out.is_null() {
        return HemsStatus::NullArgument;
    }
    guarded(|| {
        let env = eval_env();
        let controller = RuleController::new(RuleConfig::default(), &env, &(*traces).inner);
        let mut controller = match controller {
            Ok(c) => c,
            Err(e) => return fail(&e.to_string()),
        };
        match evaluate(&env, &(*traces).inner, &mut controller, seed) {
            Ok(eval) => {
                *out = eval.metrics.into();
                HemsStatus::Ok
            }
            Err(e) => fail(&e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn synth_handle(days: usize) -> *mut HemsTraces {
        let t = hems_traces_synth(9, days);
        assert!(!t.is_null());
        t
    }

    fn last_error_string() -> String {
        let mut buf = vec![0i8; 256];
        let n = unsafe { hems_last_error(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n.min(buf.len() - 1)].iter().map(|&b| b as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn synth_reports_slot_count() {
        let t = synth_handle(3);
        assert_eq!(unsafe { hems_traces_slots(t) }, 72);
        unsafe { hems_traces_free(t) };
    }

    #[test]
    fn null_handles_are_tolerated() {
        unsafe {
            assert_eq!(hems_traces_slots(std::ptr::null()), 0);
            hems_traces_free(std::ptr::null_mut());
            hems_surrogate_free(std::ptr::null_mut());
            hems_policy_free(std::ptr::null_mut());
            let mut out = 0.0;
            assert_eq!(
                hems_surrogate_next_t_in(std::ptr::null(), 0.0, 0.0, 0.0, &mut out),
                HemsStatus::NullArgument
            );
        }
    }

    #[test]
    fn missing_file_sets_error_naming_path() {
        let path = CString::new("/nonexistent/traces.csv").unwrap();
        let t = unsafe { hems_traces_load(path.as_ptr()) };
        assert!(t.is_null());
        let msg = last_error_string();
        assert!(msg.contains("/nonexistent/traces.csv"), "message: {msg}");
    }

    #[test]
    fn error_copy_truncates_but_reports_full_length() {
        set_last_error("0123456789");
        let mut buf = vec![0i8; 4];
        let n = unsafe { hems_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 10);
        assert_eq!(buf[3], 0, "must stay NUL-terminated");
        let head: Vec<u8> = buf[..3].iter().map(|&b| b as u8).collect();
        assert_eq!(head, b"012");
    }

    #[test]
    fn traces_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let direct = synth_traces(9, 2, &SynthProfile::default()).unwrap();
        direct.write_csv(&path).unwrap();
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let t = unsafe { hems_traces_load(cpath.as_ptr()) };
        assert!(!t.is_null());
        assert_eq!(unsafe { hems_traces_slots(t) }, direct.len());
        unsafe { hems_traces_free(t) };
    }

    #[test]
    fn surrogate_prediction_matches_direct_call() {
        use hems_core::env::Env;
        use hems_core::surrogate::{collect_samples, train_surrogate};

        let traces = synth_traces(3, 4, &SynthProfile::default()).unwrap();
        let mut env = Env::new(EnvConfig::default(), Arc::new(traces)).unwrap();
        let samples = collect_samples(&mut env, 400, 5).unwrap();
        let (sur, _) = train_surrogate(&samples, &[3, 8, 1], 10, 5).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sur.json");
        sur.save_json(&path).unwrap();
        let cpath = CString::new(path.to_str().unwrap()).unwrap();
        let handle = unsafe { hems_surrogate_load(cpath.as_ptr()) };
        assert!(!handle.is_null());

        let mut got = 0.0;
        let status = unsafe { hems_surrogate_next_t_in(handle, 24.0, 31.0, 1.2, &mut got) };
        assert_eq!(status, HemsStatus::Ok);
        assert_eq!(got, sur.next_t_in(24.0, 31.0, 1.2));
        unsafe { hems_surrogate_free(handle) };
    }

    fn saved_policy(dir: &std::path::Path) -> (GaussianPolicy, CString) {
        use hems_core::airl::Normalizer;
        let policy = GaussianPolicy::for_env(
            &EnvConfig::default(),
            &[8],
            Normalizer::identity(HomeState::DIM),
            -0.5,
            3,
        )
        .unwrap();
        let path = dir.join("policy.json");
        policy.save_json(&path).unwrap();
        (policy, CString::new(path.to_str().unwrap()).unwrap())
    }

    #[test]
    fn policy_action_matches_deterministic_inference() {
        let dir = tempfile::tempdir().unwrap();
        let (policy, cpath) = saved_policy(dir.path());
        let handle = unsafe { hems_policy_load(cpath.as_ptr()) };
        assert!(!handle.is_null());

        let state = HomeState {
            p: 1.2,
            l: 0.4,
            e_level: 6.0,
            t_out: 31.0,
            t_in: 23.5,
            u: 0.21,
            hour: 14,
        };
        let flat = state.to_vec();
        let mut action = [0.0; 2];
        let status =
            unsafe { hems_policy_action(handle, flat.as_ptr(), action.as_mut_ptr()) };
        assert_eq!(status, HemsStatus::Ok);
        let want = policy.deterministic(&state);
        assert_eq!(action, [want.e, want.h]);
        unsafe { hems_policy_free(handle) };
    }

    #[test]
    fn policy_action_rejects_bad_hour() {
        let dir = tempfile::tempdir().unwrap();
        let (_, cpath) = saved_policy(dir.path());
        let handle = unsafe { hems_policy_load(cpath.as_ptr()) };
        let mut state = [0.0; 7];
        state[6] = 24.5;
        let mut action = [0.0; 2];
        let status =
            unsafe { hems_policy_action(handle, state.as_ptr(), action.as_mut_ptr()) };
        assert_eq!(status, HemsStatus::InvalidArgument);
        unsafe { hems_policy_free(handle) };
    }

    #[test]
    fn evaluations_match_library_results() {
        let dir = tempfile::tempdir().unwrap();
        let (policy, cpath) = saved_policy(dir.path());
        let handle = unsafe { hems_policy_load(cpath.as_ptr()) };
        let traces = synth_handle(2);

        let mut via_ffi = HemsMetrics {
            tec: 0.0,
            mtd: 0.0,
            total_dev: 0.0,
            slots: 0,
        };
        let status = unsafe { hems_evaluate_policy(handle, traces, 7, &mut via_ffi) };
        assert_eq!(status, HemsStatus::Ok);

        let direct_traces = unsafe { Arc::clone(&(*traces).inner) };
        let mut controller = PolicyController::new(policy);
        let direct = evaluate(&eval_env(), &direct_traces, &mut controller, 7).unwrap();
        assert_eq!(via_ffi, direct.metrics.into());
        assert_eq!(via_ffi.slots, 48);

        let mut rule_m = via_ffi;
        let status = unsafe { hems_evaluate_rule(traces, 7, &mut rule_m) };
        assert_eq!(status, HemsStatus::Ok);
        assert!((rule_m.total_dev - rule_m.mtd * rule_m.slots as f64).abs() < 1e-9);

        unsafe { hems_policy_free(handle) };
        unsafe { hems_traces_free(traces) };
    }
}
