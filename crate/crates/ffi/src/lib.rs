//! C interface. Objects are opaque handles created by `*_new` and released
//! by the matching `*_free`; every fallible call returns a [`SpinmixStatus`]
//! and leaves a message for [`spinmix_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use spinmix::dynamics::{replica_rng, ChainState, Kernel};
use spinmix::exact::{induced_matrix_on, spectral_gap};
use spinmix::experiment::{build_kernel, parse_graph_spec, parse_model_spec, run, DynamicsSpec, ExperimentConfig};
use spinmix::spectral::eta_of;
use spinmix::spin::{GibbsTable, Spin, SpinSystem};
use spinmix::Error;

// Configurations cross the boundary as bytes.
const _: () = assert!(std::mem::size_of::<Spin>() == 1);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpinmixStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CapExceeded = 3,
    Unsupported = 4,
    Parse = 5,
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

pub struct SpinmixSystem(SpinSystem);

pub struct SpinmixTable(GibbsTable);

pub struct SpinmixSampler {
    sys: SpinSystem,
    kernel: Kernel,
    state: ChainState,
    rng: ChaCha8Rng,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpinmixStatus {
    match e {
        Error::CapExceeded { .. } => SpinmixStatus::CapExceeded,
        Error::Unsupported(_) | Error::NotBipartition(_) | Error::NotMonotone => SpinmixStatus::Unsupported,
        Error::Parse { .. } => SpinmixStatus::Parse,
        Error::Io(_) => SpinmixStatus::Io,
        Error::NotReversible(_)
        | Error::StationaryMismatch(_)
        | Error::ComplexEigenvalue(_)
        | Error::NotConverged(_)
        | Error::InvariantViolated(_)
        | Error::OrderViolated(_) => SpinmixStatus::Numerical,
        _ => SpinmixStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SpinmixStatus>) -> SpinmixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpinmixStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            SpinmixStatus::Panic
        }
    }
}

fn fail(e: Error) -> SpinmixStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, SpinmixStatus> {
    if p.is_null() {
        set_error("null string argument".into());
        return Err(SpinmixStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not UTF-8".into());
        SpinmixStatus::InvalidArgument
    })
}

unsafe fn obj<'a, T>(p: *const T) -> Result<&'a T, SpinmixStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle".into());
        SpinmixStatus::NullPointer
    })
}

fn out_ptr<T>(p: *mut T) -> Result<(), SpinmixStatus> {
    if p.is_null() {
        set_error("null output pointer".into());
        return Err(SpinmixStatus::NullPointer);
    }
    Ok(())
}

/// Message for the last failed call on this thread. Valid until the next
/// call on the same thread.
#[no_mangle]
pub extern "C" fn spinmix_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a system from specs such as `grid:3x3` and `ising:0.4`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_system_new(
    graph: *const c_char,
    model: *const c_char,
    out: *mut *mut SpinmixSystem,
) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        let g = parse_graph_spec(str_arg(graph)?).map_err(fail)?;
        let sys = parse_model_spec(str_arg(model)?, Arc::new(g)).map_err(fail)?;
        *out = Box::into_raw(Box::new(SpinmixSystem(sys)));
        Ok(())
    })
}

/// # Safety
/// `sys` must come from [`spinmix_system_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_system_free(sys: *mut SpinmixSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of vertices, or 0 for a null handle.
///
/// # Safety
/// `sys` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_system_vertices(sys: *const SpinmixSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.n())
}

/// Number of spins, or 0 for a null handle.
///
/// # Safety
/// `sys` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_system_spins(sys: *const SpinmixSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.q())
}

/// Enumerates the Gibbs distribution when it has at most `cap` states.
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_table_new(
    sys: *const SpinmixSystem,
    cap: u64,
    out: *mut *mut SpinmixTable,
) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        let t = GibbsTable::build(&obj(sys)?.0, cap as u128).map_err(fail)?;
        *out = Box::into_raw(Box::new(SpinmixTable(t)));
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`spinmix_table_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_table_free(t: *mut SpinmixTable) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of states in the support, or 0 for a null handle.
///
/// # Safety
/// `t` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_table_len(t: *const SpinmixTable) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Gibbs probability of a full configuration of `len` spins.
///
/// # Safety
/// `config` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_table_prob(
    t: *const SpinmixTable,
    config: *const u8,
    len: usize,
    out: *mut f64,
) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        let t = obj(t)?;
        if config.is_null() {
            set_error("null configuration".into());
            return Err(SpinmixStatus::NullPointer);
        }
        if len != t.0.n() {
            return Err(fail(Error::MalformedConfig(format!("expected {} spins, got {len}", t.0.n()))));
        }
        *out = t.0.prob_of(std::slice::from_raw_parts(config, len));
        Ok(())
    })
}

/// Spectral independence constant over all pinnings.
///
/// # Safety
/// `t` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_eta(t: *const SpinmixTable, out: *mut f64) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        *out = eta_of(&obj(t)?.0, None).map_err(fail)?.eta;
        Ok(())
    })
}

/// Absolute spectral gap of the named kernel on the enumerated system.
///
/// # Safety
/// Handles must be live, `table` built from `sys`, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_spectral_gap(
    sys: *const SpinmixSystem,
    table: *const SpinmixTable,
    kernel: *const c_char,
    out: *mut f64,
) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        let sys = &obj(sys)?.0;
        let spec = DynamicsSpec {
            kernel: str_arg(kernel)?.to_string(),
            ..DynamicsSpec::default()
        };
        let k = build_kernel(&spec, sys).map_err(fail)?;
        let p = induced_matrix_on(&k, sys, &obj(table)?.0).map_err(fail)?;
        *out = spectral_gap(&p).map_err(fail)?;
        Ok(())
    })
}

/// A chain started from the first constant configuration in the support.
///
/// # Safety
/// `sys` must be a live handle, `kernel` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_sampler_new(
    sys: *const SpinmixSystem,
    kernel: *const c_char,
    seed: u64,
    out: *mut *mut SpinmixSampler,
) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        let sys = obj(sys)?.0.clone();
        let spec = DynamicsSpec {
            kernel: str_arg(kernel)?.to_string(),
            ..DynamicsSpec::default()
        };
        let kernel = build_kernel(&spec, &sys).map_err(fail)?;
        let state = (0..sys.q() as Spin)
            .find_map(|s| ChainState::uniform_fill(&sys, s).ok())
            .ok_or_else(|| fail(Error::EmptyConditional))?;
        *out = Box::into_raw(Box::new(SpinmixSampler {
            sys,
            kernel,
            state,
            rng: replica_rng(seed, 0),
        }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`spinmix_sampler_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_sampler_free(s: *mut SpinmixSampler) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Advances the chain by `steps` kernel steps.
///
/// # Safety
/// `s` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn spinmix_sampler_step(s: *mut SpinmixSampler, steps: u64) -> SpinmixStatus {
    guard(|| {
        let s = s.as_mut().ok_or_else(|| {
            set_error("null handle".into());
            SpinmixStatus::NullPointer
        })?;
        for _ in 0..steps {
            s.kernel.step(&s.sys, &mut s.state, &mut s.rng).map_err(fail)?;
        }
        Ok(())
    })
}

/// Copies the current configuration into `buf`, which holds `len` spins.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn spinmix_sampler_state(s: *const SpinmixSampler, buf: *mut u8, len: usize) -> SpinmixStatus {
    guard(|| {
        out_ptr(buf)?;
        let s = obj(s)?;
        let cfg = &s.state.config;
        if len < cfg.len() {
            return Err(fail(Error::InvalidParameter(format!("buffer holds {len} spins, need {}", cfg.len()))));
        }
        ptr::copy_nonoverlapping(cfg.as_ptr(), buf, cfg.len());
        Ok(())
    })
}

/// Runs a TOML experiment config and returns the JSON report in `out`, to
/// be released with [`spinmix_string_free`].
///
/// # Safety
/// `config` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spinmix_run_config(config: *const c_char, out: *mut *mut c_char) -> SpinmixStatus {
    guard(|| {
        out_ptr(out)?;
        let cfg = ExperimentConfig::from_toml(str_arg(config)?).map_err(fail)?;
        let report = run(&cfg).map_err(fail)?;
        *out = CString::new(report.to_json()).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn spinmix_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
