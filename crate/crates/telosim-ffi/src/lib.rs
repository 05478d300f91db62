//! C interface: opaque handles over the simulation library, integer
//! status codes, and a per-thread error message.
//!
//! Every fallible call returns `TELOSIM_OK` or a negative status code;
//! on failure `telosim_last_error` describes what went wrong. Handles
//! returned through `out` parameters are owned by the caller and must be
//! released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use telosim::model::{BirthRate, ModelError, ModelSpec, TelomereVector};
use telosim::population::{simulate_tree_aged, SimulationResult};
use telosim::profile::{snapshot_population, ProfileError};
use telosim::rng::StreamKey;
use telosim::verify::{default_expansion_grid, verify_renewal_expansion};

/// The call succeeded.
pub const TELOSIM_OK: i32 = 0;
/// A required pointer argument was null.
pub const TELOSIM_NULL_POINTER: i32 = -1;
/// An argument was rejected; see `telosim_last_error`.
pub const TELOSIM_INVALID_ARGUMENT: i32 = -2;
/// The computation started but could not finish; see `telosim_last_error`.
pub const TELOSIM_RUN_FAILED: i32 = -3;
/// The library panicked; state may be inconsistent.
pub const TELOSIM_PANIC: i32 = -4;

/// A validated model. Opaque; create with `telosim_model1_new` or
/// `telosim_model2_new`, release with `telosim_model_free`.
pub struct TelosimModel {
    inner: ModelSpec,
}

/// One finished population simulation. Opaque; release with
/// `telosim_result_free`.
pub struct TelosimResult {
    inner: SimulationResult,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
}

fn model_error(e: ModelError) -> i32 {
    set_error(e);
    TELOSIM_INVALID_ARGUMENT
}

fn guard<F: FnOnce() -> i32>(f: F) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            TELOSIM_PANIC
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn telosim_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn birth_from_raw(coeffs: *const f64, n_coeffs: usize) -> Result<BirthRate, ModelError> {
    if n_coeffs == 0 {
        Ok(BirthRate::age_linear())
    } else {
        let slice = std::slice::from_raw_parts(coeffs, n_coeffs);
        if n_coeffs == 1 {
            BirthRate::constant(slice[0])
        } else {
            BirthRate::poly(slice.to_vec())
        }
    }
}

unsafe fn write_model(
    out: *mut *mut TelosimModel,
    built: Result<ModelSpec, ModelError>,
) -> i32 {
    match built {
        Ok(inner) => {
            out.write(Box::into_raw(Box::new(TelosimModel { inner })));
            TELOSIM_OK
        }
        Err(e) => model_error(e),
    }
}

/// Build the bounded-lengthening preset: shortening uniform on
/// `[0, delta]`, lengthening on every coordinate with width
/// `delta_cap / (x + 1)`, lengthening probability `gamma`.
///
/// `birth_coeffs` selects the division rate: pass null with
/// `n_coeffs = 0` for the age-proportional rate, one value for a constant
/// rate, or polynomial coefficients in increasing degree.
///
/// # Safety
///
/// `birth_coeffs` must point to `n_coeffs` readable doubles unless
/// `n_coeffs` is zero; `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn telosim_model1_new(
    k: usize,
    delta: f64,
    delta_cap: f64,
    gamma: f64,
    birth_coeffs: *const f64,
    n_coeffs: usize,
    out: *mut *mut TelosimModel,
) -> i32 {
    if out.is_null() || (birth_coeffs.is_null() && n_coeffs > 0) {
        return TELOSIM_NULL_POINTER;
    }
    guard(|| {
        let built = birth_from_raw(birth_coeffs, n_coeffs)
            .and_then(|birth| ModelSpec::model1(k, delta, delta_cap, gamma, birth));
        write_model(out, built)
    })
}

/// Build the per-coordinate lengthening preset: shortening uniform on
/// `[0, delta]`, lengthening uniform on `[0, big_delta]`, coordinate
/// lengthening probability `q0 (1 + x / x_scale)^{-p}`. Parameter
/// combinations whose senescence mass is too heavy are rejected.
///
/// # Safety
///
/// Same pointer contract as `telosim_model1_new`.
#[no_mangle]
pub unsafe extern "C" fn telosim_model2_new(
    k: usize,
    delta: f64,
    big_delta: f64,
    q0: f64,
    x_scale: f64,
    p: f64,
    birth_coeffs: *const f64,
    n_coeffs: usize,
    out: *mut *mut TelosimModel,
) -> i32 {
    if out.is_null() || (birth_coeffs.is_null() && n_coeffs > 0) {
        return TELOSIM_NULL_POINTER;
    }
    guard(|| {
        let built = birth_from_raw(birth_coeffs, n_coeffs)
            .and_then(|birth| ModelSpec::model2(k, delta, big_delta, q0, x_scale, p, birth));
        write_model(out, built)
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
///
/// `model` must be a pointer returned by a constructor and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn telosim_model_free(model: *mut TelosimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of telomere coordinates (`2k`), or 0 for a null handle.
///
/// # Safety
///
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn telosim_model_dim(model: *const TelosimModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Simulate one population tree from a cell with the given coordinates
/// and age, up to `horizon`, stopping early if the population exceeds
/// `cap`. The same seed reproduces the same tree.
///
/// # Safety
///
/// `init` must point to `telosim_model_dim(model)` readable doubles and
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn telosim_simulate(
    model: *const TelosimModel,
    init: *const f64,
    init_age: f64,
    horizon: f64,
    cap: usize,
    seed: u64,
    out: *mut *mut TelosimResult,
) -> i32 {
    let Some(model) = model.as_ref() else {
        return TELOSIM_NULL_POINTER;
    };
    if init.is_null() || out.is_null() {
        return TELOSIM_NULL_POINTER;
    }
    guard(|| {
        let dim = model.inner.dim();
        let values = std::slice::from_raw_parts(init, dim).to_vec();
        let initial = match TelomereVector::new(model.inner.k(), values) {
            Ok(v) => v,
            Err(e) => return model_error(e),
        };
        match simulate_tree_aged(
            &model.inner,
            &initial,
            init_age,
            horizon,
            cap,
            StreamKey::root(seed),
        ) {
            Ok(inner) => {
                out.write(Box::into_raw(Box::new(TelosimResult { inner, dim })));
                TELOSIM_OK
            }
            Err(e) => {
                set_error(e);
                TELOSIM_INVALID_ARGUMENT
            }
        }
    })
}

/// Release a simulation result. Null is ignored.
///
/// # Safety
///
/// `result` must be a pointer returned by `telosim_simulate` and not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn telosim_result_free(result: *mut TelosimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of cells alive at the horizon, or 0 for a null handle.
///
/// # Safety
///
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn telosim_result_alive_count(result: *const TelosimResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.alive.len())
}

/// Number of senescent cells produced, or 0 for a null handle.
///
/// # Safety
///
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn telosim_result_senescent_count(result: *const TelosimResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.senescent)
}

/// Number of divisions in the tree, or 0 for a null handle.
///
/// # Safety
///
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn telosim_result_division_count(result: *const TelosimResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.divisions())
}

/// Whether the run stopped early at the cell cap.
///
/// # Safety
///
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn telosim_result_capped(result: *const TelosimResult) -> bool {
    result.as_ref().is_some_and(|r| r.inner.capped)
}

/// Copy the coordinates and birth time of one alive cell, indexed from 0
/// in deterministic simulation order.
///
/// # Safety
///
/// `out_x` must point to `telosim_model_dim` writable doubles and
/// `out_birth_time` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn telosim_result_alive_cell(
    result: *const TelosimResult,
    index: usize,
    out_x: *mut f64,
    out_birth_time: *mut f64,
) -> i32 {
    let Some(result) = result.as_ref() else {
        return TELOSIM_NULL_POINTER;
    };
    if out_x.is_null() || out_birth_time.is_null() {
        return TELOSIM_NULL_POINTER;
    }
    let Some(cell) = result.inner.alive.get(index) else {
        set_error(format!(
            "alive cell index {index} out of range; {} cells",
            result.inner.alive.len()
        ));
        return TELOSIM_INVALID_ARGUMENT;
    };
    std::ptr::copy_nonoverlapping(cell.x.as_slice().as_ptr(), out_x, result.dim);
    out_birth_time.write(cell.birth_time);
    TELOSIM_OK
}

/// Estimate the exponential growth rate from `replicates` trees started
/// at the same length `init_x` on every coordinate: counts are averaged
/// on a grid over `[t_burn, horizon]` and fitted on a log scale. Writes
/// the rate and its standard error.
///
/// # Safety
///
/// `out_rate` and `out_se` must each point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn telosim_growth_estimate(
    model: *const TelosimModel,
    init_x: f64,
    init_age: f64,
    t_burn: f64,
    horizon: f64,
    replicates: usize,
    cap: usize,
    seed: u64,
    out_rate: *mut f64,
    out_se: *mut f64,
) -> i32 {
    let Some(model) = model.as_ref() else {
        return TELOSIM_NULL_POINTER;
    };
    if out_rate.is_null() || out_se.is_null() {
        return TELOSIM_NULL_POINTER;
    }
    guard(|| {
        let initial = match TelomereVector::constant(model.inner.k(), init_x) {
            Ok(v) => v,
            Err(e) => return model_error(e),
        };
        match snapshot_population(
            &model.inner,
            &initial,
            init_age,
            t_burn,
            horizon,
            replicates,
            cap,
            StreamKey::root(seed),
        ) {
            Ok(snap) => {
                out_rate.write(snap.growth.rate);
                out_se.write(snap.growth.rate_se);
                TELOSIM_OK
            }
            Err(e) => {
                let code = match &e {
                    ProfileError::Capped { .. } | ProfileError::Extinct => TELOSIM_RUN_FAILED,
                    _ => TELOSIM_INVALID_ARGUMENT,
                };
                set_error(e);
                code
            }
        }
    })
}

/// Run the renewal expansion certificate on the model's default point
/// grid with `paths_per_point` Monte Carlo lines per point, and write
/// whether every point cleared the threshold by three standard errors.
///
/// # Safety
///
/// `out_passed` must point to one writable bool.
#[no_mangle]
pub unsafe extern "C" fn telosim_check_renewal_expansion(
    model: *const TelosimModel,
    paths_per_point: usize,
    seed: u64,
    out_passed: *mut bool,
) -> i32 {
    let Some(model) = model.as_ref() else {
        return TELOSIM_NULL_POINTER;
    };
    if out_passed.is_null() {
        return TELOSIM_NULL_POINTER;
    }
    if paths_per_point == 0 {
        set_error("paths_per_point must be positive");
        return TELOSIM_INVALID_ARGUMENT;
    }
    guard(|| {
        let grid = default_expansion_grid(&model.inner);
        match verify_renewal_expansion(&model.inner, &grid, paths_per_point, StreamKey::root(seed))
        {
            Ok(cert) => {
                out_passed.write(cert.passed);
                TELOSIM_OK
            }
            Err(e) => {
                set_error(e);
                TELOSIM_RUN_FAILED
            }
        }
    })
}
