//! Exercises the C surface the way a foreign caller would: raw pointers,
//! status codes, and the per-thread error message.

use std::ffi::CStr;
use std::ptr;

use telosim_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(telosim_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn new_model2_small() -> *mut TelosimModel {
    let mut model = ptr::null_mut();
    let code = unsafe {
        telosim_model2_new(1, 1.0, 100.0, 0.97, 50.0, 2.0, ptr::null(), 0, &mut model)
    };
    assert_eq!(code, TELOSIM_OK, "{}", last_error());
    assert!(!model.is_null());
    model
}

#[test]
fn null_handles_are_rejected_not_dereferenced() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            telosim_simulate(ptr::null(), [50.0, 50.0].as_ptr(), 0.0, 1.0, 100, 0, &mut out),
            TELOSIM_NULL_POINTER
        );
        assert_eq!(telosim_model_dim(ptr::null()), 0);
        assert_eq!(telosim_result_alive_count(ptr::null()), 0);
        assert!(!telosim_result_capped(ptr::null()));
        telosim_model_free(ptr::null_mut());
        telosim_result_free(ptr::null_mut());

        let model = new_model2_small();
        assert_eq!(
            telosim_simulate(model, ptr::null(), 0.0, 1.0, 100, 0, &mut out),
            TELOSIM_NULL_POINTER
        );
        assert_eq!(
            telosim_model2_new(1, 1.0, 100.0, 0.97, 50.0, 2.0, ptr::null(), 3, &mut out as *mut _ as *mut *mut TelosimModel),
            TELOSIM_NULL_POINTER
        );
        telosim_model_free(model);
    }
}

#[test]
fn invalid_parameters_set_a_readable_message() {
    unsafe {
        let mut model = ptr::null_mut();
        let code =
            telosim_model2_new(16, 10.0, 460.0, 1.0, 50.0, 2.0, ptr::null(), 0, &mut model);
        assert_eq!(code, TELOSIM_INVALID_ARGUMENT);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        let code =
            telosim_model2_new(16, 10.0, 470.0, 1.0, 50.0, 2.0, ptr::null(), 0, &mut model);
        assert_eq!(code, TELOSIM_OK, "{}", last_error());
        assert_eq!(telosim_model_dim(model), 32);
        telosim_model_free(model);

        let bad_gamma = telosim_model1_new(1, 1.0, 100.0, 1.5, ptr::null(), 0, &mut model);
        assert_eq!(bad_gamma, TELOSIM_INVALID_ARGUMENT);

        let zero_rate = [0.0f64];
        let code = telosim_model1_new(1, 1.0, 100.0, 0.2, zero_rate.as_ptr(), 1, &mut model);
        assert_eq!(code, TELOSIM_INVALID_ARGUMENT);
    }
}

#[test]
fn simulation_is_reproducible_through_the_handle() {
    unsafe {
        let model = new_model2_small();
        let dim = telosim_model_dim(model);
        assert_eq!(dim, 2);
        let init = [50.0, 50.0];

        let run = |seed: u64| {
            let mut result = ptr::null_mut();
            let code = telosim_simulate(model, init.as_ptr(), 0.0, 8.0, 100_000, seed, &mut result);
            assert_eq!(code, TELOSIM_OK, "{}", last_error());
            result
        };
        let a = run(11);
        let b = run(11);
        let c = run(12);

        assert!(telosim_result_alive_count(a) > 0);
        assert_eq!(telosim_result_alive_count(a), telosim_result_alive_count(b));
        assert_eq!(telosim_result_division_count(a), telosim_result_division_count(b));
        assert!(!telosim_result_capped(a));

        let read_cell = |r: *const TelosimResult, i: usize| {
            let mut x = [0.0f64; 2];
            let mut birth = 0.0f64;
            let code = telosim_result_alive_cell(r, i, x.as_mut_ptr(), &mut birth);
            assert_eq!(code, TELOSIM_OK, "{}", last_error());
            (x, birth)
        };
        for i in [0, telosim_result_alive_count(a) - 1] {
            assert_eq!(read_cell(a, i), read_cell(b, i));
        }

        let differs = telosim_result_alive_count(a) != telosim_result_alive_count(c)
            || read_cell(a, 0) != read_cell(c, 0);
        assert!(differs, "distinct seeds produced identical trees");

        let mut x = [0.0f64; 2];
        let mut birth = 0.0f64;
        let out_of_range = telosim_result_alive_cell(
            a,
            telosim_result_alive_count(a),
            x.as_mut_ptr(),
            &mut birth,
        );
        assert_eq!(out_of_range, TELOSIM_INVALID_ARGUMENT);
        assert!(last_error().contains("out of range"));

        telosim_result_free(a);
        telosim_result_free(b);
        telosim_result_free(c);
        telosim_model_free(model);
    }
}

#[test]
fn growth_and_renewal_checks_run_end_to_end() {
    unsafe {
        let model = new_model2_small();

        let mut rate = 0.0f64;
        let mut se = 0.0f64;
        let code =
            telosim_growth_estimate(model, 50.0, 0.0, 3.0, 8.0, 64, 100_000, 5, &mut rate, &mut se);
        assert_eq!(code, TELOSIM_OK, "{}", last_error());
        assert!((0.3..1.0).contains(&rate), "rate = {rate}");
        assert!(se > 0.0 && se < 0.1);

        let backwards = telosim_growth_estimate(
            model, 50.0, 0.0, 8.0, 3.0, 64, 100_000, 5, &mut rate, &mut se,
        );
        assert_eq!(backwards, TELOSIM_INVALID_ARGUMENT);

        let mut passed = false;
        let code = telosim_check_renewal_expansion(model, 4000, 7, &mut passed);
        assert_eq!(code, TELOSIM_OK, "{}", last_error());
        assert!(passed);

        assert_eq!(
            telosim_check_renewal_expansion(model, 0, 7, &mut passed),
            TELOSIM_INVALID_ARGUMENT
        );

        telosim_model_free(model);
    }
}

#[test]
fn generated_header_covers_the_surface() {
    let header = include_str!("../include/telosim.h");
    assert!(header.contains("#ifndef TELOSIM_H"));
    for symbol in [
        "typedef struct TelosimModel TelosimModel;",
        "typedef struct TelosimResult TelosimResult;",
        "#define TELOSIM_OK 0",
        "telosim_model1_new",
        "telosim_model2_new",
        "telosim_model_free",
        "telosim_simulate",
        "telosim_result_alive_cell",
        "telosim_growth_estimate",
        "telosim_check_renewal_expansion",
        "telosim_last_error",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}
