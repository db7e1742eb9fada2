use std::ffi::{CStr, CString};
use std::ptr;

use spinmix_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(spinmix_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn system_table_and_eta() {
    unsafe {
        let mut sys = ptr::null_mut();
        let beta = c(&format!("ising:{}", 3f64.ln()));
        assert_eq!(spinmix_system_new(c("path:2").as_ptr(), beta.as_ptr(), &mut sys), SpinmixStatus::Ok);
        assert_eq!(spinmix_system_vertices(sys), 2);
        assert_eq!(spinmix_system_spins(sys), 2);
        let mut t = ptr::null_mut();
        assert_eq!(spinmix_table_new(sys, 1 << 20, &mut t), SpinmixStatus::Ok);
        assert_eq!(spinmix_table_len(t), 4);
        let mut p = 0.0;
        assert_eq!(spinmix_table_prob(t, [1u8, 1].as_ptr(), 2, &mut p), SpinmixStatus::Ok);
        assert!((p - 3.0 / 8.0).abs() < 1e-12);
        let mut eta = 0.0;
        assert_eq!(spinmix_eta(t, &mut eta), SpinmixStatus::Ok);
        assert!((eta - 0.5).abs() < 1e-12);
        let mut gap = 0.0;
        assert_eq!(spinmix_spectral_gap(sys, t, c("glauber").as_ptr(), &mut gap), SpinmixStatus::Ok);
        assert!(gap > 0.0 && gap <= 1.0);
        spinmix_table_free(t);
        spinmix_system_free(sys);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut sys = ptr::null_mut();
        assert_eq!(spinmix_system_new(c("wheel:4").as_ptr(), c("ising:1").as_ptr(), &mut sys), SpinmixStatus::InvalidArgument);
        assert!(last_error().contains("wheel"));
        assert!(sys.is_null());
        assert_eq!(spinmix_system_new(ptr::null(), c("ising:1").as_ptr(), &mut sys), SpinmixStatus::NullPointer);
        assert_eq!(spinmix_system_new(c("grid:6x6").as_ptr(), c("ising:1").as_ptr(), &mut sys), SpinmixStatus::Ok);
        let mut t = ptr::null_mut();
        assert_eq!(spinmix_table_new(sys, 1000, &mut t), SpinmixStatus::CapExceeded);
        let mut s = ptr::null_mut();
        assert_eq!(spinmix_sampler_new(sys, c("metropolis").as_ptr(), 1, &mut s), SpinmixStatus::InvalidArgument);
        spinmix_system_free(sys);
        assert_eq!(spinmix_eta(ptr::null(), &mut 0.0), SpinmixStatus::NullPointer);
        spinmix_system_free(ptr::null_mut());
    }
}

#[test]
fn sampler_is_seeded() {
    let run = |seed: u64| unsafe {
        let mut sys = ptr::null_mut();
        spinmix_system_new(c("cycle:6").as_ptr(), c("potts:3:0.7").as_ptr(), &mut sys);
        let mut s = ptr::null_mut();
        assert_eq!(spinmix_sampler_new(sys, c("sw").as_ptr(), seed, &mut s), SpinmixStatus::Ok);
        assert_eq!(spinmix_sampler_step(s, 25), SpinmixStatus::Ok);
        let mut buf = [0u8; 6];
        assert_eq!(spinmix_sampler_state(s, buf.as_mut_ptr(), 6), SpinmixStatus::Ok);
        assert_eq!(spinmix_sampler_state(s, buf.as_mut_ptr(), 3), SpinmixStatus::InvalidArgument);
        spinmix_sampler_free(s);
        spinmix_system_free(sys);
        buf
    };
    assert_eq!(run(3), run(3));
    let distinct = (0..8).map(run).collect::<std::collections::HashSet<_>>();
    assert!(distinct.len() > 1);
}

#[test]
fn run_config_returns_json() {
    unsafe {
        let mut out = ptr::null_mut();
        let cfg = c("command = \"exact\"\n[system]\ngraph = \"path:3\"\nmodel = \"hardcore:1\"\n");
        assert_eq!(spinmix_run_config(cfg.as_ptr(), &mut out), SpinmixStatus::Ok);
        let json = CStr::from_ptr(out).to_str().unwrap().to_owned();
        spinmix_string_free(out);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["command"], "exact");
        assert_eq!(v["values"]["states"], 5);
        let bad = c("command = \"exact\"\nbogus = 1\n");
        assert_eq!(spinmix_run_config(bad.as_ptr(), &mut out), SpinmixStatus::Parse);
        assert!(last_error().contains("line 2"), "{}", last_error());
    }
}
