use std::ffi::{CStr, CString};
use std::ptr;

use fbcsf_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fbcsf_last_error()) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> (i32, *mut FbcsfConfig) {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { fbcsf_config_parse(text.as_ptr(), &mut cfg) };
    (status, cfg)
}

const HALFPLANE: &str = "domain.kind = halfplane\ninitial.r0 = 1\nsolver.n = 128\n";

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(fbcsf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_errors_carry_library_codes_and_messages() {
    let (status, cfg) = parse("domain.kind = disk\nsolver.bogus = 1\n");
    assert_eq!(status, 70);
    assert!(cfg.is_null());
    assert!(last_error().contains("solver.bogus"));
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { fbcsf_config_parse(ptr::null(), &mut out) }, FBCSF_ERR_NULL);
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { fbcsf_config_parse(bad.as_ptr().cast(), &mut out) }, FBCSF_ERR_UTF8);
}

#[test]
fn config_text_reports_needed_length_and_truncates() {
    let (status, cfg) = parse(HALFPLANE);
    assert_eq!(status, FBCSF_OK);
    assert_eq!(last_error(), "");
    let mut needed = 0usize;
    assert_eq!(unsafe { fbcsf_config_text(cfg, ptr::null_mut(), 0, &mut needed) }, FBCSF_OK);
    let mut buf = vec![0 as std::ffi::c_char; needed + 1];
    assert_eq!(unsafe { fbcsf_config_text(cfg, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, FBCSF_OK);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert_eq!(text.len(), needed);
    assert!(text.contains("solver.n = 128"));
    let mut small = [1 as std::ffi::c_char; 8];
    assert_eq!(unsafe { fbcsf_config_text(cfg, small.as_mut_ptr(), 8, ptr::null_mut()) }, FBCSF_OK);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes(), &text.as_bytes()[..7]);
    unsafe { fbcsf_config_free(cfg) };
}

#[test]
fn halfplane_run_through_the_abi() {
    let (_, cfg) = parse(HALFPLANE);
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { fbcsf_simulate(cfg, &mut traj) }, FBCSF_OK, "{}", last_error());
    let n = unsafe { fbcsf_trajectory_len(traj) };
    assert!(n > 10);
    // exact shrinking semicircle: kappa = 1 / sqrt(2 (1/2 - t)), area pi (1/2 - t)
    let mut last = FbcsfSample::default();
    for i in 0..n {
        assert_eq!(unsafe { fbcsf_trajectory_sample(traj, i, &mut last) }, FBCSF_OK);
        let gap = 0.5 - last.t;
        if gap >= 1e-4 {
            assert!(((2.0 * gap).sqrt() * last.kappa_max - 1.0).abs() <= 1e-2, "t = {}", last.t);
            assert!((last.area / (std::f64::consts::PI * gap) - 1.0).abs() <= 1e-2, "t = {}", last.t);
        }
    }
    assert!(0.5 - last.t <= 1e-4);
    assert_eq!(unsafe { fbcsf_trajectory_sample(traj, n, &mut last) }, FBCSF_ERR_RANGE);
    let mut ext = FbcsfExtinction::default();
    assert_eq!(unsafe { fbcsf_estimate_extinction(cfg, traj, &mut ext) }, FBCSF_OK, "{}", last_error());
    assert!((ext.t_ext - 0.5).abs() < 1e-6);
    assert!(ext.x.abs() < 1e-8 && ext.y.abs() < 1e-8);
    unsafe {
        fbcsf_trajectory_free(traj);
        fbcsf_config_free(cfg);
        fbcsf_trajectory_free(ptr::null_mut());
        fbcsf_config_free(ptr::null_mut());
    }
    assert_eq!(unsafe { fbcsf_trajectory_len(ptr::null()) }, 0);
}

#[test]
fn solver_errors_keep_their_code() {
    let (_, cfg) = parse("domain.kind = halfplane\nsolver.n = 8\n");
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { fbcsf_simulate(cfg, &mut traj) }, 13);
    assert!(traj.is_null());
    assert!(last_error().contains("N >= 16"));
    unsafe { fbcsf_config_free(cfg) };
}

#[test]
fn linear_modes() {
    let mut k = 0.0;
    assert_eq!(unsafe { fbcsf_linear_mode_exponent(2, 128, 1.0, 1000, &mut k) }, FBCSF_OK);
    assert!((k - 2.0).abs() < 0.04);
    assert_eq!(unsafe { fbcsf_linear_mode_exponent(20, 64, 1.0, 1000, &mut k) }, FBCSF_ERR_RANGE);
    assert_eq!(unsafe { fbcsf_linear_mode_exponent(2, 128, 1.0, 1000, ptr::null_mut()) }, FBCSF_ERR_NULL);
}

#[test]
fn pipeline_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let (_, cfg) = parse(&format!("{HALFPLANE}linear.n = 64\nlinear.steps = 400\nanalysis.gate_exponents = false\n"));
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut code = -1;
    assert_eq!(unsafe { fbcsf_run_pipeline(cfg, out.as_ptr(), &mut code) }, FBCSF_OK, "{}", last_error());
    assert_eq!(code, 0);
    assert!(dir.path().join("report.txt").is_file());
    unsafe { fbcsf_config_free(cfg) };
}
