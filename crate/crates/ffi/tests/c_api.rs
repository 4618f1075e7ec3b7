use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use spinchannel_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe { spc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn lossless_single_site_transfers_the_singlet() {
    let mut spec = ptr::null_mut();
    let st = unsafe { spc_spec_uniform(SpcGeometry::Chain, 1, 40.0, 0.0, 0.0, &mut spec) };
    assert_eq!(st, SpcStatus::Ok, "{}", last_error());
    let mut g = 0.0;
    assert_eq!(unsafe { spc_dipolar_coupling(20.0, &mut g) }, SpcStatus::Ok);
    let t_star = std::f64::consts::PI / (2f64.sqrt() * g);
    let mut traj = ptr::null_mut();
    let st = unsafe { spc_evolve(spec, SpcSolver::Dense, 0.005 / g, 1.5 * t_star, 0, &mut traj) };
    assert_eq!(st, SpcStatus::Ok, "{}", last_error());
    let (mut e, mut t) = (0.0, 0.0);
    assert_eq!(unsafe { spc_trajectory_max_e(traj, &mut e, &mut t) }, SpcStatus::Ok);
    assert!((e - 1.0).abs() < 1e-3, "{e}");
    assert!((t - t_star).abs() <= 0.005 / g, "{t} vs {t_star}");
    let mut len = 0;
    assert_eq!(unsafe { spc_trajectory_len(traj, &mut len) }, SpcStatus::Ok);
    let mut tr = 0.0;
    let st = unsafe { spc_trajectory_sample(traj, len - 1, ptr::null_mut(), ptr::null_mut(), &mut tr, ptr::null_mut()) };
    assert_eq!(st, SpcStatus::Ok);
    assert!((tr - 1.0).abs() < 1e-8);
    let st = unsafe { spc_trajectory_sample(traj, len, ptr::null_mut(), ptr::null_mut(), &mut tr, ptr::null_mut()) };
    assert_eq!(st, SpcStatus::InvalidArgument);
    unsafe {
        spc_trajectory_free(traj);
        spc_spec_free(spec);
    }
}

#[test]
fn missing_mask_breaks_the_chain() {
    let mut spec = ptr::null_mut();
    unsafe { spc_spec_spaced(SpcGeometry::Chain, 3, 40.0 / 13.0, 0.1, 2.0, &mut spec) };
    let mut m = 0;
    assert_eq!(unsafe { spc_spec_channel_spins(spec, &mut m) }, SpcStatus::Ok);
    assert_eq!(m, 3);
    let bad = [1u8, 0];
    assert_eq!(unsafe { spc_spec_set_missing(spec, bad.as_ptr(), 2) }, SpcStatus::InvalidArgument);
    let mask = [0u8, 1, 0];
    assert_eq!(unsafe { spc_spec_set_missing(spec, mask.as_ptr(), 3) }, SpcStatus::Ok);
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { spc_evolve(spec, SpcSolver::Auto, -1.0, -1.0, 0, &mut traj) }, SpcStatus::Ok);
    let (mut e, mut t) = (1.0, 1.0);
    unsafe { spc_trajectory_max_e(traj, &mut e, &mut t) };
    assert!(e < 1e-9);
    unsafe {
        spc_trajectory_free(traj);
        spc_spec_free(spec);
    }
}

#[test]
fn tensor_backend_through_the_c_api() {
    let mut spec = ptr::null_mut();
    unsafe { spc_spec_uniform(SpcGeometry::Chain, 2, 40.0, 0.1, 2.0, &mut spec) };
    let (mut dense, mut tebd) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { spc_evolve(spec, SpcSolver::Dense, -1.0, -1.0, 0, &mut dense) }, SpcStatus::Ok);
    assert_eq!(unsafe { spc_evolve(spec, SpcSolver::Tebd, -1.0, -1.0, 64, &mut tebd) }, SpcStatus::Ok);
    let (mut a, mut b, mut t) = (0.0, 0.0, 0.0);
    unsafe {
        spc_trajectory_max_e(dense, &mut a, &mut t);
        spc_trajectory_max_e(tebd, &mut b, &mut t);
    }
    assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    unsafe {
        spc_trajectory_free(dense);
        spc_trajectory_free(tebd);
        spc_spec_free(spec);
    }
}

#[test]
fn capability_and_null_errors() {
    let mut spec = ptr::null_mut();
    unsafe { spc_spec_uniform(SpcGeometry::Ladder, 5, 40.0, 0.1, 2.0, &mut spec) };
    let mut traj = ptr::null_mut();
    let st = unsafe { spc_evolve(spec, SpcSolver::Dense, -1.0, -1.0, 0, &mut traj) };
    assert_eq!(st, SpcStatus::Capability);
    assert!(last_error().contains("tensor backend"));
    assert!(traj.is_null());
    unsafe { spc_spec_free(spec) };
    let st = unsafe { spc_evolve(ptr::null(), SpcSolver::Dense, -1.0, -1.0, 0, &mut traj) };
    assert_eq!(st, SpcStatus::NullPointer);
    assert_eq!(last_error(), "spec is null");
    let st = unsafe { spc_spec_uniform(SpcGeometry::Chain, 0, 40.0, 0.1, 2.0, &mut spec) };
    assert_eq!(st, SpcStatus::InvalidArgument);
    unsafe {
        spc_spec_free(ptr::null_mut());
        spc_trajectory_free(ptr::null_mut());
    }
}

#[test]
fn entanglement_of_bell_and_mixed_states() {
    let h = 0.5;
    #[rustfmt::skip]
    let singlet = [
        0.0, 0.0, 0.0, 0.0,
        0.0, h, -h, 0.0,
        0.0, -h, h, 0.0,
        0.0, 0.0, 0.0, 0.0,
    ];
    let mut c = 0.0;
    assert_eq!(unsafe { spc_concurrence(singlet.as_ptr(), ptr::null(), &mut c) }, SpcStatus::Ok);
    assert!((c - 1.0).abs() < 1e-12);
    let mut mixed = [0.0; 16];
    for i in 0..4 {
        mixed[5 * i] = 0.25;
    }
    let mut e = 1.0;
    let im = [0.0; 16];
    assert_eq!(unsafe { spc_entanglement_of_formation(mixed.as_ptr(), im.as_ptr(), &mut e) }, SpcStatus::Ok);
    assert_eq!(e, 0.0);
    let mut skew = mixed;
    skew[1] = 0.3;
    assert_eq!(unsafe { spc_concurrence(skew.as_ptr(), ptr::null(), &mut c) }, SpcStatus::Numerical);
}

#[test]
fn config_text_runs_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let text = CString::new(format!("t_max_us = 0\noutput = {}\n", out.display())).unwrap();
    assert_eq!(unsafe { spc_run_config(text.as_ptr()) }, SpcStatus::Ok, "{}", last_error());
    assert!(std::fs::read_to_string(&out).unwrap().starts_with("time_us,E,trace,"));
    assert!(dir.path().join("run.meta").exists());
    let bad = CString::new("bogus = 1").unwrap();
    assert_eq!(unsafe { spc_run_config(bad.as_ptr()) }, SpcStatus::InvalidArgument);
    assert!(last_error().contains("bogus"));
    assert_eq!(unsafe { spc_run_config(ptr::null()) }, SpcStatus::NullPointer);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(spc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/spinchannel.h");
    let header = std::fs::read_to_string(path).unwrap();
    for name in [
        "spc_last_error_message",
        "spc_version",
        "spc_dipolar_coupling",
        "spc_spec_uniform",
        "spc_spec_spaced",
        "spc_spec_channel_spins",
        "spc_spec_set_missing",
        "spc_spec_free",
        "spc_evolve",
        "spc_trajectory_len",
        "spc_trajectory_sample",
        "spc_trajectory_max_e",
        "spc_trajectory_free",
        "spc_concurrence",
        "spc_entanglement_of_formation",
        "spc_run_config",
        "typedef struct SpcSpec SpcSpec;",
        "SPC_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"spinchannel.h\"\nint main(void) { SpcSpec *s = 0; return spc_spec_uniform(SPC_GEOMETRY_CHAIN, 1, 40.0, 0.1, 2.0, &s) == SPC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; skipped syntax check");
        return;
    };
    assert!(status.success());
}
