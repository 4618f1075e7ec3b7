//! C interface to `spinchannel`.
//!
//! Every function returns an [`SpcStatus`]. On failure a message is stored
//! per thread and can be copied out with [`spc_last_error_message`]. Specs
//! and trajectories are opaque handles that must be released with their
//! `_free` function. Panics never cross the boundary; they are reported as
//! [`SpcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Matrix4;
use num_complex::Complex64;
use spinchannel::config::parse_config;
use spinchannel::experiments::{run_on_grid, SolverChoice, SolverConfig, TimeGrid};
use spinchannel::model::{
    dipolar_coupling, khz_to_rate, spaced_spec, uniform_spec, ChannelSpec, GeometryKind,
};
use spinchannel::observables::{concurrence, entanglement_of_formation, Trajectory, TwoQubitState};
use spinchannel::Error;

/// Result codes. The non-zero values match the command-line exit codes.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Capability = 3,
    Convergence = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SpcGeometry {
    Chain = 0,
    Ladder = 1,
}

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SpcSolver {
    Auto = 0,
    Dense = 1,
    Tebd = 2,
}

/// Opaque channel description.
pub struct SpcSpec {
    inner: ChannelSpec,
}

/// Opaque sampled time series.
pub struct SpcTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SpcStatus {
    match e.exit_code() {
        3 => SpcStatus::Capability,
        4 => SpcStatus::Convergence,
        5 => SpcStatus::Numerical,
        6 => SpcStatus::Io,
        _ => SpcStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null(name: &'static str) -> Fail {
    Fail::Null(name)
}

fn checked<F: FnOnce() -> Result<(), Fail>>(f: F) -> SpcStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (SpcStatus::Ok, String::new()),
        Ok(Err(Fail::Null(name))) => (SpcStatus::NullPointer, format!("{name} is null")),
        Ok(Err(Fail::Core(e))) => (status_of(&e), e.to_string()),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (SpcStatus::Panic, format!("internal panic: {msg}"))
        }
    };
    set_error(msg);
    status
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn spc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Dipolar coupling at distance `r_nm`, in rad/µs.
///
/// # Safety
/// `out` must be null or point to a writable `double`.
#[no_mangle]
pub unsafe extern "C" fn spc_dipolar_coupling(r_nm: f64, out: *mut f64) -> SpcStatus {
    checked(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = dipolar_coupling(r_nm)?;
        Ok(())
    })
}

fn kind(g: SpcGeometry) -> GeometryKind {
    match g {
        SpcGeometry::Chain => GeometryKind::Chain,
        SpcGeometry::Ladder => GeometryKind::Ladder,
    }
}

/// Uniform channel of `n` sites between NVs `separation_nm` apart. Rates
/// are in kHz.
///
/// # Safety
/// `out` must be null or point to a writable handle slot. The handle is
/// owned by the caller and released with [`spc_spec_free`].
#[no_mangle]
pub unsafe extern "C" fn spc_spec_uniform(
    geometry: SpcGeometry,
    n: usize,
    separation_nm: f64,
    gamma_nv_khz: f64,
    gamma_c_khz: f64,
    out: *mut *mut SpcSpec,
) -> SpcStatus {
    checked(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = uniform_spec(
            kind(geometry),
            n,
            separation_nm,
            khz_to_rate(gamma_nv_khz),
            khz_to_rate(gamma_c_khz),
        )?;
        *out = Box::into_raw(Box::new(SpcSpec { inner }));
        Ok(())
    })
}

/// Uniform channel of `n` sites with fixed spacing `spacing_nm`.
///
/// # Safety
/// As [`spc_spec_uniform`].
#[no_mangle]
pub unsafe extern "C" fn spc_spec_spaced(
    geometry: SpcGeometry,
    n: usize,
    spacing_nm: f64,
    gamma_nv_khz: f64,
    gamma_c_khz: f64,
    out: *mut *mut SpcSpec,
) -> SpcStatus {
    checked(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inner = spaced_spec(
            kind(geometry),
            n,
            spacing_nm,
            khz_to_rate(gamma_nv_khz),
            khz_to_rate(gamma_c_khz),
        )?;
        *out = Box::into_raw(Box::new(SpcSpec { inner }));
        Ok(())
    })
}

/// Number of channel spins, the length of a missing mask.
///
/// # Safety
/// `spec` must be a live handle or null; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn spc_spec_channel_spins(spec: *const SpcSpec, out: *mut usize) -> SpcStatus {
    checked(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = spec.inner.geometry.channel_spins();
        Ok(())
    })
}

/// Marks channel spins as missing; `mask[i] != 0` removes spin `i`.
///
/// # Safety
/// `spec` must be a live handle; `mask` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn spc_spec_set_missing(
    spec: *mut SpcSpec,
    mask: *const u8,
    len: usize,
) -> SpcStatus {
    checked(|| {
        let spec = spec.as_mut().ok_or_else(|| null("spec"))?;
        if mask.is_null() {
            return Err(null("mask"));
        }
        let bits = std::slice::from_raw_parts(mask, len).iter().map(|&b| b != 0).collect();
        spec.inner = spec.inner.with_missing(bits)?;
        Ok(())
    })
}

/// Releases a spec handle. Null is ignored.
///
/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spc_spec_free(spec: *mut SpcSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Evolves the singlet initial state. Non-positive `dt_us` or negative
/// `t_max_us` select the default grid; `chi_max` is used by the tensor
/// backend only.
///
/// # Safety
/// `spec` must be a live handle; `out` null or a writable handle slot. The
/// trajectory is released with [`spc_trajectory_free`].
#[no_mangle]
pub unsafe extern "C" fn spc_evolve(
    spec: *const SpcSpec,
    solver: SpcSolver,
    dt_us: f64,
    t_max_us: f64,
    chi_max: usize,
    out: *mut *mut SpcTrajectory,
) -> SpcStatus {
    checked(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let cfg = SolverConfig {
            choice: match solver {
                SpcSolver::Auto => SolverChoice::Auto,
                SpcSolver::Dense => SolverChoice::Dense,
                SpcSolver::Tebd => SolverChoice::Tebd,
            },
            dt: (dt_us > 0.0).then_some(dt_us),
            t_max: (t_max_us >= 0.0).then_some(t_max_us),
            chi_schedule: vec![chi_max.max(1)],
            ..SolverConfig::default()
        };
        let grid: TimeGrid = cfg.time_grid(&spec.inner)?;
        let run = run_on_grid(&spec.inner, &cfg, grid)?;
        *out = Box::into_raw(Box::new(SpcTrajectory { inner: run.trajectory }));
        Ok(())
    })
}

/// Number of samples.
///
/// # Safety
/// `traj` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spc_trajectory_len(traj: *const SpcTrajectory, out: *mut usize) -> SpcStatus {
    checked(|| {
        let traj = traj.as_ref().ok_or_else(|| null("traj"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = traj.inner.len();
        Ok(())
    })
}

/// Sample `index`: time in µs, E, trace and purity or discarded weight.
/// Any output pointer may be null.
///
/// # Safety
/// `traj` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn spc_trajectory_sample(
    traj: *const SpcTrajectory,
    index: usize,
    time_us: *mut f64,
    e: *mut f64,
    trace: *mut f64,
    aux: *mut f64,
) -> SpcStatus {
    checked(|| {
        let t = &traj.as_ref().ok_or_else(|| null("traj"))?.inner;
        if index >= t.len() {
            return Err(Error::Usage(format!(
                "sample {index} out of range for {} samples",
                t.len()
            ))
            .into());
        }
        for (p, v) in [(time_us, t.times[index]), (e, t.e[index]), (trace, t.trace[index]), (aux, t.aux[index])] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Maximum E and the earliest time it is reached.
///
/// # Safety
/// `traj` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn spc_trajectory_max_e(
    traj: *const SpcTrajectory,
    e_max: *mut f64,
    t_at_max_us: *mut f64,
) -> SpcStatus {
    checked(|| {
        let t = &traj.as_ref().ok_or_else(|| null("traj"))?.inner;
        let e_out = e_max.as_mut().ok_or_else(|| null("e_max"))?;
        let t_out = t_at_max_us.as_mut().ok_or_else(|| null("t_at_max_us"))?;
        let (e, at) = spinchannel::observables::max_e(t)?;
        *e_out = e;
        *t_out = at;
        Ok(())
    })
}

/// Releases a trajectory handle. Null is ignored.
///
/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spc_trajectory_free(traj: *mut SpcTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

unsafe fn two_qubit(re: *const f64, im: *const f64) -> Result<TwoQubitState, Fail> {
    if re.is_null() {
        return Err(null("re"));
    }
    let re = std::slice::from_raw_parts(re, 16);
    let im = if im.is_null() { None } else { Some(std::slice::from_raw_parts(im, 16)) };
    let m = Matrix4::from_fn(|r, c| {
        let k = 4 * r + c;
        Complex64::new(re[k], im.map_or(0.0, |v| v[k]))
    });
    Ok(TwoQubitState::new(m)?)
}

/// Wootters concurrence of a two-qubit density matrix given row-major as
/// real and imaginary parts; `im` may be null for a real matrix.
///
/// # Safety
/// `re` (and `im` if non-null) must point to 16 readable doubles.
#[no_mangle]
pub unsafe extern "C" fn spc_concurrence(re: *const f64, im: *const f64, out: *mut f64) -> SpcStatus {
    checked(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = concurrence(&two_qubit(re, im)?)?;
        Ok(())
    })
}

/// Entanglement of formation, with the same input layout as
/// [`spc_concurrence`].
///
/// # Safety
/// As [`spc_concurrence`].
#[no_mangle]
pub unsafe extern "C" fn spc_entanglement_of_formation(
    re: *const f64,
    im: *const f64,
    out: *mut f64,
) -> SpcStatus {
    checked(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = entanglement_of_formation(&two_qubit(re, im)?)?;
        Ok(())
    })
}

/// Runs a configuration given as text and writes its output files.
///
/// # Safety
/// `config` must be a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn spc_run_config(config: *const c_char) -> SpcStatus {
    checked(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| Error::Usage("configuration is not UTF-8".into()))?;
        spinchannel::run::execute(&parse_config(text)?)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message() -> String {
        let mut buf = vec![0 as c_char; 256];
        let n = unsafe { spc_last_error_message(buf.as_mut_ptr(), buf.len()) };
        let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
        assert_eq!(s.len(), n.min(255));
        s
    }

    #[test]
    fn status_codes_follow_errors() {
        let mut x = 0.0;
        assert_eq!(unsafe { spc_dipolar_coupling(-1.0, &mut x) }, SpcStatus::InvalidArgument);
        assert!(message().contains("domain"));
        assert_eq!(unsafe { spc_dipolar_coupling(1.0, ptr::null_mut()) }, SpcStatus::NullPointer);
        assert_eq!(unsafe { spc_dipolar_coupling(1.0, &mut x) }, SpcStatus::Ok);
        assert_eq!(message(), "");
    }

    #[test]
    fn panics_are_contained() {
        assert_eq!(checked(|| panic!("boom")), SpcStatus::Panic);
        assert!(message().contains("boom"));
    }

    #[test]
    fn truncated_message() {
        let _ = unsafe { spc_dipolar_coupling(f64::NAN, &mut 0.0) };
        let mut buf = [0 as c_char; 4];
        let n = unsafe { spc_last_error_message(buf.as_mut_ptr(), 4) };
        assert!(n > 3);
        assert_eq!(buf[3], 0);
    }
}
