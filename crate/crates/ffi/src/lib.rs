//! C interface to `hwflow`.
//!
//! Scenarios and trajectories are opaque handles created by the library and
//! released with the matching `*_free` function. Every fallible call
//! returns an [`HwStatus`]; the message of the last failure on the calling
//! thread is available from [`hw_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hwflow::diagnostics::j_functional;
use hwflow::discretization::Discrete;
use hwflow::io::{self, BundleOptions};
use hwflow::{Error, RunOptions, Scenario, Trajectory, ValidatedScenario};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad input: config syntax or schema, model or discretization.
    Validation = 3,
    /// Failure while running, e.g. a density leaving its bounds.
    Runtime = 4,
    Io = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque scenario handle.
pub struct HwScenario {
    scenario: Scenario,
}

/// Opaque handle to a finished run.
pub struct HwTrajectory {
    validated: ValidatedScenario,
    trajectory: Trajectory,
}

/// Planned discretization of a scenario.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HwPlan {
    pub n_cells: usize,
    pub n_classes: usize,
    pub n_steps: usize,
    pub dx: f64,
    pub dt: f64,
    pub lambda: f64,
    pub cfl_bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> HwStatus {
    set_error(e.to_string());
    match e {
        Error::Io(_) => HwStatus::Io,
        e if e.is_validation() => HwStatus::Validation,
        _ => HwStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> HwStatus) -> HwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            HwStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, HwStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(HwStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not UTF-8");
        HwStatus::InvalidUtf8
    })
}

macro_rules! need {
    ($p:expr) => {
        match $p {
            Some(v) => v,
            None => {
                set_error(concat!("null pointer: ", stringify!($p)));
                return HwStatus::NullPointer;
            }
        }
    };
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return status_of(&e),
        }
    };
}

/// Message of the last error on this thread; empty if none. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn emit_scenario(scenario: Scenario, out: *mut *mut HwScenario) -> HwStatus {
    unsafe { *out = Box::into_raw(Box::new(HwScenario { scenario })) };
    HwStatus::Ok
}

/// Parses a scenario file's contents.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_from_toml(text: *const c_char, out: *mut *mut HwScenario) -> HwStatus {
    guard(|| {
        need!((!out.is_null()).then_some(()));
        let text = match str_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        emit_scenario(tri!(io::parse_scenario_str(text)), out)
    })
}

/// Builds a preset from its TOML description, e.g.
/// `name = "av-penetration"\np = 0.5\nspeed = "triangular"`.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_from_preset(spec: *const c_char, out: *mut *mut HwScenario) -> HwStatus {
    guard(|| {
        need!((!out.is_null()).then_some(()));
        let spec = match str_arg(spec) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let preset = tri!(io::parse_preset_str(spec));
        emit_scenario(tri!(preset.build()), out)
    })
}

/// Overrides discretization parameters; pass NaN to keep a value. A
/// positive `dt` forces the time step, zero or NaN restores planning.
///
/// # Safety
/// `s` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_set_discretization(
    s: *mut HwScenario,
    dx: f64,
    t_final: f64,
    cfl_safety: f64,
    dt: f64,
) -> HwStatus {
    guard(|| {
        let s = need!(s.as_mut());
        let d = &mut s.scenario.discretization;
        if !dx.is_nan() {
            d.dx = dx;
        }
        if !t_final.is_nan() {
            d.t_final = t_final;
        }
        if !cfl_safety.is_nan() {
            d.cfl_safety = cfl_safety;
        }
        d.dt = (dt > 0.0).then_some(dt);
        HwStatus::Ok
    })
}

/// Validates the scenario and reports the planned grid.
///
/// # Safety
/// `s` must be a handle from this library, `plan` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_check(s: *const HwScenario, plan: *mut HwPlan) -> HwStatus {
    guard(|| {
        let s = need!(s.as_ref());
        let plan = need!(plan.as_mut());
        let vs = tri!(s.scenario.validate());
        let d = tri!(Discrete::build(&vs));
        *plan = HwPlan {
            n_cells: vs.grid.n_cells,
            n_classes: s.scenario.model.n_classes(),
            n_steps: d.time.n_steps,
            dx: vs.grid.dx,
            dt: d.time.dt,
            lambda: d.time.lambda,
            cfl_bound: d.time.cfl_bound,
        };
        HwStatus::Ok
    })
}

/// Serializes the scenario in inline file form. Release the string with
/// [`hw_string_free`].
///
/// # Safety
/// `s` must be a handle from this library, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_to_toml(s: *const HwScenario, out: *mut *mut c_char) -> HwStatus {
    guard(|| {
        let s = need!(s.as_ref());
        need!((!out.is_null()).then_some(()));
        let text = tri!(io::scenario_to_toml(&s.scenario));
        *out = CString::new(text).unwrap_or_default().into_raw();
        HwStatus::Ok
    })
}

/// # Safety
/// `p` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hw_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_free(s: *mut HwScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Runs the scenario to its final time with snapshots at `0` and `T`
/// plus `n_times` extra times.
///
/// # Safety
/// `s` must be a handle from this library; `times` must point to `n_times`
/// doubles (or be null with `n_times == 0`); `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hw_run(
    s: *const HwScenario,
    times: *const f64,
    n_times: usize,
    out: *mut *mut HwTrajectory,
) -> HwStatus {
    guard(|| {
        let s = need!(s.as_ref());
        need!((!out.is_null()).then_some(()));
        let snapshot_times = if n_times > 0 {
            need!((!times.is_null()).then_some(()));
            let mut all = vec![0.0, s.scenario.discretization.t_final];
            all.extend_from_slice(std::slice::from_raw_parts(times, n_times));
            Some(all)
        } else {
            None
        };
        let vs = tri!(s.scenario.validate());
        let options = RunOptions {
            snapshot_times,
            ..RunOptions::default()
        };
        let trajectory = tri!(hwflow::run(&vs, &options, &mut []));
        *out = Box::into_raw(Box::new(HwTrajectory {
            validated: vs,
            trajectory,
        }));
        HwStatus::Ok
    })
}

/// # Safety
/// `t` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_free(t: *mut HwTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of stored snapshots; 0 for a null handle.
///
/// # Safety
/// `t` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_n_snapshots(t: *const HwTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.trajectory.snapshots.len())
}

/// Planned grid of the run.
///
/// # Safety
/// `t` must be a handle from this library, `plan` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_plan(t: *const HwTrajectory, plan: *mut HwPlan) -> HwStatus {
    guard(|| {
        let t = need!(t.as_ref());
        let plan = need!(plan.as_mut());
        let m = &t.trajectory.meta;
        *plan = HwPlan {
            n_cells: m.grid.n_cells,
            n_classes: t.validated.scenario.model.n_classes(),
            n_steps: m.n_steps,
            dx: m.grid.dx,
            dt: m.dt,
            lambda: m.lambda,
            cfl_bound: m.cfl_bound,
        };
        HwStatus::Ok
    })
}

/// Time of snapshot `k`.
///
/// # Safety
/// `t` must be a handle from this library, `time` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_snapshot_time(t: *const HwTrajectory, k: usize, time: *mut f64) -> HwStatus {
    guard(|| {
        let t = need!(t.as_ref());
        let time = need!(time.as_mut());
        match t.trajectory.snapshots.get(k) {
            Some(s) => {
                *time = s.t;
                HwStatus::Ok
            }
            None => {
                set_error(format!("snapshot {k} out of range"));
                HwStatus::OutOfRange
            }
        }
    })
}

/// Copies the cell averages of `class` at snapshot `k` into `buf`, which
/// must hold at least `n_cells` doubles.
///
/// # Safety
/// `t` must be a handle from this library; `buf` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_copy_density(
    t: *const HwTrajectory,
    k: usize,
    class: usize,
    buf: *mut f64,
    len: usize,
) -> HwStatus {
    guard(|| {
        let t = need!(t.as_ref());
        need!((!buf.is_null()).then_some(()));
        let Some(field) = t.trajectory.snapshots.get(k).and_then(|s| s.rho.get(class)) else {
            set_error(format!("snapshot {k} class {class} out of range"));
            return HwStatus::OutOfRange;
        };
        if len < field.len() {
            set_error(format!("buffer holds {len} values, need {}", field.len()));
            return HwStatus::BufferTooSmall;
        }
        ptr::copy_nonoverlapping(field.as_ptr(), buf, field.len());
        HwStatus::Ok
    })
}

/// Time integral of the total variation of the total density.
///
/// # Safety
/// `t` must be a handle from this library, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_j(t: *const HwTrajectory, out: *mut f64) -> HwStatus {
    guard(|| {
        let t = need!(t.as_ref());
        let out = need!(out.as_mut());
        *out = tri!(j_functional(&t.trajectory)).value;
        HwStatus::Ok
    })
}

/// Writes the result bundle into directory `dir`.
///
/// # Safety
/// `t` must be a handle from this library, `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hw_trajectory_write_bundle(t: *const HwTrajectory, dir: *const c_char) -> HwStatus {
    guard(|| {
        let t = need!(t.as_ref());
        let dir = match str_arg(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let opts = BundleOptions {
            stride: 1,
            ..BundleOptions::default()
        };
        tri!(io::write_bundle(&t.validated, &t.trajectory, Path::new(dir), &opts));
        HwStatus::Ok
    })
}
