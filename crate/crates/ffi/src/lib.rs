//! C ABI over `radmag`.
//!
//! Models are opaque handles created from TOML text or a file and released
//! with [`radmag_model_free`]. Every fallible call returns a [`RadmagStatus`];
//! on failure a description is available from [`radmag_last_error`] on the
//! same thread. Panics never cross the boundary: they are reported as
//! `RADMAG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use radmag::control::{optimize, ControlProblem, OptimizerSettings};
use radmag::dynamics::{conditional_singlet_probability, propagate, IntegratorConfig};
use radmag::metrology::{self, MetrologySettings, Probe};
use radmag::model::{ModelConfig, ModulationSpec, RadicalPairModel};
use radmag::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadmagStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Runtime = 4,
    Panic = 5,
}

/// Opaque model handle.
pub struct RadmagModel {
    model: RadicalPairModel,
    integrator: IntegratorConfig,
}

/// Summary of one propagation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RadmagSimulation {
    pub singlet_yield: f64,
    pub singlet_probability: f64,
    pub conservation_residual: f64,
    pub final_trace: f64,
    pub dt_us: f64,
    pub steps: usize,
}

/// Point flags, OR-ed into `RadmagOrientation::flags`.
pub const RADMAG_FLAG_NON_CONVERGED: u32 = 1;
pub const RADMAG_FLAG_CLAMPED: u32 = 2;
pub const RADMAG_FLAG_NON_CONSERVING: u32 = 4;

/// Estimation at one orientation. `ratio` is NaN where the quantum Fisher
/// information vanishes.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RadmagOrientation {
    pub theta: f64,
    pub phi: f64,
    pub singlet_yield: f64,
    pub singlet_probability: f64,
    pub cfi: f64,
    pub qfi: f64,
    pub ratio: f64,
    pub flags: u32,
}

/// Outcome of a control optimization.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RadmagControl {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub contrast: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stagnated: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RadmagStatus {
    match e {
        Error::ModelConfig(_) | Error::Config(_) => RadmagStatus::Config,
        Error::InvalidParameter(_)
        | Error::InvalidMultiplicity(_)
        | Error::DimensionMismatch { .. }
        | Error::UnsupportedSystem(_) => RadmagStatus::InvalidArgument,
        _ => RadmagStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> RadmagStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RadmagStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            RadmagStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            RadmagStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            RadmagStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    // SAFETY: caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Arg(format!("{name} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(p: *const RadmagModel) -> Result<&'a RadmagModel, Failure> {
    // SAFETY: caller passes a live handle or null.
    unsafe { p.as_ref() }.ok_or(Failure::Null("model"))
}

unsafe fn out_mut<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller passes writable storage or null.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn build_model(config: ModelConfig) -> Result<*mut RadmagModel, Failure> {
    let model = config.to_model()?;
    let integrator = match &config.integrator {
        Some(s) => IntegratorConfig::from_section(s)?,
        None => IntegratorConfig::default(),
    };
    Ok(Box::into_raw(Box::new(RadmagModel {
        model,
        integrator: integrator.without_series(),
    })))
}

fn drive(nu_mhz: f64, delta_a: f64) -> Result<ModulationSpec, Failure> {
    if nu_mhz == 0.0 {
        Ok(ModulationSpec::Static)
    } else {
        Ok(ModulationSpec::harmonic(nu_mhz, delta_a)?)
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn radmag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn radmag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a model from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_model_from_toml(toml: *const c_char, out: *mut *mut RadmagModel) -> RadmagStatus {
    guard(|| {
        let out = unsafe { out_mut(out, "out") }?;
        *out = ptr::null_mut();
        let text = unsafe { str_arg(toml, "toml") }?;
        *out = build_model(ModelConfig::from_toml_str(text)?)?;
        Ok(())
    })
}

/// Load a model from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_model_from_path(path: *const c_char, out: *mut *mut RadmagModel) -> RadmagStatus {
    guard(|| {
        let out = unsafe { out_mut(out, "out") }?;
        *out = ptr::null_mut();
        let path = unsafe { str_arg(path, "path") }?;
        *out = build_model(ModelConfig::from_path(path)?)?;
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from a constructor above and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn radmag_model_free(model: *mut RadmagModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in build_model.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Hilbert-space dimension of the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_model_dim(model: *const RadmagModel, out: *mut usize) -> RadmagStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        *unsafe { out_mut(out, "out") }? = m.model.system.dim();
        Ok(())
    })
}

/// Set J0/2π in MHz.
///
/// # Safety
/// `model` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn radmag_model_set_j0_mhz(model: *mut RadmagModel, j0_over_2pi: f64) -> RadmagStatus {
    guard(|| {
        let m = unsafe { out_mut(model, "model") }?;
        if !j0_over_2pi.is_finite() {
            return Err(Failure::Arg(format!("J0 = {j0_over_2pi}")));
        }
        m.model = m.model.with_j0_mhz(j0_over_2pi);
        Ok(())
    })
}

/// Propagate one orientation. `nu_mhz = 0` means undriven.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_simulate(
    model: *const RadmagModel,
    theta: f64,
    phi: f64,
    nu_mhz: f64,
    delta_a: f64,
    out: *mut RadmagSimulation,
) -> RadmagStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let out = unsafe { out_mut(out, "out") }?;
        let field = m.model.field(theta, phi)?;
        let res = propagate(&m.model, &field, &drive(nu_mhz, delta_a)?, &m.integrator)?;
        *out = RadmagSimulation {
            singlet_yield: res.singlet_yield,
            singlet_probability: conditional_singlet_probability(&res.steady_state()?)?,
            conservation_residual: res.conservation_residual(),
            final_trace: res.final_trace,
            dt_us: res.dt,
            steps: res.steps,
        };
        Ok(())
    })
}

/// Fisher information, quantum Fisher information and their ratio at one
/// orientation.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_metrology_point(
    model: *const RadmagModel,
    theta: f64,
    phi: f64,
    nu_mhz: f64,
    delta_a: f64,
    out: *mut RadmagOrientation,
) -> RadmagStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let out = unsafe { out_mut(out, "out") }?;
        let modulation = drive(nu_mhz, delta_a)?;
        let settings = MetrologySettings::default();
        let probe = Probe {
            model: &m.model,
            modulation: &modulation,
            integrator: &m.integrator,
        };
        let p = probe.evaluate(theta, phi, settings.delta, settings.qfi_cutoff)?;
        let flags = [
            (p.flags.non_converged, RADMAG_FLAG_NON_CONVERGED),
            (p.flags.clamped, RADMAG_FLAG_CLAMPED),
            (p.flags.non_conserving, RADMAG_FLAG_NON_CONSERVING),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .fold(0, |acc, (_, bit)| acc | bit);
        *out = RadmagOrientation {
            theta: p.theta,
            phi: p.phi,
            singlet_yield: p.singlet_yield,
            singlet_probability: p.singlet_probability,
            cfi: p.cfi,
            qfi: p.qfi,
            ratio: p.ratio.unwrap_or(f64::NAN),
            flags,
        };
        Ok(())
    })
}

/// Relative anisotropy (max − min)/mean of `n >= 2` yields.
///
/// # Safety
/// `yields` must point to `n` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_anisotropy(yields: *const f64, n: usize, out: *mut f64) -> RadmagStatus {
    guard(|| {
        if yields.is_null() {
            return Err(Failure::Null("yields"));
        }
        let out = unsafe { out_mut(out, "out") }?;
        // SAFETY: caller guarantees n readable elements.
        let ys = unsafe { std::slice::from_raw_parts(yields, n) };
        *out = metrology::anisotropy(ys)?.gamma;
        Ok(())
    })
}

/// Δθ in degrees for Fisher information `cfi` per probe and `receptors`
/// independent probes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_angular_precision(cfi: f64, receptors: f64, out: *mut f64) -> RadmagStatus {
    guard(|| {
        let out = unsafe { out_mut(out, "out") }?;
        *out = metrology::angular_precision(cfi, receptors)?;
        Ok(())
    })
}

/// Maximize the yield contrast between two orientations over `n` segment
/// displacements of `segment_us` each, bounded by `u_max` Å. `u` holds the
/// initial sequence and receives the optimized one.
///
/// # Safety
/// `model` must be a live handle, `u` must point to `n` writable doubles and
/// `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn radmag_control_optimize(
    model: *const RadmagModel,
    theta_max: f64,
    phi_max: f64,
    theta_min: f64,
    phi_min: f64,
    segment_us: f64,
    u_max: f64,
    lambda: f64,
    max_iters: usize,
    u: *mut f64,
    n: usize,
    out: *mut RadmagControl,
) -> RadmagStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        if u.is_null() {
            return Err(Failure::Null("u"));
        }
        let out = unsafe { out_mut(out, "out") }?;
        // SAFETY: caller guarantees n writable elements.
        let u = unsafe { std::slice::from_raw_parts_mut(u, n) };
        let problem = ControlProblem::new(
            m.model.clone(),
            m.model.field(theta_max, phi_max)?,
            m.model.field(theta_min, phi_min)?,
            n,
            segment_us,
            u_max,
            lambda,
        )?
        .with_integrator(m.integrator.clone())?;
        let settings = OptimizerSettings {
            max_iters,
            ..OptimizerSettings::default()
        };
        let res = optimize(&problem, u, &settings)?;
        u.copy_from_slice(&res.displacements);
        *out = RadmagControl {
            initial_objective: res.initial.objective,
            final_objective: res.last.objective,
            contrast: res.contrast(),
            iterations: res.iterations,
            converged: res.converged,
            stagnated: res.stagnated,
        };
        Ok(())
    })
}
