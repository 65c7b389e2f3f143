//! C interface to `grape-core`.
//!
//! Every entry point returns a [`GrapeStatus`]. On failure a description is
//! kept per thread and can be read with [`grape_last_error_message`]. Panics
//! are caught at the boundary and reported as `GRAPE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use grape_core::gradient::{gradient, GradientMethod, MethodKind};
use grape_core::optim::{self, Algorithm, OptimizerConfig, Status};
use grape_core::propagation::{self, ControlProblem, PulseSequence};
use grape_core::spinsys::{spin_operators, HamiltonianSet, NamedState, Relaxation, SpinChainSpec};
use grape_core::GrapeError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrapeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Capacity = 3,
    Numerical = 4,
    InvalidMethod = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrapeStateKind {
    SumSz = 0,
    MinusSumSz = 1,
    /// `Sz` of the spin given by the accompanying index (0-based).
    Sz = 2,
    /// `Sx` of the spin given by the accompanying index (0-based).
    Sx = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrapeGradientMethod {
    FirstOrder = 0,
    SeriesExact = 1,
    EigenExact = 2,
    FdForward = 3,
    FdCentral = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrapeAlgorithm {
    Steepest = 0,
    Dfp = 1,
    Bfgs = 2,
    Lbfgs = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrapeRunStatus {
    Converged = 0,
    TargetReached = 1,
    BudgetExhausted = 2,
    #[default]
    Stalled = 3,
}

/// A linear chain of spin-1/2 nuclei with x and y controls.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GrapeSpinChainParams {
    pub n_spins: usize,
    /// `n_spins` resonance offsets in Hz.
    pub offsets_hz: *const f64,
    pub j_hz: f64,
    /// Amplitude bound per control in Hz; zero or negative for none.
    pub b1_max_hz: f64,
    pub spectrometer_mhz: f64,
    /// Uniform relaxation rate in 1/s; zero for a closed system.
    pub relaxation_rate: f64,
    pub n_steps: usize,
    /// Step length in seconds.
    pub dt: f64,
    pub initial: GrapeStateKind,
    pub initial_spin: usize,
    pub target: GrapeStateKind,
    pub target_spin: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GrapeOptimizerOptions {
    pub algorithm: GrapeAlgorithm,
    pub gradient_method: GrapeGradientMethod,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub fidelity_target: f64,
    pub lbfgs_memory: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GrapeOptimizeResult {
    pub fidelity: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub curvature_rejections: usize,
    pub status: GrapeRunStatus,
}

/// Opaque control problem.
pub struct GrapeProblem {
    inner: ControlProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(GrapeStatus, String);

impl From<GrapeError> for Failure {
    fn from(e: GrapeError) -> Self {
        let status = match e {
            GrapeError::Capacity { .. } => GrapeStatus::Capacity,
            GrapeError::Divergence { .. } | GrapeError::InfeasibleThreshold { .. } | GrapeError::NonFinite { .. } => {
                GrapeStatus::Numerical
            }
            GrapeError::InvalidMethod { .. } => GrapeStatus::InvalidMethod,
            _ => GrapeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(GrapeStatus::NullPointer, format!("`{name}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GrapeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            GrapeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GrapeStatus::Panic
        }
    }
}

fn named(kind: GrapeStateKind, spin: usize) -> NamedState {
    match kind {
        GrapeStateKind::SumSz => NamedState::SumSz,
        GrapeStateKind::MinusSumSz => NamedState::MinusSumSz,
        GrapeStateKind::Sz => NamedState::Sz(spin),
        GrapeStateKind::Sx => NamedState::Sx(spin),
    }
}

fn method_kind(m: GrapeGradientMethod) -> MethodKind {
    match m {
        GrapeGradientMethod::FirstOrder => MethodKind::FirstOrder,
        GrapeGradientMethod::SeriesExact => MethodKind::SeriesExact,
        GrapeGradientMethod::EigenExact => MethodKind::EigenExact,
        GrapeGradientMethod::FdForward => MethodKind::FdForward,
        GrapeGradientMethod::FdCentral => MethodKind::FdCentral,
    }
}

fn algorithm(a: GrapeAlgorithm) -> Algorithm {
    match a {
        GrapeAlgorithm::Steepest => Algorithm::Steepest,
        GrapeAlgorithm::Dfp => Algorithm::Dfp,
        GrapeAlgorithm::Bfgs => Algorithm::Bfgs,
        GrapeAlgorithm::Lbfgs => Algorithm::Lbfgs,
    }
}

unsafe fn problem_ref<'a>(p: *const GrapeProblem) -> Result<&'a ControlProblem, Failure> {
    p.as_ref().map(|p| &p.inner).ok_or_else(|| null("problem"))
}

/// Reads a row-major `n_steps × n_controls` pulse.
unsafe fn read_pulse(problem: &ControlProblem, data: *const f64, len: usize) -> Result<PulseSequence, Failure> {
    if data.is_null() {
        return Err(null("pulse"));
    }
    let expected = problem.n_steps * problem.n_controls();
    if len != expected {
        return Err(Failure(
            GrapeStatus::InvalidArgument,
            format!("pulse has {len} values, problem needs {expected}"),
        ));
    }
    let values = std::slice::from_raw_parts(data, len).to_vec();
    Ok(PulseSequence::new(problem.n_steps, problem.n_controls(), values)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn grape_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Description of the last failure on this thread, or NULL after a
/// successful call. Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn grape_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Builds a spin-chain problem. On success `*out` owns a handle that must be
/// released with [`grape_problem_free`].
///
/// # Safety
/// `params` must point to a valid struct whose `offsets_hz` holds `n_spins`
/// values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn grape_problem_new_spin_chain(params: *const GrapeSpinChainParams, out: *mut *mut GrapeProblem) -> GrapeStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if p.offsets_hz.is_null() && p.n_spins > 0 {
            return Err(null("params.offsets_hz"));
        }
        let offsets = if p.n_spins == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(p.offsets_hz, p.n_spins).to_vec()
        };
        let b1 = (p.b1_max_hz > 0.0).then_some(p.b1_max_hz);
        let spec = SpinChainSpec::new(p.n_spins, offsets, p.j_hz, b1)?;
        let hams = HamiltonianSet::for_chain(&spec, p.spectrometer_mhz)?;
        let ops = spin_operators(p.n_spins)?;
        let relaxation = if p.relaxation_rate > 0.0 {
            Relaxation::Uniform(p.relaxation_rate)
        } else {
            Relaxation::None
        };
        let problem = ControlProblem::with_relaxation(
            hams,
            &relaxation,
            named(p.initial, p.initial_spin).state(&ops)?,
            named(p.target, p.target_spin).state(&ops)?,
            p.n_steps,
            p.dt,
            b1.map(|b| vec![b, b]),
        )?;
        *out = Box::into_raw(Box::new(GrapeProblem { inner: problem }));
        Ok(())
    })
}

/// Releases a problem handle. NULL is ignored.
///
/// # Safety
/// `problem` must come from [`grape_problem_new_spin_chain`] and not have
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn grape_problem_free(problem: *mut GrapeProblem) {
    if !problem.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(problem))));
    }
}

/// Number of time steps, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn grape_problem_n_steps(problem: *const GrapeProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n_steps)
}

/// Number of controls per step, or 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn grape_problem_n_controls(problem: *const GrapeProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.n_controls())
}

/// Transfer fidelity of a row-major pulse of `len = n_steps × n_controls`
/// amplitudes in Hz.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn grape_fidelity(problem: *const GrapeProblem, pulse: *const f64, len: usize, fidelity_out: *mut f64) -> GrapeStatus {
    guard(|| {
        let problem = problem_ref(problem)?;
        if fidelity_out.is_null() {
            return Err(null("fidelity_out"));
        }
        let pulse = read_pulse(problem, pulse, len)?;
        *fidelity_out = propagation::evaluate_fidelity(problem, &pulse, &Default::default())?;
        Ok(())
    })
}

/// Fidelity gradient per Hz, written row-major into `grad_out` (`len`
/// values). `fidelity_out` may be NULL.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn grape_gradient(
    problem: *const GrapeProblem,
    method: GrapeGradientMethod,
    pulse: *const f64,
    len: usize,
    grad_out: *mut f64,
    fidelity_out: *mut f64,
) -> GrapeStatus {
    guard(|| {
        let problem = problem_ref(problem)?;
        if grad_out.is_null() {
            return Err(null("grad_out"));
        }
        let pulse = read_pulse(problem, pulse, len)?;
        let report = gradient(problem, &pulse, &GradientMethod::new(method_kind(method)))?;
        std::slice::from_raw_parts_mut(grad_out, len).copy_from_slice(report.grad.as_slice());
        if let Some(f) = fidelity_out.as_mut() {
            *f = report.fidelity;
        }
        Ok(())
    })
}

/// Default optimizer settings. Writes nothing when `out` is NULL.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn grape_optimizer_options_default(out: *mut GrapeOptimizerOptions) {
    let d = OptimizerConfig::default();
    if let Some(o) = out.as_mut() {
        *o = GrapeOptimizerOptions {
            algorithm: GrapeAlgorithm::Lbfgs,
            gradient_method: GrapeGradientMethod::SeriesExact,
            max_iters: d.max_iters,
            grad_tol: d.grad_tol,
            fidelity_target: d.fidelity_target,
            lbfgs_memory: d.lbfgs_memory,
        };
    }
}

/// Optimizes in place: `pulse` holds the starting amplitudes on entry and
/// the optimized ones on return.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn grape_optimize(
    problem: *const GrapeProblem,
    options: *const GrapeOptimizerOptions,
    pulse: *mut f64,
    len: usize,
    result_out: *mut GrapeOptimizeResult,
) -> GrapeStatus {
    guard(|| {
        let problem = problem_ref(problem)?;
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        let init = read_pulse(problem, pulse, len)?;
        let config = OptimizerConfig {
            algorithm: algorithm(o.algorithm),
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            fidelity_target: o.fidelity_target,
            lbfgs_memory: o.lbfgs_memory,
            ..OptimizerConfig::default()
        };
        let res = optim::optimize(problem, &init, &GradientMethod::new(method_kind(o.gradient_method)), &config)?;
        std::slice::from_raw_parts_mut(pulse, len).copy_from_slice(res.pulse.as_slice());
        if let Some(r) = result_out.as_mut() {
            *r = GrapeOptimizeResult {
                fidelity: res.fidelity,
                iterations: res.records.len() - 1,
                evaluations: res.total_evaluations,
                curvature_rejections: res.curvature_rejections,
                status: match res.status {
                    Status::Converged => GrapeRunStatus::Converged,
                    Status::TargetReached => GrapeRunStatus::TargetReached,
                    Status::BudgetExhausted => GrapeRunStatus::BudgetExhausted,
                    Status::Stalled => GrapeRunStatus::Stalled,
                },
            };
        }
        Ok(())
    })
}
