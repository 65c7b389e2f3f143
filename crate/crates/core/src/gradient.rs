//! Fidelity gradients with respect to every pulse amplitude.
//!
//! For step `n` the gradient entry is `Re⟨b_{n+1}| ∂P_n/∂c_n^(k) |f_n⟩`,
//! where `f_n` is the forward state before the step and `b_{n+1}` the
//! backward state after it. Methods differ only in how `∂P_n` is obtained.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{GrapeError, Result};
use crate::expkernel::{self, ExpmOptions, FdStepPolicy, HermitianEigenframe};
use crate::linalg::{self, CMatrix};
use crate::propagation::{self, wrap_propagator, ControlProblem, PulseSequence, StepPropagator, TrajectoryCache};
use crate::spinsys::{devectorize, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    /// `∂P ≈ P (-i L_k dt)`.
    FirstOrder,
    /// Scaled commutator series.
    SeriesExact,
    /// Eigenframe of the step Hamiltonian; closed systems only.
    EigenExact,
    /// One-sided finite difference of the step propagator.
    FdForward,
    /// Central finite difference of the step propagator.
    FdCentral,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::FirstOrder,
        MethodKind::SeriesExact,
        MethodKind::EigenExact,
        MethodKind::FdForward,
        MethodKind::FdCentral,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::FirstOrder => "first_order",
            MethodKind::SeriesExact => "series_exact",
            MethodKind::EigenExact => "eigen_exact",
            MethodKind::FdForward => "fd_forward",
            MethodKind::FdCentral => "fd_central",
        }
    }

    /// Matrix exponentials one gradient evaluation costs on top of
    /// propagation, for `n_steps × n_controls` amplitudes.
    pub fn expected_expm_evaluations(&self, n_steps: usize, n_controls: usize) -> usize {
        match self {
            MethodKind::FirstOrder | MethodKind::EigenExact => 0,
            MethodKind::SeriesExact => n_steps,
            MethodKind::FdForward => n_steps * n_controls,
            MethodKind::FdCentral => 2 * n_steps * n_controls,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = GrapeError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| GrapeError::InvalidMethod {
                method: s.to_string(),
                reason: "expected one of first_order, series_exact, eigen_exact, fd_forward, fd_central".into(),
            })
    }
}

/// A gradient method with its numerical settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientMethod {
    pub kind: MethodKind,
    pub expm: ExpmOptions,
    pub fd_policy: FdStepPolicy,
}

impl GradientMethod {
    pub fn new(kind: MethodKind) -> Self {
        GradientMethod {
            kind,
            expm: ExpmOptions::default(),
            fd_policy: FdStepPolicy::default(),
        }
    }
}

impl Default for GradientMethod {
    fn default() -> Self {
        GradientMethod::new(MethodKind::SeriesExact)
    }
}

#[derive(Debug, Clone)]
pub struct GradientReport {
    pub fidelity: f64,
    /// `∂F/∂c_n^(k)` in the pulse layout, per Hz of amplitude.
    pub grad: PulseSequence,
    pub method: MethodKind,
    /// Longest commutator series used by any step (series method only).
    pub series_terms_used: usize,
    /// Matrix exponentials spent on derivatives.
    pub expm_evaluations: usize,
    /// Finite-difference step in Hz (finite-difference methods only).
    pub fd_step: Option<f64>,
}

/// Checks that `method` can run on `problem`.
pub fn check_method(problem: &ControlProblem, method: &GradientMethod) -> Result<()> {
    method.expm.validate()?;
    match method.kind {
        MethodKind::EigenExact => {
            if problem.generators.is_dissipative() {
                return Err(GrapeError::InvalidMethod {
                    method: method.kind.name().into(),
                    reason: "the eigenframe route needs a Hermitian generator; the problem has relaxation".into(),
                });
            }
            if problem.generators.hamiltonians().is_none() {
                return Err(GrapeError::InvalidMethod {
                    method: method.kind.name().into(),
                    reason: "the eigenframe route needs the step Hamiltonians, which this problem does not carry".into(),
                });
            }
        }
        MethodKind::FdForward | MethodKind::FdCentral => method.fd_policy.validate()?,
        MethodKind::FirstOrder | MethodKind::SeriesExact => {}
    }
    Ok(())
}

/// Finite-difference step for the amplitude of one control. The function
/// differentiated is a fidelity, bounded by one in magnitude.
fn fd_step(method: &GradientMethod) -> Result<f64> {
    method.fd_policy.select_step(1.0)
}

/// Contracts a step derivative against the trajectory states.
///
/// In the Hilbert representation `∂P f = vec(∂U F U† + U F ∂U†)`, and
/// `⟨b|∂P f⟩ = tr(Z ∂U) + Σ conj(∂U) ∘ Q` with `Z = F U† B†` and
/// `Q = B† U F`, so each direction costs `O(d²)` once `Z` and `Q` are known.
enum Contractor<'a> {
    Hilbert { z: CMatrix, q: CMatrix },
    Liouville { f: &'a StateVector, b: &'a StateVector },
}

impl<'a> Contractor<'a> {
    fn new(p: &StepPropagator, f: &'a StateVector, b: &'a StateVector) -> Result<Self> {
        Ok(match p {
            StepPropagator::Hilbert(u) => {
                let fm = devectorize(f)?;
                let bh = devectorize(b)?.adjoint();
                let z = linalg::matmul(&linalg::matmul(&fm, &u.adjoint()), &bh);
                let q = linalg::matmul(&linalg::matmul(&bh, u), &fm);
                Contractor::Hilbert { z, q }
            }
            StepPropagator::Liouville(_) => Contractor::Liouville { f, b },
        })
    }

    fn contract(&self, dp: &CMatrix) -> f64 {
        match self {
            Contractor::Hilbert { z, q } => {
                let n = dp.nrows();
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..n {
                    for i in 0..n {
                        let d = dp[(i, j)];
                        acc += z[(j, i)] * d + d.conj() * q[(i, j)];
                    }
                }
                acc.re
            }
            Contractor::Liouville { f, b } => linalg::inner(&b.0, &(dp * &f.0)).re,
        }
    }
}

struct StepGradient {
    row: Vec<f64>,
    terms: usize,
}

#[allow(clippy::too_many_arguments)]
fn step_gradient(
    problem: &ControlProblem,
    pulse: &PulseSequence,
    n: usize,
    propagator: &StepPropagator,
    f: &StateVector,
    b: &StateVector,
    method: &GradientMethod,
    fd_h: f64,
) -> Result<StepGradient> {
    let gens = &problem.generators;
    let dt = problem.dt;
    let contractor = Contractor::new(propagator, f, b)?;
    let row = pulse.row(n);
    let mut out = Vec::with_capacity(problem.n_controls());
    let mut terms = 0;
    match method.kind {
        MethodKind::FirstOrder => {
            for gk in gens.controls() {
                let dp = linalg::matmul(propagator.matrix(), &expkernel::exponent_argument(gk, dt));
                out.push(contractor.contract(&dp));
            }
        }
        MethodKind::SeriesExact => {
            let g = gens.total(row);
            let multi = expkernel::dexp_series_multi(&g, gens.controls(), dt, &method.expm)?;
            terms = multi.terms_used;
            for dp in &multi.derivatives {
                out.push(contractor.contract(dp));
            }
        }
        MethodKind::EigenExact => {
            let hams = gens.hamiltonians().expect("checked by check_method");
            let mut h = hams.h0.clone();
            for (hk, &ck) in hams.controls.iter().zip(row) {
                h += hk * Complex64::new(ck, 0.0);
            }
            let frame = HermitianEigenframe::new(&h)?;
            let u = frame.propagator(dt);
            let hilbert = Contractor::new(&StepPropagator::Hilbert(u.clone()), f, b)?;
            for hk in &hams.controls {
                let du = linalg::matmul(&u, &frame.derivative_factor(hk, dt)?);
                out.push(hilbert.contract(&du));
            }
        }
        MethodKind::FdForward | MethodKind::FdCentral => {
            let shifted = |k: usize, delta: f64| -> Result<CMatrix> {
                let mut r = row.to_vec();
                r[k] += delta;
                let g = gens.total(&r);
                expkernel::expm(&expkernel::exponent_argument(&g, dt), &method.expm)
            };
            for k in 0..gens.n_controls() {
                let dp = if method.kind == MethodKind::FdForward {
                    (shifted(k, fd_h)? - propagator.matrix()) * Complex64::new(1.0 / fd_h, 0.0)
                } else {
                    (shifted(k, fd_h)? - shifted(k, -fd_h)?) * Complex64::new(0.5 / fd_h, 0.0)
                };
                out.push(contractor.contract(&dp));
            }
        }
    }
    Ok(StepGradient { row: out, terms })
}

fn assemble(
    problem: &ControlProblem,
    cache: &TrajectoryCache,
    method: &GradientMethod,
    steps: Vec<StepGradient>,
    fd_h: Option<f64>,
) -> Result<GradientReport> {
    let terms = steps.iter().map(|s| s.terms).max().unwrap_or(0);
    let flat: Vec<f64> = steps.into_iter().flat_map(|s| s.row).collect();
    if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
        return Err(GrapeError::NonFinite {
            detail: format!("gradient entry {i} is not finite"),
        });
    }
    Ok(GradientReport {
        fidelity: propagation::fidelity(problem, cache),
        grad: PulseSequence::new(problem.n_steps, problem.n_controls(), flat)?,
        method: method.kind,
        series_terms_used: terms,
        expm_evaluations: method.kind.expected_expm_evaluations(problem.n_steps, problem.n_controls()),
        fd_step: fd_h,
    })
}

/// Gradient from an existing trajectory. Propagators missing from the cache
/// are recomputed, bit-identically.
pub fn gradient_from_cache(
    problem: &ControlProblem,
    pulse: &PulseSequence,
    cache: &TrajectoryCache,
    method: &GradientMethod,
) -> Result<GradientReport> {
    problem.check_pulse(pulse)?;
    check_method(problem, method)?;
    if cache.forward.len() != problem.n_steps + 1 || cache.backward.len() != problem.n_steps + 1 {
        return Err(GrapeError::DimensionMismatch("trajectory does not match the problem".into()));
    }
    let fd_h = match method.kind {
        MethodKind::FdForward | MethodKind::FdCentral => Some(fd_step(method)?),
        _ => None,
    };
    let steps = (0..problem.n_steps)
        .into_par_iter()
        .map(|n| {
            let owned;
            let p = match &cache.propagators {
                Some(ps) => &ps[n],
                None => {
                    owned = propagation::step_propagator(problem, pulse.row(n), &method.expm)?;
                    &owned
                }
            };
            step_gradient(problem, pulse, n, p, &cache.forward[n], &cache.backward[n + 1], method, fd_h.unwrap_or(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(problem, cache, method, steps, fd_h)
}

/// Propagates, then differentiates.
pub fn gradient(problem: &ControlProblem, pulse: &PulseSequence, method: &GradientMethod) -> Result<GradientReport> {
    check_method(problem, method)?;
    let cache = propagation::propagate(problem, pulse, &method.expm)?;
    gradient_from_cache(problem, pulse, &cache, method)
}

/// Fidelity and gradient in one pass. For the series method each step's
/// propagator and derivatives come from a single scaled series evaluation;
/// results are bit-identical to [`gradient`].
pub fn gradient_and_fidelity_fused(
    problem: &ControlProblem,
    pulse: &PulseSequence,
    method: &GradientMethod,
) -> Result<GradientReport> {
    if method.kind != MethodKind::SeriesExact {
        return gradient(problem, pulse, method);
    }
    problem.check_pulse(pulse)?;
    check_method(problem, method)?;
    let gens = &problem.generators;
    let multis = (0..problem.n_steps)
        .into_par_iter()
        .map(|n| expkernel::dexp_series_multi(&gens.total(pulse.row(n)), gens.controls(), problem.dt, &method.expm))
        .collect::<Result<Vec<_>>>()?;
    let mut derivatives = Vec::with_capacity(multis.len());
    let mut props = Vec::with_capacity(multis.len());
    let mut terms = Vec::with_capacity(multis.len());
    for m in multis {
        props.push(wrap_propagator(problem, m.propagator));
        derivatives.push(m.derivatives);
        terms.push(m.terms_used);
    }
    let cache = propagation::sweep(problem, props, true)?;
    let ps = cache.propagators.as_ref().expect("retained");
    let steps = (0..problem.n_steps)
        .into_par_iter()
        .map(|n| {
            let contractor = Contractor::new(&ps[n], &cache.forward[n], &cache.backward[n + 1])?;
            Ok(StepGradient {
                row: derivatives[n].iter().map(|dp| contractor.contract(dp)).collect(),
                terms: terms[n],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(problem, &cache, method, steps, None)
}
