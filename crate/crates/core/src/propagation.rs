//! Piecewise-constant time evolution.
//!
//! Relaxation-free problems built from Hamiltonians propagate in Hilbert
//! space: each step stores the `d × d` unitary `U_n` and acts on a
//! vectorized state as `vec(U ρ U†)`, which is exactly the action of the
//! Liouville-space propagator `exp(-i L dt) = conj(U) ⊗ U`. Everything else
//! propagates with the full `d² × d²` Liouville-space exponential. Both
//! backends expose the same state vectors, so callers never see the
//! difference except in cost.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GrapeError, Result};
use crate::expkernel::{self, ExpmOptions};
use crate::linalg::{self, CMatrix};
use crate::spinsys::{devectorize, vectorize, HamiltonianSet, LiouvillianSet, Relaxation, StateVector};

/// The generators of a control problem.
#[derive(Debug, Clone)]
pub enum Generators {
    /// Closed system, propagated in Hilbert space.
    Hilbert(HamiltonianSet),
    /// Liouville-space superoperators, optionally remembering the
    /// Hamiltonians they were built from.
    Liouville {
        set: LiouvillianSet,
        hamiltonians: Option<HamiltonianSet>,
    },
}

impl Generators {
    pub fn n_controls(&self) -> usize {
        match self {
            Generators::Hilbert(h) => h.n_controls(),
            Generators::Liouville { set, .. } => set.controls.len(),
        }
    }

    pub fn hilbert_dim(&self) -> usize {
        match self {
            Generators::Hilbert(h) => h.dim(),
            Generators::Liouville { set, .. } => set.hilbert_dim(),
        }
    }

    pub fn is_dissipative(&self) -> bool {
        match self {
            Generators::Hilbert(_) => false,
            Generators::Liouville { set, .. } => set.is_dissipative(),
        }
    }

    pub fn is_hilbert(&self) -> bool {
        matches!(self, Generators::Hilbert(_))
    }

    /// The Hamiltonians, when known.
    pub fn hamiltonians(&self) -> Option<&HamiltonianSet> {
        match self {
            Generators::Hilbert(h) => Some(h),
            Generators::Liouville { hamiltonians, .. } => hamiltonians.as_ref(),
        }
    }

    /// Drift generator of the propagation space (`H₀` or `L₀`).
    pub fn drift(&self) -> &CMatrix {
        match self {
            Generators::Hilbert(h) => &h.h0,
            Generators::Liouville { set, .. } => &set.l0,
        }
    }

    /// Control generators of the propagation space (`H_k` or `L_k`).
    pub fn controls(&self) -> &[CMatrix] {
        match self {
            Generators::Hilbert(h) => &h.controls,
            Generators::Liouville { set, .. } => &set.controls,
        }
    }

    /// `G₀ + Σ_k c_k G_k` for one pulse row.
    pub fn total(&self, row: &[f64]) -> CMatrix {
        let mut g = self.drift().clone();
        for (gk, &ck) in self.controls().iter().zip(row) {
            if ck != 0.0 {
                g += gk * Complex64::new(ck, 0.0);
            }
        }
        g
    }
}

/// A point-to-point transfer problem on a uniform time grid.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub generators: Generators,
    /// Initial state, unit 2-norm.
    pub rho0: StateVector,
    /// Target state, unit 2-norm.
    pub sigma: StateVector,
    pub n_steps: usize,
    /// Time step in seconds.
    pub dt: f64,
    /// Per-control amplitude caps in Hz; `None` for unbounded.
    pub bounds: Option<Vec<f64>>,
}

impl ControlProblem {
    pub fn new(
        generators: Generators,
        rho0: StateVector,
        sigma: StateVector,
        n_steps: usize,
        dt: f64,
        bounds: Option<Vec<f64>>,
    ) -> Result<Self> {
        let dim = generators.hilbert_dim();
        let len = dim * dim;
        if rho0.len() != len || sigma.len() != len {
            return Err(GrapeError::DimensionMismatch(format!(
                "states must have {len} entries, got {} and {}",
                rho0.len(),
                sigma.len()
            )));
        }
        if n_steps == 0 {
            return Err(GrapeError::invalid("n_steps", "must be at least 1"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(GrapeError::invalid("dt", "must be positive and finite"));
        }
        if let Some(b) = &bounds {
            if b.len() != generators.n_controls() {
                return Err(GrapeError::invalid(
                    "bounds",
                    format!("expected {} caps, got {}", generators.n_controls(), b.len()),
                ));
            }
            if b.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(GrapeError::invalid("bounds", "caps must be finite and nonnegative"));
            }
        }
        Ok(ControlProblem {
            generators,
            rho0: rho0.normalized()?,
            sigma: sigma.normalized()?,
            n_steps,
            dt,
            bounds,
        })
    }

    /// Closed-system problem propagated in Hilbert space.
    pub fn closed(
        hamiltonians: HamiltonianSet,
        rho0: StateVector,
        sigma: StateVector,
        n_steps: usize,
        dt: f64,
        bounds: Option<Vec<f64>>,
    ) -> Result<Self> {
        ControlProblem::new(Generators::Hilbert(hamiltonians), rho0, sigma, n_steps, dt, bounds)
    }

    /// Problem with relaxation, propagated in Liouville space. A zero
    /// relaxation model gives a closed problem instead.
    pub fn with_relaxation(
        hamiltonians: HamiltonianSet,
        relaxation: &Relaxation,
        rho0: StateVector,
        sigma: StateVector,
        n_steps: usize,
        dt: f64,
        bounds: Option<Vec<f64>>,
    ) -> Result<Self> {
        if relaxation.matrix(hamiltonians.dim())?.is_none() {
            return ControlProblem::closed(hamiltonians, rho0, sigma, n_steps, dt, bounds);
        }
        let set = LiouvillianSet::from_hamiltonians(&hamiltonians, relaxation)?;
        let generators = Generators::Liouville {
            set,
            hamiltonians: Some(hamiltonians),
        };
        ControlProblem::new(generators, rho0, sigma, n_steps, dt, bounds)
    }

    /// The same problem forced onto the Liouville-space backend.
    pub fn to_liouville(&self) -> Result<ControlProblem> {
        let generators = match &self.generators {
            Generators::Hilbert(h) => Generators::Liouville {
                set: LiouvillianSet::from_hamiltonians(h, &Relaxation::None)?,
                hamiltonians: Some(h.clone()),
            },
            other => other.clone(),
        };
        Ok(ControlProblem {
            generators,
            ..self.clone()
        })
    }

    /// The same problem with a different time step.
    pub fn with_dt(&self, dt: f64) -> Result<ControlProblem> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(GrapeError::invalid("dt", "must be positive and finite"));
        }
        Ok(ControlProblem { dt, ..self.clone() })
    }

    pub fn n_controls(&self) -> usize {
        self.generators.n_controls()
    }

    pub fn check_pulse(&self, pulse: &PulseSequence) -> Result<()> {
        if pulse.n_steps() != self.n_steps || pulse.n_controls() != self.n_controls() {
            return Err(GrapeError::DimensionMismatch(format!(
                "pulse is {}x{}, problem expects {}x{}",
                pulse.n_steps(),
                pulse.n_controls(),
                self.n_steps,
                self.n_controls()
            )));
        }
        if pulse.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(GrapeError::invalid("pulse", "amplitudes must be finite"));
        }
        Ok(())
    }
}

/// Control amplitudes `c_n^(k)` in Hz, stored row-major (step-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    n_steps: usize,
    n_controls: usize,
    amplitudes: Vec<f64>,
}

impl PulseSequence {
    pub fn new(n_steps: usize, n_controls: usize, amplitudes: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != n_steps * n_controls {
            return Err(GrapeError::DimensionMismatch(format!(
                "{} amplitudes for a {n_steps}x{n_controls} pulse",
                amplitudes.len()
            )));
        }
        Ok(PulseSequence {
            n_steps,
            n_controls,
            amplitudes,
        })
    }

    pub fn zeros(n_steps: usize, n_controls: usize) -> Self {
        PulseSequence {
            n_steps,
            n_controls,
            amplitudes: vec![0.0; n_steps * n_controls],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_controls = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_controls) {
            return Err(GrapeError::DimensionMismatch("ragged pulse rows".into()));
        }
        PulseSequence::new(rows.len(), n_controls, rows.concat())
    }

    /// Uniformly distributed amplitudes in `±half_width`, reproducible from `seed`.
    pub fn random_uniform(n_steps: usize, n_controls: usize, half_width: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitudes = (0..n_steps * n_controls)
            .map(|_| if half_width > 0.0 { rng.gen_range(-half_width..=half_width) } else { 0.0 })
            .collect();
        PulseSequence {
            n_steps,
            n_controls,
            amplitudes,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.amplitudes[n * self.n_controls..(n + 1) * self.n_controls]
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.amplitudes[n * self.n_controls + k]
    }

    pub fn set(&mut self, n: usize, k: usize, value: f64) {
        self.amplitudes[n * self.n_controls + k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.amplitudes
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.amplitudes
    }

    /// Projection onto the box `|c_n^(k)| ≤ bounds[k]`.
    pub fn clip(&mut self, bounds: &[f64]) {
        for row in self.amplitudes.chunks_mut(self.n_controls.max(1)) {
            for (c, &b) in row.iter_mut().zip(bounds) {
                *c = c.clamp(-b, b);
            }
        }
    }

    pub fn within_bounds(&self, bounds: &[f64]) -> bool {
        self.amplitudes
            .chunks(self.n_controls.max(1))
            .all(|row| row.iter().zip(bounds).all(|(c, b)| c.abs() <= *b))
    }
}

/// One step propagator in the representation of its problem.
#[derive(Debug, Clone, PartialEq)]
pub enum StepPropagator {
    /// Hilbert-space unitary `U`, acting by conjugation.
    Hilbert(CMatrix),
    /// Liouville-space matrix `P`, acting by multiplication.
    Liouville(CMatrix),
}

impl StepPropagator {
    pub fn apply(&self, v: &StateVector) -> Result<StateVector> {
        match self {
            StepPropagator::Hilbert(u) => {
                let rho = devectorize(v)?;
                vectorize(&linalg::matmul(&linalg::matmul(u, &rho), &u.adjoint()))
            }
            StepPropagator::Liouville(p) => Ok(StateVector(p * &v.0)),
        }
    }

    /// Action of the adjoint `P†`.
    pub fn apply_adjoint(&self, v: &StateVector) -> Result<StateVector> {
        match self {
            StepPropagator::Hilbert(u) => {
                let rho = devectorize(v)?;
                vectorize(&linalg::matmul(&linalg::matmul(&u.adjoint(), &rho), u))
            }
            StepPropagator::Liouville(p) => Ok(StateVector(p.ad_mul(&v.0))),
        }
    }

    /// The Liouville-space matrix (`conj(U) ⊗ U` for the Hilbert form).
    pub fn liouville_matrix(&self) -> CMatrix {
        match self {
            StepPropagator::Hilbert(u) => linalg::kron(&u.conjugate(), u),
            StepPropagator::Liouville(p) => p.clone(),
        }
    }

    /// The raw stored matrix.
    pub fn matrix(&self) -> &CMatrix {
        match self {
            StepPropagator::Hilbert(m) | StepPropagator::Liouville(m) => m,
        }
    }
}

/// Forward states, backward costates and (optionally) the step propagators.
#[derive(Debug, Clone)]
pub struct TrajectoryCache {
    /// `forward[n]` is the state at `t_n`; `forward[0] = ρ₀`.
    pub forward: Vec<StateVector>,
    /// `backward[n] = P_{n+1}† … P_N† σ`; `backward[N] = σ`.
    pub backward: Vec<StateVector>,
    pub propagators: Option<Vec<StepPropagator>>,
}

/// Wraps a generator-space matrix in the problem's propagator representation.
pub(crate) fn wrap_propagator(problem: &ControlProblem, m: CMatrix) -> StepPropagator {
    if problem.generators.is_hilbert() {
        StepPropagator::Hilbert(m)
    } else {
        StepPropagator::Liouville(m)
    }
}

/// `exp[-i (G₀ + Σ_k c^(k) G_k) dt]` for one pulse row.
pub fn step_propagator(problem: &ControlProblem, pulse_row: &[f64], opts: &ExpmOptions) -> Result<StepPropagator> {
    if pulse_row.len() != problem.n_controls() {
        return Err(GrapeError::DimensionMismatch(format!(
            "pulse row has {} entries, problem has {} controls",
            pulse_row.len(),
            problem.n_controls()
        )));
    }
    let g = problem.generators.total(pulse_row);
    let m = expkernel::expm(&expkernel::exponent_argument(&g, problem.dt), opts)?;
    Ok(wrap_propagator(problem, m))
}

/// All `N` step propagators; independent across steps, computed concurrently
/// and returned in step order.
pub fn step_propagators(problem: &ControlProblem, pulse: &PulseSequence, opts: &ExpmOptions) -> Result<Vec<StepPropagator>> {
    problem.check_pulse(pulse)?;
    (0..problem.n_steps)
        .into_par_iter()
        .map(|n| step_propagator(problem, pulse.row(n), opts))
        .collect()
}

/// Forward and backward sweeps over precomputed propagators.
pub fn sweep(problem: &ControlProblem, propagators: Vec<StepPropagator>, retain: bool) -> Result<TrajectoryCache> {
    if propagators.len() != problem.n_steps {
        return Err(GrapeError::DimensionMismatch(format!(
            "{} propagators for {} steps",
            propagators.len(),
            problem.n_steps
        )));
    }
    let (forward, backward) = rayon::join(
        || -> Result<Vec<StateVector>> {
            let mut forward = Vec::with_capacity(problem.n_steps + 1);
            forward.push(problem.rho0.clone());
            for p in &propagators {
                let next = p.apply(forward.last().expect("nonempty"))?;
                forward.push(next);
            }
            Ok(forward)
        },
        || -> Result<Vec<StateVector>> {
            let mut backward = vec![problem.sigma.clone(); problem.n_steps + 1];
            for n in (0..problem.n_steps).rev() {
                backward[n] = propagators[n].apply_adjoint(&backward[n + 1])?;
            }
            Ok(backward)
        },
    );
    Ok(TrajectoryCache {
        forward: forward?,
        backward: backward?,
        propagators: retain.then_some(propagators),
    })
}

/// Forward trajectory from `ρ₀` and backward trajectory from `σ`, sharing
/// one set of step propagators (retained in the cache).
pub fn propagate(problem: &ControlProblem, pulse: &PulseSequence, opts: &ExpmOptions) -> Result<TrajectoryCache> {
    propagate_with(problem, pulse, opts, true)
}

pub fn propagate_with(problem: &ControlProblem, pulse: &PulseSequence, opts: &ExpmOptions, retain: bool) -> Result<TrajectoryCache> {
    let props = step_propagators(problem, pulse, opts)?;
    sweep(problem, props, retain)
}

/// Transfer fidelity `Re⟨σ|ρ(t_N)⟩` of unit-normalized states.
pub fn fidelity(problem: &ControlProblem, cache: &TrajectoryCache) -> f64 {
    let last = cache.forward.last().expect("trajectory has at least the initial state");
    problem.sigma.inner(last).re
}

/// Convenience: propagate and return the fidelity.
pub fn evaluate_fidelity(problem: &ControlProblem, pulse: &PulseSequence, opts: &ExpmOptions) -> Result<f64> {
    let cache = propagate_with(problem, pulse, opts, false)?;
    Ok(fidelity(problem, &cache))
}
