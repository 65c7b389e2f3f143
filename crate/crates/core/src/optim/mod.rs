//! Fidelity maximization over pulse amplitudes.
//!
//! The optimizer minimizes `f = 1 − F`, so Hessian approximations are
//! positive definite and curvature pairs need `sᵀy > 0`. Box constraints are
//! handled by projecting the search path onto the amplitude box.

pub mod line_search;
pub mod quasi_newton;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{GrapeError, Result};
use crate::gradient::{gradient_and_fidelity_fused, GradientMethod};
use crate::propagation::{ControlProblem, PulseSequence};

pub use line_search::{line_search, LinePoint, LineSearchOutcome, LineStatus, WolfeParams};
pub use quasi_newton::{bfgs_update_inverse, curvature_ok, dfp_update_inverse, lbfgs_direction, LbfgsHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Steepest,
    Dfp,
    Bfgs,
    Lbfgs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Steepest, Algorithm::Dfp, Algorithm::Bfgs, Algorithm::Lbfgs];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Steepest => "steepest",
            Algorithm::Dfp => "dfp",
            Algorithm::Bfgs => "bfgs",
            Algorithm::Lbfgs => "lbfgs",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = GrapeError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        let key = if key == "steepestdescent" { "steepest".to_string() } else { key };
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| GrapeError::invalid("algorithm", format!("unknown algorithm `{s}` (steepest, dfp, bfgs, lbfgs)")))
    }
}

/// Initial matrix `γ I` of the L-BFGS recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsScaling {
    /// `γ = sᵀy/yᵀy` of the newest pair (`1/‖∇f(x₀)‖` while the history is empty).
    NewestPair,
    /// `γ = sᵀy/yᵀy` of the first accepted pair, matching the dense modes
    /// with [`OptimizerConfig::rescale_first_update`] set.
    FirstPair,
    /// `γ = 1/‖∇f(x₀)‖` throughout, matching the dense modes without the
    /// first-update rescaling.
    InitialGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub max_iters: usize,
    /// Stop when the projected gradient max-norm falls below this.
    pub grad_tol: f64,
    /// Stop once the fidelity reaches this level.
    pub fidelity_target: f64,
    pub lbfgs_memory: usize,
    pub lbfgs_scaling: LbfgsScaling,
    /// Dense modes: replace `H₀` by `(sᵀy/yᵀy) I` just before the first update.
    pub rescale_first_update: bool,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_line_evals: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Lbfgs,
            max_iters: 200,
            grad_tol: 1e-10,
            fidelity_target: 1.0,
            lbfgs_memory: 20,
            lbfgs_scaling: LbfgsScaling::NewestPair,
            rescale_first_update: true,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_line_evals: 20,
            seed: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.wolfe().validate()?;
        if self.lbfgs_memory == 0 {
            return Err(GrapeError::invalid("lbfgs_memory", "must be at least 1"));
        }
        if !(self.grad_tol >= 0.0 && self.grad_tol.is_finite()) {
            return Err(GrapeError::invalid("grad_tol", "must be finite and nonnegative"));
        }
        if !self.fidelity_target.is_finite() {
            return Err(GrapeError::invalid("fidelity_target", "must be finite"));
        }
        Ok(())
    }

    pub fn wolfe(&self) -> WolfeParams {
        WolfeParams {
            c1: self.wolfe_c1,
            c2: self.wolfe_c2,
            max_evals: self.max_line_evals,
            ..WolfeParams::default()
        }
    }
}

/// Inverse-Hessian representation.
#[derive(Debug, Clone, PartialEq)]
pub enum InverseHessian {
    Identity,
    Dense(DMatrix<f64>),
    Limited(LbfgsHistory),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Projected gradient below `grad_tol`.
    Converged,
    /// Fidelity reached the target.
    TargetReached,
    /// `max_iters` iterations done.
    BudgetExhausted,
    /// The line search could not decrease the objective.
    Stalled,
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::TargetReached => "target_reached",
            Status::BudgetExhausted => "budget_exhausted",
            Status::Stalled => "stalled",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub fidelity: f64,
    /// Max-norm of the projected objective gradient.
    pub grad_max_norm: f64,
    /// Accepted line-search step length.
    pub step: f64,
    /// Objective evaluations spent in this iteration.
    pub evaluations: usize,
    pub wall_ms: f64,
}

/// Everything needed to continue an optimization; cloning it is a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiNewtonState {
    pub x: DVector<f64>,
    /// `1 − F(x)`.
    pub objective: f64,
    pub fidelity: f64,
    /// `∇f(x)`.
    pub last_gradient: DVector<f64>,
    pub inverse_hessian: InverseHessian,
    /// `1/‖∇f(x₀)‖`.
    pub initial_scale: f64,
    /// `sᵀy/yᵀy` of the first accepted pair.
    pub first_pair_scale: Option<f64>,
    pub iteration: usize,
    pub total_evaluations: usize,
    pub curvature_rejections: usize,
    pub records: Vec<IterationRecord>,
    pub status: Option<Status>,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub pulse: PulseSequence,
    pub fidelity: f64,
    pub status: Status,
    pub records: Vec<IterationRecord>,
    pub curvature_rejections: usize,
    pub total_evaluations: usize,
}

pub struct Optimizer<'a> {
    problem: &'a ControlProblem,
    method: GradientMethod,
    config: OptimizerConfig,
    lower: Option<DVector<f64>>,
    upper: Option<DVector<f64>>,
    state: QuasiNewtonState,
}

struct Evaluation {
    x: DVector<f64>,
    objective: f64,
    fidelity: f64,
    gradient: DVector<f64>,
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

impl<'a> Optimizer<'a> {
    pub fn new(problem: &'a ControlProblem, init: &PulseSequence, method: GradientMethod, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        problem.check_pulse(init)?;
        let (lower, upper) = Self::box_for(problem);
        if let Some(b) = &problem.bounds {
            if !init.within_bounds(b) {
                return Err(GrapeError::invalid("init", "initial pulse violates the amplitude bounds"));
            }
        }
        let mut opt = Optimizer {
            problem,
            method,
            config,
            lower,
            upper,
            state: QuasiNewtonState {
                x: DVector::zeros(0),
                objective: 0.0,
                fidelity: 0.0,
                last_gradient: DVector::zeros(0),
                inverse_hessian: InverseHessian::Identity,
                initial_scale: 1.0,
                first_pair_scale: None,
                iteration: 0,
                total_evaluations: 0,
                curvature_rejections: 0,
                records: Vec::new(),
                status: None,
            },
        };
        let clock = Instant::now();
        let e = opt.evaluate(DVector::from_column_slice(init.as_slice()))?;
        let gnorm = e.gradient.norm();
        let initial_scale = if gnorm > 0.0 { 1.0 / gnorm } else { 1.0 };
        let n = e.x.len();
        opt.state.inverse_hessian = match opt.config.algorithm {
            Algorithm::Steepest => InverseHessian::Identity,
            Algorithm::Dfp | Algorithm::Bfgs => InverseHessian::Dense(DMatrix::identity(n, n) * initial_scale),
            Algorithm::Lbfgs => InverseHessian::Limited(LbfgsHistory::new(opt.config.lbfgs_memory)),
        };
        opt.state.initial_scale = initial_scale;
        opt.state.total_evaluations = 1;
        opt.accept(e);
        let record = IterationRecord {
            iteration: 0,
            fidelity: opt.state.fidelity,
            grad_max_norm: max_norm(&opt.projected_gradient()),
            step: 0.0,
            evaluations: 1,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        };
        opt.state.records.push(record);
        opt.state.status = opt.check_termination();
        Ok(opt)
    }

    /// Continues from a checkpoint taken with [`Optimizer::checkpoint`].
    pub fn resume(problem: &'a ControlProblem, method: GradientMethod, config: OptimizerConfig, state: QuasiNewtonState) -> Result<Self> {
        config.validate()?;
        let expected = problem.n_steps * problem.n_controls();
        if state.x.len() != expected || state.last_gradient.len() != expected {
            return Err(GrapeError::DimensionMismatch("checkpoint does not match the problem".into()));
        }
        let (lower, upper) = Self::box_for(problem);
        Ok(Optimizer {
            problem,
            method,
            config,
            lower,
            upper,
            state,
        })
    }

    fn box_for(problem: &ControlProblem) -> (Option<DVector<f64>>, Option<DVector<f64>>) {
        match &problem.bounds {
            None => (None, None),
            Some(b) => {
                let k = problem.n_controls();
                let n = problem.n_steps * k;
                (
                    Some(DVector::from_fn(n, |i, _| -b[i % k])),
                    Some(DVector::from_fn(n, |i, _| b[i % k])),
                )
            }
        }
    }

    pub fn state(&self) -> &QuasiNewtonState {
        &self.state
    }

    pub fn checkpoint(&self) -> QuasiNewtonState {
        self.state.clone()
    }

    pub fn status(&self) -> Option<Status> {
        self.state.status
    }

    pub fn pulse(&self) -> PulseSequence {
        PulseSequence::new(self.problem.n_steps, self.problem.n_controls(), self.state.x.as_slice().to_vec())
            .expect("state length checked at construction")
    }

    fn project(&self, mut x: DVector<f64>) -> DVector<f64> {
        if let (Some(lo), Some(hi)) = (&self.lower, &self.upper) {
            for i in 0..x.len() {
                x[i] = x[i].clamp(lo[i], hi[i]);
            }
        }
        x
    }

    /// Mask of coordinates free to move along `d` from `x`.
    fn free_along(&self, x: &DVector<f64>, d: &DVector<f64>) -> Vec<bool> {
        match (&self.lower, &self.upper) {
            (Some(lo), Some(hi)) => (0..x.len())
                .map(|i| !((x[i] >= hi[i] && d[i] > 0.0) || (x[i] <= lo[i] && d[i] < 0.0)))
                .collect(),
            _ => vec![true; x.len()],
        }
    }

    fn projected_gradient(&self) -> DVector<f64> {
        let g = &self.state.last_gradient;
        let descent = -g;
        let free = self.free_along(&self.state.x, &descent);
        DVector::from_fn(g.len(), |i, _| if free[i] { g[i] } else { 0.0 })
    }

    fn evaluate(&self, x: DVector<f64>) -> Result<Evaluation> {
        let pulse = PulseSequence::new(self.problem.n_steps, self.problem.n_controls(), x.as_slice().to_vec())?;
        let report = gradient_and_fidelity_fused(self.problem, &pulse, &self.method)?;
        let gradient = DVector::from_iterator(x.len(), report.grad.as_slice().iter().map(|g| -g));
        if !report.fidelity.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(GrapeError::NonFinite {
                detail: format!(
                    "objective at iteration {} (fidelity {}, max |c| {:e}, last accepted fidelity {})",
                    self.state.iteration + 1,
                    report.fidelity,
                    max_norm(&x),
                    self.state.fidelity
                ),
            });
        }
        Ok(Evaluation {
            objective: 1.0 - report.fidelity,
            fidelity: report.fidelity,
            gradient,
            x,
        })
    }

    fn accept(&mut self, e: Evaluation) {
        self.state.x = e.x;
        self.state.objective = e.objective;
        self.state.fidelity = e.fidelity;
        self.state.last_gradient = e.gradient;
    }

    fn check_termination(&self) -> Option<Status> {
        if self.state.fidelity >= self.config.fidelity_target {
            Some(Status::TargetReached)
        } else if max_norm(&self.projected_gradient()) <= self.config.grad_tol {
            Some(Status::Converged)
        } else if self.state.iteration >= self.config.max_iters {
            Some(Status::BudgetExhausted)
        } else {
            None
        }
    }

    fn raw_direction(&self) -> DVector<f64> {
        let g = &self.state.last_gradient;
        match &self.state.inverse_hessian {
            InverseHessian::Identity => -g,
            InverseHessian::Dense(h) => -(h * g),
            InverseHessian::Limited(hist) => {
                let gamma = match self.config.lbfgs_scaling {
                    LbfgsScaling::NewestPair => hist.newest_gamma().unwrap_or(self.state.initial_scale),
                    LbfgsScaling::FirstPair => self.state.first_pair_scale.unwrap_or(self.state.initial_scale),
                    LbfgsScaling::InitialGradient => self.state.initial_scale,
                };
                lbfgs_direction(&hist.pairs(), g, gamma)
            }
        }
    }

    /// Search direction with components that would leave the box removed;
    /// falls back to projected steepest descent if that is not downhill.
    fn direction(&self) -> DVector<f64> {
        let mask = |d: DVector<f64>| {
            let free = self.free_along(&self.state.x, &d);
            DVector::from_fn(d.len(), |i, _| if free[i] { d[i] } else { 0.0 })
        };
        let d = mask(self.raw_direction());
        if d.dot(&self.state.last_gradient) < 0.0 {
            d
        } else {
            mask(-&self.state.last_gradient)
        }
    }

    /// One optimizer iteration. Returns the termination status once reached.
    pub fn step(&mut self) -> Result<Option<Status>> {
        if let Some(s) = self.state.status {
            return Ok(Some(s));
        }
        let clock = Instant::now();
        let x0 = self.state.x.clone();
        let g0 = self.state.last_gradient.clone();
        let d = self.direction();
        let dphi0 = d.dot(&g0);
        if !(dphi0 < 0.0) {
            self.state.status = Some(Status::Converged);
            return Ok(self.state.status);
        }
        let wolfe = self.config.wolfe();
        let outcome = line_search(self.state.objective, dphi0, 1.0, &wolfe, |alpha| {
            let trial = self.project(&x0 + &d * alpha);
            let e = self.evaluate(trial)?;
            let free = self.free_along(&x0, &d);
            let dphi = (0..d.len())
                .filter(|&i| {
                    let lo = self.lower.as_ref().map_or(f64::NEG_INFINITY, |l| l[i]);
                    let hi = self.upper.as_ref().map_or(f64::INFINITY, |u| u[i]);
                    let moved = x0[i] + alpha * d[i];
                    free[i] && moved > lo && moved < hi
                })
                .map(|i| e.gradient[i] * d[i])
                .sum();
            Ok(LinePoint {
                alpha,
                phi: e.objective,
                dphi,
                data: std::sync::Arc::new(e),
            })
        })?;
        self.state.total_evaluations += outcome.evaluations;
        self.state.iteration += 1;
        let Some(point) = outcome.point else {
            self.state.records.push(IterationRecord {
                iteration: self.state.iteration,
                fidelity: self.state.fidelity,
                grad_max_norm: max_norm(&self.projected_gradient()),
                step: 0.0,
                evaluations: outcome.evaluations,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            });
            self.state.status = Some(Status::Stalled);
            return Ok(self.state.status);
        };
        let alpha = point.alpha;
        let e = std::sync::Arc::try_unwrap(point.data).unwrap_or_else(|arc| Evaluation {
            x: arc.x.clone(),
            objective: arc.objective,
            fidelity: arc.fidelity,
            gradient: arc.gradient.clone(),
        });
        let s = &e.x - &x0;
        let y = &e.gradient - &g0;
        let first_pair = self.state.first_pair_scale.is_none() && curvature_ok(&s, &y);
        if first_pair {
            self.state.first_pair_scale = Some(s.dot(&y) / y.dot(&y));
        }
        let accepted = match &mut self.state.inverse_hessian {
            InverseHessian::Identity => true,
            InverseHessian::Dense(h) => match self.config.algorithm {
                _ if first_pair && self.config.rescale_first_update => {
                    let n = h.nrows();
                    *h = DMatrix::identity(n, n) * self.state.first_pair_scale.expect("set above");
                    match self.config.algorithm {
                        Algorithm::Dfp => dfp_update_inverse(h, &s, &y),
                        _ => bfgs_update_inverse(h, &s, &y),
                    }
                }
                Algorithm::Dfp => dfp_update_inverse(h, &s, &y),
                _ => bfgs_update_inverse(h, &s, &y),
            },
            InverseHessian::Limited(hist) => hist.push(&s, &y),
        };
        if !accepted {
            self.state.curvature_rejections += 1;
        }
        self.accept(e);
        self.state.records.push(IterationRecord {
            iteration: self.state.iteration,
            fidelity: self.state.fidelity,
            grad_max_norm: max_norm(&self.projected_gradient()),
            step: alpha,
            evaluations: outcome.evaluations,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        self.state.status = self.check_termination();
        Ok(self.state.status)
    }

    pub fn run(mut self) -> Result<OptimizationResult> {
        let status = loop {
            if let Some(s) = self.step()? {
                break s;
            }
        };
        Ok(OptimizationResult {
            pulse: self.pulse(),
            fidelity: self.state.fidelity,
            status,
            records: self.state.records,
            curvature_rejections: self.state.curvature_rejections,
            total_evaluations: self.state.total_evaluations,
        })
    }
}

/// Runs the optimizer from `init` to termination.
pub fn optimize(problem: &ControlProblem, init: &PulseSequence, method: &GradientMethod, config: &OptimizerConfig) -> Result<OptimizationResult> {
    Optimizer::new(problem, init, *method, config.clone())?.run()
}

/// Default starting pulse: uniform in `±0.4 · bound` per control, or
/// `±fallback_half_width` for unbounded problems.
pub fn initial_pulse(problem: &ControlProblem, seed: u64, fallback_half_width: f64) -> PulseSequence {
    let mut p = PulseSequence::random_uniform(problem.n_steps, problem.n_controls(), 1.0, seed);
    let k = problem.n_controls();
    for (i, c) in p.as_mut_slice().iter_mut().enumerate() {
        let half = problem.bounds.as_ref().map_or(fallback_half_width, |b| 0.4 * b[i % k]);
        *c *= half;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::MethodKind;
    use crate::spinsys::{spin_operators, HamiltonianSet, NamedState, SpinChainSpec};

    fn inversion(n_spins: usize, n_steps: usize, bound: Option<f64>) -> ControlProblem {
        let offsets: Vec<f64> = (0..n_spins).map(|i| 600.0 * i as f64 - 300.0 * (n_spins as f64 - 1.0)).collect();
        let spec = SpinChainSpec::new(n_spins, offsets, 20.0, bound).unwrap();
        let hams = HamiltonianSet::for_chain(&spec, 600.0).unwrap();
        let ops = spin_operators(n_spins).unwrap();
        let rho0 = NamedState::SumSz.state(&ops).unwrap();
        let sigma = NamedState::MinusSumSz.state(&ops).unwrap();
        ControlProblem::closed(hams, rho0, sigma, n_steps, 1e-4, bound.map(|b| vec![b, b])).unwrap()
    }

    fn config(algorithm: Algorithm, max_iters: usize) -> OptimizerConfig {
        OptimizerConfig {
            algorithm,
            max_iters,
            ..Default::default()
        }
    }

    #[test]
    fn algorithm_names_parse() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("L-BFGS".parse::<Algorithm>().unwrap(), Algorithm::Lbfgs);
        assert!("newton".parse::<Algorithm>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::default();
        assert!(c.validate().is_ok());
        c.wolfe_c1 = 0.95;
        assert!(c.validate().is_err());
        let c = OptimizerConfig {
            lbfgs_memory: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn fidelity_is_monotone_and_bounds_hold() {
        let p = inversion(1, 20, Some(2500.0));
        let init = initial_pulse(&p, 3, 0.0);
        for a in Algorithm::ALL {
            let r = optimize(&p, &init, &GradientMethod::default(), &config(a, 15)).unwrap();
            for w in r.records.windows(2) {
                assert!(w[1].fidelity >= w[0].fidelity, "{a}");
            }
            assert!(r.pulse.within_bounds(&[2500.0, 2500.0]));
            assert!(r.fidelity > r.records[0].fidelity);
        }
    }

    #[test]
    fn perfect_start_terminates_immediately() {
        let p = inversion(1, 1, None);
        let init = PulseSequence::new(1, 2, vec![0.5 / 1e-4, 0.0]).unwrap();
        let cfg = OptimizerConfig {
            fidelity_target: 1.0 - 1e-9,
            ..Default::default()
        };
        let r = optimize(&p, &init, &GradientMethod::default(), &cfg).unwrap();
        assert_eq!(r.status, Status::TargetReached);
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.pulse, init);
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let p = inversion(2, 10, Some(2500.0));
        let init = initial_pulse(&p, 5, 0.0);
        for a in [Algorithm::Bfgs, Algorithm::Lbfgs] {
            let cfg = config(a, 8);
            let full = optimize(&p, &init, &GradientMethod::default(), &cfg).unwrap();
            let mut first = Optimizer::new(&p, &init, GradientMethod::default(), cfg.clone()).unwrap();
            for _ in 0..3 {
                first.step().unwrap();
            }
            let saved = first.checkpoint();
            drop(first);
            let resumed = Optimizer::resume(&p, GradientMethod::default(), cfg, saved).unwrap().run().unwrap();
            assert_eq!(full.pulse, resumed.pulse);
            assert_eq!(full.records.len(), resumed.records.len());
            for (x, y) in full.records.iter().zip(&resumed.records) {
                assert_eq!((x.fidelity.to_bits(), x.step.to_bits(), x.evaluations), (y.fidelity.to_bits(), y.step.to_bits(), y.evaluations));
            }
        }
    }

    #[test]
    fn lbfgs_matches_dense_bfgs_within_memory() {
        let p = inversion(2, 8, None);
        let init = initial_pulse(&p, 7, 800.0);
        let m = 6;
        for (rescale, scaling) in [(true, LbfgsScaling::FirstPair), (false, LbfgsScaling::InitialGradient)] {
            let dense_cfg = OptimizerConfig {
                rescale_first_update: rescale,
                ..config(Algorithm::Bfgs, m)
            };
            let dense = optimize(&p, &init, &GradientMethod::default(), &dense_cfg).unwrap();
            let limited_cfg = OptimizerConfig {
                lbfgs_memory: m,
                lbfgs_scaling: scaling,
                ..config(Algorithm::Lbfgs, m)
            };
            let limited = optimize(&p, &init, &GradientMethod::default(), &limited_cfg).unwrap();
            assert_eq!(dense.records.len(), m + 1);
            let diff = dense
                .pulse
                .as_slice()
                .iter()
                .zip(limited.pulse.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = max_norm(&DVector::from_column_slice(dense.pulse.as_slice()));
            assert!(diff <= 1e-8 * scale, "rescale {rescale}: diff {diff}");
        }
    }

    #[test]
    fn dense_inverse_stays_positive_definite() {
        let p = inversion(2, 10, None);
        let init = initial_pulse(&p, 9, 800.0);
        for a in [Algorithm::Bfgs, Algorithm::Dfp] {
            let mut opt = Optimizer::new(&p, &init, GradientMethod::default(), config(a, 10)).unwrap();
            while opt.step().unwrap().is_none() {
                if let InverseHessian::Dense(h) = &opt.state().inverse_hessian {
                    assert!(h.clone().symmetric_eigen().eigenvalues.min() > 0.0);
                }
            }
            assert_eq!(opt.state().curvature_rejections, 0);
        }
    }

    #[test]
    fn first_order_gradient_method_runs() {
        let p = inversion(1, 10, Some(2500.0));
        let init = initial_pulse(&p, 2, 0.0);
        let r = optimize(&p, &init, &GradientMethod::new(MethodKind::FirstOrder), &config(Algorithm::Lbfgs, 5)).unwrap();
        assert!(r.fidelity >= r.records[0].fidelity);
    }
}
