use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{GrapeError, Result};
use crate::expkernel::ExpmOptions;
use crate::gradient::{gradient, GradientMethod, MethodKind};
use crate::optim::{optimize, Algorithm, Status};
use crate::propagation::{self, ControlProblem, PulseSequence};
use crate::spinsys::{spin_operators, vectorize, HamiltonianSet};

use super::output;
use super::problem_file::ProblemDefinition;

/// Command-line values that replace problem-file settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub gradient_method: Option<MethodKind>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, def: &mut ProblemDefinition) {
        if let Some(a) = self.algorithm {
            def.optimizer.algorithm = a;
        }
        if let Some(m) = self.gradient_method {
            def.method.kind = m;
        }
        if let Some(n) = self.max_iters {
            def.optimizer.max_iters = n;
        }
        if let Some(s) = self.seed {
            def.optimizer.seed = s;
        }
    }
}

/// Process exit status for an optimization outcome.
pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Converged | Status::TargetReached => 0,
        Status::BudgetExhausted => 2,
        Status::Stalled => 3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileRow {
    pub offset_hz: f64,
    /// Final `⟨Sz⟩`, normalized so the initial value is one.
    pub sz: f64,
}

/// Inversion profile: an isolated spin at each offset, started in `Sz` and
/// driven by `pulse` (x and y controls, Hz).
pub fn sweep_offsets(pulse: &PulseSequence, dt: f64, offsets_hz: &[f64], opts: &ExpmOptions) -> Result<Vec<ProfileRow>> {
    if pulse.n_controls() != 2 {
        return Err(GrapeError::DimensionMismatch(format!(
            "offset sweep needs x and y controls, pulse has {}",
            pulse.n_controls()
        )));
    }
    let ops = spin_operators(1)?;
    let sz = vectorize(&ops[0].z)?;
    let controls = crate::spinsys::build_controls(1)?;
    offsets_hz
        .par_iter()
        .map(|&nu| {
            let drift = &ops[0].z * num_complex::Complex64::new(std::f64::consts::TAU * nu, 0.0);
            let hams = HamiltonianSet::new(drift, controls.clone())?;
            let problem = ControlProblem::closed(hams, sz.clone(), sz.clone(), pulse.n_steps(), dt, None)?;
            Ok(ProfileRow {
                offset_hz: nu,
                sz: propagation::evaluate_fidelity(&problem, pulse, opts)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub status: Status,
    pub fidelity: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub curvature_rejections: usize,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "status: {}", self.status)?;
        writeln!(f, "fidelity: {}", output::fmt_f64(self.fidelity))?;
        writeln!(f, "iterations: {}", self.iterations)?;
        writeln!(f, "objective evaluations: {}", self.evaluations)?;
        writeln!(f, "curvature rejections: {}", self.curvature_rejections)?;
        for p in &self.files {
            writeln!(f, "wrote {}", p.display())?;
        }
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| GrapeError::Io {
        path: dir.display().to_string(),
        reason: e.to_string(),
    })
}

/// Optimizes the problem and writes `iterations.csv`, `waveform.csv` and,
/// when the file has a `[sweep]` section, `profile.csv`.
pub fn run(def: &ProblemDefinition, out_dir: &Path, timings: bool) -> Result<RunSummary> {
    let problem = def.build()?;
    let init = def.initial_pulse(&problem);
    let result = optimize(&problem, &init, &def.method, &def.optimizer)?;
    ensure_dir(out_dir)?;
    let mut files = vec![out_dir.join("iterations.csv"), out_dir.join("waveform.csv")];
    output::write_iterations(&files[0], &result.records, timings)?;
    output::write_waveform(&files[1], &result.pulse, def.dt)?;
    if let Some(grid) = &def.sweep {
        let rows = sweep_offsets(&result.pulse, def.dt, grid, &def.method.expm)?;
        let path = out_dir.join("profile.csv");
        output::write_profile(&path, &rows)?;
        files.push(path);
    }
    Ok(RunSummary {
        status: result.status,
        fidelity: result.fidelity,
        iterations: result.records.len() - 1,
        evaluations: result.total_evaluations,
        curvature_rejections: result.curvature_rejections,
        files,
    })
}

/// Offset sweep of a stored waveform; writes `profile.csv`.
pub fn sweep(def: &ProblemDefinition, waveform: &Path, out_dir: &Path) -> Result<(Vec<ProfileRow>, PathBuf)> {
    let (pulse, _) = output::read_waveform(waveform)?;
    let grid = def
        .sweep
        .clone()
        .ok_or_else(|| GrapeError::invalid("sweep", "the problem file has no [sweep] section"))?;
    let rows = sweep_offsets(&pulse, def.dt, &grid, &def.method.expm)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join("profile.csv");
    output::write_profile(&path, &rows)?;
    Ok((rows, path))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn max_abs_difference(a: &PulseSequence, b: &PulseSequence) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Max-norm of `grad_first_order − grad_series_exact` at each time step,
/// with everything else fixed.
pub fn first_order_error_scaling(problem: &ControlProblem, pulse: &PulseSequence, dts: &[f64], expm: &ExpmOptions) -> Result<Vec<(f64, f64)>> {
    dts.iter()
        .map(|&dt| {
            let p = problem.with_dt(dt)?;
            let mut exact = GradientMethod::new(MethodKind::SeriesExact);
            exact.expm = *expm;
            let mut approx = GradientMethod::new(MethodKind::FirstOrder);
            approx.expm = *expm;
            let e = gradient(&p, pulse, &exact)?;
            let a = gradient(&p, pulse, &approx)?;
            Ok((dt, max_abs_difference(&e.grad, &a.grad)))
        })
        .collect()
}

/// Time-step factors for the first-order scaling fit.
pub const SCALING_FACTORS: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.2];

#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    pub method: MethodKind,
    pub reference: MethodKind,
    pub fidelity: f64,
    pub max_abs_deviation: f64,
    pub mean_abs_deviation: f64,
    /// Max deviation over the max-norm of the reference gradient.
    pub max_relative_deviation: f64,
    /// `(dt, first-order error)` at the scaled time steps.
    pub scaling: Vec<(f64, f64)>,
    pub first_order_slope: f64,
}

impl fmt::Display for GradientCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method: {}", self.method)?;
        writeln!(f, "reference: {}", self.reference)?;
        writeln!(f, "fidelity: {}", output::fmt_f64(self.fidelity))?;
        writeln!(f, "max abs deviation: {:.6e}", self.max_abs_deviation)?;
        writeln!(f, "mean abs deviation: {:.6e}", self.mean_abs_deviation)?;
        writeln!(f, "max relative deviation: {:.6e}", self.max_relative_deviation)?;
        for (dt, err) in &self.scaling {
            writeln!(f, "first-order error at dt = {dt:.3e} s: {err:.6e}")?;
        }
        writeln!(f, "first-order error slope: {:.4}", self.first_order_slope)
    }
}

/// Compares two gradient methods at the problem's seeded initial pulse.
pub fn gradient_check(def: &ProblemDefinition, method: MethodKind, reference: MethodKind) -> Result<GradientCheckReport> {
    let problem = def.build()?;
    let pulse = def.initial_pulse(&problem);
    let with = |kind| GradientMethod { kind, ..def.method };
    let a = gradient(&problem, &pulse, &with(method))?;
    let b = gradient(&problem, &pulse, &with(reference))?;
    let diffs: Vec<f64> = a.grad.as_slice().iter().zip(b.grad.as_slice()).map(|(x, y)| (x - y).abs()).collect();
    let max_abs = diffs.iter().copied().fold(0.0, f64::max);
    let mean_abs = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let ref_norm = b.grad.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dts: Vec<f64> = SCALING_FACTORS.iter().map(|f| f * def.dt).collect();
    let scaling = first_order_error_scaling(&problem, &pulse, &dts, &def.method.expm)?;
    Ok(GradientCheckReport {
        method,
        reference,
        fidelity: b.fidelity,
        max_abs_deviation: max_abs,
        mean_abs_deviation: mean_abs,
        max_relative_deviation: if ref_norm > 0.0 { max_abs / ref_norm } else { max_abs },
        first_order_slope: log_log_slope(&scaling),
        scaling,
    })
}
