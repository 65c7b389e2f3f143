//! TOML problem definitions.
//!
//! ```toml
//! [system]
//! n_spins = 3
//! offsets_hz = [-1000.0, 0.0, 1000.0]
//! j_hz = 20.0
//!
//! [pulse]
//! n_steps = 50
//! dt = 1e-4
//! b1_max_hz = 2500.0
//!
//! [transfer]
//! initial = "sum-Sz"
//! target = "minus-sum-Sz"
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::error::{GrapeError, Result};
use crate::expkernel::{ExpmOptions, FdStepPolicy};
use crate::gradient::{GradientMethod, MethodKind};
use crate::linalg::CVector;
use crate::optim::{self, Algorithm, OptimizerConfig};
use crate::propagation::{ControlProblem, PulseSequence};
use crate::spinsys::{spin_operators, HamiltonianSet, NamedState, Offsets, Relaxation, SpinChainSpec, StateVector};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    system: RawSystem,
    pulse: RawPulse,
    transfer: RawTransfer,
    #[serde(default)]
    method: RawMethod,
    #[serde(default)]
    optimizer: RawOptimizer,
    sweep: Option<RawSweep>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n_spins: usize,
    offsets_hz: Option<Vec<f64>>,
    offsets_ppm: Option<Vec<f64>>,
    #[serde(default)]
    j_hz: f64,
    #[serde(default = "default_spectrometer")]
    spectrometer_mhz: f64,
    #[serde(default)]
    relaxation_rate: f64,
}

fn default_spectrometer() -> f64 {
    600.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    n_steps: usize,
    dt: f64,
    b1_max_hz: Option<f64>,
    seed: Option<u64>,
    /// Starting amplitude range for unbounded problems.
    init_half_width_hz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawState {
    Named(String),
    Vector {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransfer {
    initial: RawState,
    target: RawState,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    gradient: Option<String>,
    taylor_tol: Option<f64>,
    scaling_threshold: Option<f64>,
    max_terms: Option<usize>,
    fd_error_threshold: Option<f64>,
    fd_eps_a: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    algorithm: Option<String>,
    max_iters: Option<usize>,
    grad_tol: Option<f64>,
    fidelity_target: Option<f64>,
    lbfgs_memory: Option<usize>,
    wolfe_c1: Option<f64>,
    wolfe_c2: Option<f64>,
    max_line_evals: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    offsets_hz: Option<Vec<f64>>,
    start_hz: Option<f64>,
    stop_hz: Option<f64>,
    points: Option<usize>,
}

/// A transfer state: a built-in name or an explicit vectorized density matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSpec {
    Named(NamedState),
    Explicit(Vec<num_complex::Complex64>),
}

/// A validated problem file.
#[derive(Debug, Clone)]
pub struct ProblemDefinition {
    pub spec: SpinChainSpec,
    pub spectrometer_mhz: f64,
    pub relaxation_rate: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub initial: StateSpec,
    pub target: StateSpec,
    pub init_half_width_hz: f64,
    pub method: GradientMethod,
    pub optimizer: OptimizerConfig,
    /// Offset grid for the inversion profile, in Hz.
    pub sweep: Option<Vec<f64>>,
}

fn finite(field: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(GrapeError::invalid(field, "must be a finite number"))
    }
}

fn parse_state(field: &str, raw: &RawState, n_spins: usize) -> Result<StateSpec> {
    match raw {
        RawState::Named(name) => {
            let state: NamedState = name.parse().map_err(|e: GrapeError| GrapeError::invalid(field, e.to_string()))?;
            let site = match state {
                NamedState::Sz(i) | NamedState::Sx(i) => Some(i),
                _ => None,
            };
            if let Some(i) = site {
                if i >= n_spins {
                    return Err(GrapeError::invalid(field, format!("spin {} does not exist (n_spins = {n_spins})", i + 1)));
                }
            }
            Ok(StateSpec::Named(state))
        }
        RawState::Vector { re, im } => {
            if !im.is_empty() && im.len() != re.len() {
                return Err(GrapeError::invalid(field, "`re` and `im` must have equal length"));
            }
            if re.iter().chain(im).any(|x| !x.is_finite()) {
                return Err(GrapeError::invalid(field, "entries must be finite"));
            }
            let expected = 1usize << (2 * n_spins);
            if re.len() != expected {
                return Err(GrapeError::invalid(field, format!("expected {expected} entries, got {}", re.len())));
            }
            Ok(StateSpec::Explicit(
                re.iter()
                    .enumerate()
                    .map(|(i, &r)| num_complex::Complex64::new(r, im.get(i).copied().unwrap_or(0.0)))
                    .collect(),
            ))
        }
    }
}

fn sweep_grid(raw: &RawSweep) -> Result<Vec<f64>> {
    if let Some(list) = &raw.offsets_hz {
        if raw.start_hz.is_some() || raw.stop_hz.is_some() || raw.points.is_some() {
            return Err(GrapeError::invalid("sweep", "give either offsets_hz or start_hz/stop_hz/points"));
        }
        for &x in list {
            finite("sweep.offsets_hz", x)?;
        }
        return Ok(list.clone());
    }
    let (Some(a), Some(b), Some(n)) = (raw.start_hz, raw.stop_hz, raw.points) else {
        return Err(GrapeError::invalid("sweep", "needs offsets_hz or all of start_hz, stop_hz, points"));
    };
    finite("sweep.start_hz", a)?;
    finite("sweep.stop_hz", b)?;
    Ok(match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    })
}

impl ProblemDefinition {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GrapeError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| match e {
            GrapeError::Parse { reason, .. } => GrapeError::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| GrapeError::Parse {
            path: "<problem>".into(),
            reason: e.to_string().trim_end().to_string(),
        })?;
        let sys = &raw.system;
        if sys.n_spins == 0 {
            return Err(GrapeError::invalid("system.n_spins", "must be at least 1"));
        }
        let offsets = match (&sys.offsets_hz, &sys.offsets_ppm) {
            (Some(hz), None) => Offsets::Hz(hz.clone()),
            (None, Some(ppm)) => Offsets::Ppm(ppm.clone()),
            (None, None) => Offsets::Hz(vec![0.0; sys.n_spins]),
            (Some(_), Some(_)) => return Err(GrapeError::invalid("system", "give offsets_hz or offsets_ppm, not both")),
        };
        if offsets.len() != sys.n_spins {
            return Err(GrapeError::invalid(
                "system.offsets",
                format!("expected {} offsets, got {}", sys.n_spins, offsets.len()),
            ));
        }
        let spectrometer_mhz = finite("system.spectrometer_mhz", sys.spectrometer_mhz)?;
        if spectrometer_mhz <= 0.0 {
            return Err(GrapeError::invalid("system.spectrometer_mhz", "must be positive"));
        }
        let relaxation_rate = finite("system.relaxation_rate", sys.relaxation_rate)?;
        if relaxation_rate < 0.0 {
            return Err(GrapeError::invalid("system.relaxation_rate", "must be nonnegative"));
        }
        let offsets_hz = offsets.to_hz(spectrometer_mhz)?;
        let p = &raw.pulse;
        if let Some(b) = p.b1_max_hz {
            if !(finite("pulse.b1_max_hz", b)? >= 0.0) {
                return Err(GrapeError::invalid("pulse.b1_max_hz", "must be nonnegative"));
            }
        }
        let spec = SpinChainSpec::new(sys.n_spins, offsets_hz, finite("system.j_hz", sys.j_hz)?, p.b1_max_hz)?;
        if p.n_steps == 0 {
            return Err(GrapeError::invalid("pulse.n_steps", "must be at least 1"));
        }
        if !(finite("pulse.dt", p.dt)? > 0.0) {
            return Err(GrapeError::invalid("pulse.dt", "must be positive"));
        }
        let init_half_width_hz = finite("pulse.init_half_width_hz", p.init_half_width_hz.unwrap_or(1000.0))?;

        let m = &raw.method;
        let mut method = GradientMethod::new(match &m.gradient {
            Some(name) => name.parse().map_err(|e: GrapeError| GrapeError::invalid("method.gradient", e.to_string()))?,
            None => MethodKind::SeriesExact,
        });
        let defaults = ExpmOptions::default();
        method.expm = ExpmOptions {
            taylor_tol: m.taylor_tol.unwrap_or(defaults.taylor_tol),
            scaling_threshold: m.scaling_threshold.unwrap_or(defaults.scaling_threshold),
            max_terms: m.max_terms.unwrap_or(defaults.max_terms),
        };
        method.expm.validate().map_err(|e| GrapeError::invalid("method", e.to_string()))?;
        let fd = FdStepPolicy::default();
        method.fd_policy = FdStepPolicy {
            error_threshold: m.fd_error_threshold.unwrap_or(fd.error_threshold),
            eps_a: m.fd_eps_a.unwrap_or(fd.eps_a),
            ..fd
        };
        method.fd_policy.validate().map_err(|e| GrapeError::invalid("method", e.to_string()))?;

        let o = &raw.optimizer;
        let d = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            algorithm: match &o.algorithm {
                Some(name) => name
                    .parse::<Algorithm>()
                    .map_err(|e| GrapeError::invalid("optimizer.algorithm", e.to_string()))?,
                None => d.algorithm,
            },
            max_iters: o.max_iters.unwrap_or(d.max_iters),
            grad_tol: o.grad_tol.unwrap_or(d.grad_tol),
            fidelity_target: o.fidelity_target.unwrap_or(d.fidelity_target),
            lbfgs_memory: o.lbfgs_memory.unwrap_or(d.lbfgs_memory),
            wolfe_c1: o.wolfe_c1.unwrap_or(d.wolfe_c1),
            wolfe_c2: o.wolfe_c2.unwrap_or(d.wolfe_c2),
            max_line_evals: o.max_line_evals.unwrap_or(d.max_line_evals),
            seed: p.seed.unwrap_or(d.seed),
            ..d
        };
        optimizer.validate().map_err(|e| GrapeError::invalid("optimizer", e.to_string()))?;

        Ok(ProblemDefinition {
            initial: parse_state("transfer.initial", &raw.transfer.initial, sys.n_spins)?,
            target: parse_state("transfer.target", &raw.transfer.target, sys.n_spins)?,
            spec,
            spectrometer_mhz,
            relaxation_rate,
            n_steps: p.n_steps,
            dt: p.dt,
            init_half_width_hz,
            method,
            optimizer,
            sweep: raw.sweep.as_ref().map(sweep_grid).transpose()?,
        })
    }

    fn state(&self, spec: &StateSpec, field: &str) -> Result<StateVector> {
        match spec {
            StateSpec::Named(n) => n.state(&spin_operators(self.spec.n_spins)?),
            StateSpec::Explicit(v) => StateVector(CVector::from_vec(v.clone()))
                .normalized()
                .map_err(|e| GrapeError::invalid(field, e.to_string())),
        }
    }

    pub fn bounds(&self) -> Option<Vec<f64>> {
        self.spec.b1_max_hz.map(|b| vec![b, b])
    }

    pub fn build(&self) -> Result<ControlProblem> {
        let hams = HamiltonianSet::for_chain(&self.spec, self.spectrometer_mhz)?;
        let relaxation = if self.relaxation_rate > 0.0 {
            Relaxation::Uniform(self.relaxation_rate)
        } else {
            Relaxation::None
        };
        ControlProblem::with_relaxation(
            hams,
            &relaxation,
            self.state(&self.initial, "transfer.initial")?,
            self.state(&self.target, "transfer.target")?,
            self.n_steps,
            self.dt,
            self.bounds(),
        )
    }

    pub fn initial_pulse(&self, problem: &ControlProblem) -> PulseSequence {
        optim::initial_pulse(problem, self.optimizer.seed, self.init_half_width_hz)
    }
}
