//! Spin-1/2 operators, chain Hamiltonians and their Liouville-space lift.
//!
//! All generators are angular frequencies (rad/s). User-facing frequencies
//! (offsets, couplings, control amplitudes) are in Hz and pick up an explicit
//! `2π` here, so a control amplitude of `c` Hz nutates at `c` Hz.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{GrapeError, Result};
use crate::linalg::{self, CMatrix, CVector, I, ZERO};

/// Largest Hilbert-space dimension handled by the dense kernels.
pub const MAX_HILBERT_DIM: usize = 64;

/// Hermiticity tolerance, relative to the largest entry of the matrix.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Cartesian spin operators of one spin, embedded in the full space.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub x: CMatrix,
    pub y: CMatrix,
    pub z: CMatrix,
}

fn pauli_halves() -> [CMatrix; 3] {
    let h = Complex64::new(0.5, 0.0);
    let ih = Complex64::new(0.0, 0.5);
    [
        CMatrix::from_row_slice(2, 2, &[ZERO, h, h, ZERO]),
        CMatrix::from_row_slice(2, 2, &[ZERO, -ih, ih, ZERO]),
        CMatrix::from_row_slice(2, 2, &[h, ZERO, ZERO, -h]),
    ]
}

/// Hilbert dimension `2^n` of an `n`-spin system, checked against the dense limit.
pub fn hilbert_dim(n_spins: usize) -> Result<usize> {
    if n_spins == 0 {
        return Err(GrapeError::invalid("n_spins", "must be at least 1"));
    }
    let limit_spins = MAX_HILBERT_DIM.trailing_zeros() as usize;
    if n_spins > limit_spins {
        return Err(GrapeError::Capacity {
            what: "Hilbert dimension",
            requested: 1usize.checked_shl(n_spins as u32).unwrap_or(usize::MAX),
            limit: MAX_HILBERT_DIM,
        });
    }
    Ok(1 << n_spins)
}

/// Per-spin `(Sx, Sy, Sz)` for `n_spins` spin-1/2 particles.
///
/// Spin 0 is the leftmost Kronecker factor.
pub fn spin_operators(n_spins: usize) -> Result<Vec<SpinOperators>> {
    let dim = hilbert_dim(n_spins)?;
    let single = pauli_halves();
    let embed = |op: &CMatrix, site: usize| -> CMatrix {
        let left = linalg::identity(1 << site);
        let right = linalg::identity(dim >> (site + 1));
        linalg::kron(&linalg::kron(&left, op), &right)
    };
    Ok((0..n_spins)
        .map(|site| SpinOperators {
            x: embed(&single[0], site),
            y: embed(&single[1], site),
            z: embed(&single[2], site),
        })
        .collect())
}

/// Chemical-shift offsets of a chain, either directly in Hz or in ppm of the
/// spectrometer frequency.
#[derive(Debug, Clone, PartialEq)]
pub enum Offsets {
    Hz(Vec<f64>),
    Ppm(Vec<f64>),
}

impl Offsets {
    pub fn len(&self) -> usize {
        match self {
            Offsets::Hz(v) | Offsets::Ppm(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offsets in Hz. `ppm × MHz = Hz`.
    pub fn to_hz(&self, spectrometer_mhz: f64) -> Result<Vec<f64>> {
        match self {
            Offsets::Hz(v) => Ok(v.clone()),
            Offsets::Ppm(v) => {
                if !(spectrometer_mhz.is_finite() && spectrometer_mhz > 0.0) {
                    return Err(GrapeError::invalid(
                        "spectrometer_mhz",
                        "a positive spectrometer frequency is required for ppm offsets",
                    ));
                }
                Ok(v.iter().map(|ppm| ppm * spectrometer_mhz).collect())
            }
        }
    }
}

/// A linear chain of spin-1/2 nuclei with isotropic nearest-neighbour coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinChainSpec {
    pub n_spins: usize,
    pub offsets: Offsets,
    pub j_hz: f64,
    /// Control amplitude cap in Hz; `None` means unbounded.
    pub b1_max_hz: Option<f64>,
}

impl SpinChainSpec {
    pub fn new(n_spins: usize, offsets_hz: Vec<f64>, j_hz: f64, b1_max_hz: Option<f64>) -> Result<Self> {
        let spec = SpinChainSpec {
            n_spins,
            offsets: Offsets::Hz(offsets_hz),
            j_hz,
            b1_max_hz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        hilbert_dim(self.n_spins)?;
        if self.offsets.len() != self.n_spins {
            return Err(GrapeError::invalid(
                "offsets",
                format!("expected {} entries, got {}", self.n_spins, self.offsets.len()),
            ));
        }
        let values = match &self.offsets {
            Offsets::Hz(v) | Offsets::Ppm(v) => v,
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GrapeError::invalid("offsets", "entries must be finite"));
        }
        if !self.j_hz.is_finite() {
            return Err(GrapeError::invalid("j_hz", "must be finite"));
        }
        if let Some(b) = self.b1_max_hz {
            if !(b.is_finite() && b >= 0.0) {
                return Err(GrapeError::invalid("b1_max_hz", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Drift Hamiltonian of the chain in rad/s:
/// `Σ 2π ν_i Sz_i + Σ 2π J (S_i · S_{i+1})`.
pub fn build_drift(spec: &SpinChainSpec, spectrometer_mhz: f64) -> Result<CMatrix> {
    spec.validate()?;
    let offsets = spec.offsets.to_hz(spectrometer_mhz)?;
    let ops = spin_operators(spec.n_spins)?;
    let dim = ops[0].z.nrows();
    let mut h0 = CMatrix::zeros(dim, dim);
    for (op, nu) in ops.iter().zip(&offsets) {
        h0 += &op.z * Complex64::new(2.0 * PI * nu, 0.0);
    }
    let coupling = Complex64::new(2.0 * PI * spec.j_hz, 0.0);
    for pair in ops.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let exchange = linalg::matmul(&a.x, &b.x) + linalg::matmul(&a.y, &b.y) + linalg::matmul(&a.z, &b.z);
        h0 += exchange * coupling;
    }
    Ok(h0)
}

/// Control Hamiltonians `2π Σ Sx_i` and `2π Σ Sy_i`, per Hz of amplitude.
pub fn build_controls(n_spins: usize) -> Result<Vec<CMatrix>> {
    let ops = spin_operators(n_spins)?;
    let dim = ops[0].x.nrows();
    let scale = Complex64::new(2.0 * PI, 0.0);
    let mut hx = CMatrix::zeros(dim, dim);
    let mut hy = CMatrix::zeros(dim, dim);
    for op in &ops {
        hx += &op.x;
        hy += &op.y;
    }
    Ok(vec![hx * scale, hy * scale])
}

/// Drift and control Hamiltonians sharing one Hilbert space.
#[derive(Debug, Clone)]
pub struct HamiltonianSet {
    pub h0: CMatrix,
    pub controls: Vec<CMatrix>,
}

pub(crate) fn check_hermitian(name: &str, m: &CMatrix) -> Result<()> {
    let scale = linalg::max_abs(m).max(1.0);
    let deviation = linalg::hermitian_deviation(m);
    if deviation > HERMITIAN_TOL * scale {
        return Err(GrapeError::NotHermitian {
            name: name.to_string(),
            deviation,
        });
    }
    Ok(())
}

impl HamiltonianSet {
    pub fn new(h0: CMatrix, controls: Vec<CMatrix>) -> Result<Self> {
        let dim = h0.nrows();
        if !h0.is_square() {
            return Err(GrapeError::DimensionMismatch("drift Hamiltonian is not square".into()));
        }
        if dim > MAX_HILBERT_DIM {
            return Err(GrapeError::Capacity {
                what: "Hilbert dimension",
                requested: dim,
                limit: MAX_HILBERT_DIM,
            });
        }
        check_hermitian("h0", &h0)?;
        for (k, hk) in controls.iter().enumerate() {
            if hk.shape() != (dim, dim) {
                return Err(GrapeError::DimensionMismatch(format!(
                    "control {k} is {}x{}, drift is {dim}x{dim}",
                    hk.nrows(),
                    hk.ncols()
                )));
            }
            check_hermitian(&format!("controls[{k}]"), hk)?;
        }
        Ok(HamiltonianSet { h0, controls })
    }

    /// Drift and x/y controls of a spin chain.
    pub fn for_chain(spec: &SpinChainSpec, spectrometer_mhz: f64) -> Result<Self> {
        let h0 = build_drift(spec, spectrometer_mhz)?;
        let controls = build_controls(spec.n_spins)?;
        HamiltonianSet::new(h0, controls)
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }
}

/// Relaxation model in Liouville space.
#[derive(Debug, Clone)]
pub enum Relaxation {
    None,
    /// Uniform damping at `rate` (1/s) of every component orthogonal to the
    /// unit (identity) state.
    Uniform(f64),
    /// Explicit `d² × d²` superoperator, entering the equation of motion as
    /// `dρ/dt = … + R ρ`.
    Explicit(CMatrix),
}

impl Relaxation {
    /// The relaxation superoperator for Hilbert dimension `dim`, or `None` when zero.
    pub fn matrix(&self, dim: usize) -> Result<Option<CMatrix>> {
        let ldim = dim * dim;
        match self {
            Relaxation::None => Ok(None),
            Relaxation::Uniform(rate) => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(GrapeError::invalid("relaxation_rate", "must be finite and nonnegative"));
                }
                if *rate == 0.0 {
                    return Ok(None);
                }
                let unit = vectorize(&linalg::identity(dim))?.normalized()?;
                let projector = &unit.0 * unit.0.adjoint();
                let r = (linalg::identity(ldim) - projector) * Complex64::new(-rate, 0.0);
                Ok(Some(r))
            }
            Relaxation::Explicit(r) => {
                if r.shape() != (ldim, ldim) {
                    return Err(GrapeError::DimensionMismatch(format!(
                        "relaxation matrix is {}x{}, expected {ldim}x{ldim}",
                        r.nrows(),
                        r.ncols()
                    )));
                }
                if r.iter().all(|z| *z == ZERO) {
                    Ok(None)
                } else {
                    Ok(Some(r.clone()))
                }
            }
        }
    }
}

/// Commutation superoperator `E⊗H − Hᵀ⊗E + iR` for column-major vectorization,
/// so that `L vec(ρ) = vec(Hρ − ρH) + i R vec(ρ)`.
pub fn to_liouvillian(h: &CMatrix, r: Option<&CMatrix>) -> Result<CMatrix> {
    if !h.is_square() {
        return Err(GrapeError::DimensionMismatch("Hamiltonian is not square".into()));
    }
    let dim = h.nrows();
    let e = linalg::identity(dim);
    let mut l = linalg::kron(&e, h) - linalg::kron(&h.transpose(), &e);
    if let Some(r) = r {
        if r.shape() != l.shape() {
            return Err(GrapeError::DimensionMismatch(format!(
                "relaxation matrix is {}x{}, Liouvillian is {}x{}",
                r.nrows(),
                r.ncols(),
                l.nrows(),
                l.ncols()
            )));
        }
        l += r * I;
    }
    Ok(l)
}

/// Drift, control and relaxation superoperators.
#[derive(Debug, Clone)]
pub struct LiouvillianSet {
    pub l0: CMatrix,
    pub controls: Vec<CMatrix>,
    /// `None` when the system is relaxation-free.
    pub relaxation: Option<CMatrix>,
}

impl LiouvillianSet {
    pub fn from_hamiltonians(hams: &HamiltonianSet, relaxation: &Relaxation) -> Result<Self> {
        let r = relaxation.matrix(hams.dim())?;
        let l0 = to_liouvillian(&hams.h0, r.as_ref())?;
        let controls = hams
            .controls
            .iter()
            .map(|hk| to_liouvillian(hk, None))
            .collect::<Result<Vec<_>>>()?;
        Ok(LiouvillianSet {
            l0,
            controls,
            relaxation: r,
        })
    }

    /// Build from explicit superoperators.
    pub fn new(l0: CMatrix, controls: Vec<CMatrix>, relaxation: Option<CMatrix>) -> Result<Self> {
        let ldim = l0.nrows();
        if !l0.is_square() {
            return Err(GrapeError::DimensionMismatch("drift Liouvillian is not square".into()));
        }
        let dim = (ldim as f64).sqrt().round() as usize;
        if dim * dim != ldim {
            return Err(GrapeError::DimensionMismatch(format!(
                "Liouville dimension {ldim} is not a perfect square"
            )));
        }
        if dim > MAX_HILBERT_DIM {
            return Err(GrapeError::Capacity {
                what: "Hilbert dimension",
                requested: dim,
                limit: MAX_HILBERT_DIM,
            });
        }
        for (k, lk) in controls.iter().enumerate() {
            if lk.shape() != l0.shape() {
                return Err(GrapeError::DimensionMismatch(format!("control superoperator {k} has the wrong shape")));
            }
        }
        if let Some(r) = &relaxation {
            if r.shape() != l0.shape() {
                return Err(GrapeError::DimensionMismatch("relaxation superoperator has the wrong shape".into()));
            }
        }
        Ok(LiouvillianSet {
            l0,
            controls,
            relaxation,
        })
    }

    pub fn liouville_dim(&self) -> usize {
        self.l0.nrows()
    }

    pub fn hilbert_dim(&self) -> usize {
        (self.l0.nrows() as f64).sqrt().round() as usize
    }

    pub fn is_dissipative(&self) -> bool {
        self.relaxation.is_some()
    }
}

/// A vectorized density matrix (columns stacked).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub CVector);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        linalg::inner(&self.0, &other.0)
    }

    /// Unit 2-norm copy; rejects zero or non-finite vectors.
    pub fn normalized(&self) -> Result<StateVector> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GrapeError::invalid("state", "norm must be finite and nonzero"));
        }
        Ok(StateVector(&self.0 / Complex64::new(n, 0.0)))
    }
}

/// Stack the columns of a square matrix.
pub fn vectorize(rho: &CMatrix) -> Result<StateVector> {
    if !rho.is_square() {
        return Err(GrapeError::DimensionMismatch(format!(
            "cannot vectorize a {}x{} matrix",
            rho.nrows(),
            rho.ncols()
        )));
    }
    Ok(StateVector(CVector::from_column_slice(rho.as_slice())))
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &StateVector) -> Result<CMatrix> {
    let dim = (v.len() as f64).sqrt().round() as usize;
    if dim * dim != v.len() {
        return Err(GrapeError::DimensionMismatch(format!(
            "state length {} is not a perfect square",
            v.len()
        )));
    }
    Ok(CMatrix::from_column_slice(dim, dim, v.0.as_slice()))
}

/// Named density-matrix states of a spin chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedState {
    SumSz,
    MinusSumSz,
    /// `Sz` of one spin (0-based).
    Sz(usize),
    /// `Sx` of one spin (0-based).
    Sx(usize),
}

impl NamedState {
    pub fn density(&self, ops: &[SpinOperators]) -> Result<CMatrix> {
        let dim = ops.first().map(|o| o.z.nrows()).unwrap_or(0);
        let pick = |site: usize| {
            ops.get(site).ok_or_else(|| {
                GrapeError::invalid("state", format!("spin index {} out of range (n_spins = {})", site + 1, ops.len()))
            })
        };
        Ok(match *self {
            NamedState::SumSz => ops.iter().fold(CMatrix::zeros(dim, dim), |acc, o| acc + &o.z),
            NamedState::MinusSumSz => ops.iter().fold(CMatrix::zeros(dim, dim), |acc, o| acc - &o.z),
            NamedState::Sz(site) => pick(site)?.z.clone(),
            NamedState::Sx(site) => pick(site)?.x.clone(),
        })
    }

    pub fn state(&self, ops: &[SpinOperators]) -> Result<StateVector> {
        vectorize(&self.density(ops)?)
    }
}

impl std::str::FromStr for NamedState {
    type Err = GrapeError;

    /// Accepts `sum-Sz`, `minus-sum-Sz`, `Sz:<spin>` and `Sx:<spin>` with
    /// 1-based spin numbers.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "sum-sz" => return Ok(NamedState::SumSz),
            "minus-sum-sz" => return Ok(NamedState::MinusSumSz),
            _ => {}
        }
        let bad = || GrapeError::invalid("state", format!("unknown state name `{t}`"));
        let (kind, index) = t.split_once(':').ok_or_else(bad)?;
        let spin: usize = index.trim().parse().map_err(|_| bad())?;
        if spin == 0 {
            return Err(GrapeError::invalid("state", "spin numbers start at 1"));
        }
        match kind.trim().to_ascii_lowercase().as_str() {
            "sz" => Ok(NamedState::Sz(spin - 1)),
            "sx" => Ok(NamedState::Sx(spin - 1)),
            _ => Err(bad()),
        }
    }
}
