//! Matrix exponential and its directional derivatives.
//!
//! Every route computes `exp(-i L dt)` and `∂/∂c exp(-i (L + c L_k) dt)` at
//! `c = 0`:
//!
//! * [`expm`]: scaled-and-squared truncated Taylor series.
//! * [`dexp_series`]: nested-commutator series
//!   `exp(A) Σ_m (-1)^m/(m+1)! [A, B]_m` with `A = -i L dt`, `B = -i L_k dt`,
//!   evaluated at the scaled generator and assembled with the product-rule
//!   squaring `D ← P D + D P`, `P ← P²`.
//! * [`dexp_eig`]: eigenframe formula for Hermitian generators,
//!   `D = V (G ∘ V†BV) V†` with `G_rs = γ(i (λ_r − λ_s) dt)`.
//! * [`dexp_fd`]: forward or central finite differences, with the step chosen
//!   by [`FdStepPolicy`] from the round-off bound
//!   `(2 ε_A + ε_M |f|) / h + ε_M |f'|`.
//!
//! No rational approximants are used anywhere; only powers series and
//! products.

use num_complex::Complex64;

use crate::error::{GrapeError, Result};
use crate::linalg::{self, CMatrix, ONE};
use crate::spinsys::check_hermitian;

/// Truncation and scaling controls for the Taylor-type series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpmOptions {
    /// Relative size of the next term at which a series is truncated.
    pub taylor_tol: f64,
    /// 1-norm above which the generator is halved before summation.
    pub scaling_threshold: f64,
    /// Series-length cap.
    pub max_terms: usize,
}

impl Default for ExpmOptions {
    fn default() -> Self {
        ExpmOptions {
            taylor_tol: 1e-14,
            scaling_threshold: 2.0,
            max_terms: 64,
        }
    }
}

impl ExpmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.taylor_tol > 0.0 && self.taylor_tol <= 1e-6) {
            return Err(GrapeError::invalid("taylor_tol", "must lie in (0, 1e-6]"));
        }
        if !(self.scaling_threshold > 0.0 && self.scaling_threshold <= 30.0) {
            return Err(GrapeError::invalid("scaling_threshold", "must lie in (0, 30]"));
        }
        if self.max_terms < 2 {
            return Err(GrapeError::invalid("max_terms", "must be at least 2"));
        }
        Ok(())
    }
}

/// Smallest `s ≥ 0` with `norm / 2^s ≤ threshold`.
pub fn scaling_exponent(norm: f64, threshold: f64) -> u32 {
    let mut s = 0;
    let mut x = norm;
    while x > threshold {
        x *= 0.5;
        s += 1;
    }
    s
}

fn check_finite(name: &str, m: &CMatrix) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(GrapeError::invalid(name, "matrix has non-finite entries"))
    }
}

/// `-i · dt · m`.
pub fn exponent_argument(m: &CMatrix, dt: f64) -> CMatrix {
    m * Complex64::new(0.0, -dt)
}

/// Plain Taylor sum of `exp(a)`; returns the sum and the number of terms used.
fn taylor_sum(a: &CMatrix, opts: &ExpmOptions) -> Result<(CMatrix, usize)> {
    let n = a.nrows();
    let mut sum = linalg::identity(n);
    if linalg::norm1(a) == 0.0 {
        return Ok((sum, 1));
    }
    let mut term = a.clone();
    sum += &term;
    let mut terms = 2;
    loop {
        if terms >= opts.max_terms {
            return Err(GrapeError::Divergence {
                terms,
                residual: linalg::norm1(&term),
            });
        }
        term = linalg::matmul(a, &term) * Complex64::new(1.0 / terms as f64, 0.0);
        sum += &term;
        terms += 1;
        if linalg::norm1(&term) < opts.taylor_tol * linalg::norm1(&sum) {
            return Ok((sum, terms));
        }
    }
}

/// `exp(a)` by scaling, Taylor summation and repeated squaring.
pub fn expm(a: &CMatrix, opts: &ExpmOptions) -> Result<CMatrix> {
    opts.validate()?;
    if !a.is_square() {
        return Err(GrapeError::DimensionMismatch("expm of a non-square matrix".into()));
    }
    check_finite("a", a)?;
    let s = scaling_exponent(linalg::norm1(a), opts.scaling_threshold);
    let scaled = a * Complex64::new(0.5f64.powi(s as i32), 0.0);
    let (mut p, _) = taylor_sum(&scaled, opts)?;
    for _ in 0..s {
        p = linalg::matmul(&p, &p);
    }
    Ok(p)
}

/// `γ(z) = (e^z − 1)/z`, with the removable singularity at zero handled by
/// the power series `Σ zⁿ/(n+1)!` for `|z| < 1e-2`.
pub fn gamma_scalar(z: Complex64) -> Complex64 {
    if z.norm() < 1e-2 {
        gamma_series(z, 10)
    } else {
        (z.exp() - ONE) / z
    }
}

/// Truncated series `Σ_{n < terms} zⁿ/(n+1)!`.
pub fn gamma_series(z: Complex64, terms: usize) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut term = ONE;
    for n in 0..terms {
        if n > 0 {
            term = term * z / (n as f64 + 1.0);
        }
        sum += term;
    }
    sum
}

/// A step propagator together with its derivative along one control.
#[derive(Debug, Clone)]
pub struct DerivativePair {
    pub propagator: CMatrix,
    pub derivative: CMatrix,
    /// Commutator-series terms used at the scaled generator.
    pub terms_used: usize,
}

/// A step propagator with its derivatives along several controls.
#[derive(Debug, Clone)]
pub struct MultiDerivative {
    pub propagator: CMatrix,
    pub derivatives: Vec<CMatrix>,
    /// Largest commutator-series length over the directions.
    pub terms_used: usize,
    pub squarings: u32,
}

/// `Σ_m (-1)^m/(m+1)! [a, b]_m`, truncated once the newest term is below
/// `taylor_tol` relative to the running sum.
fn commutator_series(a: &CMatrix, b: &CMatrix, max_terms: usize, tol: f64) -> Result<(CMatrix, usize)> {
    let mut sum = b.clone();
    if linalg::norm1(b) == 0.0 {
        return Ok((sum, 1));
    }
    let mut term = b.clone();
    let mut terms = 1;
    loop {
        if terms >= max_terms {
            return Err(GrapeError::Divergence {
                terms,
                residual: linalg::norm1(&term),
            });
        }
        term = linalg::commutator(a, &term) * Complex64::new(-1.0 / (terms as f64 + 1.0), 0.0);
        sum += &term;
        terms += 1;
        if linalg::norm1(&term) <= tol * linalg::norm1(&sum) {
            return Ok((sum, terms));
        }
    }
}

fn check_pair(l: &CMatrix, lk: &CMatrix, dt: f64) -> Result<()> {
    if !l.is_square() || l.shape() != lk.shape() {
        return Err(GrapeError::DimensionMismatch(format!(
            "generator is {}x{}, direction is {}x{}",
            l.nrows(),
            l.ncols(),
            lk.nrows(),
            lk.ncols()
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(GrapeError::invalid("dt", "must be positive and finite"));
    }
    Ok(())
}

/// Propagator `exp(-i l dt)` and its derivatives along every direction in
/// `lks`, sharing one scaling exponent and one set of squarings.
pub fn dexp_series_multi(l: &CMatrix, lks: &[CMatrix], dt: f64, opts: &ExpmOptions) -> Result<MultiDerivative> {
    opts.validate()?;
    for lk in lks {
        check_pair(l, lk, dt)?;
    }
    if lks.is_empty() {
        check_pair(l, l, dt)?;
    }
    check_finite("l", l)?;
    let a = exponent_argument(l, dt);
    let s = scaling_exponent(linalg::norm1(&a), opts.scaling_threshold);
    let scale = Complex64::new(0.5f64.powi(s as i32), 0.0);
    let a_scaled = &a * scale;
    let (mut p, _) = taylor_sum(&a_scaled, opts)?;
    let mut terms_used = 0;
    let mut derivatives = Vec::with_capacity(lks.len());
    for lk in lks {
        let b_scaled = exponent_argument(lk, dt) * scale;
        let (series, terms) = commutator_series(&a_scaled, &b_scaled, opts.max_terms, opts.taylor_tol)?;
        terms_used = terms_used.max(terms);
        derivatives.push(linalg::matmul(&p, &series));
    }
    for _ in 0..s {
        for d in derivatives.iter_mut() {
            *d = linalg::matmul(&p, d) + linalg::matmul(d, &p);
        }
        p = linalg::matmul(&p, &p);
    }
    Ok(MultiDerivative {
        propagator: p,
        derivatives,
        terms_used,
        squarings: s,
    })
}

/// Propagator and derivative along `lk` by the commutator series with
/// scaling and squaring.
pub fn dexp_series(l: &CMatrix, lk: &CMatrix, dt: f64, opts: &ExpmOptions) -> Result<DerivativePair> {
    let multi = dexp_series_multi(l, std::slice::from_ref(lk), dt, opts)?;
    Ok(DerivativePair {
        propagator: multi.propagator,
        derivative: multi.derivatives.into_iter().next().expect("one direction"),
        terms_used: multi.terms_used,
    })
}

/// The commutator series summed directly at the full generator, without
/// scaling. Diagnostic only: beyond a 1-norm of about 30 the terms grow
/// large enough that cancellation destroys the result.
pub fn dexp_series_unscaled(l: &CMatrix, lk: &CMatrix, dt: f64, taylor_tol: f64, max_terms: usize) -> Result<DerivativePair> {
    check_pair(l, lk, dt)?;
    let a = exponent_argument(l, dt);
    let b = exponent_argument(lk, dt);
    let opts = ExpmOptions {
        taylor_tol,
        scaling_threshold: f64::INFINITY,
        max_terms,
    };
    let (p, _) = taylor_sum(&a, &opts)?;
    let (series, terms) = commutator_series(&a, &b, max_terms, taylor_tol)?;
    Ok(DerivativePair {
        derivative: linalg::matmul(&p, &series),
        propagator: p,
        terms_used: terms,
    })
}

/// The commutator series cut after exactly `terms` terms (no scaling).
/// `terms == 1` is the first-order rule `P (-i L_k dt)`.
pub fn dexp_series_fixed_order(l: &CMatrix, lk: &CMatrix, dt: f64, terms: usize, opts: &ExpmOptions) -> Result<DerivativePair> {
    check_pair(l, lk, dt)?;
    if terms == 0 {
        return Err(GrapeError::invalid("terms", "must be at least 1"));
    }
    let p = expm(&exponent_argument(l, dt), opts)?;
    let a = exponent_argument(l, dt);
    let mut term = exponent_argument(lk, dt);
    let mut sum = term.clone();
    for m in 1..terms {
        term = linalg::commutator(&a, &term) * Complex64::new(-1.0 / (m as f64 + 1.0), 0.0);
        sum += &term;
    }
    Ok(DerivativePair {
        derivative: linalg::matmul(&p, &sum),
        propagator: p,
        terms_used: terms,
    })
}

/// Eigendecomposition `H = V Λ V†` of a Hermitian generator.
#[derive(Debug, Clone)]
pub struct HermitianEigenframe {
    pub vectors: CMatrix,
    pub values: Vec<f64>,
}

impl HermitianEigenframe {
    pub fn new(h: &CMatrix) -> Result<Self> {
        if !h.is_square() {
            return Err(GrapeError::DimensionMismatch("eigenframe of a non-square matrix".into()));
        }
        check_finite("h", h)?;
        check_hermitian("h", h)?;
        // Symmetrize so the solver sees an exactly Hermitian input.
        let sym = (h + h.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = sym.symmetric_eigen();
        Ok(HermitianEigenframe {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues.iter().copied().collect(),
        })
    }

    /// `exp(-i H dt) = V exp(-i Λ dt) V†`.
    pub fn propagator(&self, dt: f64) -> CMatrix {
        let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|&lam| Complex64::new(0.0, -lam * dt).exp()),
        ));
        linalg::matmul(&linalg::matmul(&self.vectors, &phases), &self.vectors.adjoint())
    }

    /// `D = V (G ∘ B) V†` with `B = V†(-i H_k dt)V` and
    /// `G_rs = γ(i (λ_r − λ_s) dt)`, so that `∂ exp(-iHdt) = exp(-iHdt) D`.
    pub fn derivative_factor(&self, hk: &CMatrix, dt: f64) -> Result<CMatrix> {
        if hk.shape() != self.vectors.shape() {
            return Err(GrapeError::DimensionMismatch("direction does not match the eigenframe".into()));
        }
        check_hermitian("hk", hk)?;
        let v = &self.vectors;
        let vh = v.adjoint();
        let mut b = linalg::matmul(&linalg::matmul(&vh, &exponent_argument(hk, dt)), v);
        let n = self.values.len();
        for s in 0..n {
            for r in 0..n {
                let z = Complex64::new(0.0, (self.values[r] - self.values[s]) * dt);
                b[(r, s)] *= gamma_scalar(z);
            }
        }
        Ok(linalg::matmul(&linalg::matmul(v, &b), &vh))
    }
}

/// Hilbert-space derivative factor `D^(k)` of the eigenframe route.
/// Relaxation-free (Hermitian) generators only.
pub fn dexp_eig(h: &CMatrix, hk: &CMatrix, dt: f64) -> Result<CMatrix> {
    check_pair(h, hk, dt)?;
    HermitianEigenframe::new(h)?.derivative_factor(hk, dt)
}

/// Liouville-space form `E⊗D − Dᵀ⊗E` of a Hilbert-space derivative factor,
/// consistent with the column-major commutation superoperator.
pub fn lift_derivative(d: &CMatrix) -> CMatrix {
    let e = linalg::identity(d.nrows());
    linalg::kron(&e, d) - linalg::kron(&d.transpose(), &e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Forward,
    Central,
}

/// Finite-difference derivative of `exp(-i (l + c lk) dt)` at `c = 0`.
pub fn dexp_fd(l: &CMatrix, lk: &CMatrix, dt: f64, h_step: f64, scheme: FdScheme, opts: &ExpmOptions) -> Result<CMatrix> {
    check_pair(l, lk, dt)?;
    if !(h_step.is_finite() && h_step > 0.0) {
        return Err(GrapeError::invalid("h_step", "must be positive and finite"));
    }
    let shifted = |c: f64| expm(&exponent_argument(&(l + lk * Complex64::new(c, 0.0)), dt), opts);
    Ok(match scheme {
        FdScheme::Forward => (shifted(h_step)? - expm(&exponent_argument(l, dt), opts)?) * Complex64::new(1.0 / h_step, 0.0),
        FdScheme::Central => (shifted(h_step)? - shifted(-h_step)?) * Complex64::new(0.5 / h_step, 0.0),
    })
}

/// Machine epsilon of IEEE double precision, as used in the step bound.
pub const MACHINE_EPSILON: f64 = 2.22e-16;

/// Round-off model for finite-difference step selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdStepPolicy {
    /// Absolute error of one function evaluation.
    pub eps_a: f64,
    /// Machine epsilon.
    pub eps_m: f64,
    /// Target bound on the finite-difference error.
    pub error_threshold: f64,
    /// Order-of-magnitude estimate of `|f'|`.
    pub fprime_estimate: f64,
}

impl Default for FdStepPolicy {
    fn default() -> Self {
        FdStepPolicy {
            eps_a: 1e-13,
            eps_m: MACHINE_EPSILON,
            error_threshold: 1e-8,
            fprime_estimate: 1.0,
        }
    }
}

impl FdStepPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_m > 0.0 && self.eps_a >= self.eps_m) {
            return Err(GrapeError::invalid("eps_a", "must satisfy eps_a >= eps_m > 0"));
        }
        if !(self.fprime_estimate.is_finite() && self.fprime_estimate >= 0.0) {
            return Err(GrapeError::invalid("fprime_estimate", "must be finite and nonnegative"));
        }
        let floor = self.eps_m * self.fprime_estimate;
        if !(self.error_threshold > floor) {
            return Err(GrapeError::InfeasibleThreshold {
                threshold: self.error_threshold,
                floor,
            });
        }
        Ok(())
    }

    /// `(2 ε_A + ε_M |f|)/|h| + ε_M |f'|`.
    pub fn roundoff_bound(&self, h: f64, f_norm: f64, fprime: f64) -> f64 {
        (2.0 * self.eps_a + self.eps_m * f_norm) / h.abs() + self.eps_m * fprime
    }

    /// Smallest step whose round-off bound meets the threshold.
    pub fn select_step(&self, f_norm: f64) -> Result<f64> {
        self.validate()?;
        if !(f_norm.is_finite() && f_norm >= 0.0) {
            return Err(GrapeError::invalid("f_norm", "must be finite and nonnegative"));
        }
        Ok((2.0 * self.eps_a + self.eps_m * f_norm) / (self.error_threshold - self.eps_m * self.fprime_estimate))
    }

    /// A-posteriori check of a step using a finite-difference estimate of `|f'|`.
    pub fn validate_step(&self, h: f64, f_norm: f64, fprime_fd: f64) -> bool {
        self.roundoff_bound(h, f_norm, fprime_fd) <= self.error_threshold * (1.0 + 1e-12)
    }
}

/// Step selection from the round-off bound; see [`FdStepPolicy::select_step`].
pub fn fd_step_select(policy: &FdStepPolicy, f_norm: f64) -> Result<f64> {
    policy.select_step(f_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, max_abs_diff, I, ZERO};
    use crate::test_support::{random_hermitian, random_matrix, rng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sigma_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let e = expm(&CMatrix::zeros(5, 5), &ExpmOptions::default()).unwrap();
        assert_eq!(e, linalg::identity(5));
    }

    #[test]
    fn expm_of_pauli_rotation() {
        let a = sigma_x() * c(0.0, -std::f64::consts::FRAC_PI_2);
        let e = expm(&a, &ExpmOptions::default()).unwrap();
        let expected = sigma_x() * c(0.0, -1.0);
        assert!(max_abs_diff(&e, &expected) < 1e-14);
    }

    #[test]
    fn expm_of_diagonal_matches_scalar_exponentials() {
        let mut r = rng(11);
        for _ in 0..10 {
            let m = random_matrix(&mut r, 2);
            let z = [m[(0, 0)] * 4.0, m[(1, 1)] * 4.0];
            let a = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(z.to_vec()));
            let e = expm(&a, &ExpmOptions::default()).unwrap();
            for (i, zi) in z.iter().enumerate() {
                assert!((e[(i, i)] - zi.exp()).norm() < 1e-13 * zi.exp().norm().max(1.0));
            }
            assert_eq!(e[(0, 1)], ZERO);
        }
    }

    #[test]
    fn expm_inverse_and_unitarity() {
        let mut r = rng(12);
        for _ in 0..5 {
            let a = random_matrix(&mut r, 6) * c(10.0 / 6.0, 0.0);
            let a = &a * c(10.0 / linalg::norm1(&a), 0.0);
            let prod = linalg::matmul(&expm(&a, &Default::default()).unwrap(), &expm(&-&a, &Default::default()).unwrap());
            assert!(max_abs_diff(&prod, &linalg::identity(6)) < 1e-12);
            let h = random_hermitian(&mut r, 6, 10.0);
            let u = expm(&(h * I), &Default::default()).unwrap();
            assert!(max_abs_diff(&linalg::matmul(&u, &u.adjoint()), &linalg::identity(6)) < 1e-12);
        }
    }

    #[test]
    fn expm_reports_divergence_when_terms_run_out() {
        let opts = ExpmOptions {
            max_terms: 3,
            ..Default::default()
        };
        let a = sigma_x() * c(1.0, 0.0);
        assert!(matches!(expm(&a, &opts), Err(GrapeError::Divergence { .. })));
    }

    #[test]
    fn options_validation() {
        assert!(ExpmOptions::default().validate().is_ok());
        for bad in [
            ExpmOptions { taylor_tol: 0.0, ..Default::default() },
            ExpmOptions { taylor_tol: 1e-3, ..Default::default() },
            ExpmOptions { scaling_threshold: 31.0, ..Default::default() },
            ExpmOptions { max_terms: 1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn scaling_exponent_is_smallest_admissible() {
        assert_eq!(scaling_exponent(0.0, 2.0), 0);
        assert_eq!(scaling_exponent(2.0, 2.0), 0);
        assert_eq!(scaling_exponent(2.1, 2.0), 1);
        assert_eq!(scaling_exponent(50.0, 2.0), 5);
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_scalar(ZERO), ONE);
        let e1 = gamma_scalar(ONE);
        assert!((e1.re - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((e1.re - 1.718281828).abs() < 1e-9);
        let mut r = rng(3);
        for _ in 0..50 {
            let m = random_matrix(&mut r, 1);
            let z = m[(0, 0)] * 3.0;
            let lhs = gamma_scalar(-z) * z.exp();
            assert!((lhs - gamma_scalar(z)).norm() < 1e-13 * gamma_scalar(z).norm());
        }
        // Continuity across the series/closed-form crossover.
        let below = gamma_scalar(c(0.999e-2, 0.0));
        let above = gamma_scalar(c(1.001e-2, 0.0));
        assert!((below - above).norm() < 2e-5);
    }

    #[test]
    fn gamma_series_matches_closed_form_in_unit_disk() {
        for k in 0..32 {
            let theta = k as f64 * std::f64::consts::TAU / 32.0;
            for rad in [0.05, 0.5, 1.0] {
                let z = Complex64::from_polar(rad, theta);
                // e^z - 1 without cancellation near zero.
                let em1 = c(z.re.exp_m1() * z.im.cos() - 2.0 * (z.im / 2.0).sin().powi(2), z.re.exp() * z.im.sin());
                let closed = em1 / z;
                assert!((gamma_series(z, 20) - closed).norm() < 1e-15, "{z}");
            }
        }
    }

    #[test]
    fn commuting_generators_give_first_order_derivative() {
        let mut r = rng(4);
        let l = random_hermitian(&mut r, 4, 3.0);
        let pair = dexp_series(&l, &l, 0.7, &Default::default()).unwrap();
        let expected = linalg::matmul(&pair.propagator, &exponent_argument(&l, 0.7));
        assert!(max_abs_diff(&pair.derivative, &expected) < 1e-13);
    }

    #[test]
    fn single_term_reproduces_first_order_rule() {
        let mut r = rng(5);
        let l = random_hermitian(&mut r, 4, 3.0);
        let lk = random_hermitian(&mut r, 4, 1.0);
        let pair = dexp_series_fixed_order(&l, &lk, 0.5, 1, &Default::default()).unwrap();
        let expected = linalg::matmul(&pair.propagator, &exponent_argument(&lk, 0.5));
        assert_eq!(pair.derivative, expected);
    }

    /// Direct double-sum Taylor differentiation, Σ_p (A^p-chain) / p!.
    fn double_sum_oracle(a: &CMatrix, b: &CMatrix, terms: usize) -> CMatrix {
        let n = a.nrows();
        let mut powers = vec![linalg::identity(n)];
        for p in 1..terms {
            powers.push(linalg::matmul(&powers[p - 1], a));
        }
        let mut sum = CMatrix::zeros(n, n);
        let mut fact = 1.0;
        for p in 1..terms {
            fact *= p as f64;
            let mut inner = CMatrix::zeros(n, n);
            for q in 0..p {
                inner += linalg::matmul(&linalg::matmul(&powers[q], b), &powers[p - q - 1]);
            }
            sum += inner * c(1.0 / fact, 0.0);
        }
        sum
    }

    #[test]
    fn series_matches_double_sum_taylor_oracle() {
        let mut r = rng(6);
        let l = random_hermitian(&mut r, 5, 1.5);
        let lk = random_hermitian(&mut r, 5, 1.0);
        let pair = dexp_series(&l, &lk, 1.0, &Default::default()).unwrap();
        let oracle = double_sum_oracle(&exponent_argument(&l, 1.0), &exponent_argument(&lk, 1.0), 40);
        assert!(max_abs_diff(&pair.derivative, &oracle) < 1e-13);
    }

    #[test]
    fn series_matches_eigenframe_at_moderate_norm() {
        let mut r = rng(7);
        let l = random_hermitian(&mut r, 8, 5.0);
        let lk = random_hermitian(&mut r, 8, 1.0);
        let pair = dexp_series(&l, &lk, 1.0, &Default::default()).unwrap();
        let d = dexp_eig(&l, &lk, 1.0).unwrap();
        let eig = linalg::matmul(&pair.propagator, &d);
        assert!(max_abs_diff(&pair.derivative, &eig) < 1e-10);
    }

    #[test]
    fn dexp_eig_trivial_cases() {
        let mut r = rng(8);
        let h = random_hermitian(&mut r, 4, 2.0);
        let hk = random_hermitian(&mut r, 4, 1.0);
        let zero = CMatrix::zeros(4, 4);
        assert!(max_abs(&dexp_eig(&h, &zero, 0.3).unwrap()) < 1e-15);
        let d = dexp_eig(&zero, &hk, 0.3).unwrap();
        assert!(max_abs_diff(&d, &exponent_argument(&hk, 0.3)) < 1e-15);
    }

    #[test]
    fn dexp_eig_matches_sixth_order_finite_difference() {
        let mut r = rng(9);
        let h = random_hermitian(&mut r, 4, 3.0);
        let hk = random_hermitian(&mut r, 4, 1.0);
        let dt = 0.8;
        let frame = HermitianEigenframe::new(&h).unwrap();
        let exact = linalg::matmul(&frame.propagator(dt), &frame.derivative_factor(&hk, dt).unwrap());
        let u = |x: f64| HermitianEigenframe::new(&(&h + &hk * c(x, 0.0))).unwrap().propagator(dt);
        let step = 1e-2;
        let fd = (u(3.0 * step) * c(1.0, 0.0) - u(2.0 * step) * c(9.0, 0.0) + u(step) * c(45.0, 0.0) - u(-step) * c(45.0, 0.0)
            + u(-2.0 * step) * c(9.0, 0.0)
            - u(-3.0 * step))
            * c(1.0 / (60.0 * step), 0.0);
        assert!(max_abs_diff(&exact, &fd) < 1e-9);
    }

    #[test]
    fn dexp_eig_rejects_dissipative_generators() {
        let mut r = rng(10);
        let a = random_matrix(&mut r, 3);
        let hk = random_hermitian(&mut r, 3, 1.0);
        assert!(matches!(dexp_eig(&a, &hk, 1.0), Err(GrapeError::NotHermitian { .. })));
    }

    #[test]
    fn lifted_eigen_derivative_matches_liouville_series() {
        let mut r = rng(13);
        let h = random_hermitian(&mut r, 3, 2.0);
        let hk = random_hermitian(&mut r, 3, 1.0);
        let l = crate::spinsys::to_liouvillian(&h, None).unwrap();
        let lk = crate::spinsys::to_liouvillian(&hk, None).unwrap();
        let pair = dexp_series(&l, &lk, 0.9, &Default::default()).unwrap();
        let lifted = linalg::matmul(&pair.propagator, &lift_derivative(&dexp_eig(&h, &hk, 0.9).unwrap()));
        assert!(max_abs_diff(&pair.derivative, &lifted) < 1e-12);
    }

    #[test]
    fn fd_trivial_cases() {
        let mut r = rng(14);
        let l = random_hermitian(&mut r, 3, 2.0);
        let zero = CMatrix::zeros(3, 3);
        for scheme in [FdScheme::Forward, FdScheme::Central] {
            assert_eq!(max_abs(&dexp_fd(&l, &zero, 1.0, 1e-3, scheme, &Default::default()).unwrap()), 0.0);
        }
        let p = expm(&exponent_argument(&l, 1.0), &Default::default()).unwrap();
        let exact = linalg::matmul(&p, &exponent_argument(&l, 1.0));
        let coarse = max_abs_diff(&dexp_fd(&l, &l, 1.0, 1e-2, FdScheme::Central, &Default::default()).unwrap(), &exact);
        let fine = max_abs_diff(&dexp_fd(&l, &l, 1.0, 1e-4, FdScheme::Central, &Default::default()).unwrap(), &exact);
        assert!(fine < coarse && fine < 1e-7);
        assert!(dexp_fd(&l, &l, 1.0, 0.0, FdScheme::Forward, &Default::default()).is_err());
    }

    #[test]
    fn step_selection_solves_roundoff_bound() {
        let policy = FdStepPolicy {
            eps_a: 1e-13,
            eps_m: 2.22e-16,
            error_threshold: 1e-8,
            fprime_estimate: 1.0,
        };
        let h = fd_step_select(&policy, 1.0).unwrap();
        assert!((h - 2.0022e-5).abs() < 1e-8, "{h}");
        assert!((policy.roundoff_bound(h, 1.0, 1.0) - 1e-8).abs() < 1e-20);
        assert!(policy.validate_step(h, 1.0, 1.0));
        assert!(!policy.validate_step(h / 2.0, 1.0, 1.0));
        assert_eq!(FdStepPolicy::default().eps_m, 2.22e-16);
    }

    #[test]
    fn infeasible_threshold_is_reported() {
        let policy = FdStepPolicy {
            error_threshold: 1e-16,
            ..Default::default()
        };
        assert!(matches!(fd_step_select(&policy, 1.0), Err(GrapeError::InfeasibleThreshold { .. })));
    }
}
