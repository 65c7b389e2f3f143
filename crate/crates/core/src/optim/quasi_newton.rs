//! Inverse-Hessian updates and the limited-memory two-loop recursion.
//!
//! All updates are in the minimization convention: `s` is the step,
//! `y` the gradient change, and a pair is usable only when `sᵀy > 0`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Whether a pair satisfies the curvature condition `sᵀy > 0`.
pub fn curvature_ok(s: &DVector<f64>, y: &DVector<f64>) -> bool {
    let sy = s.dot(y);
    sy.is_finite() && sy > 0.0
}

/// Davidon–Fletcher–Powell update of the inverse Hessian,
/// `H + ssᵀ/yᵀs − (Hy)(Hy)ᵀ/yᵀHy`.
///
/// Returns `false` and leaves `h` unchanged when the pair fails the
/// curvature gate.
pub fn dfp_update_inverse(h: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> bool {
    if !curvature_ok(s, y) {
        return false;
    }
    let hy = &*h * y;
    let yhy = y.dot(&hy);
    if !(yhy.is_finite() && yhy > 0.0) {
        return false;
    }
    let sy = s.dot(y);
    h.ger(1.0 / sy, s, s, 1.0);
    h.ger(-1.0 / yhy, &hy, &hy, 1.0);
    true
}

/// Broyden–Fletcher–Goldfarb–Shanno update of the inverse Hessian,
/// `(E − ρ y sᵀ)ᵀ H (E − ρ y sᵀ) + ρ ssᵀ` with `ρ = 1/yᵀs`, expanded into
/// rank-one terms.
///
/// Returns `false` and leaves `h` unchanged when the pair fails the
/// curvature gate.
pub fn bfgs_update_inverse(h: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) -> bool {
    if !curvature_ok(s, y) {
        return false;
    }
    let rho = 1.0 / s.dot(y);
    let hy = &*h * y;
    let yhy = y.dot(&hy);
    h.ger(-rho, s, &hy, 1.0);
    h.ger(-rho, &hy, s, 1.0);
    h.ger(rho * rho * yhy + rho, s, s, 1.0);
    true
}

/// Bounded history of curvature pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsHistory {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl LbfgsHistory {
    pub fn new(memory: usize) -> Self {
        LbfgsHistory {
            memory: memory.max(1),
            pairs: VecDeque::with_capacity(memory.max(1)),
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stores the pair if it passes the curvature gate, dropping the oldest
    /// pair when full.
    pub fn push(&mut self, s: &DVector<f64>, y: &DVector<f64>) -> bool {
        if !curvature_ok(s, y) {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.as_slice().to_vec(), y.as_slice().to_vec()));
        true
    }

    /// `sᵀy/yᵀy` of the newest pair.
    pub fn newest_gamma(&self) -> Option<f64> {
        self.pairs.back().map(|(s, y)| {
            let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
            let yy: f64 = y.iter().map(|b| b * b).sum();
            sy / yy
        })
    }

    pub fn pairs(&self) -> Vec<(DVector<f64>, DVector<f64>)> {
        self.pairs
            .iter()
            .map(|(s, y)| (DVector::from_column_slice(s), DVector::from_column_slice(y)))
            .collect()
    }
}

/// `−H g` by the two-loop recursion over `pairs` (oldest first) with initial
/// matrix `gamma0 · I`.
pub fn lbfgs_direction(pairs: &[(DVector<f64>, DVector<f64>)], gradient: &DVector<f64>, gamma0: f64) -> DVector<f64> {
    let mut q = gradient.clone();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y)) in pairs.iter().enumerate().rev() {
        let rho = 1.0 / y.dot(s);
        alphas[i] = rho * s.dot(&q);
        q.axpy(-alphas[i], y, 1.0);
    }
    let mut r = q * gamma0;
    for (i, (s, y)) in pairs.iter().enumerate() {
        let rho = 1.0 / y.dot(s);
        let beta = rho * y.dot(&r);
        r.axpy(alphas[i] - beta, s, 1.0);
    }
    -r
}
