//! Random inputs for unit tests.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::CMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Random Hermitian matrix scaled to the given 1-norm.
pub fn random_hermitian(rng: &mut ChaCha8Rng, n: usize, norm1: f64) -> CMatrix {
    let a = random_matrix(rng, n);
    let h = (&a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let scale = norm1 / crate::linalg::norm1(&h);
    h * Complex64::new(scale, 0.0)
}
