//! Seeded Gaussian and Haar-distributed test matrices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::matrix::{ComplexMatrix, C64};
use super::qr::qr_householder;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix of i.i.d. standard normal entries (complex entries have unit variance per part).
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, complex: bool) -> ComplexMatrix {
    let mut r = rng(seed);
    gaussian_from(&mut r, rows, cols, complex)
}

pub fn gaussian_from(r: &mut ChaCha8Rng, rows: usize, cols: usize, complex: bool) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(r);
        let im: f64 = if complex { StandardNormal.sample(r) } else { 0.0 };
        C64::new(re, im)
    })
}

/// Haar-distributed orthogonal (real) or unitary (complex) matrix: the
/// Q factor of a Gaussian matrix with positive `diag(R)`.
pub fn haar(n: usize, seed: u64, complex: bool) -> ComplexMatrix {
    let g = gaussian_matrix(n, n, seed, complex);
    qr_householder(&g).expect("Gaussian matrices are full rank").q
}

/// `n x m` matrix with orthonormal columns spanning a random subspace.
pub fn random_orthonormal(n: usize, m: usize, seed: u64, complex: bool) -> ComplexMatrix {
    let g = gaussian_matrix(n, m, seed, complex);
    qr_householder(&g).expect("Gaussian matrices are full rank").q
}
