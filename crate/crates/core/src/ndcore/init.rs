use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ndcore::Matrix;

/// Glorot/Xavier uniform draw in `±sqrt(6 / (rows + cols))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = xavier_bound(rows, cols);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

/// Seeded variant of [`xavier_uniform`].
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    xavier_uniform(rows, cols, &mut rng)
}

pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}
