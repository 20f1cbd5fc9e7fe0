use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RfnError};
use crate::tensor::Tensor;

/// Half-width of the Xavier uniform interval for a `fan_in x fan_out`
/// weight matrix.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Xavier (Glorot) uniform initialization drawn from `rng`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(RfnError::contract(format!(
            "xavier_init needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let bound = xavier_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Xavier uniform initialization from a fresh generator seeded by `seed`.
pub fn xavier_init(rows: usize, cols: usize, seed: u64) -> Result<Tensor> {
    xavier_uniform(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}
