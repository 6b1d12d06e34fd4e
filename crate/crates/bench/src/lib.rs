//! Fixtures shared by the benchmarks.

use mkv_fbsde::EmpiricalMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform cloud of `n` atoms in `[-1, 1]^dim`.
pub fn random_cloud(n: usize, dim: usize, seed: u64) -> EmpiricalMeasure {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmpiricalMeasure::uniform(dim, points).expect("finite points")
}
