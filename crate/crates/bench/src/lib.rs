//! Seeded inputs shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relcka::{FeatureMap, Matrix};

/// Two `n`-sample representations of widths `p` and `q`.
pub fn matrix_pair(n: usize, p: usize, q: usize, seed: u64) -> (Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        Matrix::random_normal(n, p, &mut rng),
        Matrix::random_normal(n, q, &mut rng),
    )
}

pub fn map_pair(b: usize, c: usize, h: usize, w: usize, seed: u64) -> (FeatureMap, FeatureMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        FeatureMap::random_normal(b, c, h, w, &mut rng),
        FeatureMap::random_normal(b, c, h, w, &mut rng),
    )
}
