//! Deterministic inputs shared by the benchmarks.

use nucdenoise::Tensor;

/// Pseudo-random tensor in `[0, 1)` from a linear congruential sequence.
pub fn pattern(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut state = seed.wrapping_add(1);
    Tensor::from_fn(shape, |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 40) as f32 / (1u64 << 24) as f32
    })
}
