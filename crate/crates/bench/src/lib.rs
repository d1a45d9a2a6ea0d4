//! Inputs shared by the benchmarks.

use hmaflow::Tensor;

/// Deterministic values in `[-1, 1)`.
pub fn noise(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut s = seed.wrapping_mul(0x2545f4914f6cdd1d) | 1;
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 40) as f32 / (1u64 << 23) as f32) - 1.0
    })
}
