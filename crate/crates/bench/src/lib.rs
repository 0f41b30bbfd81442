//! Fixtures shared by the criterion benchmarks under `benches/`.

use sclstm_core::Tensor;

/// Deterministic pseudo-random values in `[-1, 1)`, cheap enough to build
/// large inputs outside the timed loop.
pub fn filled(shape: &[usize], salt: u32) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| {
        let h = (i as u32 ^ salt)
            .wrapping_mul(0x9E37_79B9)
            .rotate_left(13)
            .wrapping_mul(0x85EB_CA6B);
        (h >> 8) as f32 / (1u32 << 23) as f32 - 1.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_in_range_and_reproducible() {
        let a = filled(&[4, 5, 6], 7);
        assert!(a.data().iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(a, filled(&[4, 5, 6], 7));
        assert_ne!(a, filled(&[4, 5, 6], 8));
    }
}
