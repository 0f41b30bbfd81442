//! Parameter initializers.

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// Glorot/Xavier uniform: `U(−l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..limit)))
}

/// Fans of a kernel in the layouts used by this crate.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match *shape {
        // K×K×C_in×C_out
        [k1, k2, c_in, c_out] => (k1 * k2 * c_in, k1 * k2 * c_out),
        // depthwise K×K×C: one filter per channel
        [k1, k2, _] => (k1 * k2, k1 * k2),
        [c_in, c_out] => (c_in, c_out),
        [n] => (n, n),
        _ => (1, 1),
    }
}

pub fn xavier_for<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<T> {
    let (fi, fo) = fans(shape);
    xavier_uniform(rng, shape, fi, fo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn within_limit_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let x: Tensor<f32> = xavier_for(&mut a, &[3, 3, 4, 8]);
        let y: Tensor<f32> = xavier_for(&mut b, &[3, 3, 4, 8]);
        assert_eq!(x, y);
        let limit = (6.0f32 / (36.0 + 72.0)).sqrt();
        assert!(x.data().iter().all(|v| v.abs() <= limit));
    }
}
