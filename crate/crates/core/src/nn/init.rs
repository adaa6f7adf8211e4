//! Weight-initialization helpers.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// One standard-normal draw in `f64`.
pub fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Uniform draw in `[-bound, bound]`.
pub fn uniform_sample(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    use rand::Rng;
    rng.gen_range(-bound..=bound)
}
