use rand::Rng;

use crate::autograd::Tensor;

/// Glorot half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f64).sqrt() as f32
}

/// Uniform `(-s, s)` weights with the Glorot half-width.
pub fn uniform_glorot(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Tensor {
    let s = glorot_limit(fan_in, fan_out);
    Tensor::from_fn(shape, |_| rng.random_range(-s..s))
}
