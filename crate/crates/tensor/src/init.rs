use rand::Rng;

use crate::element::Element;
use crate::tensor::Tensor;

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Element, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-a..a))).collect();
    Tensor::from_parts(shape, data)
}
