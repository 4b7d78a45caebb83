use rand::Rng;

use super::{Scalar, Tensor};

/// Fan-in scaled uniform initialisation, `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect()
}

pub fn he_uniform_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), he_uniform(rng, len, fan_in)).expect("length matches shape")
}
