use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor;

/// Kaiming (He) normal initialization: samples from `N(0, 2 / fan_in)`.
///
/// # Panics
/// If `fan_in` is zero.
pub fn kaiming_normal<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    assert!(fan_in >= 1, "kaiming_normal: fan_in must be >= 1");
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}
