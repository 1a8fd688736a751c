use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// He-normal initialization: i.i.d. `N(0, 2/fan_in)`.
pub fn he_init<T: Scalar>(shape: impl Into<Shape>, fan_in: usize, rng: &mut Prng) -> Tensor<T> {
    assert!(fan_in > 0, "he_init: fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.normal() * std))
}
