use rand::Rng;

use crate::Tensor;

/// Uniform `±sqrt(6 / fan_in)·gain` initialisation.
pub(crate) fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let bound = gain * (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}
