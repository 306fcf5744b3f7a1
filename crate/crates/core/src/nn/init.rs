use rand::Rng;

use super::Tensor;

/// Xavier/Glorot uniform: U(−a, a) with a = √(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

pub fn zeros_like_shape(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}
