//! Convolution and dense layer parameter blocks.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::autodiff::Scalar;

/// 2D convolution weights (O, C, K, K) and per-channel bias (O,).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T: Scalar> {
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
}

impl<T: Scalar> ConvLayer<T> {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot(out_ch: usize, in_ch: usize, k: usize, rng: &mut ChaCha12Rng) -> Self {
        let fan_in = in_ch * k * k;
        let fan_out = out_ch * k * k;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = ArrayD::from_shape_simple_fn(IxDyn(&[out_ch, in_ch, k, k]), || {
            T::lit(rng.random_range(-limit..limit))
        });
        let b = ArrayD::zeros(IxDyn(&[out_ch]));
        ConvLayer { w, b }
    }
}

/// Dense weights (I, O) and bias (O,).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T: Scalar> {
    pub w: ArrayD<T>,
    pub b: ArrayD<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn glorot(d_in: usize, d_out: usize, rng: &mut ChaCha12Rng) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = ArrayD::from_shape_simple_fn(IxDyn(&[d_in, d_out]), || {
            T::lit(rng.random_range(-limit..limit))
        });
        let b = ArrayD::zeros(IxDyn(&[d_out]));
        DenseLayer { w, b }
    }
}
