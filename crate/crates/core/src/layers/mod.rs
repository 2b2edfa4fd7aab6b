//! Primitive layers with hand-written backward passes.
//!
//! Every layer maps a `T × in` sequence to a `T × out` sequence (the
//! convolution works on `T × F × C` maps) and never changes `T`.

pub mod affine;
pub mod conv;
pub mod lstm;
pub mod tdnn;

pub use affine::{
    affine_backward, affine_forward, log_softmax_rows, relu, relu_backward, softmax_output, AffineParams, SoftmaxOutput,
};
pub use conv::{conv2d_backward, conv2d_layer, Conv2dParams, ConvCache};
pub use lstm::{
    blstm_layer, blstm_layer_backward, lstm_layer_backward, lstm_layer_forward, lstm_step, BlstmCache, BlstmParams,
    LstmCache, LstmParams,
};
pub use tdnn::{splice, tdnn_backward, tdnn_layer, TdnnCache, TdnnParams};

use crate::tensor::Tensor;

/// Input, output and whatever the backward pass needs.
#[derive(Clone, Debug)]
pub struct LayerIo<C> {
    pub input: Tensor,
    pub output: Tensor,
    pub cache: C,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Glorot/Xavier uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
