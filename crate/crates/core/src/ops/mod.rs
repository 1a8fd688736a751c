//! Numeric kernels: convolution, fully-connected, activations and losses.

mod activation;
mod conv;
mod gemm;
mod linear;
mod loss;

pub use activation::{
    leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar,
};
pub use conv::{
    conv2d_backward, conv2d_backward_input, conv2d_forward, conv_output_len, conv_output_shape,
    ConvGeometry, ConvGrads,
};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::{argmax_labels, mse, softmax_cross_entropy};
