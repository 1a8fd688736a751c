//! Layers with explicit forward/backward passes.

mod batchnorm;
mod conv;
mod init;
mod simple;

pub use batchnorm::{BatchNorm2d, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use conv::{
    blend_comparison_gradient, conv_comparison_loss, normalized_comparison_gradient, Comparison,
    Conv2d,
};
pub use init::he_init;
pub use simple::{LeakyRelu, Linear, Relu, Sigmoid};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How batch normalization picks its statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Batch statistics; running statistics left untouched.
    BatchStats,
    /// Running statistics only.
    Eval,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        matches!(self, Mode::Train | Mode::BatchStats)
    }

    pub fn updates_running_stats(self) -> bool {
        self == Mode::Train
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// `p ← p − lr·g`. Rejects `lr ≤ 0` and non-finite gradients before touching `p`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
    check_lr(lr)?;
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("sgd_step gradient"));
    }
    let lr = T::lit(lr);
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

pub(crate) fn check_lr(lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!(
            "learning rate {lr} must be positive"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvStride2,
    ConvComparison,
    BatchNorm,
    Relu,
    LeakyRelu,
    Sigmoid,
    FullyConnected,
}

/// Static description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub channels_in: usize,
    pub channels_out: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu<T>),
    LeakyRelu(LeakyRelu<T>),
    Sigmoid(Sigmoid<T>),
    Linear(Linear<T>),
}

/// A persistent tensor of a layer with its on-disk dimensions.
pub struct StateRef<'a, T> {
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

pub struct StateMut<'a, T> {
    pub dims: Vec<usize>,
    pub data: &'a mut [T],
}

impl<T: Scalar> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => Ok(l.forward(x)),
            Layer::LeakyRelu(l) => Ok(l.forward(x)),
            Layer::Sigmoid(l) => Ok(l.forward(x)),
            Layer::Linear(l) => l.forward(x),
        }
    }

    /// Back-propagate `grad`; parameter gradients accumulate when `accumulate`.
    pub fn backward(&mut self, grad: &Tensor<T>, accumulate: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad, accumulate),
            Layer::BatchNorm(l) => l.backward(grad, accumulate),
            Layer::Relu(l) => l.backward(grad),
            Layer::LeakyRelu(l) => l.backward(grad),
            Layer::Sigmoid(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad, accumulate),
        }
    }

    pub fn spec(&self, channels_in: usize) -> LayerSpec {
        let same = |kind| LayerSpec {
            kind,
            channels_in,
            channels_out: channels_in,
            kernel: 1,
        };
        match self {
            Layer::Conv(c) => LayerSpec {
                kind: if c.is_comparison() {
                    LayerKind::ConvComparison
                } else if c.geom.stride == 2 {
                    LayerKind::ConvStride2
                } else {
                    LayerKind::Conv
                },
                channels_in: c.in_channels(),
                channels_out: c.out_channels(),
                kernel: c.kernel(),
            },
            Layer::BatchNorm(_) => same(LayerKind::BatchNorm),
            Layer::Relu(_) => same(LayerKind::Relu),
            Layer::LeakyRelu(_) => same(LayerKind::LeakyRelu),
            Layer::Sigmoid(_) => same(LayerKind::Sigmoid),
            Layer::Linear(l) => LayerSpec {
                kind: LayerKind::FullyConnected,
                channels_in: l.features(),
                channels_out: l.outputs(),
                kernel: 1,
            },
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    /// Parameters and running statistics, in checkpoint order.
    pub fn state(&self) -> Vec<StateRef<'_, T>> {
        match self {
            Layer::Conv(l) => vec![
                StateRef {
                    dims: l.weight.value.shape().dims().to_vec(),
                    data: l.weight.value.data(),
                },
                StateRef {
                    dims: vec![l.out_channels()],
                    data: l.bias.value.data(),
                },
            ],
            Layer::BatchNorm(l) => {
                let c = vec![l.channels()];
                vec![
                    StateRef {
                        dims: c.clone(),
                        data: l.gamma.value.data(),
                    },
                    StateRef {
                        dims: c.clone(),
                        data: l.beta.value.data(),
                    },
                    StateRef {
                        dims: c.clone(),
                        data: &l.running_mean,
                    },
                    StateRef {
                        dims: c,
                        data: &l.running_var,
                    },
                ]
            }
            Layer::Linear(l) => vec![
                StateRef {
                    dims: vec![l.outputs(), l.features()],
                    data: l.weight.value.data(),
                },
                StateRef {
                    dims: vec![l.outputs()],
                    data: l.bias.value.data(),
                },
            ],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<StateMut<'_, T>> {
        match self {
            Layer::Conv(l) => {
                let wd = l.weight.value.shape().dims().to_vec();
                let co = l.out_channels();
                vec![
                    StateMut {
                        dims: wd,
                        data: l.weight.value.data_mut(),
                    },
                    StateMut {
                        dims: vec![co],
                        data: l.bias.value.data_mut(),
                    },
                ]
            }
            Layer::BatchNorm(l) => {
                let c = vec![l.channels()];
                vec![
                    StateMut {
                        dims: c.clone(),
                        data: l.gamma.value.data_mut(),
                    },
                    StateMut {
                        dims: c.clone(),
                        data: l.beta.value.data_mut(),
                    },
                    StateMut {
                        dims: c.clone(),
                        data: &mut l.running_mean,
                    },
                    StateMut {
                        dims: c,
                        data: &mut l.running_var,
                    },
                ]
            }
            Layer::Linear(l) => {
                let (o, f) = (l.outputs(), l.features());
                vec![
                    StateMut {
                        dims: vec![o, f],
                        data: l.weight.value.data_mut(),
                    },
                    StateMut {
                        dims: vec![o],
                        data: l.bias.value.data_mut(),
                    },
                ]
            }
            _ => Vec::new(),
        }
    }

    pub fn as_conv(&self) -> Option<&Conv2d<T>> {
        match self {
            Layer::Conv(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_conv_mut(&mut self) -> Option<&mut Conv2d<T>> {
        match self {
            Layer::Conv(c) => Some(c),
            _ => None,
        }
    }
}
