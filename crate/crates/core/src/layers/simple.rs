//! Stateless activations and the fully-connected layer.

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::ops;
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn cached<'a, T>(slot: &'a Option<Tensor<T>>, layer: &str) -> Result<&'a Tensor<T>> {
    slot.as_ref()
        .ok_or_else(|| Error::invalid(format!("{layer}: backward called before forward")))
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        ops::relu(x)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        ops::relu_backward(cached(&self.input, "relu")?, grad)
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu<T> {
    pub slope: T,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(slope: T) -> Self {
        Self { slope, input: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        ops::leaky_relu(x, self.slope)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        ops::leaky_relu_backward(cached(&self.input, "leaky_relu")?, self.slope, grad)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid<T> {
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Sigmoid<T> {
    pub fn new() -> Self {
        Self { output: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = ops::sigmoid(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        ops::sigmoid_backward(cached(&self.output, "sigmoid")?, grad)
    }
}

/// Affine map from flattened items to `outputs` logits.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(features: usize, outputs: usize, rng: &mut Prng) -> Self {
        Self {
            weight: Param::new(super::he_init((outputs, features, 1, 1), features, rng)),
            bias: Param::new(Tensor::zeros((1, outputs, 1, 1))),
            input: None,
        }
    }

    pub fn features(&self) -> usize {
        self.weight.value.shape().c
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape().n
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::linear_forward(x, &self.weight.value, self.bias.value.data())?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>, accumulate: bool) -> Result<Tensor<T>> {
        let x = cached(&self.input, "linear")?;
        let g = ops::linear_backward(x, &self.weight.value, grad)?;
        if accumulate {
            self.weight.grad.axpy(T::one(), &g.weights)?;
            for (d, &b) in self.bias.grad.data_mut().iter_mut().zip(&g.bias) {
                *d += b;
            }
        }
        Ok(g.input)
    }
}
