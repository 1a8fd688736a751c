//! Fully-connected affine map over flattened batch items.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `input` is read as `n` rows of `c·h·w` features; `weights` is `(out, features, 1, 1)`.
/// Returns logits shaped `(n, out, 1, 1)`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let (n, features, outputs) = dims(input.shape(), weights.shape(), bias.len())?;
    let mut out = Tensor::zeros((n, outputs, 1, 1));
    for i in 0..n {
        let x = input.item(i);
        let row = out.item_mut(i);
        for (o, y) in row.iter_mut().enumerate() {
            let w = &weights.data()[o * features..(o + 1) * features];
            let dot: T = w.iter().zip(x).map(|(&a, &b)| a * b).sum();
            *y = dot + bias[o];
        }
    }
    out.finite("linear_forward")
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, features, outputs) = dims(input.shape(), weights.shape(), weights.shape().n)?;
    grad_out.expect_shape(Shape::new(n, outputs, 1, 1), "linear_backward grad_out")?;
    let mut gin = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weights.shape());
    let mut gb = vec![T::zero(); outputs];
    for i in 0..n {
        let g = grad_out.item(i);
        let x = input.item(i);
        let gx = gin.item_mut(i);
        for (o, &go) in g.iter().enumerate() {
            let w = &weights.data()[o * features..(o + 1) * features];
            for (d, &wv) in gx.iter_mut().zip(w) {
                *d += go * wv;
            }
            let gw_row = &mut gw.data_mut()[o * features..(o + 1) * features];
            for (d, &xv) in gw_row.iter_mut().zip(x) {
                *d += go * xv;
            }
            gb[o] += go;
        }
    }
    Ok(LinearGrads {
        input: gin.finite("linear_backward")?,
        weights: gw,
        bias: gb,
    })
}

fn dims(input: Shape, weights: Shape, bias_len: usize) -> Result<(usize, usize, usize)> {
    let features = input.item_len();
    if weights.c * weights.h * weights.w != features {
        return Err(Error::shape(format!(
            "linear: input items have {features} features, weights {:?}",
            weights
        )));
    }
    if bias_len != weights.n {
        return Err(Error::shape(format!(
            "linear: bias has {bias_len} entries for {} outputs",
            weights.n
        )));
    }
    Ok((input.n, features, weights.n))
}
