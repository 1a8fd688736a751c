//! Classification and regression losses. Both return the mean loss and its
//! gradient with respect to the prediction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax cross-entropy over `(n, classes, 1, 1)` logits with 1-based labels.
///
/// Loss is averaged over the batch; the gradient is `(softmax − onehot)/n`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, Tensor<T>)> {
    let shape = logits.shape();
    let classes = shape.item_len();
    if labels.len() != shape.n {
        return Err(Error::shape(format!(
            "{} labels for a batch of {}",
            labels.len(),
            shape.n
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l == 0 || l > classes) {
        return Err(Error::LabelOutOfRange {
            label,
            max: classes,
        });
    }
    let inv_n = T::one() / T::lit(shape.n as f64);
    let mut grad = Tensor::zeros(shape);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let z = logits.item(i);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        let target = label - 1;
        total += (sum.ln() - (z[target] - max)).as_f64();
        for (k, (g, &e)) in grad.item_mut(i).iter_mut().zip(&exps).enumerate() {
            let onehot = if k == target { T::one() } else { T::zero() };
            *g = (e / sum - onehot) * inv_n;
        }
    }
    Ok((
        total / shape.n as f64,
        grad.finite("softmax_cross_entropy")?,
    ))
}

/// Index (1-based) of the largest logit per batch item.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    (0..logits.shape().n)
        .map(|i| {
            let z = logits.item(i);
            let mut best = 0;
            for (k, &v) in z.iter().enumerate() {
                if v > z[best] {
                    best = k;
                }
            }
            best + 1
        })
        .collect()
}

/// Mean squared error over every element, gradient `2(p−t)/N`.
pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    pred.expect_same_shape(target, "mse")?;
    let n = pred.len() as f64;
    let loss = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p - t).as_f64().powi(2))
        .sum::<f64>()
        / n;
    let k = T::lit(2.0 / n);
    let grad = pred.zip_map(target, |p, t| k * (p - t))?;
    Ok((loss, grad))
}
