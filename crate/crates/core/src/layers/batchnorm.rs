//! Per-channel batch normalization over `(n, h, w)`.

use crate::error::{Error, Result};
use crate::layers::{Mode, Param};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Weight of the old running value in each update.
    pub momentum: f64,
    pub eps: f64,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full((1, channels, 1, 1), T::one())),
            beta: Param::new(Tensor::zeros((1, channels, 1, 1))),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm over {} channels got {:?}",
                self.channels(),
                s
            )));
        }
        let batch_stats = mode.uses_batch_stats();
        if batch_stats && s.n < 2 {
            return Err(Error::invalid(
                "batchnorm needs a batch of at least 2 in training mode",
            ));
        }
        let plane = s.plane();
        let eps = T::lit(self.eps);
        let (mean, var) = if batch_stats {
            let (mean, var) = channel_stats(x);
            if mode.updates_running_stats() {
                let m = T::lit(self.momentum);
                let count = (s.n * plane) as f64;
                let unbias = T::lit(count / (count - 1.0).max(1.0));
                for c in 0..s.c {
                    self.running_mean[c] = m * self.running_mean[c] + (T::one() - m) * mean[c];
                    self.running_var[c] =
                        m * self.running_var[c] + (T::one() - m) * var[c] * unbias;
                }
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut xhat = Tensor::zeros(s);
        let mut y = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                let (g, b) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
                let src = &x.data()[off..off + plane];
                let xh = &mut xhat.data_mut()[off..off + plane];
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - mean[c]) * inv_std[c];
                }
                let dst = &mut y.data_mut()[off..off + plane];
                for (d, &v) in dst.iter_mut().zip(xh.iter()) {
                    *d = g * v + b;
                }
            }
        }
        self.cache = Some(Cache {
            xhat,
            inv_std,
            batch_stats,
        });
        y.finite("batchnorm_forward")
    }

    pub fn backward(&mut self, grad: &Tensor<T>, accumulate: bool) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("batchnorm: backward called before forward"))?;
        cache.xhat.expect_same_shape(grad, "batchnorm_backward")?;
        let s = grad.shape();
        let plane = s.plane();
        let count = T::lit((s.n * plane) as f64);

        // Per-channel Σg and Σg·x̂.
        let mut sum_g = vec![T::zero(); s.c];
        let mut sum_gx = vec![T::zero(); s.c];
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                let g = &grad.data()[off..off + plane];
                let xh = &cache.xhat.data()[off..off + plane];
                for (&gv, &xv) in g.iter().zip(xh) {
                    sum_g[c] += gv;
                    sum_gx[c] += gv * xv;
                }
            }
        }

        let mut gin = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                let off = (n * s.c + c) * plane;
                let scale = self.gamma.value.data()[c] * cache.inv_std[c];
                let g = &grad.data()[off..off + plane];
                let xh = &cache.xhat.data()[off..off + plane];
                let dst = &mut gin.data_mut()[off..off + plane];
                if cache.batch_stats {
                    let mg = sum_g[c] / count;
                    let mgx = sum_gx[c] / count;
                    for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                        *d = scale * (gv - mg - xv * mgx);
                    }
                } else {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d = scale * gv;
                    }
                }
            }
        }
        if accumulate {
            for c in 0..s.c {
                self.gamma.grad.data_mut()[c] += sum_gx[c];
                self.beta.grad.data_mut()[c] += sum_g[c];
            }
        }
        gin.finite("batchnorm_backward")
    }
}

/// Per-channel mean and biased variance.
fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let s = x.shape();
    let plane = s.plane();
    let count = T::lit((s.n * plane) as f64);
    let mut mean = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, m) in mean.iter_mut().enumerate() {
            let off = (n * s.c + c) * plane;
            *m += x.data()[off..off + plane].iter().copied().sum::<T>();
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / count);
    let mut var = vec![T::zero(); s.c];
    for n in 0..s.n {
        for (c, v) in var.iter_mut().enumerate() {
            let off = (n * s.c + c) * plane;
            *v += x.data()[off..off + plane]
                .iter()
                .map(|&a| (a - mean[c]) * (a - mean[c]))
                .sum::<T>();
        }
    }
    var.iter_mut().for_each(|v| *v = *v / count);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    #[test]
    fn constant_channels_normalize_to_zero() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = Tensor::from_fn((3, 2, 2, 2), |i| if (i / 4) % 2 == 0 { 5.0 } else { -1.0 });
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.max_abs() == 0.0);
    }

    #[test]
    fn affine_of_standardized_data() {
        let mut rng = Prng::new(4);
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma.value.fill(2.0);
        bn.beta.value.fill(1.0);
        let x = Tensor::from_fn((4, 2, 3, 3), |_| rng.normal() * 3.0 + 7.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&y);
        for c in 0..2 {
            assert!((mean[c] - 1.0).abs() < 1e-12);
            // Standardization uses var + eps, so std is slightly below 2.
            assert!((var[c].sqrt() - 2.0).abs() < 1e-5);
        }
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = Prng::new(9);
        let mut bn = BatchNorm2d::<f64>::new(3);
        let x = Tensor::from_fn((5, 3, 4, 4), |_| rng.normal() * 2.0 - 2.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&y);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5);
            assert!((var[c] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_uses_running_stats_only() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        bn.running_mean[0] = 1.0;
        bn.running_var[0] = 4.0 - bn.eps;
        let x = Tensor::full((1, 1, 1, 2), 3.0);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec((2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
        // Unbiased batch variance is 2.
        assert!((bn.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
        bn.forward(&x, Mode::BatchStats).unwrap();
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_rejected_in_training() {
        let mut bn = BatchNorm2d::<f32>::new(1);
        let x = Tensor::zeros((1, 1, 4, 4));
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }
}
