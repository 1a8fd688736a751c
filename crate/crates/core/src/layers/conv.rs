//! Convolution layer, optionally acting as a conv-comparison layer.
//!
//! A comparison layer holds a reference activation `C_g` recorded from a
//! ground-truth pass. On backward it mixes the upstream gradient `g_u` with the
//! gradient of `E_c = ½‖C_s − C_g‖²`, which is `g_c = C_s − C_g`:
//!
//! ```text
//! ĝ_c     = g_c · ‖g_u‖ / ‖g_c‖        (g_c unscaled when ‖g_u‖ = 0)
//! blended = (1 − α)·g_u + α·ĝ_c
//! ```
//!
//! and back-propagates `blended` through the convolution. Without a reference
//! the layer is a plain convolution.

use crate::error::{Error, Result};
use crate::layers::Param;
use crate::ops::{self, ConvGeometry};
use crate::rng::Prng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub geom: ConvGeometry,
    comparison: Option<Comparison<T>>,
    input: Option<Tensor<T>>,
    output: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Comparison<T> {
    pub alpha: f64,
    reference: Option<Tensor<T>>,
    last_loss: Option<f64>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-initialized `k×k` convolution. `k` must be odd.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Prng,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size {kernel} must be odd")));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let fan_in = in_channels * kernel * kernel;
        Ok(Self {
            weight: Param::new(super::he_init(
                (out_channels, in_channels, kernel, kernel),
                fan_in,
                rng,
            )),
            bias: Param::new(Tensor::zeros((1, out_channels, 1, 1))),
            geom: ConvGeometry::new(stride, (kernel - 1) / 2),
            comparison: None,
            input: None,
            output: None,
        })
    }

    /// Turn this layer into a comparison layer with blend weight `alpha`.
    pub fn with_comparison(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.comparison = Some(Comparison {
            alpha,
            reference: None,
            last_loss: None,
        });
        Ok(self)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape().h
    }

    pub fn is_comparison(&self) -> bool {
        self.comparison.is_some()
    }

    pub fn comparison(&self) -> Option<&Comparison<T>> {
        self.comparison.as_ref()
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        check_alpha(alpha)?;
        if let Some(cmp) = self.comparison.as_mut() {
            cmp.alpha = alpha;
        }
        Ok(())
    }

    /// Output of the most recent forward pass.
    pub fn last_output(&self) -> Option<&Tensor<T>> {
        self.output.as_ref()
    }

    /// Store `C_g`, one reference per batch index of the next backward.
    pub fn record_reference(&mut self, reference: Tensor<T>) -> Result<()> {
        let cmp = self
            .comparison
            .as_mut()
            .ok_or_else(|| Error::invalid("record_reference on a plain convolution"))?;
        let channels_ok = reference.shape().c == self.weight.value.shape().n;
        let output_ok = self
            .output
            .as_ref()
            .is_none_or(|out| out.shape() == reference.shape());
        if !channels_ok || !output_ok {
            return Err(Error::shape(format!(
                "reference {:?} does not match the layer output",
                reference.shape()
            )));
        }
        cmp.reference = Some(reference);
        Ok(())
    }

    pub fn clear_reference(&mut self) {
        if let Some(cmp) = self.comparison.as_mut() {
            cmp.reference = None;
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::conv2d_forward(x, &self.weight.value, self.bias.value.data(), self.geom)?;
        self.input = Some(x.clone());
        if self.comparison.is_some() {
            self.output = Some(y.clone());
        }
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>, accumulate: bool) -> Result<Tensor<T>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::invalid("conv: backward called before forward"))?;
        let mut blended_storage = None;
        if let Some(cmp) = self.comparison.as_mut() {
            if let Some(reference) = &cmp.reference {
                let output = self.output.as_ref().expect("comparison caches its output");
                let (blended, loss) =
                    blend_comparison_gradient(grad, output, reference, cmp.alpha)?;
                cmp.last_loss = Some(loss);
                blended_storage = Some(blended);
            }
        }
        let grad = blended_storage.as_ref().unwrap_or(grad);
        if accumulate {
            let g = ops::conv2d_backward(input, &self.weight.value, self.geom, grad)?;
            self.weight.grad.axpy(T::one(), &g.weights)?;
            for (d, &b) in self.bias.grad.data_mut().iter_mut().zip(&g.bias) {
                *d += b;
            }
            Ok(g.input)
        } else {
            ops::conv2d_backward_input(input, &self.weight.value, self.geom, grad)
        }
    }
}

impl<T: Scalar> Comparison<T> {
    pub fn reference(&self) -> Option<&Tensor<T>> {
        self.reference.as_ref()
    }

    /// `E_c` computed during the last backward that had a reference.
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `E_c = ½‖C_s − C_g‖²`, summed over every element.
pub fn conv_comparison_loss<T: Scalar>(c_s: &Tensor<T>, c_g: &Tensor<T>) -> Result<f64> {
    c_s.expect_same_shape(c_g, "conv_comparison_loss")?;
    Ok(0.5
        * c_s
            .data()
            .iter()
            .zip(c_g.data())
            .map(|(&a, &b)| (a - b).as_f64().powi(2))
            .sum::<f64>())
}

/// Norm-matched comparison gradient `ĝ_c` for the given upstream gradient.
pub fn normalized_comparison_gradient<T: Scalar>(
    grad_upstream: &Tensor<T>,
    c_s: &Tensor<T>,
    c_g: &Tensor<T>,
) -> Result<Tensor<T>> {
    c_s.expect_same_shape(grad_upstream, "comparison upstream gradient")?;
    let g_c = c_s.sub(c_g)?;
    let up_norm = grad_upstream.l2_norm();
    let c_norm = g_c.l2_norm();
    if up_norm == T::zero() || c_norm == T::zero() {
        return Ok(g_c);
    }
    Ok(g_c.map(|v| v * (up_norm / c_norm)))
}

/// Blended output gradient `(1−α)·g_u + α·ĝ_c` and `E_c`.
///
/// `α = 0` returns `g_u` and `α = 1` returns `ĝ_c` unchanged.
pub fn blend_comparison_gradient<T: Scalar>(
    grad_upstream: &Tensor<T>,
    c_s: &Tensor<T>,
    c_g: &Tensor<T>,
    alpha: f64,
) -> Result<(Tensor<T>, f64)> {
    check_alpha(alpha)?;
    let loss = conv_comparison_loss(c_s, c_g)?;
    let g_hat = normalized_comparison_gradient(grad_upstream, c_s, c_g)?;
    let blended = if alpha == 0.0 {
        grad_upstream.clone()
    } else if alpha == 1.0 {
        g_hat
    } else {
        let a = T::lit(alpha);
        let keep = T::lit(1.0 - alpha);
        grad_upstream.zip_map(&g_hat, |u, c| keep * u + a * c)?
    };
    Ok((blended, loss))
}
