//! 2-D cross-correlation with per-output-channel bias, via im2col + GEMM.

use rayon::prelude::*;

use super::gemm::{gemm_acc, transpose};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    /// Stride 1 with the padding that keeps the spatial size for an odd kernel.
    pub const fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            pad: (kernel - 1) / 2,
        }
    }
}

pub fn conv_output_len(input: usize, kernel: usize, geom: ConvGeometry) -> Result<usize> {
    if geom.stride == 0 {
        return Err(Error::invalid("conv stride must be positive"));
    }
    let padded = input + 2 * geom.pad;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    // Trailing rows/cols that do not fill a whole stride are dropped.
    Ok((padded - kernel) / geom.stride + 1)
}

/// Output shape for `input` under `weights`, validating every precondition.
pub fn conv_output_shape(input: Shape, weights: Shape, geom: ConvGeometry) -> Result<Shape> {
    if input.c != weights.c {
        return Err(Error::shape(format!(
            "input has {} channels, weights expect {}",
            input.c, weights.c
        )));
    }
    Ok(Shape::new(
        input.n,
        weights.n,
        conv_output_len(input.h, weights.h, geom)?,
        conv_output_len(input.w, weights.w, geom)?,
    ))
}

struct Plan {
    input: Shape,
    out: Shape,
    kh: usize,
    kw: usize,
    geom: ConvGeometry,
}

impl Plan {
    fn new(input: Shape, weights: Shape, geom: ConvGeometry) -> Result<Self> {
        Ok(Self {
            input,
            out: conv_output_shape(input, weights, geom)?,
            kh: weights.h,
            kw: weights.w,
            geom,
        })
    }

    /// Rows of the unrolled patch matrix: `ci·kh·kw`.
    fn k(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    /// Columns of the unrolled patch matrix: output pixels.
    fn p(&self) -> usize {
        self.out.plane()
    }

    /// Input row/col feeding output `o` at kernel offset `kk`, if inside the image.
    #[inline]
    fn source(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + kk) as isize - self.geom.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    /// Output positions `lo..hi` whose input at kernel offset `kk` lies inside `0..limit`.
    fn span(&self, kk: usize, limit: usize, out_len: usize) -> (usize, usize) {
        let (s, pad) = (self.geom.stride, self.geom.pad);
        let lo = if pad > kk { (pad - kk).div_ceil(s) } else { 0 };
        let hi = if limit + pad > kk {
            ((limit - 1 + pad - kk) / s + 1).min(out_len)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn im2col<T: Scalar>(&self, x: &[T], col: &mut [T]) {
        let (h, w) = (self.input.h, self.input.w);
        let (oh, ow) = (self.out.h, self.out.w);
        let p = self.p();
        let mut row = 0;
        for c in 0..self.input.c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        match self.source(oy, ky, h) {
                            None => line.fill(T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * w..(iy + 1) * w];
                                let (lo, hi) = self.span(kx, w, ow);
                                line[..lo].fill(T::zero());
                                line[hi..].fill(T::zero());
                                let s = self.geom.stride;
                                let first = lo * s + kx - self.geom.pad;
                                if s == 1 {
                                    line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                                } else {
                                    for (v, ix) in line[lo..hi].iter_mut().zip((first..).step_by(s))
                                    {
                                        *v = src[ix];
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im_acc<T: Scalar>(&self, col: &[T], gx: &mut [T]) {
        let (h, w) = (self.input.h, self.input.w);
        let (oh, ow) = (self.out.h, self.out.w);
        let p = self.p();
        let mut row = 0;
        for c in 0..self.input.c {
            let plane = &mut gx[c * h * w..(c + 1) * h * w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let Some(iy) = self.source(oy, ky, h) else {
                            continue;
                        };
                        let (lo, hi) = self.span(kx, w, ow);
                        if lo >= hi {
                            continue;
                        }
                        let first = lo * self.geom.stride + kx - self.geom.pad;
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        let grads = &src[oy * ow + lo..oy * ow + hi];
                        if self.geom.stride == 1 {
                            for (d, &g) in dst[first..first + grads.len()].iter_mut().zip(grads) {
                                *d += g;
                            }
                        } else {
                            let ixs = (first..).step_by(self.geom.stride);
                            for (&g, ix) in grads.iter().zip(ixs) {
                                dst[ix] += g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Cross-correlation of `input` with `weights` `(co, ci, kh, kw)` plus `bias[co]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let plan = Plan::new(input.shape(), weights.shape(), geom)?;
    let co = weights.shape().n;
    if bias.len() != co {
        return Err(Error::shape(format!(
            "bias has {} entries for {co} output channels",
            bias.len()
        )));
    }
    let (k, p) = (plan.k(), plan.p());
    let mut out = Tensor::zeros(plan.out);
    let item_len = plan.out.item_len();
    out.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each_init(
            || vec![T::zero(); k * p],
            |col, (n, dst)| {
                plan.im2col(input.item(n), col);
                gemm_acc(co, p, k, weights.data(), col, dst);
                for (plane, &b) in dst.chunks_exact_mut(p).zip(bias) {
                    plane.iter_mut().for_each(|v| *v += b);
                }
            },
        );
    out.finite("conv2d_forward")
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (gin, params) = backward_impl(input, weights, geom, grad_out, true)?;
    let (gw, gb) = params.expect("parameter gradients requested");
    Ok(ConvGrads {
        input: gin,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias: gb,
    })
}

/// Input gradient only; used when the layer's parameters are frozen.
pub fn conv2d_backward_input<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    Ok(backward_impl(input, weights, geom, grad_out, false)?.0)
}

type ParamGrads<T> = Option<(Vec<T>, Vec<T>)>;

fn backward_impl<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    geom: ConvGeometry,
    grad_out: &Tensor<T>,
    with_params: bool,
) -> Result<(Tensor<T>, ParamGrads<T>)> {
    let plan = Plan::new(input.shape(), weights.shape(), geom)?;
    grad_out.expect_shape(plan.out, "conv2d_backward grad_out")?;
    let co = weights.shape().n;
    let (k, p) = (plan.k(), plan.p());
    let w_t = transpose(co, k, weights.data());

    let mut gin = Tensor::zeros(input.shape());
    let item_len = input.shape().item_len();
    let per_item: Vec<Option<(Vec<T>, Vec<T>)>> = gin
        .data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .map_init(
            || vec![T::zero(); k * p],
            |buf, (n, gx)| {
                let go = grad_out.item(n);
                buf.fill(T::zero());
                gemm_acc(k, p, co, &w_t, go, buf);
                plan.col2im_acc(buf, gx);
                if !with_params {
                    return None;
                }
                plan.im2col(input.item(n), buf);
                // gwᵀ = col · goᵀ; transposing the smaller operand is cheaper.
                let go_t = transpose(co, p, go);
                let mut gw_t = vec![T::zero(); k * co];
                gemm_acc(k, co, p, buf, &go_t, &mut gw_t);
                let gw = transpose(k, co, &gw_t);
                let gb = go
                    .chunks_exact(p)
                    .map(|plane| plane.iter().copied().sum())
                    .collect();
                Some((gw, gb))
            },
        )
        .collect();

    let params = if with_params {
        let mut gw = vec![T::zero(); co * k];
        let mut gb = vec![T::zero(); co];
        // Fixed batch order keeps the reduction deterministic under any thread count.
        for (w_n, b_n) in per_item.into_iter().flatten() {
            gw.iter_mut().zip(&w_n).for_each(|(a, &b)| *a += b);
            gb.iter_mut().zip(&b_n).for_each(|(a, &b)| *a += b);
        }
        Some((gw, gb))
    } else {
        None
    };
    Ok((gin.finite("conv2d_backward")?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    /// Direct summation over (ci, ky, kx), bias added last.
    fn direct(input: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], g: ConvGeometry) -> Tensor<f64> {
        let s = input.shape();
        let ws = w.shape();
        let oh = (s.h + 2 * g.pad - ws.h) / g.stride + 1;
        let ow = (s.w + 2 * g.pad - ws.w) / g.stride + 1;
        let mut out = Tensor::zeros((s.n, ws.n, oh, ow));
        for n in 0..s.n {
            for o in 0..ws.n {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..s.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (y * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (x * g.stride + kx) as isize - g.pad as isize;
                                    let v = if iy < 0
                                        || ix < 0
                                        || iy >= s.h as isize
                                        || ix >= s.w as isize
                                    {
                                        0.0
                                    } else {
                                        input.at(n, c, iy as usize, ix as usize)
                                    };
                                    acc += w.at(o, c, ky, kx) * v;
                                }
                            }
                        }
                        out.set(n, o, y, x, acc + b[o]);
                    }
                }
            }
        }
        out
    }

    fn random(shape: (usize, usize, usize, usize), rng: &mut Prng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.normal())
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f32>::from_fn((1, 1, 3, 3), |i| i as f32);
        let w = Tensor::full((1, 1, 1, 1), 1.0);
        let y = conv2d_forward(&x, &w, &[0.0], ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y, x);
        let g = conv2d_backward(
            &x,
            &w,
            ConvGeometry::new(1, 0),
            &Tensor::full((1, 1, 3, 3), 1.0),
        )
        .unwrap();
        assert_eq!(g.input, Tensor::full((1, 1, 3, 3), 1.0));
    }

    #[test]
    fn diagonal_kernel_sums_diagonal() {
        let x = Tensor::<f64>::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec((1, 1, 2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &[0.0], ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn stride_two_halves() {
        let x = Tensor::<f32>::zeros((1, 4, 8, 8));
        let w = Tensor::zeros((2, 4, 3, 3));
        let y = conv2d_forward(&x, &w, &[0.0, 0.0], ConvGeometry::new(2, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 4));
    }

    #[test]
    fn same_padding_preserves_size() {
        for k in [1, 3, 5, 7] {
            let x = Tensor::<f32>::zeros((1, 1, 9, 6));
            let w = Tensor::zeros((1, 1, k, k));
            let y = conv2d_forward(&x, &w, &[0.0], ConvGeometry::same(k)).unwrap();
            assert_eq!((y.shape().h, y.shape().w), (9, 6));
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f32>::zeros((1, 2, 8, 8));
        let w = Tensor::zeros((1, 3, 3, 3));
        assert!(conv2d_forward(&x, &w, &[0.0], ConvGeometry::new(1, 1)).is_err());
        let x = Tensor::<f32>::zeros((1, 3, 2, 2));
        assert!(conv2d_forward(&x, &w, &[0.0], ConvGeometry::new(1, 0)).is_err());
        assert!(conv2d_forward(&x, &w, &[0.0], ConvGeometry::new(0, 1)).is_err());
        let x = Tensor::<f32>::zeros((1, 3, 8, 8));
        assert!(conv2d_forward(&x, &w, &[0.0, 1.0], ConvGeometry::new(1, 1)).is_err());
    }

    #[test]
    fn matches_direct_summation_bitwise() {
        let mut rng = Prng::new(5);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 2)] {
            let x = random((2, 3, 6, 6), &mut rng);
            let w = random((5, 3, 3, 3), &mut rng);
            let b: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            let g = ConvGeometry::new(stride, pad);
            let fast = conv2d_forward(&x, &w, &b, g).unwrap();
            assert_eq!(fast, direct(&x, &w, &b, g), "stride {stride} pad {pad}");
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Prng::new(2);
        let x = random((1, 2, 5, 5), &mut rng);
        let w = random((3, 2, 3, 3), &mut rng);
        let g =
            conv2d_backward(&x, &w, ConvGeometry::same(3), &Tensor::zeros((1, 3, 5, 5))).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.weights.max_abs(), 0.0);
        assert!(g.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn input_only_backward_matches_full() {
        let mut rng = Prng::new(8);
        let x = random((2, 2, 6, 6), &mut rng);
        let w = random((3, 2, 3, 3), &mut rng);
        let go = random((2, 3, 3, 3), &mut rng);
        let g = ConvGeometry::new(2, 1);
        let full = conv2d_backward(&x, &w, g, &go).unwrap();
        assert_eq!(conv2d_backward_input(&x, &w, g, &go).unwrap(), full.input);
    }
}
