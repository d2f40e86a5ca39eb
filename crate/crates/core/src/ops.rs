//! Forward and backward kernels for the layers the steering models need:
//! valid cross-correlation, fully connected, and elementwise activations.
//!
//! These are plain functions over tensors; [`crate::graph::Graph`] wires them
//! into a differentiable tape.

use crate::error::{Error, Result};
use crate::real::{r, Real};
use crate::tensor::{check_same_shape, Tensor};

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// `y -> 2*atan(y)`, in radians. The model head rescales to degrees.
    AtanScaled,
}

impl Activation {
    #[inline]
    pub fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Relu => {
                if x > R::zero() {
                    x
                } else {
                    R::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::AtanScaled => r::<R>(2.0) * x.atan(),
        }
    }

    #[inline]
    pub fn derivative<R: Real>(self, x: R) -> R {
        match self {
            Activation::Relu => {
                if x > R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                R::one() - t * t
            }
            Activation::AtanScaled => r::<R>(2.0) / (R::one() + x * x),
        }
    }
}

/// Output spatial size of a valid convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

fn check_conv_shapes(input: &[usize], kernel: &[usize], stride: usize) -> Result<()> {
    if input.len() != 3 || kernel.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects input [C,H,W] and kernel [F,C,kh,kw], got {input:?} and {kernel:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::Argument("conv2d stride must be >= 1".into()));
    }
    let (c, h, w) = (input[0], input[1], input[2]);
    let (kc, kh, kw) = (kernel[1], kernel[2], kernel[3]);
    if kc != c {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input has {c}, kernel expects {kc}"
        )));
    }
    if kh > h || kw > w {
        return Err(Error::Shape(format!(
            "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    Ok(())
}

/// Valid (unpadded) cross-correlation of `input [C,H,W]` with
/// `kernel [F,C,kh,kw]`, producing `[F,H',W']`.
pub fn conv2d_forward<R: Real>(
    input: &Tensor<R>,
    kernel: &Tensor<R>,
    stride: usize,
) -> Result<Tensor<R>> {
    check_conv_shapes(input.shape(), kernel.shape(), stride)?;
    let (c, _h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let oh = conv_out_dim(input.shape()[1], kh, stride);
    let ow = conv_out_dim(w, kw, stride);

    let mut out = vec![R::zero(); f * oh * ow];
    let id = input.data();
    let kd = kernel.data();
    for fo in 0..f {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = R::zero();
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        let row = (ci * input.shape()[1] + iy) * w + ox * stride;
                        let krow = ((fo * c + ci) * kh + ky) * kw;
                        for kx in 0..kw {
                            acc += id[row + kx] * kd[krow + kx];
                        }
                    }
                }
                out[(fo * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![f, oh, ow], out)
}

/// Gradients of the valid cross-correlation w.r.t. input and kernel.
pub fn conv2d_backward<R: Real>(
    input: &Tensor<R>,
    kernel: &Tensor<R>,
    stride: usize,
    out_grad: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>)> {
    check_conv_shapes(input.shape(), kernel.shape(), stride)?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (f, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let oh = conv_out_dim(h, kh, stride);
    let ow = conv_out_dim(w, kw, stride);
    check_same_shape("conv2d_backward", out_grad.shape(), &[f, oh, ow])?;

    let mut d_input = vec![R::zero(); c * h * w];
    let mut d_kernel = vec![R::zero(); kernel.numel()];
    let id = input.data();
    let kd = kernel.data();
    let gd = out_grad.data();
    for fo in 0..f {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gd[(fo * oh + oy) * ow + ox];
                if g == R::zero() {
                    continue;
                }
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = oy * stride + ky;
                        let irow = (ci * h + iy) * w + ox * stride;
                        let krow = ((fo * c + ci) * kh + ky) * kw;
                        for kx in 0..kw {
                            d_input[irow + kx] += g * kd[krow + kx];
                            d_kernel[krow + kx] += g * id[irow + kx];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), d_input)?,
        Tensor::new(kernel.shape().to_vec(), d_kernel)?,
    ))
}

fn check_dense_shapes(input: &[usize], weights: &[usize], bias: &[usize]) -> Result<(usize, usize)> {
    if input.len() != 1 || weights.len() != 2 || bias.len() != 1 {
        return Err(Error::Shape(format!(
            "dense expects input [N], weights [M,N], bias [M]; got {input:?}, {weights:?}, {bias:?}"
        )));
    }
    let (m, n) = (weights[0], weights[1]);
    if input[0] != n || bias[0] != m {
        return Err(Error::Shape(format!(
            "dense dimension mismatch: input {input:?}, weights {weights:?}, bias {bias:?}"
        )));
    }
    Ok((m, n))
}

/// `out[m] = sum_n weights[m,n] * input[n] + bias[m]`.
pub fn dense_forward<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    bias: &Tensor<R>,
) -> Result<Tensor<R>> {
    let (m, n) = check_dense_shapes(input.shape(), weights.shape(), bias.shape())?;
    let id = input.data();
    let wd = weights.data();
    let mut out = Vec::with_capacity(m);
    for mi in 0..m {
        let mut acc = bias.data()[mi];
        let row = mi * n;
        for ni in 0..n {
            acc += wd[row + ni] * id[ni];
        }
        out.push(acc);
    }
    Tensor::new(vec![m], out)
}

/// Gradients of the dense layer w.r.t. input, weights and bias.
pub fn dense_backward<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    out_grad: &Tensor<R>,
) -> Result<(Tensor<R>, Tensor<R>, Tensor<R>)> {
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    check_same_shape("dense_backward", out_grad.shape(), &[m])?;
    let id = input.data();
    let wd = weights.data();
    let gd = out_grad.data();

    let mut d_input = vec![R::zero(); n];
    let mut d_weights = vec![R::zero(); m * n];
    for mi in 0..m {
        let g = gd[mi];
        let row = mi * n;
        for ni in 0..n {
            d_input[ni] += wd[row + ni] * g;
            d_weights[row + ni] = g * id[ni];
        }
    }
    Ok((
        Tensor::new(vec![n], d_input)?,
        Tensor::new(weights.shape().to_vec(), d_weights)?,
        Tensor::new(vec![m], gd.to_vec())?,
    ))
}

/// Elementwise activation forward pass.
pub fn activation_forward<R: Real>(input: &Tensor<R>, kind: Activation) -> Tensor<R> {
    let data = input.data().iter().map(|&x| kind.apply(x)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

/// Elementwise activation backward pass (`d_input = f'(input) * out_grad`).
pub fn activation_backward<R: Real>(
    input: &Tensor<R>,
    kind: Activation,
    out_grad: &Tensor<R>,
) -> Result<Tensor<R>> {
    check_same_shape("activation_backward", input.shape(), out_grad.shape())?;
    let data = input
        .data()
        .iter()
        .zip(out_grad.data())
        .map(|(&x, &g)| kind.derivative(x) * g)
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Independent triple-loop cross-correlation used as the oracle for
    /// conv2d_forward.
    fn conv_oracle(input: &Tensor<f64>, kernel: &Tensor<f64>, stride: usize) -> Tensor<f64> {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (f, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let mut out = Tensor::zeros(vec![f, oh, ow]);
        for fo in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iv = input.at3(ci, oy * stride + ky, ox * stride + kx);
                                let kv = kernel.data()
                                    [((fo * c + ci) * kh + ky) * kw + kx];
                                s += iv * kv;
                            }
                        }
                    }
                    *out.at3_mut(fo, oy, ox) = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_gives_kernel_area() {
        let input = Tensor::full(vec![1, 3, 3], 1.0);
        let kernel = Tensor::full(vec![1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&input, &kernel, 1).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let input = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let kernel = t(&[1, 1, 1, 1], &[1.0]);
        let out = conv2d_forward(&input, &kernel, 1).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_matches_triple_loop_oracle() {
        // Fixed pseudo-random values; the point is the independent loop nest.
        let mut x = 0.37_f64;
        let mut next = || {
            x = (x * 997.0 + 0.123).fract();
            x - 0.5
        };
        let input = Tensor::new(vec![1, 4, 4], (0..16).map(|_| next()).collect()).unwrap();
        let kernel = Tensor::new(vec![1, 1, 3, 3], (0..9).map(|_| next()).collect()).unwrap();
        let out = conv2d_forward(&input, &kernel, 1).unwrap();
        let expect = conv_oracle(&input, &kernel, 1);
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn conv_strided_matches_oracle() {
        let input = Tensor::new(vec![2, 5, 6], (0..60).map(|i| (i as f64).sin()).collect()).unwrap();
        let kernel =
            Tensor::new(vec![3, 2, 2, 2], (0..24).map(|i| (i as f64).cos()).collect()).unwrap();
        let out = conv2d_forward(&input, &kernel, 2).unwrap();
        let expect = conv_oracle(&input, &kernel, 2);
        assert_eq!(out.shape(), &[3, 2, 3]);
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::<f64>::zeros(vec![2, 3, 3]);
        let kernel = Tensor::<f64>::zeros(vec![1, 3, 2, 2]);
        match conv2d_forward(&input, &kernel, 1) {
            Err(Error::Shape(_)) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn dense_identity_and_zero() {
        let input = t(&[3], &[1.0, -2.0, 3.0]);
        let eye = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let zero_b = Tensor::zeros(vec![3]);
        let out = dense_forward(&input, &eye, &zero_b).unwrap();
        assert_eq!(out.data(), input.data());

        let zero_w = Tensor::zeros(vec![2, 3]);
        let bias = t(&[2], &[5.0, -1.0]);
        let out = dense_forward(&input, &zero_w, &bias).unwrap();
        assert_eq!(out.data(), bias.data());
    }

    #[test]
    fn dense_matches_hand_computed_product() {
        // 3 -> 2 layer checked against the arithmetic done by hand.
        let input = t(&[3], &[0.5, -1.0, 2.0]);
        let weights = t(&[2, 3], &[1.0, 2.0, 3.0, -0.5, 0.25, 4.0]);
        let bias = t(&[2], &[0.1, -0.2]);
        let out = dense_forward(&input, &weights, &bias).unwrap();
        // row0: 1*0.5 + 2*(-1) + 3*2 + 0.1 = 4.6
        // row1: -0.5*0.5 + 0.25*(-1) + 4*2 - 0.2 = 7.3
        assert!((out.data()[0] - 4.6).abs() < 1e-12);
        assert!((out.data()[1] - 7.3).abs() < 1e-12);
    }

    #[test]
    fn dense_rejects_dimension_mismatch() {
        let input = Tensor::<f64>::zeros(vec![4]);
        let weights = Tensor::<f64>::zeros(vec![2, 3]);
        let bias = Tensor::<f64>::zeros(vec![2]);
        assert!(matches!(
            dense_forward(&input, &weights, &bias),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn relu_and_tanh_values() {
        let input = t(&[3], &[-1.0, 0.0, 2.0]);
        let out = activation_forward(&input, Activation::Relu);
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);

        assert_eq!(Activation::Tanh.apply(0.0_f64), 0.0);
        assert_eq!(Activation::Tanh.derivative(0.0_f64), 1.0);
    }

    #[test]
    fn atan_scaled_derivative_matches_finite_difference() {
        let h = 1e-5_f64;
        let y = 1.0_f64;
        let fd = (Activation::AtanScaled.apply(y + h) - Activation::AtanScaled.apply(y - h))
            / (2.0 * h);
        let analytic = Activation::AtanScaled.derivative(y);
        assert!((fd - analytic).abs() < 1e-6, "fd {fd} vs {analytic}");
    }
}
