//! Numerical kernels for every layer type in the supported
//! architectures.
//!
//! Each operation has an optimized path (im2col + matrix multiply for
//! standard convolution, direct channel-plane loops for depthwise) and a
//! naive counterpart in [`reference`] that serves as its oracle. The two
//! paths fix the same per-output-element accumulation order, so optional
//! intra-op parallelism over output channels stays bit-identical to the
//! sequential result.

pub(crate) mod kernels;
pub mod reference;

use thiserror::Error;

use crate::tensor::{conv_output_dim, Shape, Tensor, TensorError};

/// Batch-norm epsilon used when a caller does not supply one.
pub const DEFAULT_BN_EPSILON: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum OpError {
    #[error("channel mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("kernel size {0} must be odd and >= 1")]
    KernelNotOdd(usize),
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("running variance must be non-negative")]
    NegativeVariance,
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f32),
    #[error("pointwise convolution requires a 1x1 kernel, got {0}x{0}")]
    NotPointwise(usize),
    #[error("weight dimensions must be >= 1")]
    EmptyWeights,
    #[error(transparent)]
    Geometry(#[from] TensorError),
}

/// Convolution filter bank: `(c_out, c_in, k, k)` for standard
/// convolutions, `(c, 1, k, k)` for depthwise, plus an optional bias of
/// length `c_out`. Plain convolutions in the supported networks carry no
/// bias; batch-norm folding introduces one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    c_out: usize,
    c_in: usize,
    k: usize,
    data: Vec<f32>,
    bias: Option<Vec<f32>>,
}

impl ConvWeights {
    pub fn standard(
        c_out: usize,
        c_in: usize,
        k: usize,
        data: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self, OpError> {
        if c_out == 0 || c_in == 0 {
            return Err(OpError::EmptyWeights);
        }
        if k == 0 || k % 2 == 0 {
            return Err(OpError::KernelNotOdd(k));
        }
        let expected = c_out * c_in * k * k;
        if data.len() != expected {
            return Err(OpError::LengthMismatch {
                what: "conv weights",
                expected,
                got: data.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(OpError::LengthMismatch {
                    what: "conv bias",
                    expected: c_out,
                    got: b.len(),
                });
            }
        }
        Ok(ConvWeights {
            c_out,
            c_in,
            k,
            data,
            bias,
        })
    }

    /// Depthwise filter bank, stored with the `c_in` slot fixed to 1.
    pub fn depthwise(
        c: usize,
        k: usize,
        data: Vec<f32>,
        bias: Option<Vec<f32>>,
    ) -> Result<Self, OpError> {
        Self::standard(c, 1, k, data, bias)
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    /// Filter tap `(o, i, dy, dx)`.
    #[inline]
    pub fn at(&self, o: usize, i: usize, dy: usize, dx: usize) -> f32 {
        self.data[((o * self.c_in + i) * self.k + dy) * self.k + dx]
    }
}

/// Per-channel batch normalization statistics and affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    gamma: Vec<f32>,
    beta: Vec<f32>,
    mean: Vec<f32>,
    var: Vec<f32>,
    eps: f32,
}

impl BnParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        var: Vec<f32>,
        eps: f32,
    ) -> Result<Self, OpError> {
        let c = gamma.len();
        if c == 0 {
            return Err(OpError::EmptyWeights);
        }
        for (what, v) in [("bn beta", &beta), ("bn mean", &mean), ("bn var", &var)] {
            if v.len() != c {
                return Err(OpError::LengthMismatch {
                    what,
                    expected: c,
                    got: v.len(),
                });
            }
        }
        if var.iter().any(|&v| v < 0.0) {
            return Err(OpError::NegativeVariance);
        }
        if !(eps > 0.0) {
            return Err(OpError::NonPositiveEpsilon(eps));
        }
        Ok(BnParams {
            gamma,
            beta,
            mean,
            var,
            eps,
        })
    }

    /// gamma=1, beta=0, mean=0, var=1: normalization is a near-identity.
    pub fn identity(c: usize) -> Self {
        BnParams {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![1.0; c],
            eps: DEFAULT_BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f32] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f32] {
        &self.beta
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn var(&self) -> &[f32] {
        &self.var
    }

    pub fn eps(&self) -> f32 {
        self.eps
    }

    /// The equivalent per-channel affine map: `y = x * scale + shift`.
    pub fn affine(&self) -> (Vec<f32>, Vec<f32>) {
        let scale: Vec<f32> = self
            .gamma
            .iter()
            .zip(&self.var)
            .map(|(&g, &v)| g / (v + self.eps).sqrt())
            .collect();
        let shift: Vec<f32> = self
            .beta
            .iter()
            .zip(&self.mean)
            .zip(&scale)
            .map(|((&b, &m), &s)| b - m * s)
            .collect();
        (scale, shift)
    }
}

/// Fully-connected layer parameters: weights `(c_out, c_in)` row-major
/// plus a bias of length `c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcWeights {
    c_out: usize,
    c_in: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl FcWeights {
    pub fn new(c_out: usize, c_in: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self, OpError> {
        if c_out == 0 || c_in == 0 {
            return Err(OpError::EmptyWeights);
        }
        if weights.len() != c_out * c_in {
            return Err(OpError::LengthMismatch {
                what: "fc weights",
                expected: c_out * c_in,
                got: weights.len(),
            });
        }
        if bias.len() != c_out {
            return Err(OpError::LengthMismatch {
                what: "fc bias",
                expected: c_out,
                got: bias.len(),
            });
        }
        Ok(FcWeights {
            c_out,
            c_in,
            weights,
            bias,
        })
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

fn conv_out_shape(
    input: Shape,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Shape, OpError> {
    let out_h = conv_output_dim(input.h, k, stride, pad)?;
    let out_w = conv_output_dim(input.w, k, stride, pad)?;
    Ok(Shape::new(input.n, c_out, out_h, out_w)?)
}

/// Standard 2-D convolution with zero padding, im2col + GEMM path.
pub fn conv2d(input: &Tensor, w: &ConvWeights, stride: usize, pad: usize) -> Result<Tensor, OpError> {
    let shape = input.shape();
    if shape.c != w.c_in() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_in(),
            got: shape.c,
        });
    }
    let out_shape = conv_out_shape(shape, w.c_out(), w.kernel(), stride, pad)?;
    let mut out = Tensor::zeros(out_shape);
    let mut col = vec![0.0f32; kernels::im2col_len(shape.c, w.kernel(), out_shape.h, out_shape.w)];
    let in_plane = shape.c * shape.h * shape.w;
    let out_plane = out_shape.c * out_shape.h * out_shape.w;
    for n in 0..shape.n {
        kernels::conv_into(
            &input.data()[n * in_plane..(n + 1) * in_plane],
            shape.c,
            shape.h,
            shape.w,
            w,
            stride,
            pad,
            out_shape.h,
            out_shape.w,
            &mut col,
            &mut out.data_mut()[n * out_plane..(n + 1) * out_plane],
        );
    }
    Ok(out)
}

/// Depthwise 2-D convolution: one spatial filter per channel.
pub fn depthwise_conv2d(
    input: &Tensor,
    w: &ConvWeights,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    let shape = input.shape();
    if w.c_in() != 1 {
        return Err(OpError::ChannelMismatch {
            expected: 1,
            got: w.c_in(),
        });
    }
    if shape.c != w.c_out() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_out(),
            got: shape.c,
        });
    }
    let out_shape = conv_out_shape(shape, w.c_out(), w.kernel(), stride, pad)?;
    let mut out = Tensor::zeros(out_shape);
    let in_plane = shape.c * shape.h * shape.w;
    let out_plane = out_shape.c * out_shape.h * out_shape.w;
    for n in 0..shape.n {
        kernels::depthwise_into(
            &input.data()[n * in_plane..(n + 1) * in_plane],
            shape.c,
            shape.h,
            shape.w,
            w,
            stride,
            pad,
            out_shape.h,
            out_shape.w,
            &mut out.data_mut()[n * out_plane..(n + 1) * out_plane],
        );
    }
    Ok(out)
}

/// 1x1 convolution mixing channels at each spatial position. Identical
/// to `conv2d` with `k=1, stride=1, pad=0`, skipping patch gathering.
pub fn pointwise_conv2d(input: &Tensor, w: &ConvWeights) -> Result<Tensor, OpError> {
    if w.kernel() != 1 {
        return Err(OpError::NotPointwise(w.kernel()));
    }
    let shape = input.shape();
    if shape.c != w.c_in() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_in(),
            got: shape.c,
        });
    }
    let out_shape = Shape::new(shape.n, w.c_out(), shape.h, shape.w)?;
    let mut out = Tensor::zeros(out_shape);
    let hw = shape.h * shape.w;
    let in_plane = shape.c * hw;
    let out_plane = w.c_out() * hw;
    for n in 0..shape.n {
        kernels::gemm_bias(
            w.c_out(),
            shape.c,
            hw,
            w.data(),
            &input.data()[n * in_plane..(n + 1) * in_plane],
            w.bias(),
            &mut out.data_mut()[n * out_plane..(n + 1) * out_plane],
        );
    }
    Ok(out)
}

/// Per-channel batch normalization using running statistics.
pub fn batch_norm(input: &Tensor, p: &BnParams) -> Result<Tensor, OpError> {
    let shape = input.shape();
    if shape.c != p.channels() {
        return Err(OpError::ChannelMismatch {
            expected: p.channels(),
            got: shape.c,
        });
    }
    let (scale, shift) = p.affine();
    let mut out = Tensor::zeros(shape);
    let hw = shape.h * shape.w;
    for n in 0..shape.n {
        for c in 0..shape.c {
            let base = (n * shape.c + c) * hw;
            let (s, t) = (scale[c], shift[c]);
            for (dst, src) in out.data_mut()[base..base + hw]
                .iter_mut()
                .zip(&input.data()[base..base + hw])
            {
                *dst = src * s + t;
            }
        }
    }
    Ok(out)
}

/// Absorb a batch norm into the preceding convolution:
/// `conv(x, folded) == batch_norm(conv(x, w), p)` in real arithmetic.
pub fn fold_bn_into_conv(w: &ConvWeights, p: &BnParams) -> Result<ConvWeights, OpError> {
    if p.channels() != w.c_out() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_out(),
            got: p.channels(),
        });
    }
    let (scale, shift) = p.affine();
    let filter = w.c_in() * w.kernel() * w.kernel();
    let mut data = w.data().to_vec();
    for o in 0..w.c_out() {
        for v in &mut data[o * filter..(o + 1) * filter] {
            *v *= scale[o];
        }
    }
    let bias: Vec<f32> = (0..w.c_out())
        .map(|o| shift[o] + scale[o] * w.bias().map_or(0.0, |b| b[o]))
        .collect();
    ConvWeights::standard(w.c_out(), w.c_in(), w.kernel(), data, Some(bias))
}

/// Elementwise `max(x, 0)`.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(input.shape());
    kernels::relu_into(input.data(), out.data_mut());
    out
}

/// Mean over each channel plane, producing an `n x c x 1 x 1` tensor.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let mut out = Tensor::zeros(Shape::new(shape.n, shape.c, 1, 1).expect("valid shape"));
    let hw = shape.h * shape.w;
    for n in 0..shape.n {
        let base = n * shape.c * hw;
        kernels::global_avg_pool_into(
            &input.data()[base..base + shape.c * hw],
            shape.c,
            hw,
            &mut out.data_mut()[n * shape.c..(n + 1) * shape.c],
        );
    }
    out
}

/// Affine map over flattened per-sample features, producing
/// `n x c_out x 1 x 1`.
pub fn fully_connected(input: &Tensor, p: &FcWeights) -> Result<Tensor, OpError> {
    let shape = input.shape();
    let features = shape.c * shape.h * shape.w;
    if features != p.c_in() {
        return Err(OpError::ChannelMismatch {
            expected: p.c_in(),
            got: features,
        });
    }
    let mut out = Tensor::zeros(Shape::new(shape.n, p.c_out(), 1, 1)?);
    for n in 0..shape.n {
        kernels::fully_connected_into(
            &input.data()[n * features..(n + 1) * features],
            p,
            &mut out.data_mut()[n * p.c_out()..(n + 1) * p.c_out()],
        );
    }
    Ok(out)
}

/// Softmax over the channel dimension at each `(n, h, w)` position.
pub fn softmax(input: &Tensor) -> Tensor {
    let shape = input.shape();
    let mut out = Tensor::zeros(shape);
    kernels::softmax_channels_into(input.data(), shape.c, shape.h * shape.w, shape.n, out.data_mut());
    out
}
