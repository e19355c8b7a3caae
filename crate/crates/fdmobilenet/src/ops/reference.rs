//! Naive reference implementations of every operation.
//!
//! These are direct transcriptions of the layer definitions (nested
//! loops, per-element scalar formulas) and serve as the oracles the
//! optimized paths are tested against. Keep them simple and obviously
//! correct; performance does not matter here.

use super::{BnParams, ConvWeights, FcWeights, OpError};
use crate::tensor::{conv_output_dim, Shape, Tensor};

fn tap(input: &Tensor, n: usize, c: usize, iy: isize, ix: isize) -> f32 {
    let s = input.shape();
    if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
        0.0
    } else {
        input.at(n, c, iy as usize, ix as usize)
    }
}

/// Direct six-loop convolution;
/// `out(n,o,y,x) = bias(o) + sum_{i,dy,dx} in(n,i,y*s-pad+dy,x*s-pad+dx) * w(o,i,dy,dx)`.
pub fn conv2d(input: &Tensor, w: &ConvWeights, stride: usize, pad: usize) -> Result<Tensor, OpError> {
    let s = input.shape();
    if s.c != w.c_in() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_in(),
            got: s.c,
        });
    }
    let k = w.kernel();
    let out_h = conv_output_dim(s.h, k, stride, pad)?;
    let out_w = conv_output_dim(s.w, k, stride, pad)?;
    let out_shape = Shape::new(s.n, w.c_out(), out_h, out_w)?;
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for o in 0..w.c_out() {
            for y in 0..out_h {
                for x in 0..out_w {
                    let mut acc = w.bias().map_or(0.0, |b| b[o]);
                    for i in 0..s.c {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (x * stride + dx) as isize - pad as isize;
                                acc += tap(input, n, i, iy, ix) * w.at(o, i, dy, dx);
                            }
                        }
                    }
                    out.data_mut()[out_shape.index(n, o, y, x)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Per-channel spatial filtering:
/// `out(n,c,y,x) = sum_{dy,dx} in(n,c,y*s-pad+dy,x*s-pad+dx) * w(c,0,dy,dx)`.
pub fn depthwise_conv2d(
    input: &Tensor,
    w: &ConvWeights,
    stride: usize,
    pad: usize,
) -> Result<Tensor, OpError> {
    let s = input.shape();
    if w.c_in() != 1 {
        return Err(OpError::ChannelMismatch {
            expected: 1,
            got: w.c_in(),
        });
    }
    if s.c != w.c_out() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_out(),
            got: s.c,
        });
    }
    let k = w.kernel();
    let out_h = conv_output_dim(s.h, k, stride, pad)?;
    let out_w = conv_output_dim(s.w, k, stride, pad)?;
    let out_shape = Shape::new(s.n, s.c, out_h, out_w)?;
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..out_h {
                for x in 0..out_w {
                    let mut acc = w.bias().map_or(0.0, |b| b[c]);
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = (y * stride + dy) as isize - pad as isize;
                            let ix = (x * stride + dx) as isize - pad as isize;
                            acc += tap(input, n, c, iy, ix) * w.at(c, 0, dy, dx);
                        }
                    }
                    out.data_mut()[out_shape.index(n, c, y, x)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Per-pixel channel mixing.
pub fn pointwise_conv2d(input: &Tensor, w: &ConvWeights) -> Result<Tensor, OpError> {
    if w.kernel() != 1 {
        return Err(OpError::NotPointwise(w.kernel()));
    }
    let s = input.shape();
    if s.c != w.c_in() {
        return Err(OpError::ChannelMismatch {
            expected: w.c_in(),
            got: s.c,
        });
    }
    let out_shape = Shape::new(s.n, w.c_out(), s.h, s.w)?;
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for o in 0..w.c_out() {
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = w.bias().map_or(0.0, |b| b[o]);
                    for i in 0..s.c {
                        acc += input.at(n, i, y, x) * w.at(o, i, 0, 0);
                    }
                    out.data_mut()[out_shape.index(n, o, y, x)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise scalar formula `gamma*(x - mean)/sqrt(var + eps) + beta`.
pub fn batch_norm(input: &Tensor, p: &BnParams) -> Result<Tensor, OpError> {
    let s = input.shape();
    if s.c != p.channels() {
        return Err(OpError::ChannelMismatch {
            expected: p.channels(),
            got: s.c,
        });
    }
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = input.at(n, c, y, x);
                    let norm = p.gamma()[c] * (v - p.mean()[c]) / (p.var()[c] + p.eps()).sqrt()
                        + p.beta()[c];
                    out.data_mut()[s.index(n, c, y, x)] = norm;
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(input.shape());
    for (d, &v) in out.data_mut().iter_mut().zip(input.data()) {
        *d = if v > 0.0 { v } else { 0.0 };
    }
    out
}

pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let s = input.shape();
    let out_shape = Shape::new(s.n, s.c, 1, 1).expect("valid shape");
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        for c in 0..s.c {
            let mut acc = 0.0f32;
            for y in 0..s.h {
                for x in 0..s.w {
                    acc += input.at(n, c, y, x);
                }
            }
            out.data_mut()[out_shape.index(n, c, 0, 0)] = acc / (s.h * s.w) as f32;
        }
    }
    out
}

pub fn fully_connected(input: &Tensor, p: &FcWeights) -> Result<Tensor, OpError> {
    let s = input.shape();
    let features = s.c * s.h * s.w;
    if features != p.c_in() {
        return Err(OpError::ChannelMismatch {
            expected: p.c_in(),
            got: features,
        });
    }
    let out_shape = Shape::new(s.n, p.c_out(), 1, 1)?;
    let mut out = Tensor::zeros(out_shape);
    for n in 0..s.n {
        let sample = &input.data()[n * features..(n + 1) * features];
        for o in 0..p.c_out() {
            let mut acc = p.bias()[o];
            for (i, &v) in sample.iter().enumerate() {
                acc += p.weights()[o * p.c_in() + i] * v;
            }
            out.data_mut()[out_shape.index(n, o, 0, 0)] = acc;
        }
    }
    Ok(out)
}

/// Literal `exp(x_c) / sum_j exp(x_j)` over the channel dimension.
pub fn softmax(input: &Tensor) -> Tensor {
    let s = input.shape();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for y in 0..s.h {
            for x in 0..s.w {
                let mut sum = 0.0f32;
                for c in 0..s.c {
                    sum += input.at(n, c, y, x).exp();
                }
                for c in 0..s.c {
                    out.data_mut()[s.index(n, c, y, x)] = input.at(n, c, y, x).exp() / sum;
                }
            }
        }
    }
    out
}
