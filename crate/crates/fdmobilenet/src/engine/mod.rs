//! Single-image inference executor.
//!
//! [`Engine::compile`] turns a validated architecture plus a
//! [`WeightStore`] into a flat execution plan: every batch norm is folded
//! into the convolution right before it, and all intermediate activations
//! live in two fixed ping-pong buffers sized for the largest feature map.
//! A compiled engine allocates nothing per call except the two buffers and
//! one patch-matrix scratch area, so repeated [`Engine::infer`] calls are
//! cheap and bit-for-bit deterministic.

mod ppm;
mod preprocess;
mod weights;

pub use ppm::{decode_ppm, read_ppm, PpmError};
pub use preprocess::{center_crop, normalize, preprocess, resize_bilinear};
pub use weights::{init_random_weights, LayerWeights, WeightError, WeightStore};

use crate::arch::{ArchError, ArchitectureSpec, LayerKind};
use crate::ops::{self, fold_bn_into_conv, ConvWeights, FcWeights, OpError};
use crate::tensor::{Shape, Tensor, TensorError};

/// Errors from compiling or running a model.
#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error("only single-image batches are supported, got n = {0}")]
    UnsupportedBatch(usize),
    #[error("layer {index}: batch norm does not directly follow a convolution, cannot fold")]
    UnfoldableBatchNorm { index: usize },
    #[error("layer {index} ({kind}): no weights provided")]
    MissingWeights { index: usize, kind: LayerKind },
    #[error("layer {index} ({kind}): weight entry does not fit: {message}")]
    WeightMismatch {
        index: usize,
        kind: LayerKind,
        message: String,
    },
    #[error("weights provided for layer {0}, which takes none")]
    UnusedWeights(usize),
    #[error("input shape {got} does not match the model input {want}")]
    BadInputShape { want: Shape, got: Shape },
    #[error("image {h}x{w} is smaller than the {crop}x{crop} crop")]
    CropTooLarge { crop: usize, h: usize, w: usize },
    #[error("normalization for {channels} channels got {mean} means and {std} stds")]
    BadNormalization {
        channels: usize,
        mean: usize,
        std: usize,
    },
    #[error("normalization std for channel {channel} is zero")]
    ZeroStd { channel: usize },
}

/// Static activation-memory layout for a compiled model.
///
/// Because the layer chain is linear, two buffers sized for the largest
/// activation (input included) suffice: each layer reads one and writes
/// the other. The patch matrix used by standard convolutions is tracked
/// separately as scratch, since it holds unfolded input copies rather
/// than activations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryPlan {
    /// Number of activation buffers (always 2).
    pub buffers: usize,
    /// Capacity of each buffer in `f32` elements.
    pub buffer_numel: usize,
    /// Capacity of each buffer in bytes.
    pub buffer_bytes: usize,
    /// Which buffer each executed layer writes (the input starts in 0).
    pub assignment: Vec<usize>,
    /// Patch-matrix scratch in `f32` elements.
    pub scratch_numel: usize,
    /// Patch-matrix scratch in bytes.
    pub scratch_bytes: usize,
}

/// Activation memory actually allocated during one inference call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunStats {
    pub activation_buffers: usize,
    pub activation_bytes: usize,
    pub scratch_bytes: usize,
}

/// Compute the ping-pong buffer layout for an architecture without
/// compiling weights. Batch-norm layers are elided (they fold away at
/// compile time); all other layers alternate between the two buffers.
pub fn plan_memory(spec: &ArchitectureSpec) -> Result<MemoryPlan, EngineError> {
    let shapes = spec.output_shapes()?;
    let mut buffer_numel = spec.input.numel();
    let mut scratch_numel = 0usize;
    let mut assignment = Vec::new();
    let mut next = 1usize;
    for (layer, out) in spec.layers.iter().zip(&shapes) {
        if layer.kind == LayerKind::BatchNorm {
            continue;
        }
        if layer.kind == LayerKind::Conv && !(layer.kernel == 1 && layer.stride == 1 && layer.pad == 0)
        {
            let len = layer.c_in * layer.kernel * layer.kernel * out.h * out.w;
            scratch_numel = scratch_numel.max(len);
        }
        buffer_numel = buffer_numel.max(out.numel());
        assignment.push(next);
        next = 1 - next;
    }
    Ok(MemoryPlan {
        buffers: 2,
        buffer_numel,
        buffer_bytes: 4 * buffer_numel,
        assignment,
        scratch_numel,
        scratch_bytes: 4 * scratch_numel,
    })
}

enum ExecLayer {
    Conv {
        w: ConvWeights,
        stride: usize,
        pad: usize,
    },
    Depthwise {
        w: ConvWeights,
        stride: usize,
        pad: usize,
    },
    Pointwise(ConvWeights),
    Relu,
    GlobalAvgPool,
    Fc(FcWeights),
    Softmax,
}

/// A compiled, ready-to-run model.
pub struct Engine {
    spec: ArchitectureSpec,
    exec: Vec<ExecLayer>,
    exec_shapes: Vec<Shape>,
    plan: MemoryPlan,
}

impl Engine {
    /// Validate the architecture, check every weight entry against its
    /// layer, fold batch norms into their preceding convolutions, and fix
    /// the memory plan.
    pub fn compile(spec: &ArchitectureSpec, store: &WeightStore) -> Result<Engine, EngineError> {
        spec.validate()?;
        if spec.input.n != 1 {
            return Err(EngineError::UnsupportedBatch(spec.input.n));
        }
        let shapes = spec.output_shapes()?;
        let mut exec = Vec::new();
        let mut exec_shapes = Vec::new();
        let mut used = Vec::new();
        let mut prev_kind: Option<LayerKind> = None;
        for (index, layer) in spec.layers.iter().enumerate() {
            let entry = || {
                store.get(index).ok_or(EngineError::MissingWeights {
                    index,
                    kind: layer.kind,
                })
            };
            let mismatch = |message: String| EngineError::WeightMismatch {
                index,
                kind: layer.kind,
                message,
            };
            match layer.kind {
                LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv => {
                    let w = match (layer.kind, entry()?) {
                        (LayerKind::Conv, LayerWeights::Conv(w)) => w,
                        (LayerKind::DepthwiseConv, LayerWeights::Depthwise(w)) => w,
                        (LayerKind::PointwiseConv, LayerWeights::Pointwise(w)) => w,
                        (_, other) => {
                            return Err(mismatch(format!(
                                "expected {} weights, found {}",
                                layer.kind,
                                other.kind_name()
                            )))
                        }
                    };
                    used.push(index);
                    let expect_c_in = if layer.kind == LayerKind::DepthwiseConv { 1 } else { layer.c_in };
                    if w.c_out() != layer.c_out || w.c_in() != expect_c_in || w.kernel() != layer.kernel {
                        return Err(mismatch(format!(
                            "filter bank is ({}, {}, {k}, {k}), layer needs ({}, {}, {}, {})",
                            w.c_out(),
                            w.c_in(),
                            layer.c_out,
                            expect_c_in,
                            layer.kernel,
                            layer.kernel,
                            k = w.kernel(),
                        )));
                    }
                    exec.push(match layer.kind {
                        LayerKind::Conv => ExecLayer::Conv {
                            w: w.clone(),
                            stride: layer.stride,
                            pad: layer.pad,
                        },
                        LayerKind::DepthwiseConv => ExecLayer::Depthwise {
                            w: w.clone(),
                            stride: layer.stride,
                            pad: layer.pad,
                        },
                        LayerKind::PointwiseConv => ExecLayer::Pointwise(w.clone()),
                        _ => unreachable!(),
                    });
                    exec_shapes.push(shapes[index]);
                }
                LayerKind::BatchNorm => {
                    let LayerWeights::BatchNorm(p) = entry()? else {
                        return Err(mismatch("expected batch-norm parameters".into()));
                    };
                    used.push(index);
                    if p.channels() != layer.c_out {
                        return Err(mismatch(format!(
                            "normalizes {} channels, layer has {}",
                            p.channels(),
                            layer.c_out
                        )));
                    }
                    if !matches!(
                        prev_kind,
                        Some(LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv)
                    ) {
                        return Err(EngineError::UnfoldableBatchNorm { index });
                    }
                    match exec.last_mut().expect("conv just pushed") {
                        ExecLayer::Conv { w, .. }
                        | ExecLayer::Depthwise { w, .. }
                        | ExecLayer::Pointwise(w) => *w = fold_bn_into_conv(w, p)?,
                        _ => unreachable!("prev_kind tracked a convolution"),
                    }
                }
                LayerKind::Relu => {
                    exec.push(ExecLayer::Relu);
                    exec_shapes.push(shapes[index]);
                }
                LayerKind::GlobalAvgPool => {
                    exec.push(ExecLayer::GlobalAvgPool);
                    exec_shapes.push(shapes[index]);
                }
                LayerKind::Fc => {
                    let LayerWeights::Fc(p) = entry()? else {
                        return Err(mismatch("expected fully-connected weights".into()));
                    };
                    used.push(index);
                    if p.c_in() != layer.c_in || p.c_out() != layer.c_out {
                        return Err(mismatch(format!(
                            "maps {} -> {} features, layer needs {} -> {}",
                            p.c_in(),
                            p.c_out(),
                            layer.c_in,
                            layer.c_out
                        )));
                    }
                    exec.push(ExecLayer::Fc(p.clone()));
                    exec_shapes.push(shapes[index]);
                }
                LayerKind::Softmax => {
                    exec.push(ExecLayer::Softmax);
                    exec_shapes.push(shapes[index]);
                }
            }
            prev_kind = Some(layer.kind);
        }
        if let Some(stray) = store.layer_indices().find(|i| !used.contains(i)) {
            return Err(EngineError::UnusedWeights(stray));
        }
        let plan = plan_memory(spec)?;
        debug_assert_eq!(plan.assignment.len(), exec.len());
        Ok(Engine {
            spec: spec.clone(),
            exec,
            exec_shapes,
            plan,
        })
    }

    pub fn architecture(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn plan(&self) -> &MemoryPlan {
        &self.plan
    }

    /// Class probabilities for one input image.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, EngineError> {
        Ok(self.run(input, self.exec.len())?.0)
    }

    /// Pre-softmax class scores for one input image.
    pub fn infer_logits(&self, input: &Tensor) -> Result<Tensor, EngineError> {
        debug_assert!(matches!(self.exec.last(), Some(ExecLayer::Softmax)));
        Ok(self.run(input, self.exec.len() - 1)?.0)
    }

    /// Class probabilities plus the memory actually allocated for the run.
    pub fn infer_with_stats(&self, input: &Tensor) -> Result<(Tensor, RunStats), EngineError> {
        self.run(input, self.exec.len())
    }

    fn run(&self, input: &Tensor, stop: usize) -> Result<(Tensor, RunStats), EngineError> {
        if input.shape() != self.spec.input {
            return Err(EngineError::BadInputShape {
                want: self.spec.input,
                got: input.shape(),
            });
        }
        let mut bufs = [
            vec![0.0f32; self.plan.buffer_numel],
            vec![0.0f32; self.plan.buffer_numel],
        ];
        let mut scratch = vec![0.0f32; self.plan.scratch_numel];
        bufs[0][..input.numel()].copy_from_slice(input.data());
        let mut cur = self.spec.input;
        let mut cur_buf = 0usize;
        for (i, layer) in self.exec.iter().take(stop).enumerate() {
            let out = self.exec_shapes[i];
            debug_assert_eq!(self.plan.assignment[i], 1 - cur_buf);
            let [a, b] = &mut bufs;
            let (src, dst) = if cur_buf == 0 { (&*a, b) } else { (&*b, a) };
            let src = &src[..cur.numel()];
            let dst = &mut dst[..out.numel()];
            match layer {
                ExecLayer::Conv { w, stride, pad } => {
                    let col_len = crate::ops::kernels::im2col_len(cur.c, w.kernel(), out.h, out.w);
                    crate::ops::kernels::conv_into(
                        src,
                        cur.c,
                        cur.h,
                        cur.w,
                        w,
                        *stride,
                        *pad,
                        out.h,
                        out.w,
                        &mut scratch[..col_len],
                        dst,
                    );
                }
                ExecLayer::Depthwise { w, stride, pad } => {
                    crate::ops::kernels::depthwise_into(
                        src, cur.c, cur.h, cur.w, w, *stride, *pad, out.h, out.w, dst,
                    );
                }
                ExecLayer::Pointwise(w) => {
                    crate::ops::kernels::gemm_bias(
                        w.c_out(),
                        cur.c,
                        cur.h * cur.w,
                        w.data(),
                        src,
                        w.bias(),
                        dst,
                    );
                }
                ExecLayer::Relu => crate::ops::kernels::relu_into(src, dst),
                ExecLayer::GlobalAvgPool => {
                    crate::ops::kernels::global_avg_pool_into(src, cur.c, cur.h * cur.w, dst)
                }
                ExecLayer::Fc(p) => crate::ops::kernels::fully_connected_into(src, p, dst),
                ExecLayer::Softmax => {
                    crate::ops::kernels::softmax_channels_into(src, cur.c, cur.h * cur.w, 1, dst)
                }
            }
            cur = out;
            cur_buf = 1 - cur_buf;
        }
        let stats = RunStats {
            activation_buffers: 2,
            activation_bytes: 4 * (bufs[0].len() + bufs[1].len()),
            scratch_bytes: 4 * scratch.len(),
        };
        let out = Tensor::new(cur, bufs[cur_buf][..cur.numel()].to_vec())?;
        Ok((out, stats))
    }
}

/// Run the network one layer at a time with the public tensor ops, without
/// batch-norm folding or buffer reuse. Slower than [`Engine::infer`] but
/// structurally independent of it; the two must agree to within float
/// reassociation error.
pub fn forward_layerwise(
    spec: &ArchitectureSpec,
    store: &WeightStore,
    input: &Tensor,
) -> Result<Tensor, EngineError> {
    spec.validate()?;
    if input.shape() != spec.input {
        return Err(EngineError::BadInputShape {
            want: spec.input,
            got: input.shape(),
        });
    }
    let mut cur = input.clone();
    for (index, layer) in spec.layers.iter().enumerate() {
        let entry = || {
            store.get(index).ok_or(EngineError::MissingWeights {
                index,
                kind: layer.kind,
            })
        };
        let wrong = |found: &LayerWeights| EngineError::WeightMismatch {
            index,
            kind: layer.kind,
            message: format!("expected {} weights, found {}", layer.kind, found.kind_name()),
        };
        cur = match layer.kind {
            LayerKind::Conv => match entry()? {
                LayerWeights::Conv(w) => ops::conv2d(&cur, w, layer.stride, layer.pad)?,
                other => return Err(wrong(other)),
            },
            LayerKind::DepthwiseConv => match entry()? {
                LayerWeights::Depthwise(w) => {
                    ops::depthwise_conv2d(&cur, w, layer.stride, layer.pad)?
                }
                other => return Err(wrong(other)),
            },
            LayerKind::PointwiseConv => match entry()? {
                LayerWeights::Pointwise(w) => ops::pointwise_conv2d(&cur, w)?,
                other => return Err(wrong(other)),
            },
            LayerKind::BatchNorm => match entry()? {
                LayerWeights::BatchNorm(p) => ops::batch_norm(&cur, p)?,
                other => return Err(wrong(other)),
            },
            LayerKind::Relu => ops::relu(&cur),
            LayerKind::GlobalAvgPool => ops::global_avg_pool(&cur),
            LayerKind::Fc => match entry()? {
                LayerWeights::Fc(p) => ops::fully_connected(&cur, p)?,
                other => return Err(wrong(other)),
            },
            LayerKind::Softmax => ops::softmax(&cur),
        };
    }
    Ok(cur)
}

#[cfg(test)]
mod tests;
