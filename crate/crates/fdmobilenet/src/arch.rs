//! Layer tables for FD-MobileNet and the MobileNet-224 baseline.
//!
//! An [`ArchitectureSpec`] is a flat, ordered list of [`LayerSpec`]s plus an
//! input shape. Builders produce the two model families at any width
//! multiplier; [`ArchitectureSpec::validate`] checks that the chain is
//! well-formed before anything downstream (FLOP counting, compilation)
//! trusts it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::{conv_output_dim, Shape, TensorError};

/// Number of object classes both model families are built for.
pub const NUM_CLASSES: usize = 1000;

/// Errors from building, validating, or (de)serializing an architecture.
#[derive(Debug, thiserror::Error)]
pub enum ArchError {
    #[error("width multiplier must be positive and finite, got {0}")]
    BadAlpha(f64),
    #[error("layer {index} ({kind}): {message}")]
    Layer {
        index: usize,
        kind: LayerKind,
        message: String,
    },
    #[error("architecture must end with a fully-connected layer followed by softmax")]
    BadTail,
    #[error("expected exactly one fully-connected layer, found {0}")]
    FcCount(usize),
    #[error("invalid input shape: {0}")]
    Input(#[from] TensorError),
    #[error("invalid architecture JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown model {0:?} (expected \"fd-mobilenet\" or \"mobilenet\")")]
    UnknownModel(String),
}

/// The operation a layer performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    PointwiseConv,
    BatchNorm,
    Relu,
    GlobalAvgPool,
    Fc,
    Softmax,
}

impl LayerKind {
    /// Layers that carry trainable multiply weights (convolutions and the
    /// classifier). Batch norm is excluded: its parameters fold into the
    /// preceding convolution and it costs no multiply-accumulates.
    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv | LayerKind::Fc
        )
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "depthwise_conv",
            LayerKind::PointwiseConv => "pointwise_conv",
            LayerKind::BatchNorm => "batch_norm",
            LayerKind::Relu => "relu",
            LayerKind::GlobalAvgPool => "global_avg_pool",
            LayerKind::Fc => "fc",
            LayerKind::Softmax => "softmax",
        };
        f.write_str(name)
    }
}

/// One layer of the network.
///
/// `kernel`, `stride`, and `pad` are meaningful for the convolution kinds;
/// builders set them to `1, 1, 0` for shape-preserving layers and
/// `kernel = 0` for global average pooling, whose window is the whole
/// input plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LayerSpec {
    fn shape_preserving(kind: LayerKind, c: usize) -> Self {
        LayerSpec { kind, c_in: c, c_out: c, kernel: 1, stride: 1, pad: 0 }
    }
}

/// A complete model: named layer chain plus the input it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub name: String,
    pub alpha: f64,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

/// The two model families this crate knows how to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelId {
    FdMobileNet,
    MobileNet,
}

impl ModelId {
    pub fn build(self, alpha: f64) -> Result<ArchitectureSpec, ArchError> {
        match self {
            ModelId::FdMobileNet => build_fd_mobilenet(alpha),
            ModelId::MobileNet => build_mobilenet(alpha),
        }
    }
}

impl FromStr for ModelId {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fd-mobilenet" => Ok(ModelId::FdMobileNet),
            "mobilenet" => Ok(ModelId::MobileNet),
            other => Err(ArchError::UnknownModel(other.to_string())),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::FdMobileNet => f.write_str("fd-mobilenet"),
            ModelId::MobileNet => f.write_str("mobilenet"),
        }
    }
}

/// Scale a base channel count by the width multiplier, rounding half away
/// from zero and never dropping below one channel.
pub fn scale_channels(base: usize, alpha: f64) -> usize {
    ((base as f64 * alpha).round() as usize).max(1)
}

fn check_alpha(alpha: f64) -> Result<(), ArchError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(ArchError::BadAlpha(alpha))
    }
}

fn format_alpha(alpha: f64) -> String {
    if alpha == alpha.trunc() {
        format!("{}x", alpha as i64)
    } else {
        format!("{alpha}x")
    }
}

/// Append a depthwise-separable block: 3x3 depthwise conv (with the given
/// stride), then a 1x1 pointwise conv, each followed by batch norm and ReLU.
fn push_ds_block(layers: &mut Vec<LayerSpec>, c_in: usize, c_out: usize, stride: usize) {
    layers.push(LayerSpec {
        kind: LayerKind::DepthwiseConv,
        c_in,
        c_out: c_in,
        kernel: 3,
        stride,
        pad: 1,
    });
    layers.push(LayerSpec::shape_preserving(LayerKind::BatchNorm, c_in));
    layers.push(LayerSpec::shape_preserving(LayerKind::Relu, c_in));
    layers.push(LayerSpec {
        kind: LayerKind::PointwiseConv,
        c_in,
        c_out,
        kernel: 1,
        stride: 1,
        pad: 0,
    });
    layers.push(LayerSpec::shape_preserving(LayerKind::BatchNorm, c_out));
    layers.push(LayerSpec::shape_preserving(LayerKind::Relu, c_out));
}

fn push_classifier(layers: &mut Vec<LayerSpec>, c_features: usize) {
    layers.push(LayerSpec {
        kind: LayerKind::GlobalAvgPool,
        c_in: c_features,
        c_out: c_features,
        kernel: 0,
        stride: 1,
        pad: 0,
    });
    layers.push(LayerSpec {
        kind: LayerKind::Fc,
        c_in: c_features,
        c_out: NUM_CLASSES,
        kernel: 1,
        stride: 1,
        pad: 0,
    });
    layers.push(LayerSpec::shape_preserving(LayerKind::Softmax, NUM_CLASSES));
}

fn build_net(
    base_name: &str,
    alpha: f64,
    ds_strides: &[usize],
    ds_channels: &[(usize, usize)],
) -> Result<ArchitectureSpec, ArchError> {
    check_alpha(alpha)?;
    assert_eq!(ds_strides.len(), ds_channels.len());
    let mut layers = Vec::new();
    let stem = scale_channels(32, alpha);
    layers.push(LayerSpec {
        kind: LayerKind::Conv,
        c_in: 3,
        c_out: stem,
        kernel: 3,
        stride: 2,
        pad: 1,
    });
    layers.push(LayerSpec::shape_preserving(LayerKind::BatchNorm, stem));
    layers.push(LayerSpec::shape_preserving(LayerKind::Relu, stem));
    for (&stride, &(c_in, c_out)) in ds_strides.iter().zip(ds_channels) {
        push_ds_block(
            &mut layers,
            scale_channels(c_in, alpha),
            scale_channels(c_out, alpha),
            stride,
        );
    }
    let features = scale_channels(ds_channels.last().unwrap().1, alpha);
    push_classifier(&mut layers, features);
    let spec = ArchitectureSpec {
        name: format!("{base_name} {}", format_alpha(alpha)),
        alpha,
        input: Shape::new(1, 3, 224, 224)?,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Build FD-MobileNet at the given width multiplier.
///
/// The network spends its strides early: the feature map is down to 1/4
/// resolution after 2 weighted layers and 1/32 after 12, leaving half the
/// weighted layers to run on cheap 7x7 maps. 24 weighted layers total.
pub fn build_fd_mobilenet(alpha: f64) -> Result<ArchitectureSpec, ArchError> {
    const STRIDES: [usize; 11] = [2, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1];
    const CHANNELS: [(usize, usize); 11] = [
        (32, 64),
        (64, 128),
        (128, 128),
        (128, 256),
        (256, 256),
        (256, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 1024),
    ];
    build_net("FD-MobileNet", alpha, &STRIDES, &CHANNELS)
}

/// Build the MobileNet-224 baseline at the given width multiplier.
///
/// Strides are spread out: 1/32 resolution is only reached at weighted
/// layer 24 of 28.
pub fn build_mobilenet(alpha: f64) -> Result<ArchitectureSpec, ArchError> {
    const STRIDES: [usize; 13] = [1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1];
    const CHANNELS: [(usize, usize); 13] = [
        (32, 64),
        (64, 128),
        (128, 128),
        (128, 256),
        (256, 256),
        (256, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 512),
        (512, 1024),
        (1024, 1024),
    ];
    build_net("MobileNet", alpha, &STRIDES, &CHANNELS)
}

impl ArchitectureSpec {
    /// Number of layers carrying multiply weights (convolutions + FC).
    pub fn weighted_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_weighted()).count()
    }

    /// Output shape of every layer, in order, starting from `self.input`.
    ///
    /// Fails on the first layer whose geometry or channel bookkeeping is
    /// inconsistent, naming the layer index.
    pub fn output_shapes(&self) -> Result<Vec<Shape>, ArchError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for (index, layer) in self.layers.iter().enumerate() {
            let fail = |message: String| ArchError::Layer { index, kind: layer.kind, message };
            let geom = |k: usize, s: usize, p: usize, dim: usize| {
                conv_output_dim(dim, k, s, p)
                    .map_err(|e| fail(e.to_string()))
            };
            match layer.kind {
                LayerKind::Conv | LayerKind::DepthwiseConv => {
                    if layer.c_in != cur.c {
                        return Err(fail(format!(
                            "expects {} input channels but receives {}",
                            layer.c_in, cur.c
                        )));
                    }
                    if layer.kind == LayerKind::DepthwiseConv && layer.c_out != layer.c_in {
                        return Err(fail("depthwise conv cannot change channel count".into()));
                    }
                    if layer.kernel % 2 == 0 {
                        return Err(fail(format!("kernel size {} is not odd", layer.kernel)));
                    }
                    let h = geom(layer.kernel, layer.stride, layer.pad, cur.h)?;
                    let w = geom(layer.kernel, layer.stride, layer.pad, cur.w)?;
                    cur = Shape::new(cur.n, layer.c_out, h, w).map_err(|e| fail(e.to_string()))?;
                }
                LayerKind::PointwiseConv => {
                    if layer.c_in != cur.c {
                        return Err(fail(format!(
                            "expects {} input channels but receives {}",
                            layer.c_in, cur.c
                        )));
                    }
                    if (layer.kernel, layer.stride, layer.pad) != (1, 1, 0) {
                        return Err(fail("pointwise conv must be 1x1, stride 1, no padding".into()));
                    }
                    cur = Shape::new(cur.n, layer.c_out, cur.h, cur.w)
                        .map_err(|e| fail(e.to_string()))?;
                }
                LayerKind::BatchNorm | LayerKind::Relu | LayerKind::Softmax => {
                    if layer.c_in != cur.c || layer.c_out != cur.c {
                        return Err(fail(format!(
                            "channel count must stay {} (layer declares {} -> {})",
                            cur.c, layer.c_in, layer.c_out
                        )));
                    }
                }
                LayerKind::GlobalAvgPool => {
                    if layer.c_in != cur.c || layer.c_out != cur.c {
                        return Err(fail(format!(
                            "channel count must stay {} (layer declares {} -> {})",
                            cur.c, layer.c_in, layer.c_out
                        )));
                    }
                    cur = Shape::new(cur.n, cur.c, 1, 1).map_err(|e| fail(e.to_string()))?;
                }
                LayerKind::Fc => {
                    let features = cur.c * cur.h * cur.w;
                    if layer.c_in != features {
                        return Err(fail(format!(
                            "expects {} input features but receives {}",
                            layer.c_in, features
                        )));
                    }
                    cur = Shape::new(cur.n, layer.c_out, 1, 1).map_err(|e| fail(e.to_string()))?;
                }
            }
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Check the whole chain: shapes propagate, exactly one FC layer exists,
    /// and the network ends with FC followed by softmax.
    pub fn validate(&self) -> Result<(), ArchError> {
        check_alpha(self.alpha)?;
        self.output_shapes()?;
        let fc_count = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Fc)
            .count();
        if fc_count != 1 {
            return Err(ArchError::FcCount(fc_count));
        }
        let tail: Vec<LayerKind> = self.layers.iter().rev().take(2).map(|l| l.kind).collect();
        if tail != [LayerKind::Softmax, LayerKind::Fc] {
            return Err(ArchError::BadTail);
        }
        Ok(())
    }

    /// Serialize to pretty JSON.
    pub fn export_json(&self) -> String {
        let wire = ArchWire {
            name: self.name.clone(),
            alpha: self.alpha,
            input: [self.input.n, self.input.c, self.input.h, self.input.w],
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&wire).expect("architecture serialization cannot fail")
    }

    /// Parse and validate a JSON architecture.
    pub fn import_json(json: &str) -> Result<Self, ArchError> {
        let wire: ArchWire = serde_json::from_str(json)?;
        let spec = ArchitectureSpec {
            name: wire.name,
            alpha: wire.alpha,
            input: Shape::try_from(wire.input)?,
            layers: wire.layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Serialize, Deserialize)]
struct ArchWire {
    name: String,
    alpha: f64,
    input: [usize; 4],
    layers: Vec<LayerSpec>,
}
