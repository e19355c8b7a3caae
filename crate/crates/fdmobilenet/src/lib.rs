//! Inference engine and complexity analyzer for fast-downsampling
//! depthwise-separable CNNs.
//!
//! The crate is organized around a plain NCHW `f32` [`Tensor`] and a
//! declarative [`ArchitectureSpec`]:
//!
//! * [`tensor`] — dense 4-D tensors, shape arithmetic, FDT1 binary I/O.
//! * [`ops`] — numerical kernels (standard / depthwise / pointwise
//!   convolution, batch norm, ReLU, pooling, FC, softmax), each with an
//!   optimized path and a naive reference in [`ops::reference`].
//! * [`arch`] — builders for the FD-MobileNet and MobileNet layer tables,
//!   width-multiplier scaling, validation, JSON import/export.
//! * [`complexity`] — exact MAC and parameter accounting per layer and
//!   per output-resolution stage, downsampling schedules.
//! * [`engine`] — single-path executor with batch-norm folding,
//!   ping-pong activation buffers, weight containers, image preprocessing.
//! * [`bench`] — wall-clock latency harness with warmup and median
//!   reporting.

pub mod arch;
pub mod bench;
pub mod complexity;
pub mod engine;
pub mod ops;
pub mod tensor;

pub use arch::{
    build_fd_mobilenet, build_mobilenet, ArchitectureSpec, LayerKind, LayerSpec, ModelId,
};
pub use complexity::{downsampling_schedule, stage_report, DownsamplingSchedule, FlopsReport};
pub use engine::{
    init_random_weights, plan_memory, Engine, EngineError, MemoryPlan, WeightStore,
};
pub use tensor::{conv_output_dim, Shape, Tensor};
