//! Exact multiply-accumulate and parameter accounting.
//!
//! Counting convention: one multiply-accumulate (MAC) is one FLOP unit, so
//! "MFLOPs" below means millions of MACs. Additions from biases, batch
//! norm, pooling, and softmax are not counted; batch norm folds into the
//! preceding convolution at inference time and contributes nothing.

use serde::Serialize;

use crate::arch::{ArchError, ArchitectureSpec, LayerKind, LayerSpec};
use crate::tensor::Shape;

/// MACs a single layer performs, given its output shape.
pub fn macs_of_layer(layer: &LayerSpec, out: Shape) -> u64 {
    let pixels = (out.h * out.w) as u64;
    match layer.kind {
        LayerKind::Conv => {
            pixels * (layer.c_out * layer.c_in * layer.kernel * layer.kernel) as u64
        }
        LayerKind::DepthwiseConv => pixels * (layer.c_out * layer.kernel * layer.kernel) as u64,
        LayerKind::PointwiseConv => pixels * (layer.c_out * layer.c_in) as u64,
        LayerKind::Fc => (layer.c_in * layer.c_out) as u64,
        LayerKind::BatchNorm
        | LayerKind::Relu
        | LayerKind::GlobalAvgPool
        | LayerKind::Softmax => 0,
    }
}

/// Trainable parameters a single layer carries.
pub fn params_of_layer(layer: &LayerSpec) -> u64 {
    match layer.kind {
        LayerKind::Conv => (layer.kernel * layer.kernel * layer.c_in * layer.c_out) as u64,
        LayerKind::DepthwiseConv => (layer.kernel * layer.kernel * layer.c_out) as u64,
        LayerKind::PointwiseConv => (layer.c_in * layer.c_out) as u64,
        LayerKind::Fc => ((layer.c_in + 1) * layer.c_out) as u64,
        LayerKind::BatchNorm => 4 * layer.c_out as u64,
        LayerKind::Relu | LayerKind::GlobalAvgPool | LayerKind::Softmax => 0,
    }
}

/// Cost of replacing one k x k standard convolution with a depthwise +
/// pointwise pair: `(k^2 * c_out) / (k^2 + c_out)`. For 3x3 kernels this is
/// `9c / (9 + c)`, which approaches 9 from below as `c_out` grows.
pub fn separable_reduction_ratio(kernel: usize, c_out: usize) -> f64 {
    let k2 = (kernel * kernel) as f64;
    let c = c_out as f64;
    (k2 * c) / (k2 + c)
}

/// Per-layer cost line in a [`FlopsReport`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub index: usize,
    pub kind: LayerKind,
    pub out_h: usize,
    pub out_w: usize,
    pub c_out: usize,
    pub macs: u64,
    pub params: u64,
}

/// MACs aggregated over all layers producing the same output resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageCount {
    pub h: usize,
    pub w: usize,
    pub macs: u64,
}

/// Complete cost breakdown for one architecture.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsReport {
    pub model: String,
    pub alpha: f64,
    pub per_layer: Vec<LayerCount>,
    pub per_stage: Vec<StageCount>,
    pub total_macs: u64,
    pub total_params: u64,
}

/// One resolution drop along the weighted-layer chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DownsampleEvent {
    /// 1-based position among the weighted layers (convolutions and FC).
    pub weighted_index: usize,
    /// Cumulative downsampling factor relative to the input, e.g. 32 for
    /// a 224 -> 7 reduction.
    pub factor: usize,
    pub h: usize,
    pub w: usize,
}

/// Where along the network the resolution drops happen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DownsamplingSchedule {
    pub model: String,
    pub weighted_layers: usize,
    pub events: Vec<DownsampleEvent>,
}

impl DownsamplingSchedule {
    /// The weighted-layer index at which the given cumulative factor is
    /// first reached, if ever.
    pub fn reached_at(&self, factor: usize) -> Option<usize> {
        self.events
            .iter()
            .find(|e| e.factor == factor)
            .map(|e| e.weighted_index)
    }
}

/// Tally MACs and parameters for every layer and resolution stage.
pub fn stage_report(spec: &ArchitectureSpec) -> Result<FlopsReport, ArchError> {
    let shapes = spec.output_shapes()?;
    let mut per_layer = Vec::with_capacity(spec.layers.len());
    let mut per_stage: Vec<StageCount> = Vec::new();
    let mut total_macs = 0u64;
    let mut total_params = 0u64;
    for (index, (layer, out)) in spec.layers.iter().zip(&shapes).enumerate() {
        let macs = macs_of_layer(layer, *out);
        let params = params_of_layer(layer);
        per_layer.push(LayerCount {
            index,
            kind: layer.kind,
            out_h: out.h,
            out_w: out.w,
            c_out: out.c,
            macs,
            params,
        });
        total_macs += macs;
        total_params += params;
        if macs > 0 {
            match per_stage.iter_mut().find(|s| s.h == out.h && s.w == out.w) {
                Some(stage) => stage.macs += macs,
                None => per_stage.push(StageCount { h: out.h, w: out.w, macs }),
            }
        }
    }
    Ok(FlopsReport {
        model: spec.name.clone(),
        alpha: spec.alpha,
        per_layer,
        per_stage,
        total_macs,
        total_params,
    })
}

/// Total MACs for one forward pass.
pub fn total_macs(spec: &ArchitectureSpec) -> Result<u64, ArchError> {
    Ok(stage_report(spec)?.total_macs)
}

/// Total trainable parameters.
pub fn total_params(spec: &ArchitectureSpec) -> Result<u64, ArchError> {
    Ok(stage_report(spec)?.total_params)
}

/// Record at which weighted layer each resolution drop happens.
pub fn downsampling_schedule(spec: &ArchitectureSpec) -> Result<DownsamplingSchedule, ArchError> {
    let shapes = spec.output_shapes()?;
    let mut events = Vec::new();
    let mut weighted = 0usize;
    let mut cur_h = spec.input.h;
    for (layer, out) in spec.layers.iter().zip(&shapes) {
        if !layer.kind.is_weighted() {
            continue;
        }
        weighted += 1;
        if layer.kind != LayerKind::Fc && out.h < cur_h {
            events.push(DownsampleEvent {
                weighted_index: weighted,
                factor: spec.input.h / out.h,
                h: out.h,
                w: out.w,
            });
            cur_h = out.h;
        }
    }
    Ok(DownsamplingSchedule {
        model: spec.name.clone(),
        weighted_layers: weighted,
        events,
    })
}

impl FlopsReport {
    /// Sum of MACs over the `n` stages with the largest output resolution.
    pub fn largest_stage_macs(&self, n: usize) -> u64 {
        let mut stages = self.per_stage.clone();
        stages.sort_by(|a, b| (b.h * b.w).cmp(&(a.h * a.w)));
        stages.iter().take(n).map(|s| s.macs).sum()
    }

    /// Human-readable stage table with MFLOPs rounded to one decimal.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{}  (width multiplier {})\n", self.model, self.alpha));
        out.push_str("counting: 1 MAC = 1 FLOP unit; bias/BN/pool/softmax adds excluded\n\n");
        out.push_str(&format!("{:<10} {:>10}\n", "stage", "MFLOPs"));
        for stage in &self.per_stage {
            out.push_str(&format!(
                "{:<10} {:>10.1}\n",
                format!("{}x{}", stage.h, stage.w),
                stage.macs as f64 / 1e6
            ));
        }
        out.push_str(&format!(
            "{:<10} {:>10.1}   ({} MACs, {} params)\n",
            "total",
            self.total_macs as f64 / 1e6,
            self.total_macs,
            self.total_params
        ));
        out
    }

    /// Machine-readable per-layer table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_index,kind,out_h,out_w,c_out,macs,params\n");
        for l in &self.per_layer {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                l.index, l.kind, l.out_h, l.out_w, l.c_out, l.macs, l.params
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_fd_mobilenet, build_mobilenet};
    use crate::tensor::conv_output_dim;

    /// Count MACs by walking output pixels and kernel taps one by one,
    /// independently of the closed-form layer formulas.
    fn counted_macs(spec: &ArchitectureSpec) -> u64 {
        let mut total = 0u64;
        let (mut h, mut w) = (spec.input.h, spec.input.w);
        for layer in &spec.layers {
            match layer.kind {
                LayerKind::Conv | LayerKind::DepthwiseConv => {
                    let oh = conv_output_dim(h, layer.kernel, layer.stride, layer.pad).unwrap();
                    let ow = conv_output_dim(w, layer.kernel, layer.stride, layer.pad).unwrap();
                    let fan = if layer.kind == LayerKind::Conv { layer.c_in } else { 1 };
                    for _ in 0..oh * ow {
                        for _ in 0..layer.c_out {
                            total += (fan * layer.kernel * layer.kernel) as u64;
                        }
                    }
                    h = oh;
                    w = ow;
                }
                LayerKind::PointwiseConv => {
                    for _ in 0..h * w {
                        for _ in 0..layer.c_out {
                            total += layer.c_in as u64;
                        }
                    }
                }
                LayerKind::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
                LayerKind::Fc => {
                    for _ in 0..layer.c_out {
                        total += layer.c_in as u64;
                    }
                }
                LayerKind::BatchNorm | LayerKind::Relu | LayerKind::Softmax => {}
            }
        }
        total
    }

    fn fd(alpha: f64) -> FlopsReport {
        stage_report(&build_fd_mobilenet(alpha).unwrap()).unwrap()
    }

    fn mn(alpha: f64) -> FlopsReport {
        stage_report(&build_mobilenet(alpha).unwrap()).unwrap()
    }

    #[test]
    fn fd_mobilenet_1x_stage_macs() {
        let report = fd(1.0);
        let stages: Vec<(usize, u64)> = report.per_stage.iter().map(|s| (s.h, s.macs)).collect();
        assert_eq!(
            stages,
            vec![
                (112, 10_838_016),
                (56, 7_325_696),
                (28, 20_622_336),
                (14, 19_944_960),
                (7, 84_734_720),
                (1, 1_024_000),
            ]
        );
        assert_eq!(report.total_macs, 144_489_728);
    }

    #[test]
    fn fd_mobilenet_totals_across_multipliers() {
        assert_eq!(fd(1.0).total_macs, 144_489_728);
        assert_eq!(fd(0.5).total_macs, 40_132_224);
        assert_eq!(fd(0.25).total_macs, 12_037_952);
    }

    #[test]
    fn mobilenet_totals_across_multipliers() {
        assert_eq!(mn(0.5).total_macs, 149_497_088);
        assert_eq!(mn(0.25).total_macs, 41_030_272);
        assert_eq!(mn(0.125).total_macs, 12_085_568);
    }

    #[test]
    fn high_resolution_stages_dominate_the_baseline() {
        // At comparable total cost, the slimmer-but-deeper baseline spends
        // over twice as much in the four largest-resolution stages.
        assert_eq!(fd(1.0).largest_stage_macs(4), 58_731_008);
        assert_eq!(mn(0.5).largest_stage_macs(4), 129_378_816);
    }

    #[test]
    fn macs_match_tap_by_tap_count() {
        for spec in [
            build_fd_mobilenet(0.25).unwrap(),
            build_mobilenet(0.125).unwrap(),
        ] {
            assert_eq!(
                stage_report(&spec).unwrap().total_macs,
                counted_macs(&spec),
                "{}",
                spec.name
            );
        }
    }

    #[test]
    fn stage_sums_equal_layer_sums() {
        for report in [fd(1.0), fd(0.25), mn(0.5)] {
            let by_layer: u64 = report.per_layer.iter().map(|l| l.macs).sum();
            let by_stage: u64 = report.per_stage.iter().map(|s| s.macs).sum();
            assert_eq!(by_layer, report.total_macs);
            assert_eq!(by_stage, report.total_macs);
        }
    }

    #[test]
    fn exact_channel_halving_scales_separable_blocks() {
        // With every channel count even, halving the width shrinks each
        // pointwise conv by exactly 4x and each depthwise conv by exactly 2x.
        let full = fd(1.0);
        let half = fd(0.5);
        for (a, b) in full.per_layer.iter().zip(&half.per_layer) {
            match a.kind {
                LayerKind::PointwiseConv => assert_eq!(a.macs, 4 * b.macs),
                LayerKind::DepthwiseConv => assert_eq!(a.macs, 2 * b.macs),
                _ => {}
            }
        }
    }

    #[test]
    fn fd_mobilenet_downsampling_schedule() {
        let schedule = downsampling_schedule(&build_fd_mobilenet(1.0).unwrap()).unwrap();
        assert_eq!(schedule.weighted_layers, 24);
        let events: Vec<(usize, usize)> = schedule
            .events
            .iter()
            .map(|e| (e.weighted_index, e.factor))
            .collect();
        assert_eq!(events, vec![(1, 2), (2, 4), (4, 8), (8, 16), (12, 32)]);
        assert_eq!(schedule.reached_at(4), Some(2));
        assert_eq!(schedule.reached_at(32), Some(12));
    }

    #[test]
    fn mobilenet_downsampling_schedule() {
        let schedule = downsampling_schedule(&build_mobilenet(1.0).unwrap()).unwrap();
        assert_eq!(schedule.weighted_layers, 28);
        assert_eq!(schedule.reached_at(4), Some(4));
        assert_eq!(schedule.reached_at(32), Some(24));
        assert_eq!(schedule.reached_at(64), None);
    }

    #[test]
    fn schedule_is_width_independent() {
        for alpha in [0.125, 0.25, 0.5, 2.0] {
            let scaled = downsampling_schedule(&build_fd_mobilenet(alpha).unwrap()).unwrap();
            let base = downsampling_schedule(&build_fd_mobilenet(1.0).unwrap()).unwrap();
            assert_eq!(scaled.events, base.events);
        }
    }

    #[test]
    fn reduction_ratio_stays_between_8_and_9() {
        for c in [128, 256, 512, 1024] {
            let r = separable_reduction_ratio(3, c);
            assert!(r > 8.0 && r < 9.0, "c = {c}: {r}");
        }
        assert_eq!(separable_reduction_ratio(3, 512), 9.0 * 512.0 / 521.0);
    }

    #[test]
    fn parameter_formulas() {
        let report = fd(1.0);
        // stem: 3x3x3 filters for 32 output channels
        assert_eq!(report.per_layer[0].params, 864);
        assert_eq!(report.per_layer[1].params, 128); // BN carries 4 per channel
        // last block: depthwise over 512 channels, pointwise 512 -> 1024
        let dw = report
            .per_layer
            .iter()
            .filter(|l| l.kind == LayerKind::DepthwiseConv)
            .last()
            .unwrap();
        assert_eq!(dw.params, 4608);
        let pw = report
            .per_layer
            .iter()
            .filter(|l| l.kind == LayerKind::PointwiseConv)
            .last()
            .unwrap();
        assert_eq!(pw.params, 524_288);
        let fc = report
            .per_layer
            .iter()
            .find(|l| l.kind == LayerKind::Fc)
            .unwrap();
        assert_eq!(fc.params, 1_025_000); // 1024 weights + 1 bias per class
        let by_layer: u64 = report.per_layer.iter().map(|l| l.params).sum();
        assert_eq!(by_layer, report.total_params);
    }

    #[test]
    fn text_report_shape() {
        let text = fd(1.0).to_text();
        assert!(text.starts_with("FD-MobileNet 1x"));
        assert!(text.contains("112x112"));
        assert!(text.contains("144.5"));
        assert!(text.contains("144489728 MACs"));
    }

    #[test]
    fn csv_report_shape() {
        let report = fd(1.0);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "layer_index,kind,out_h,out_w,c_out,macs,params"
        );
        assert_eq!(lines.next().unwrap(), "0,conv,112,112,32,10838016,864");
        assert_eq!(csv.lines().count(), 1 + report.per_layer.len());
    }
}
