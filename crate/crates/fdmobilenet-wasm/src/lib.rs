//! JSON-speaking entry points for the browser demo.
//!
//! The payload functions are plain Rust so they build and test on any
//! target; thin `wasm_bindgen` wrappers at the bottom expose them to
//! JavaScript when compiled for `wasm32`. Each returns a JSON string the
//! page can hand straight to `JSON.parse`.

use std::str::FromStr;

use serde::Serialize;

use fdmobilenet::complexity::{downsampling_schedule, stage_report, DownsamplingSchedule};
use fdmobilenet::engine::{init_random_weights, Engine};
use fdmobilenet::tensor::Tensor;
use fdmobilenet::ModelId;

fn build(model: &str, alpha: f64) -> Result<fdmobilenet::ArchitectureSpec, String> {
    let id = ModelId::from_str(model).map_err(|e| e.to_string())?;
    id.build(alpha).map_err(|e| e.to_string())
}

/// Per-layer and per-stage multiply-accumulate counts for one model.
pub fn flops_report_json(model: &str, alpha: f64) -> Result<String, String> {
    let spec = build(model, alpha)?;
    let report = stage_report(&spec).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ScheduleSide {
    schedule: DownsamplingSchedule,
    total_macs: u64,
    total_params: u64,
}

#[derive(Serialize)]
struct ScheduleComparison {
    alpha: f64,
    models: Vec<ScheduleSide>,
}

/// Both reference models at the same width: where each reaches 2x..32x
/// downsampling, plus their totals for the summary row.
pub fn downsampling_comparison_json(alpha: f64) -> Result<String, String> {
    let mut models = Vec::new();
    for id in [ModelId::FdMobileNet, ModelId::MobileNet] {
        let spec = id.build(alpha).map_err(|e| e.to_string())?;
        let report = stage_report(&spec).map_err(|e| e.to_string())?;
        models.push(ScheduleSide {
            schedule: downsampling_schedule(&spec).map_err(|e| e.to_string())?,
            total_macs: report.total_macs,
            total_params: report.total_params,
        });
    }
    let cmp = ScheduleComparison { alpha, models };
    serde_json::to_string(&cmp).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct WasmBenchReport {
    model: String,
    alpha: f64,
    mflops: f64,
    runs: usize,
    run_ms: Vec<f64>,
    median_ms: f64,
}

/// Time `runs` single-image inferences with freshly generated weights.
///
/// Unlike the CLI benchmark this leaves the thread pool alone: under
/// `wasm32-unknown-unknown` the kernels degrade to sequential execution,
/// and the results are identical either way.
pub fn bench_infer_json(model: &str, alpha: f64, runs: usize, seed: u64) -> Result<String, String> {
    if runs == 0 {
        return Err("runs must be at least 1".into());
    }
    let spec = build(model, alpha)?;
    let report = stage_report(&spec).map_err(|e| e.to_string())?;
    let store = init_random_weights(&spec, seed);
    let engine = Engine::compile(&spec, &store).map_err(|e| e.to_string())?;
    let input = Tensor::filled(spec.input, 0.5);

    let mut run_ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let (out, ms) = clock::time_ms(|| engine.infer(&input));
        out.map_err(|e| e.to_string())?;
        run_ms.push(ms);
    }
    let mut sorted = run_ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_ms = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };

    let out = WasmBenchReport {
        model: spec.name,
        alpha,
        mflops: report.total_macs as f64 / 1e6,
        runs,
        run_ms,
        median_ms,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

mod clock {
    /// Runs `f` and reports how long it took in milliseconds.
    #[cfg(not(target_arch = "wasm32"))]
    pub fn time_ms<T>(f: impl FnOnce() -> T) -> (T, f64) {
        let start = std::time::Instant::now();
        let out = f();
        (out, start.elapsed().as_secs_f64() * 1e3)
    }

    /// `Instant` is unavailable in the browser; `Date.now` is the portable
    /// clock (millisecond granularity, good enough for whole inferences).
    #[cfg(target_arch = "wasm32")]
    pub fn time_ms<T>(f: impl FnOnce() -> T) -> (T, f64) {
        let start = js_sys::Date::now();
        let out = f();
        (out, js_sys::Date::now() - start)
    }
}

#[cfg(target_arch = "wasm32")]
mod bindings {
    use wasm_bindgen::prelude::*;

    fn js(result: Result<String, String>) -> Result<String, JsValue> {
        result.map_err(|e| JsValue::from_str(&e))
    }

    #[wasm_bindgen]
    pub fn flops_report(model: &str, alpha: f64) -> Result<String, JsValue> {
        js(super::flops_report_json(model, alpha))
    }

    #[wasm_bindgen]
    pub fn downsampling_comparison(alpha: f64) -> Result<String, JsValue> {
        js(super::downsampling_comparison_json(alpha))
    }

    #[wasm_bindgen]
    pub fn bench_infer(model: &str, alpha: f64, runs: usize, seed: u64) -> Result<String, JsValue> {
        js(super::bench_infer_json(model, alpha, runs, seed))
    }
}
