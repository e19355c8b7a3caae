//! Wall-clock latency measurement for compiled models.
//!
//! Timing covers [`Engine::infer`] only: model building, weight
//! generation, and compilation happen before the clock starts. Runs are
//! single-threaded unless configured otherwise, warmup iterations are
//! discarded, and the median is the headline number since it shrugs off
//! scheduler noise better than the mean.

use std::time::Instant;

use crate::arch::ModelId;
use crate::complexity;
use crate::engine::{init_random_weights, Engine, EngineError};
use crate::tensor::Tensor;

/// What to benchmark and how.
#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub model: ModelId,
    pub alpha: f64,
    /// Untimed runs before measurement starts.
    pub warmup: usize,
    /// Timed runs; the report carries every sample.
    pub runs: usize,
    /// Seed for both the generated weights and the input image.
    pub seed: u64,
    pub threads: usize,
}

impl BenchConfig {
    pub fn new(model: ModelId, alpha: f64) -> Self {
        BenchConfig {
            model,
            alpha,
            warmup: 5,
            runs: 30,
            seed: 0,
            threads: 1,
        }
    }
}

/// Latency samples and context for one benchmarked model.
#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub model: String,
    pub alpha: f64,
    /// Cost of one forward pass in millions of MACs.
    pub mflops: f64,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    pub threads: usize,
    /// Per-run wall time, in execution order.
    pub run_ms: Vec<f64>,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    /// Host description, e.g. CPU model and hardware thread count.
    pub environment: String,
}

/// Median of a sample set; the mean of the middle pair when even.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of no samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// One-line host description: CPU model name and hardware thread count.
pub fn environment_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|name| name.trim().to_string())
        })
        .unwrap_or_else(|| "unknown CPU".to_string());
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!("{cpu}, {threads} hardware threads")
}

/// Build the model with seeded random weights and time repeated forward
/// passes over one seeded input.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchmarkReport, EngineError> {
    let spec = config.model.build(config.alpha)?;
    let mflops = complexity::total_macs(&spec)? as f64 / 1e6;
    let store = init_random_weights(&spec, config.seed);
    let engine = Engine::compile(&spec, &store)?;
    let input = {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
        let data = (0..spec.input.numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(spec.input, data)?
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .expect("thread pool construction");
    let run_ms = pool.install(|| -> Result<Vec<f64>, EngineError> {
        for _ in 0..config.warmup {
            engine.infer(&input)?;
        }
        let mut samples = Vec::with_capacity(config.runs);
        for _ in 0..config.runs {
            let start = Instant::now();
            engine.infer(&input)?;
            samples.push(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(samples)
    })?;
    let min_ms = run_ms.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_ms = run_ms.iter().sum::<f64>() / run_ms.len() as f64;
    Ok(BenchmarkReport {
        model: spec.name,
        alpha: config.alpha,
        mflops,
        warmup_runs: config.warmup,
        timed_runs: config.runs,
        threads: config.threads,
        median_ms: median(&run_ms),
        run_ms,
        min_ms,
        mean_ms,
        environment: environment_note(),
    })
}

/// Column header matching [`BenchmarkReport::text_row`].
pub fn table_header() -> String {
    format!("{:<22} {:>10} {:>12}", "Models", "MFLOPs", "Time")
}

impl BenchmarkReport {
    /// One aligned table row: model, MFLOPs, median latency.
    pub fn text_row(&self) -> String {
        format!(
            "{:<22} {:>10.1} {:>9.2} ms",
            self.model, self.mflops, self.median_ms
        )
    }

    /// Full human-readable summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&table_header());
        out.push('\n');
        out.push_str(&self.text_row());
        out.push('\n');
        out.push_str(&format!(
            "median {:.3} ms, mean {:.3} ms, min {:.3} ms over {} runs ({} warmup), {} thread{}\n",
            self.median_ms,
            self.mean_ms,
            self.min_ms,
            self.timed_runs,
            self.warmup_runs,
            self.threads,
            if self.threads == 1 { "" } else { "s" },
        ));
        out.push_str(&format!("host: {}\n", self.environment));
        out
    }

    /// Single CSV row with header.
    pub fn to_csv(&self) -> String {
        format!(
            "model,alpha,mflops,threads,warmup_runs,timed_runs,min_ms,median_ms,mean_ms\n{},{},{},{},{},{},{:.4},{:.4},{:.4}\n",
            self.model,
            self.alpha,
            self.mflops,
            self.threads,
            self.warmup_runs,
            self.timed_runs,
            self.min_ms,
            self.median_ms,
            self.mean_ms,
        )
    }
}
