//! `fdm` — FLOPs analysis, benchmarking, and single-image inference for
//! fast-downsampling separable CNNs from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fdmobilenet::bench::{run_benchmark, BenchConfig};
use fdmobilenet::complexity::{downsampling_schedule, stage_report};
use fdmobilenet::engine::{
    decode_ppm, init_random_weights, normalize, preprocess, Engine, WeightStore,
};
use fdmobilenet::tensor::{tensor_from_bytes, tensor_to_bytes};
use fdmobilenet::{ArchitectureSpec, ModelId, Tensor};

#[derive(Parser)]
#[command(name = "fdm", version, about = "Complexity analysis and inference for FD-MobileNet models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer and per-stage multiply-accumulate counts
    Flops(FlopsCmd),
    /// Wall-clock latency of repeated forward passes
    Bench(BenchCmd),
    /// Classify one image and print the top classes
    Run(RunCmd),
    /// Write deterministic random weights for a model
    GenWeights(GenWeightsCmd),
    /// Write the layer table as JSON
    ExportArch(ExportArchCmd),
}

/// Where the architecture comes from: a built-in family at some width, or
/// a JSON file previously written by `export-arch`.
#[derive(Args)]
struct ModelArgs {
    /// Built-in model: "fd-mobilenet" or "mobilenet"
    #[arg(long, conflicts_with = "arch", value_parser = ModelId::from_str)]
    model: Option<ModelId>,
    /// Width multiplier for the built-in models
    #[arg(long, default_value_t = 1.0, conflicts_with = "arch")]
    alpha: f64,
    /// Architecture JSON file (overrides --model/--alpha)
    #[arg(long)]
    arch: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ArchitectureSpec> {
        if let Some(path) = &self.arch {
            let json = fs::read_to_string(path)
                .with_context(|| format!("reading architecture {}", path.display()))?;
            return Ok(ArchitectureSpec::import_json(&json)?);
        }
        let model = self.model.unwrap_or(ModelId::FdMobileNet);
        Ok(model.build(self.alpha)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct FlopsCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write here instead of stdout
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    /// Built-in model: "fd-mobilenet" or "mobilenet"
    #[arg(long, default_value = "fd-mobilenet", value_parser = ModelId::from_str)]
    model: ModelId,
    /// Width multiplier
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Timed runs after warmup
    #[arg(long, default_value_t = 30)]
    runs: usize,
    /// Untimed runs before measurement
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Seed for generated weights and input
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for the convolution kernels
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    model: ModelArgs,
    /// FDW1 weight container, e.g. from gen-weights
    #[arg(long)]
    weights: PathBuf,
    /// Input image: binary PPM (P6) or an FDT1 tensor. Tensors already
    /// matching the model input skip preprocessing.
    #[arg(long)]
    image: PathBuf,
    /// How many top classes to print
    #[arg(long, default_value_t = 5)]
    topk: usize,
    /// Per-channel means, comma separated, applied after scaling to [0, 1]
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mean: Option<Vec<f32>>,
    /// Per-channel standard deviations, comma separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    std: Option<Vec<f32>>,
    /// Write the full probability tensor here as FDT1
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenWeightsCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination FDW1 file
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArchCmd {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() {
    if let Err(err) = dispatch(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Flops(cmd) => flops(cmd),
        Command::Bench(cmd) => bench(cmd),
        Command::Run(cmd) => run(cmd),
        Command::GenWeights(cmd) => gen_weights(cmd),
        Command::ExportArch(cmd) => export_arch(cmd),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn flops(cmd: FlopsCmd) -> Result<()> {
    let spec = cmd.model.resolve()?;
    let report = stage_report(&spec)?;
    let text = match cmd.format {
        Format::Text => {
            let schedule = downsampling_schedule(&spec)?;
            let mut t = report.to_text();
            t.push('\n');
            t.push_str(&format!(
                "downsampling: {} over {} weighted layers\n",
                schedule
                    .events
                    .iter()
                    .map(|e| format!("{}x at layer {}", e.factor, e.weighted_index))
                    .collect::<Vec<_>>()
                    .join(", "),
                schedule.weighted_layers,
            ));
            t
        }
        Format::Csv => report.to_csv(),
    };
    emit(&text, cmd.out.as_deref())
}

fn bench(cmd: BenchCmd) -> Result<()> {
    if cmd.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let config = BenchConfig {
        model: cmd.model,
        alpha: cmd.alpha,
        warmup: cmd.warmup,
        runs: cmd.runs,
        seed: cmd.seed,
        threads: cmd.threads.max(1),
    };
    let report = run_benchmark(&config)?;
    let text = match cmd.format {
        Format::Text => report.to_text(),
        Format::Csv => report.to_csv(),
    };
    emit(&text, cmd.out.as_deref())
}

fn load_input(path: &Path, spec: &ArchitectureSpec) -> Result<Tensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let image = if bytes.starts_with(b"FDT1") {
        let t = tensor_from_bytes(&bytes)?;
        if t.shape() == spec.input {
            return Ok(t); // already network-sized and scaled
        }
        t
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)?
    } else {
        bail!(
            "{}: unrecognized input format (expected a P6 PPM image or an FDT1 tensor)",
            path.display()
        );
    };
    if image.shape().c != spec.input.c {
        bail!(
            "{}: image has {} channels, the model expects {}",
            path.display(),
            image.shape().c,
            spec.input.c
        );
    }
    if spec.input.h != spec.input.w {
        bail!("preprocessing requires a square model input, got {}", spec.input);
    }
    let crop = spec.input.h;
    // Conventional resize target: shorter edge at 8/7 of the crop (256 for
    // a 224 crop), so the crop covers the same fraction at any input size.
    let short_side = (crop * 8).div_ceil(7);
    Ok(preprocess(&image, short_side, crop)?)
}

fn run(cmd: RunCmd) -> Result<()> {
    let spec = cmd.model.resolve()?;
    let store = WeightStore::load(&cmd.weights)
        .with_context(|| format!("loading weights {}", cmd.weights.display()))?;
    let engine = Engine::compile(&spec, &store)?;
    let mut input = load_input(&cmd.image, &spec)?;
    match (&cmd.mean, &cmd.std) {
        (Some(mean), Some(std)) => input = normalize(&input, mean, std)?,
        (None, None) => {}
        _ => bail!("--mean and --std must be given together"),
    }
    let probs = engine.infer(&input)?;
    println!("{}  ({} -> {} classes)", spec.name, cmd.image.display(), probs.numel());
    let mut order: Vec<usize> = (0..probs.numel()).collect();
    order.sort_by(|&a, &b| {
        probs.data()[b]
            .partial_cmp(&probs.data()[a])
            .expect("probabilities are finite")
            .then(a.cmp(&b))
    });
    for &class in order.iter().take(cmd.topk.max(1)) {
        println!("class {class:<6} {:.8}", probs.data()[class]);
    }
    if let Some(out) = &cmd.out {
        fs::write(out, tensor_to_bytes(&probs))
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn gen_weights(cmd: GenWeightsCmd) -> Result<()> {
    let spec = cmd.model.resolve()?;
    let store = init_random_weights(&spec, cmd.seed);
    store
        .save(&cmd.out)
        .with_context(|| format!("writing {}", cmd.out.display()))?;
    println!(
        "wrote {} weight entries for {} to {}",
        store.len(),
        spec.name,
        cmd.out.display()
    );
    Ok(())
}

fn export_arch(cmd: ExportArchCmd) -> Result<()> {
    let spec = cmd.model.resolve()?;
    let mut json = spec.export_json();
    json.push('\n');
    emit(&json, cmd.out.as_deref())
}
