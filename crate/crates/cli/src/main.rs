use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hmaflow::io::{
    load_image, load_model, make_synthetic_pair, pad_to_multiple, read_flo, save_model, save_rgb, visualize_flow,
    write_flo, Motion,
};
use hmaflow::metrics::{epe, fl_all};
use hmaflow::model::{INFER_ITERS, TRAIN_ITERS};
use hmaflow::train::{overfit, TrainConfig};
use hmaflow::{Alignment, FlowField, HmaFlow, ModelConfig, ParamStore, Resolution, Tensor};

#[derive(Parser)]
#[command(name = "hmaflow", version, about = "Optical flow with hierarchical motion field alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate flow between two images.
    Infer(InferArgs),
    /// Train from scratch on one synthetic pair and report the fit.
    Overfit(OverfitArgs),
    /// Compute EPE and Fl-all over a list of image pairs with ground truth.
    Eval(EvalArgs),
    /// Run the built-in oracle, gradient and shape checks.
    Selftest,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    image1: PathBuf,
    #[arg(long)]
    image2: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Output `.flo` file.
    #[arg(long)]
    out: PathBuf,
    /// Optional colour-coded PNG of the flow.
    #[arg(long)]
    viz: Option<PathBuf>,
    #[arg(long, default_value_t = INFER_ITERS)]
    iters: usize,
    /// Flow of the previous pair used as the starting estimate.
    #[arg(long)]
    warm_start: Option<PathBuf>,
}

#[derive(Args)]
struct OverfitArgs {
    /// Image size as HxW; both must be multiples of 8.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// translate:DX,DY, rotate:DEG or zoom:S
    #[arg(long, default_value = "translate:5,3")]
    motion: Motion,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TRAIN_ITERS)]
    iters: usize,
    #[command(flatten)]
    arch: ArchArgs,
    /// Save the trained weights.
    #[arg(long)]
    weights_out: Option<PathBuf>,
    /// Print the loss every N steps (0 disables).
    #[arg(long, default_value_t = 25)]
    log_every: usize,
}

#[derive(Args)]
struct ArchArgs {
    /// Disable correlation self-attention.
    #[arg(long)]
    no_csa: bool,
    /// Disable the global position embedding.
    #[arg(long)]
    no_pe: bool,
    /// conv2x2, conv3x3, avgpool or maxpool
    #[arg(long, default_value = "conv2x2")]
    alignment: Alignment,
    /// Comma-separated search radii.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 6, 8, 10])]
    radii: Vec<usize>,
    /// Use the eighth-level volume alone.
    #[arg(long)]
    no_hierarchical: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Text file with one `image1 image2 gt.flo` triple per line; relative
    /// paths resolve against the list's directory.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = INFER_ITERS)]
    iters: usize,
    /// Write per-pair and mean metrics as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("expected HxW, got `{s}`"));
    Ok((num(h)?, num(w)?))
}

/// Previous flow as an eighth-resolution field for the padded frame.
fn warm_start_field(path: &Path, orig: (usize, usize), padded: (usize, usize)) -> Result<FlowField> {
    let prev = read_flo(path)?;
    let dims = (prev.height(), prev.width());
    if dims == (padded.0 / 8, padded.1 / 8) {
        return Ok(FlowField::new(prev.into_tensor(), Resolution::Eighth)?);
    }
    ensure!(
        dims == orig || dims == padded,
        "warm-start flow is {}x{}, expected {}x{} (full) or {}x{} (eighth)",
        dims.0,
        dims.1,
        orig.0,
        orig.1,
        padded.0 / 8,
        padded.1 / 8
    );
    let full = pad_to_multiple(prev.tensor(), 8)?;
    let coarse = full.avg_pool2d(8, 8)?.scale(1.0 / 8.0);
    Ok(FlowField::new(coarse, Resolution::Eighth)?)
}

/// Pads, runs the model and crops the last prediction back.
fn estimate(
    model: &HmaFlow,
    params: &ParamStore,
    i1: &Tensor,
    i2: &Tensor,
    iters: usize,
    warm: Option<&Path>,
) -> Result<FlowField> {
    ensure!(i1.shape() == i2.shape(), "images differ in size: {:?} vs {:?}", i1.shape(), i2.shape());
    let (h, w) = (i1.shape()[2], i1.shape()[3]);
    let p1 = pad_to_multiple(i1, 8)?;
    let p2 = pad_to_multiple(i2, 8)?;
    let padded = (p1.shape()[2], p1.shape()[3]);
    let init = warm.map(|p| warm_start_field(p, (h, w), padded)).transpose()?;
    let trace = model.forward(params, &p1, &p2, iters, init.as_ref())?;
    let last = trace.predictions.last().context("no predictions")?;
    last.check_finite()?;
    Ok(last.crop(h, w)?)
}

fn infer(a: InferArgs) -> Result<()> {
    let (model, params) = load_model(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let i1 = load_image(&a.image1).with_context(|| format!("reading {}", a.image1.display()))?;
    let i2 = load_image(&a.image2).with_context(|| format!("reading {}", a.image2.display()))?;
    let flow = estimate(&model, &params, &i1, &i2, a.iters, a.warm_start.as_deref())?;
    write_flo(&a.out, &flow)?;
    if let Some(viz) = &a.viz {
        save_rgb(viz, &visualize_flow(&flow, None)?)?;
    }
    Ok(())
}

fn run_overfit(a: OverfitArgs) -> Result<()> {
    let (h, w) = a.size;
    let pair = make_synthetic_pair((h, w), a.motion, a.seed)?;
    let config = ModelConfig {
        radii: a.arch.radii.clone(),
        alignment: a.arch.alignment,
        hierarchical: !a.arch.no_hierarchical,
        csa: !a.arch.no_csa,
        position_embedding: !a.arch.no_pe,
        max_tokens: ModelConfig::default().max_tokens.max((h / 8) * (w / 8)),
    };
    let model = HmaFlow::new(config)?;
    let mut params = model.init_params(a.seed);
    let cfg = TrainConfig { steps: a.steps, lr: a.lr, iters: a.iters, ..TrainConfig::default() };
    eprintln!(
        "overfit {h}x{w} {} for {} steps ({} parameters)",
        a.motion,
        a.steps,
        params.numel()
    );
    let start = Instant::now();
    let report = overfit(&model, &mut params, &pair, &cfg, |step, loss| {
        if a.log_every > 0 && (step % a.log_every == 0 || step + 1 == a.steps) {
            eprintln!("step {step:>5}  loss {loss:.4}  {:.0}s", start.elapsed().as_secs_f64());
        }
    })?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = &a.report {
        fs::write(path, format!("{json}\n"))?;
    }
    if let Some(path) = &a.weights_out {
        save_model(path, &model, &params)?;
    }
    Ok(())
}

struct PairResult {
    name: String,
    epe: f64,
    fl_all: f64,
}

fn eval(a: EvalArgs) -> Result<()> {
    let (model, params) = load_model(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let list = fs::read_to_string(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let base = a.pairs.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| if Path::new(p).is_absolute() { PathBuf::from(p) } else { base.join(p) };
    let mut jobs = Vec::new();
    for (n, line) in list.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            bail!("{}:{}: expected `image1 image2 gt.flo`", a.pairs.display(), n + 1);
        }
        jobs.push((resolve(parts[0]), resolve(parts[1]), resolve(parts[2])));
    }
    ensure!(!jobs.is_empty(), "{} lists no pairs", a.pairs.display());

    let threads = std::env::var("HMAFLOW_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let results: Vec<Result<PairResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|(p1, p2, gt)| {
                let gt_flow = read_flo(gt)?;
                let flow = estimate(&model, &params, &load_image(p1)?, &load_image(p2)?, a.iters, None)?;
                // Middlebury marks unknown flow with huge values
                let d = gt_flow.tensor().data();
                let hw = gt_flow.height() * gt_flow.width();
                let valid = Tensor::from_fn(&[1, 1, gt_flow.height(), gt_flow.width()], |i| {
                    let known = d[i].abs() < 1e9 && d[hw + i].abs() < 1e9;
                    if known { 1.0 } else { 0.0 }
                });
                Ok(PairResult {
                    name: p1.display().to_string(),
                    epe: epe(&flow, &gt_flow, &valid)?,
                    fl_all: fl_all(&flow, &gt_flow, &valid)?,
                })
            })
            .collect()
    });
    let results: Vec<PairResult> = results.into_iter().collect::<Result<_>>()?;
    let n = results.len() as f64;
    let mean_epe = results.iter().map(|r| r.epe).sum::<f64>() / n;
    let mean_fl = results.iter().map(|r| r.fl_all).sum::<f64>() / n;
    for r in &results {
        println!("{:<40} epe {:>8.4}  fl-all {:>6.2}%", r.name, r.epe, r.fl_all);
    }
    println!("mean over {} pairs: epe {mean_epe:.4}  fl-all {mean_fl:.2}%", results.len());
    if let Some(path) = &a.json {
        let pairs: Vec<_> = results
            .iter()
            .map(|r| serde_json::json!({ "image1": r.name, "epe": r.epe, "fl_all": r.fl_all }))
            .collect();
        let doc = serde_json::json!({ "pairs": pairs, "mean_epe": mean_epe, "mean_fl_all": mean_fl });
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(())
}

fn selftest() -> Result<bool> {
    let checks = hmaflow::selftest::run_all();
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut ok = true;
    for c in &checks {
        ok &= c.passed;
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{:<9} {:<width$}  {mark}  {}", c.suite, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Infer(a) => infer(a).map(|_| true),
        Command::Overfit(a) => run_overfit(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Selftest => selftest(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
