use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use tta_sr::degradation::{build_benchmark, BenchmarkManifest, DegradationSpec};
use tta_sr::harness::{compare, eval_sweep, ResultsTable, Schedule, VariantMatrix};
use tta_sr::models::{load_checkpoint, pretrain_gup, save_checkpoint, PretrainConfig};
use tta_sr::synth::write_dead_leaves_set;
use tta_sr::tta::{adapt, AdaptationConfig, Profile};
use tta_sr::{Error, Image, Result};

#[derive(Parser)]
#[command(name = "tta-sr", version, about = "Single-image test-time adaptation for super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a GUP on a benchmark manifest.
    Pretrain(PretrainArgs),
    /// Degrade HR images into a benchmark with a manifest.
    BuildBench(BuildBenchArgs),
    /// Adapt a checkpoint to one LR image.
    Adapt(AdaptArgs),
    /// Sweep adaptation variants over a benchmark.
    Eval(EvalArgs),
    /// Merge results files and compare against a baseline row.
    Report(ReportArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BuildBenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
}

/// Shared selection of the adaptation config.
#[derive(Args)]
struct ConfigArgs {
    /// JSON delta applied over the profile preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "desk")]
    profile: String,
    /// JSON file with a variant matrix; defaults to the built-in five.
    #[arg(long)]
    variants: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "adapt_out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Restrict to these variants (repeatable).
    #[arg(long)]
    variant: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "eval_out")]
    out: PathBuf,
    /// Run images one after another instead of in parallel.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// One or more results.json files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "frozen")]
    baseline: String,
    /// Allowed mean-PSNR drop below the baseline, in dB.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    #[arg(long, default_value = "report_out")]
    out: PathBuf,
}

enum Failure {
    Regression(String),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Io { .. } | Error::Codec { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::BuildBench(a) => cmd_build_bench(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Regression(msg)) => {
            eprintln!("regression: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound {
                what,
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Resolves `p` against the directory holding the config file.
fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PretrainJob {
    manifest: PathBuf,
    #[serde(default)]
    pretrain: PretrainConfig,
}

fn cmd_pretrain(a: PretrainArgs) -> std::result::Result<(), Failure> {
    let job: PretrainJob = read_json(&a.config, "config")?;
    let mut cfg = job.pretrain;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let manifest = BenchmarkManifest::load(relative_to(&a.config, &job.manifest))?;
    let ckpt = pretrain_gup(&manifest, &cfg)?;
    create_dir(&a.out)?;
    let path = a.out.join("gup.ckpt");
    let tmp = a.out.join("gup.ckpt.partial");
    save_checkpoint(&ckpt, &tmp)?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    let meta = serde_json::json!({
        "checkpoint": "gup.ckpt",
        "spec": ckpt.spec,
        "iterations": ckpt.metadata.iterations,
        "seed": ckpt.metadata.seed,
        "final_loss": ckpt.metadata.final_loss,
        "weights_sha256": ckpt.weights.checksum(),
        "config": cfg,
    });
    write_atomic(
        &a.out.join("gup.json"),
        (serde_json::to_string_pretty(&meta).map_err(Error::from)? + "\n").as_bytes(),
    )?;
    println!(
        "wrote {} (final loss {:.6})",
        path.display(),
        ckpt.metadata.final_loss.unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SyntheticSet {
    count: usize,
    height: usize,
    width: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchJob {
    #[serde(default)]
    hr_images: Vec<PathBuf>,
    #[serde(default)]
    synthetic: Option<SyntheticSet>,
    specs: Vec<DegradationSpec>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    created_unix: Option<u64>,
}

fn cmd_build_bench(a: BuildBenchArgs) -> std::result::Result<(), Failure> {
    let job: BenchJob = read_json(&a.config, "config")?;
    for s in &job.specs {
        s.validate()?;
    }
    let seed = a.seed.unwrap_or(job.seed);
    let mut hr: Vec<PathBuf> = job
        .hr_images
        .iter()
        .map(|p| relative_to(&a.config, p))
        .collect();
    if let Some(s) = &job.synthetic {
        hr.extend(write_dead_leaves_set(
            &a.out.join("source"),
            s.count,
            s.height,
            s.width,
            s.seed,
        )?);
    }
    // fixed timestamps keep reruns byte-identical
    let created = job
        .created_unix
        .or_else(|| std::env::var("SOURCE_DATE_EPOCH").ok()?.parse().ok())
        .unwrap_or(0);
    let m = build_benchmark(&hr, &job.specs, &a.out, seed, created)?;
    println!(
        "wrote {} entries to {}",
        m.entries.len(),
        a.out.join("manifest.json").display()
    );
    Ok(())
}

fn base_config(args: &ConfigArgs) -> Result<AdaptationConfig> {
    let preset = AdaptationConfig::for_profile(args.profile.parse::<Profile>()?);
    match &args.config {
        Some(p) => {
            let delta: serde_json::Value = read_json(p, "config")?;
            preset.with_delta(&delta)
        }
        None => Ok(preset),
    }
}

fn matrix(args: &ConfigArgs) -> Result<VariantMatrix> {
    match &args.variants {
        Some(p) => VariantMatrix::load(p),
        None => Ok(VariantMatrix::standard()),
    }
}

fn cmd_adapt(a: AdaptArgs) -> std::result::Result<(), Failure> {
    let mut cfg = base_config(&a.cfg)?;
    if let Some(v) = &a.variant {
        let resolved = matrix(&a.cfg)?.select(std::slice::from_ref(v))?.resolve(&cfg)?;
        cfg = resolved.into_iter().next().expect("one variant").1;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let lr = Image::read_png(&a.image)?;
    let gt = a.gt.as_ref().map(Image::read_png).transpose()?;
    let out = adapt(&lr, &ckpt, &cfg, gt.as_ref())?;
    create_dir(&a.out)?;
    out.sr.write_png(a.out.join("sr.png"))?;
    write_atomic(&a.out.join("report.json"), out.report.to_json()?.as_bytes())?;
    if let Some(k) = &out.report.collapsed_kernel {
        write_atomic(&a.out.join("kernel.csv"), k.to_csv().as_bytes())?;
    }
    println!(
        "variant {} ({:.1}s), outputs in {}",
        cfg.label(),
        out.report.wall_clock_secs,
        a.out.display()
    );
    if let (Some(b), Some(f)) = (out.report.baseline, out.report.final_metrics) {
        println!(
            "PSNR {:.6} -> {:.6} dB, SSIM {:.6} -> {:.6}",
            b.psnr, f.psnr, b.ssim, f.ssim
        );
        println!("ΔPSNR={:+.2} dB ΔSSIM={:+.4}", f.psnr - b.psnr, f.ssim - b.ssim);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> std::result::Result<(), Failure> {
    let base = base_config(&a.cfg)?;
    let mut m = matrix(&a.cfg)?;
    if !a.variant.is_empty() {
        m = m.select(&a.variant)?;
    }
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let schedule = if a.serial {
        Schedule::Serial
    } else {
        Schedule::Parallel
    };
    let table = eval_sweep(&manifest, &ckpt, &base, &m, a.seed, schedule)?;
    table.write(&a.out)?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> std::result::Result<(), Failure> {
    let tables = a
        .inputs
        .iter()
        .map(ResultsTable::load)
        .collect::<Result<Vec<_>>>()?;
    let c = compare(&tables, &a.baseline, a.tolerance)?;
    create_dir(&a.out)?;
    write_atomic(&a.out.join("comparison.md"), c.markdown.as_bytes())?;
    print!("{}", c.markdown);
    if c.regressions.is_empty() {
        Ok(())
    } else {
        Err(Failure::Regression(c.regressions.join(", ")))
    }
}
