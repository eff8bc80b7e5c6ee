//! `mxt`: train, run and evaluate the hybrid inpainting network.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mxt_core::bench::{doubling_ratios, run_scan_bench, table_header, table_row, BenchConfig};
use mxt_core::checkpoint::{load_model, Checkpoint};
use mxt_core::config::{parse_kv, render_kv, KvMap};
use mxt_core::data::{
    generate_irregular_mask, read_image, read_mask, sub_seed, synthetic_dataset, write_image,
    write_mask, MaskBucket, MaskSpec,
};
use mxt_core::gradsuite::{all_suites, run_suite, CORRUPTED_FIXTURE};
use mxt_core::metrics::{evaluate_directories, evaluate_model, MetricReport};
use mxt_core::model::{composite, tiled_inference};
use mxt_core::tensor::TensorError;
use mxt_core::train::{default_checkpoint_path, RunConfig, TrainState};

/// Environment variable that replaces the configured seed.
const SEED_ENV: &str = "MXT_SEED";

#[derive(Parser)]
#[command(
    name = "mxt",
    version,
    about = "Hybrid Mamba/attention image inpainting"
)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Set one config key; applied after the config file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic images or a directory of PPM files.
    Train(TrainArgs),
    /// Inpaint one image.
    Infer(InferArgs),
    /// PSNR / SSIM / L1 per mask bucket.
    Eval(EvalArgs),
    /// Finite-difference gradient checks of every block and loss term.
    Gradcheck(GradcheckArgs),
    /// Time sequential vs chunked selective scans.
    ScanBench(ScanBenchArgs),
    /// Write irregular masks for one hole-ratio bucket.
    MaskGen(MaskGenArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Training images (`*.ppm`); synthetic images when omitted.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Where checkpoints are written.
    #[arg(long, default_value_os_t = default_checkpoint_path())]
    checkpoint: PathBuf,
    /// Continue from the state stored in `--checkpoint`.
    #[arg(long)]
    resume: bool,
    /// Also append log lines to this file.
    #[arg(long, value_name = "FILE")]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input image (PPM).
    #[arg(long)]
    image: PathBuf,
    /// Hole mask (PGM, white = hole).
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run on overlapping tiles of this size (multiple of 8).
    #[arg(long)]
    tile: Option<usize>,
    #[arg(long, default_value_t = 16)]
    overlap: usize,
    /// Write the raw network output instead of compositing it with the input.
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions to score (`*.ppm`, same names as in `--gt`).
    #[arg(long, requires = "gt", conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Masks (`<name>.pgm`) that assign each image to a bucket.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Score a trained model on synthetic images instead.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 24)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Score the raw output instead of the composited one.
    #[arg(long)]
    raw: bool,
    /// Emit key=value records instead of the table.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all` or one suite name.
    #[arg(long, default_value = "all")]
    scope: String,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScanBenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096])]
    lens: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 16])]
    states: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [64])]
    chunks: Vec<usize>,
    #[arg(long, default_value_t = 9)]
    repeats: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct MaskGenArgs {
    /// low | mid | high
    #[arg(long)]
    bucket: String,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// `S` for S×S or `HxW`.
    #[arg(long, default_value = "256")]
    size: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

/// Bad invocation: exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

/// A check that ran to completion and failed: exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct CheckFailed(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<CheckFailed>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<mxt_core::Error>() {
            return match e {
                mxt_core::Error::Config(_) => 1,
                e if e.is_numeric() => 3,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<TensorError>() {
            return if matches!(e, TensorError::Numeric(_)) {
                3
            } else {
                2
            };
        }
    }
    2
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{SEED_ENV}: expected an integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Flag > environment > `fallback`.
fn pick_seed(flag: Option<u64>, fallback: u64) -> anyhow::Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(fallback),
    })
}

fn parse_set(entries: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    entries
        .iter()
        .map(|e| {
            let (k, v) = e
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{e}`")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Defaults < config file < MXT_SEED < `--set` < dedicated flags.
fn effective_config(cli: &Cli, flags: &[(&str, String)]) -> anyhow::Result<(RunConfig, KvMap)> {
    let mut explicit = KvMap::new();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        explicit.extend(parse_kv(&text).with_context(|| format!("in {}", path.display()))?);
    }
    if let Some(seed) = env_seed()? {
        explicit.insert("train.seed".into(), seed.to_string());
        explicit.insert("model.seed".into(), seed.to_string());
    }
    explicit.extend(parse_set(&cli.set)?);
    for (k, v) in flags {
        explicit.insert(k.to_string(), v.clone());
    }
    let mut cfg = RunConfig::default();
    // applied one key at a time so the error names the offending key
    for (k, v) in &explicit {
        cfg.set_kv(k, v)?;
    }
    cfg.validate()?;
    Ok((cfg, explicit))
}

fn echo_config(cfg: &RunConfig) {
    eprintln!("effective config:");
    for line in render_kv(&cfg.to_kv()).lines() {
        eprintln!("  {line}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Infer(a) => cmd_infer(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ScanBench(a) => cmd_scan_bench(a),
        Command::MaskGen(a) => cmd_mask_gen(a),
    }
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> anyhow::Result<()> {
    let mut flags: Vec<(&str, String)> = Vec::new();
    let mut flag = |k, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k, v));
        }
    };
    flag("train.iterations", a.iterations.map(|v| v.to_string()));
    flag("train.seed", a.seed.map(|v| v.to_string()));
    flag("optim.lr", a.lr.map(|v| v.to_string()));
    flag("train.batch_size", a.batch_size.map(|v| v.to_string()));
    flag(
        "train.checkpoint_every",
        a.checkpoint_every.map(|v| v.to_string()),
    );
    flag(
        "data.dir",
        a.data_dir.as_ref().map(|v| v.display().to_string()),
    );
    let (cfg, explicit) = effective_config(cli, &flags)?;

    let mut state = if a.resume {
        let ck = Checkpoint::load(&a.checkpoint)?;
        let mut st = TrainState::from_checkpoint(&ck)?;
        // run-control keys may change on resume; everything else comes from the checkpoint
        let stored = st.config.to_kv();
        for (k, v) in &explicit {
            if matches!(
                k.as_str(),
                "train.iterations" | "train.checkpoint_every" | "train.log_every" | "data.dir"
            ) {
                st.config.set_kv(k, v)?;
            } else if stored.get(k) != Some(v) {
                log::warn!(
                    "checkpoint config overrides {k}: using {} (requested {v})",
                    stored.get(k).map(String::as_str).unwrap_or("<unset>")
                );
            }
        }
        eprintln!(
            "resuming from {} at step {}",
            a.checkpoint.display(),
            st.step
        );
        st
    } else {
        TrainState::new(cfg)?
    };
    echo_config(&state.config);

    let samples = state.dataset()?;
    let mut log_file = match &a.log {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?,
        ),
        None => None,
    };
    let mut io_err = None;
    let started = Instant::now();
    let result = state.run(&samples, Some(&a.checkpoint), |r| {
        let line = r.log_line();
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                io_err.get_or_insert(e);
            }
        }
    });
    if let Err(e) = result {
        if a.checkpoint.exists() {
            eprintln!("last good checkpoint kept at {}", a.checkpoint.display());
        }
        return Err(e.into());
    }
    if let Some(e) = io_err {
        return Err(anyhow::Error::from(e).context("writing training log"));
    }
    println!(
        "trained to step {} in {:.1} s; checkpoint {}",
        state.step,
        started.elapsed().as_secs_f64(),
        a.checkpoint.display()
    );
    Ok(())
}

/// The model config the user asked for, if any `model.*` key was given.
fn requested_model(cli: &Cli) -> anyhow::Result<Option<mxt_core::model::ModelConfig>> {
    let (cfg, explicit) = effective_config(cli, &[])?;
    Ok(explicit
        .keys()
        .any(|k| k.starts_with("model."))
        .then_some(cfg.model))
}

fn cmd_infer(cli: &Cli, a: &InferArgs) -> anyhow::Result<()> {
    if let Some(tile) = a.tile {
        if tile == 0 || tile % 8 != 0 || 2 * a.overlap >= tile {
            bail!(UsageError(format!(
                "--tile must be a positive multiple of 8 with --overlap below tile/2 (got {tile}, {})",
                a.overlap
            )));
        }
    }
    let requested = requested_model(cli)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, _) = load_model(&ck, requested.as_ref())?;
    let (effective, _) = effective_config(cli, &[])?;
    echo_config(&RunConfig {
        model: model.config.clone(),
        ..effective
    });

    let image = read_image(&a.image)?;
    let mask = read_mask(&a.mask)?;
    let (h, w) = (image.dim(1), image.dim(2));
    if mask.shape() != [1, h, w] {
        return Err(mxt_core::Error::Data(format!(
            "mask {} is {}x{} but image {} is {h}x{w}",
            a.mask.display(),
            mask.dim(1),
            mask.dim(2),
            a.image.display()
        ))
        .into());
    }
    let masked = image.mul(&mask.neg()?.shift(1.0)?)?;
    let started = Instant::now();
    let out = match a.tile {
        Some(tile) => tiled_inference(&model, &masked, &mask, tile, a.overlap)?,
        None => model
            .predict(
                &masked.reshape(&[1, 3, h, w])?,
                &mask.reshape(&[1, 1, h, w])?,
            )?
            .reshape(&[3, h, w])?,
    };
    let elapsed = started.elapsed();
    let out = if a.raw {
        out
    } else {
        composite(&out, &image, &mask)?
    };
    write_image(&a.out, &out)?;
    println!(
        "inpainted {h}x{w}{} in {:.1} ms -> {}",
        a.tile
            .map(|t| format!(" (tiles of {t})"))
            .unwrap_or_default(),
        elapsed.as_secs_f64() * 1e3,
        a.out.display()
    );
    Ok(())
}

fn print_report(report: &MetricReport, kv: bool) {
    if kv {
        print!("{}", report.render_kv());
    } else {
        print!("{}", report.render_table());
    }
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> anyhow::Result<()> {
    let report = match (&a.pred, &a.gt, &a.checkpoint) {
        (Some(pred), Some(gt), None) => evaluate_directories(pred, gt, a.masks.as_deref())?,
        (None, None, Some(path)) => {
            let requested = requested_model(cli)?;
            let (model, _) = load_model(&Checkpoint::load(path)?, requested.as_ref())?;
            let (effective, _) = effective_config(cli, &[])?;
            echo_config(&RunConfig {
                model: model.config.clone(),
                ..effective
            });
            let seed = pick_seed(a.seed, 0)?;
            let samples = synthetic_dataset(a.count, a.size, a.size, seed)?;
            evaluate_model(&model, &samples, !a.raw)?
        }
        _ => bail!(UsageError(
            "eval needs either --pred and --gt, or --checkpoint".into()
        )),
    };
    print_report(&report, a.kv);
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> anyhow::Result<()> {
    if !mxt_core::tensor::WIDEST {
        return Err(usage(
            "gradcheck needs the f64 build; rebuild without the `f32` feature",
        ));
    }
    let names: Vec<&str> = if a.scope == "all" {
        all_suites().collect()
    } else if all_suites().any(|n| n == a.scope) || a.scope == CORRUPTED_FIXTURE {
        vec![a.scope.as_str()]
    } else {
        let known: Vec<&str> = all_suites().collect();
        return Err(usage(format!(
            "unknown gradcheck scope `{}`; expected all or one of: {}",
            a.scope,
            known.join(", ")
        )));
    };
    let seed = pick_seed(a.seed, 0)?;
    eprintln!("gradcheck scope={} seed={seed}", a.scope);
    let started = Instant::now();
    let mut failed = Vec::new();
    for name in names {
        let r = run_suite(name, seed)?;
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{:<18} worst_rel_err={:.3e} inputs={:<3} {verdict}",
            r.name, r.worst_rel_err, r.checked_inputs
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    println!("elapsed {:.1} s", started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        return Err(
            CheckFailed(format!("gradient check failed for: {}", failed.join(", "))).into(),
        );
    }
    Ok(())
}

fn cmd_scan_bench(a: &ScanBenchArgs) -> anyhow::Result<()> {
    let cfg = BenchConfig {
        lens: a.lens.clone(),
        states: a.states.clone(),
        chunks: a.chunks.clone(),
        repeats: a.repeats,
        channels: a.channels,
        seed: pick_seed(a.seed, 0)?,
    };
    eprintln!(
        "scan-bench lens={:?} states={:?} chunks={:?} repeats={} channels={} seed={}",
        cfg.lens, cfg.states, cfg.chunks, cfg.repeats, cfg.channels, cfg.seed
    );
    println!("{}", table_header());
    let rows = run_scan_bench(&cfg, |r| println!("{}", table_row(r)))?;
    for (n, len, ratio) in doubling_ratios(&rows) {
        println!("sequential N={n}: t(L={})/t(L={len}) = {ratio:.3}", 2 * len);
    }
    Ok(())
}

fn parse_size(s: &str) -> anyhow::Result<(usize, usize)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("--size: expected S or HxW, got `{s}`")))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let v = parse(s)?;
            Ok((v, v))
        }
    }
}

fn bucket_index(b: MaskBucket) -> u64 {
    MaskBucket::ALL.iter().position(|x| *x == b).unwrap_or(0) as u64
}

fn cmd_mask_gen(a: &MaskGenArgs) -> anyhow::Result<()> {
    let bucket = MaskBucket::parse(&a.bucket).ok_or_else(|| {
        usage(format!(
            "unknown bucket `{}`; expected low, mid or high",
            a.bucket
        ))
    })?;
    let (h, w) = parse_size(&a.size)?;
    let seed = pick_seed(a.seed, 0)?;
    eprintln!(
        "mask-gen bucket={} count={} size={h}x{w} seed={seed}",
        bucket.name(),
        a.count
    );
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut manifest = String::from("# file ratio attempts fallback\n");
    let mut fallbacks = 0;
    for i in 0..a.count {
        let spec = MaskSpec::new(bucket, sub_seed(seed, &[bucket_index(bucket), i as u64]));
        let g = generate_irregular_mask(&spec, h, w)?;
        let name = format!("mask_{i:04}.pgm");
        write_mask(&a.out_dir.join(&name), &g.mask)?;
        if g.fallback_warning {
            fallbacks += 1;
            log::warn!(
                "{name}: ratio {:.6} outside {} after {} attempts",
                g.ratio,
                bucket.label(),
                g.attempts
            );
        }
        manifest.push_str(&format!(
            "{name} {:.6} {} {}\n",
            g.ratio, g.attempts, g.fallback_warning
        ));
    }
    let manifest_path = a.out_dir.join("manifest.txt");
    fs::write(&manifest_path, manifest)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    println!(
        "wrote {} masks ({} fallbacks) to {}",
        a.count,
        fallbacks,
        a.out_dir.display()
    );
    Ok(())
}
