//! `deband`: synthesise data, train, restore and score.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deband_core::banddata::{
    gen_gradient_corpus, load_dataset, load_image, make_dataset, save_image, save_mask, write_dataset, Split,
};
use deband_core::checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
use deband_core::exec::{map_ordered, ExecMode};
use deband_core::metrics::{evaluate_with_external, EvalItem, MetricReport};
use deband_core::pipeline::restore;
use deband_core::trainer::train;
use deband_core::{Error, ModelState, Result, Variant};
use serde_json::json;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "deband", version, about = "Wavelet state-space debanding toolkit")]
struct Cli {
    /// Flat TOML file of settings; flags win over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace the contents of a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any setting, e.g. `--set learning_rate=5e-4` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic banding dataset.
    Synth(SynthArgs),
    /// Train one variant on a dataset directory.
    Train(TrainArgs),
    /// Restore an image or a directory of images.
    Infer(InferArgs),
    /// Score checkpoints on the test split.
    Eval(EvalArgs),
    /// Describe a checkpoint or the configured network.
    Info(InfoArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    /// Bit depths, assigned to source images in turn.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// `VARIANT=CHECKPOINT`, repeatable; one row group per entry.
    #[arg(long = "run", value_name = "VARIANT=CHECKPOINT", required = true)]
    runs: Vec<String>,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string();
            eprintln!("E_ARG: {}", first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut ov = Overrides::default();
    ov.set("seed", cli.seed);
    for s in &cli.sets {
        ov.parse_assignment(s)?;
    }
    match cli.command {
        Command::Synth(a) => {
            ov.set("images", a.images);
            ov.set("image_size", a.image_size);
            ov.set("bits", a.bits);
            ov.set("patch_size", a.patch_size);
            ov.set("stride", a.stride);
            let cfg = RunConfig::resolve(cli.config.as_deref(), ov)?;
            let out = prepare_out(cli.out, cli.force)?;
            cmd_synth(&cfg, &out)
        }
        Command::Train(a) => {
            ov.set("variant", a.variant);
            ov.set("steps", a.steps);
            ov.set("batch", a.batch);
            ov.set("learning_rate", a.learning_rate);
            ov.set("eval_every", a.eval_every);
            let cfg = RunConfig::resolve(cli.config.as_deref(), ov)?;
            let out = prepare_out(cli.out, cli.force)?;
            cmd_train(&cfg, &a.data, &out)
        }
        Command::Infer(a) => {
            ov.set("variant", a.variant);
            let cfg = RunConfig::resolve(cli.config.as_deref(), ov)?;
            let out = prepare_out(cli.out, cli.force)?;
            cmd_infer(&cfg, &a.checkpoint, &a.input, &out)
        }
        Command::Eval(a) => {
            let cfg = RunConfig::resolve(cli.config.as_deref(), ov)?;
            let runs = a.runs.iter().map(|r| parse_run(r)).collect::<Result<Vec<_>>>()?;
            let out = prepare_out(cli.out, cli.force)?;
            cmd_eval(&cfg, &a.data, &runs, &out)
        }
        Command::Info(a) => {
            let cfg = RunConfig::resolve(cli.config.as_deref(), ov)?;
            cmd_info(&cfg, a.checkpoint.as_deref())
        }
    }
}

fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Creates the output directory, refusing to reuse a non-empty one unless
/// `force` is set, in which case its contents are removed first.
fn prepare_out(out: Option<PathBuf>, force: bool) -> Result<PathBuf> {
    let Some(out) = out else {
        return arg("--out is required");
    };
    if out.is_dir() && fs::read_dir(&out).map_err(io(&out))?.next().is_some() {
        if !force {
            return arg(format!("{} is not empty (use --force to replace it)", out.display()));
        }
        fs::remove_dir_all(&out).map_err(io(&out))?;
    }
    fs::create_dir_all(&out).map_err(io(&out))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let corpus = gen_gradient_corpus(cfg.images, cfg.image_size, cfg.seed)?;
    let ds = make_dataset(&corpus, &cfg.bits, cfg.patch_size, cfg.stride, cfg.seed)?;
    write_dataset(&ds, out)?;
    cfg.echo(out)?;
    log::info!(
        "wrote {} pairs to {} (train {}, val {}, test {})",
        ds.pairs.len(),
        out.display(),
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test)
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data, cfg.seed)?;
    let ckpt = out.join("model.ckpt");
    let tc = cfg.train_config(Some(ckpt.clone()));
    tc.validate()?;
    let model = ModelState::init(cfg.net_config(), cfg.seed)?;
    cfg.echo(out)?;
    log::info!(
        "training {} for {} steps on {} pairs ({} parameters)",
        tc.variant,
        tc.steps,
        ds.count(Split::Train),
        model.parameter_count()
    );
    let (model, log) = train(model, &ds, &tc)?;
    save_checkpoint(&model, &ckpt)?;
    write_text(&out.join("log.jsonl"), &log.to_jsonl())?;
    let timing = json!({
        "wall_clock_secs": log.wall_clock_secs,
        "steps": tc.steps,
        "batch": tc.batch,
        "threads": std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    });
    write_text(&out.join("timing.json"), &format!("{timing:#}\n"))?;
    log::info!("finished in {:.1} s", log.wall_clock_secs);
    Ok(())
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        if !input.exists() {
            return Err(Error::Io {
                path: input.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            });
        }
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(io(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_infer(cfg: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let state = load_checkpoint(checkpoint)?;
    let variant = cfg.variant;
    deband_core::pipeline::check_compatible(&state, variant)?;
    let files = image_inputs(input)?;
    cfg.echo(out)?;
    let results = map_ordered(&files, ExecMode::default(), |path| {
        let img = load_image(path)?;
        let r = restore(&img, &state, variant)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        save_image(&r.restored, out.join(format!("{stem}.png")))?;
        if let Some(mask) = &r.mask {
            save_mask(mask, out.join(format!("{stem}_mask.png")))?;
        }
        Ok::<(), Error>(())
    });
    let mut written = 0;
    for (path, res) in files.iter().zip(results) {
        match res {
            Ok(()) => written += 1,
            Err(e) => log::warn!("skipped {}: {e}", path.display()),
        }
    }
    if written == 0 {
        return arg(format!("no readable images in {}", input.display()));
    }
    log::info!("restored {written} of {} images with {variant}", files.len());
    Ok(())
}

fn parse_run(spec: &str) -> Result<(Variant, PathBuf)> {
    match spec.split_once('=') {
        Some((v, path)) if !path.is_empty() => Ok((v.trim().parse()?, PathBuf::from(path))),
        _ => arg(format!("expected VARIANT=CHECKPOINT, got {spec:?}")),
    }
}

fn cmd_eval(cfg: &RunConfig, data: &Path, runs: &[(Variant, PathBuf)], out: &Path) -> Result<()> {
    let ds = load_dataset(data, cfg.seed)?;
    let test = ds.pairs_in(Split::Test);
    if test.is_empty() {
        return arg(format!("{} has an empty test split", data.display()));
    }
    for (i, (v, _)) in runs.iter().enumerate() {
        if runs[..i].iter().any(|(w, _)| w == v) {
            return arg(format!("variant {v} listed twice"));
        }
    }
    let external = cfg.external_metrics()?;
    cfg.echo(out)?;

    let baseline: Vec<EvalItem> = test
        .iter()
        .map(|p| EvalItem {
            id: p.id.clone(),
            pristine: p.pristine.clone(),
            banded: p.banded.clone(),
            restored: p.banded.clone(),
            mask: None,
        })
        .collect();
    let mut report = MetricReport::default();
    report.merge(evaluate_with_external(&baseline, "banded", &external)?);
    for (variant, path) in runs {
        let state = load_checkpoint(path)?;
        deband_core::pipeline::check_compatible(&state, *variant)?;
        let restored = map_ordered(&test, ExecMode::default(), |p| restore(&p.banded, &state, *variant));
        let mut items = Vec::with_capacity(test.len());
        for (p, r) in test.iter().zip(restored) {
            let r = r?;
            items.push(EvalItem {
                id: p.id.clone(),
                pristine: p.pristine.clone(),
                banded: p.banded.clone(),
                restored: r.restored,
                mask: r.mask,
            });
        }
        let part = evaluate_with_external(&items, variant.as_str(), &external)?;
        log::info!(
            "{variant}: mean dPSNR {:+.3} dB, mean BEI {:.5} -> {:.5}",
            part.mean(variant.as_str(), "delta_psnr").unwrap_or(f64::NAN),
            part.mean(variant.as_str(), "bei_banded").unwrap_or(f64::NAN),
            part.mean(variant.as_str(), "bei_restored").unwrap_or(f64::NAN)
        );
        report.merge(part);
    }
    for e in &report.errors {
        log::warn!("{} ({}): {}", e.image_id, e.variant, e.message);
    }
    write_text(&out.join("report.csv"), &report.to_csv())?;
    write_text(&out.join("summary.json"), &report.summary_json())?;
    Ok(())
}

fn cmd_info(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let info = match checkpoint {
        Some(path) => {
            let state = load_checkpoint(path)?;
            json!({
                "checkpoint": path.display().to_string(),
                "checkpoint_version": CHECKPOINT_VERSION,
                "step": state.step,
                "parameter_count": state.parameter_count(),
                "config": state.config,
            })
        }
        None => {
            let net = cfg.net_config();
            net.validate()?;
            json!({ "parameter_count": net.parameter_count(), "config": net })
        }
    };
    // A closed pipe (`deband info | head`) is not an error worth reporting.
    let _ = writeln!(std::io::stdout(), "{info:#}");
    Ok(())
}
