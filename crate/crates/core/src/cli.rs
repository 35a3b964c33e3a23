//! The `spdr` command line: data synthesis, degradation, cropping,
//! registration, mask generation, two-stage training, inference,
//! evaluation, the lambda sweep, gradient self-checks, and an end-to-end
//! demo pipeline.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    crop_patches, degrade, register_patch, write_manifest, DegradationConfig, GrayImage,
    PairEntry, PgmDepth, RawPgm, SplitSpec,
};
use crate::error::{io_err, Error, Result};
use crate::gradcheck;
use crate::losses::FeatureExtractor;
use crate::metrics;
use crate::restorer::{load_student, load_teacher, save_student, save_teacher};
use crate::rng;
use crate::semantic::MaskProvider;
use crate::train::{
    self, default_sweep_grid, input_baseline, lambda_sweep, load_manifest_items, pretrain_teacher,
    sweep_csv, train_student, validate_student, validate_teacher, TrainConfig, TrainItem,
};

#[derive(Parser)]
#[command(
    name = "spdr",
    about = "Semantic-prior distillation toolkit for restoring degraded grayscale scans",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scene/label pairs
    Synth(SynthArgs),
    /// Apply blur/speckle/Gaussian degradation to images
    Degrade(DegradeArgs),
    /// Cut images into non-overlapping patches
    Crop(CropArgs),
    /// Register a moving patch against a fixed patch
    Register(RegisterArgs),
    /// Produce segmentation masks for reference images
    Masks(MasksArgs),
    /// Stage 1: pretrain the mask-guided teacher
    Pretrain(PretrainArgs),
    /// Stage 2: train the student against a frozen teacher
    Distill(DistillArgs),
    /// Restore an image with a student checkpoint
    Infer(InferArgs),
    /// PSNR/SSIM over matching files in two directories
    Eval(EvalArgs),
    /// Grid sweep over the distillation/consistency weights
    Sweep(SweepArgs),
    /// Finite-difference verification of every differentiable op
    Gradcheck(GradcheckArgs),
    /// Full desk-scale pipeline: synth, train both stages, evaluate
    Demo(DemoArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of scenes
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradeArgs {
    /// Input image or directory of .pgm files
    #[arg(long = "in")]
    input: PathBuf,
    /// Output image or directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "gauss-var", default_value_t = 0.01)]
    gauss_var: f64,
    #[arg(long = "speckle-var", default_value_t = 0.01)]
    speckle_var: f64,
    #[arg(long = "blur-len", default_value_t = 10)]
    blur_len: usize,
    #[arg(long = "blur-angle", default_value_t = 5.0)]
    blur_angle: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CropArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 192)]
    size: usize,
    #[arg(long, default_value_t = 192)]
    step: usize,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    fixed: PathBuf,
    /// Search radius in pixels
    #[arg(long)]
    radius: usize,
    /// Optional path for the aligned image
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MasksArgs {
    /// Reference image or directory
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    k: usize,
    /// `synthetic` or `dir:<path>`
    #[arg(long, default_value = "synthetic")]
    mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Paired-dataset manifest (degraded reference [mask] per line)
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// full | no_scm | no_skd | cat_fusion | spi_no_dropout
    #[arg(long)]
    ablation: Option<String>,
    /// Mask provider: `synthetic` or `dir:<path>`
    #[arg(long, default_value = "synthetic")]
    masks: String,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// key=value config file merged before CLI overrides
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Frozen teacher checkpoint from the pretrain stage
    #[arg(long)]
    teacher: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Student checkpoint (.spdc)
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Optional CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    teacher: PathBuf,
    /// Comma-separated grid, e.g. `0.0001,0.001,0.01`
    #[arg(long = "lambda1-grid")]
    lambda1_grid: Option<String>,
    #[arg(long = "lambda2-grid")]
    lambda2_grid: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    instances: usize,
}

#[derive(Args)]
struct DemoArgs {
    /// Working directory for all artifacts
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite a non-empty working directory
    #[arg(long)]
    force: bool,
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 6)]
    epochs1: usize,
    #[arg(long, default_value_t = 6)]
    epochs2: usize,
}

/// Entry point: 0 on success, 1 on usage errors, 2 on data errors.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successful exits
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Degrade(a) => cmd_degrade(a),
        Command::Crop(a) => cmd_crop(a),
        Command::Register(a) => cmd_register(a),
        Command::Masks(a) => cmd_masks(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Demo(a) => cmd_demo(a),
    }
}

fn print_config(command: &str, lines: &[(&str, String)]) {
    println!("[{command}] resolved configuration:");
    for (key, value) in lines {
        println!("  {key} = {value}");
    }
}

fn parse_provider(mode: &str, k: usize) -> Result<MaskProvider> {
    if mode == "synthetic" {
        Ok(MaskProvider::synthetic(k))
    } else if let Some(dir) = mode.strip_prefix("dir:") {
        Ok(MaskProvider::from_dir(dir, k))
    } else {
        Err(Error::Config { detail: format!("mask mode must be `synthetic` or `dir:<path>`, got `{mode}`") })
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    print_config(
        "synth",
        &[
            ("n", a.n.to_string()),
            ("height", a.height.to_string()),
            ("width", a.width.to_string()),
            ("seed", a.seed.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    ensure_dir(&a.out)?;
    for i in 0..a.n {
        let (img, labels) =
            crate::data::synth_scene(rng::mix_n(a.seed, "scene", &[i as u64]), a.height, a.width);
        img.write_pgm(&a.out.join(format!("clean_{i:04}.pgm")), PgmDepth::Sixteen)?;
        labels.write_pgm(&a.out.join(format!("labels_{i:04}.pgm")))?;
    }
    println!("wrote {} scene/label pairs to {}", a.n, a.out.display());
    Ok(())
}

fn cmd_degrade(a: DegradeArgs) -> Result<()> {
    print_config(
        "degrade",
        &[
            ("in", a.input.display().to_string()),
            ("out", a.out.display().to_string()),
            ("gauss_var", a.gauss_var.to_string()),
            ("speckle_var", a.speckle_var.to_string()),
            ("blur_len", a.blur_len.to_string()),
            ("blur_angle", a.blur_angle.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let base = DegradationConfig {
        gaussian_var: a.gauss_var,
        speckle_var: a.speckle_var,
        blur_length: a.blur_len,
        blur_angle_deg: a.blur_angle,
        seed: a.seed,
    };
    if a.input.is_dir() {
        ensure_dir(&a.out)?;
        let files = pgm_files(&a.input)?;
        if files.is_empty() {
            return Err(Error::EmptyDataset { what: "input directory" });
        }
        for path in files {
            let img = GrayImage::read_pgm(&path)?;
            let cfg = DegradationConfig { seed: rng::mix(a.seed, &stem(&path)), ..base.clone() };
            let depth = output_depth(&path)?;
            degrade(&img, &cfg).write_pgm(&a.out.join(path.file_name().unwrap()), depth)?;
        }
    } else {
        let img = GrayImage::read_pgm(&a.input)?;
        if let Some(parent) = a.out.parent() {
            if !parent.as_os_str().is_empty() {
                ensure_dir(parent)?;
            }
        }
        degrade(&img, &base).write_pgm(&a.out, output_depth(&a.input)?)?;
    }
    println!("degraded images written to {}", a.out.display());
    Ok(())
}

/// Matches the output sample depth to the input file's.
fn output_depth(input: &Path) -> Result<PgmDepth> {
    let raw = RawPgm::read(input)?;
    Ok(if raw.max_value < 256 { PgmDepth::Eight } else { PgmDepth::Sixteen })
}

fn cmd_crop(a: CropArgs) -> Result<()> {
    print_config(
        "crop",
        &[
            ("in", a.input.display().to_string()),
            ("out", a.out.display().to_string()),
            ("size", a.size.to_string()),
            ("step", a.step.to_string()),
        ],
    );
    let img = GrayImage::read_pgm(&a.input)?;
    let depth = output_depth(&a.input)?;
    let grid = crop_patches(&img, a.size, a.step)?;
    ensure_dir(&a.out)?;
    let name = stem(&a.input);
    for patch in &grid.patches {
        patch.image.write_pgm(
            &a.out.join(format!("{name}_r{:04}_c{:04}.pgm", patch.row, patch.col)),
            depth,
        )?;
    }
    println!("wrote {} patches to {}", grid.patches.len(), a.out.display());
    Ok(())
}

fn cmd_register(a: RegisterArgs) -> Result<()> {
    print_config(
        "register",
        &[
            ("moving", a.moving.display().to_string()),
            ("fixed", a.fixed.display().to_string()),
            ("radius", a.radius.to_string()),
        ],
    );
    let moving = GrayImage::read_pgm(&a.moving)?;
    let fixed = GrayImage::read_pgm(&a.fixed)?;
    let reg = register_patch(&moving, &fixed, a.radius)?;
    println!("shift_row={} shift_col={} score={:.6}", reg.shift_row, reg.shift_col, reg.score);
    if let Some(out) = a.out {
        reg.aligned.write_pgm(&out, output_depth(&a.moving)?)?;
        println!("aligned image written to {}", out.display());
    }
    Ok(())
}

fn cmd_masks(a: MasksArgs) -> Result<()> {
    print_config(
        "masks",
        &[
            ("in", a.input.display().to_string()),
            ("out", a.out.display().to_string()),
            ("k", a.k.to_string()),
            ("mode", a.mode.clone()),
            ("seed", a.seed.to_string()),
        ],
    );
    let provider = parse_provider(&a.mode, a.k)?;
    let inputs = if a.input.is_dir() { pgm_files(&a.input)? } else { vec![a.input.clone()] };
    if inputs.is_empty() {
        return Err(Error::EmptyDataset { what: "input directory" });
    }
    ensure_dir(&a.out)?;
    for path in inputs {
        let img = GrayImage::read_pgm(&path)?;
        let id = stem(&path);
        let mask = provider.provide(&id, &img)?;
        mask.write_pgm(&a.out.join(format!("{id}.pgm")))?;
    }
    println!("masks written to {}", a.out.display());
    Ok(())
}

/// defaults -> config file -> explicit CLI flags.
fn build_train_config(flags: &TrainFlags, stage1: bool) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::desk(0);
    if let Some(path) = &flags.config {
        cfg.merge_file(path)?;
    }
    if let Some(epochs) = flags.epochs {
        if stage1 {
            cfg.epochs_stage1 = epochs;
        } else {
            cfg.epochs_stage2 = epochs;
        }
    }
    if let Some(lr) = flags.lr {
        cfg.learning_rate = lr;
    }
    if let Some(batch) = flags.batch {
        cfg.batch_size = batch;
    }
    if let Some(l1) = flags.lambda1 {
        cfg.lambda1 = l1;
    }
    if let Some(l2) = flags.lambda2 {
        cfg.lambda2 = l2;
    }
    if let Some(ablation) = &flags.ablation {
        cfg.ablation = ablation.parse()?;
    }
    if let Some(k) = flags.k {
        cfg.k_regions = k;
    }
    if let Some(p) = flags.dropout {
        cfg.dropout_p = p;
    }
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

type SplitItems = (Vec<TrainItem>, Vec<TrainItem>, Vec<TrainItem>, MaskProvider);

fn load_split_items(flags: &TrainFlags, cfg: &TrainConfig) -> Result<SplitItems> {
    let provider = parse_provider(&flags.masks, cfg.k_regions)?;
    let items = load_manifest_items(&flags.data, &provider)?;
    let spec = SplitSpec::default().with_seed(rng::mix(cfg.seed, "dataset-split"));
    let (train, val, test) = crate::data::split_dataset(items, &spec)?;
    Ok((train, val, test, provider))
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = build_train_config(&a.flags, true)?;
    print_config(
        "pretrain",
        &[
            ("data", a.flags.data.display().to_string()),
            ("out", a.flags.out.display().to_string()),
            ("masks", a.flags.masks.clone()),
            ("train", format!("\n{}", cfg.resolved())),
        ],
    );
    let (train, val, _test, _provider) = load_split_items(&a.flags, &cfg)?;
    ensure_dir(&a.flags.out)?;
    let (teacher, mut report) = pretrain_teacher(&train, &val, &cfg)?;
    let ckpt = a.flags.out.join("teacher.spdc");
    save_teacher(&ckpt, &teacher)?;
    report.checkpoint = Some(ckpt.clone());
    report.write_csv(&a.flags.out.join("train_teacher.csv"))?;
    let (psnr, ssim) = validate_teacher(&teacher, &val, cfg.batch_size)?;
    println!("teacher checkpoint: {}", ckpt.display());
    println!("final validation: psnr {psnr:.3} dB, ssim {ssim:.4}");
    Ok(())
}

fn cmd_distill(a: DistillArgs) -> Result<()> {
    let cfg = build_train_config(&a.flags, false)?;
    print_config(
        "distill",
        &[
            ("data", a.flags.data.display().to_string()),
            ("teacher", a.teacher.display().to_string()),
            ("out", a.flags.out.display().to_string()),
            ("masks", a.flags.masks.clone()),
            ("train", format!("\n{}", cfg.resolved())),
        ],
    );
    let (train, val, _test, provider) = load_split_items(&a.flags, &cfg)?;
    let mut teacher = load_teacher(&a.teacher)?;
    teacher.freeze();
    ensure_dir(&a.flags.out)?;
    let phi = FeatureExtractor::fixed();
    let (student, mut report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg)?;
    let ckpt = a.flags.out.join("student.spdc");
    save_student(&ckpt, &student)?;
    report.checkpoint = Some(ckpt.clone());
    report.write_csv(&a.flags.out.join("train_student.csv"))?;
    let (psnr, ssim) = validate_student(&student, &val, cfg.batch_size)?;
    println!("student checkpoint: {}", ckpt.display());
    println!("final validation: psnr {psnr:.3} dB, ssim {ssim:.4}");
    Ok(())
}

/// Shared by the `infer` command and the demo's purity step: touches only
/// the student checkpoint and the input image.
fn run_inference(model: &Path, input: &Path, output: &Path) -> Result<()> {
    let student = load_student(model)?;
    let img = GrayImage::read_pgm(input)?;
    let depth = output_depth(input)?;
    let restored = student.restore(&img.to_tensor())?;
    let restored = GrayImage::from_tensor(&restored, 0).clamp01();
    if let Some(parent) = output.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    restored.write_pgm(output, depth)
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    print_config(
        "infer",
        &[
            ("model", a.model.display().to_string()),
            ("in", a.input.display().to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    run_inference(&a.model, &a.input, &a.out)?;
    println!("restored image written to {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    print_config(
        "eval",
        &[
            ("pred", a.pred.display().to_string()),
            ("ref", a.reference.display().to_string()),
        ],
    );
    let report = metrics::evaluate_dirs(&a.pred, &a.reference)?;
    print!("{}", report.to_csv());
    if let Some(out) = a.out {
        report.write_csv(&out)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn parse_grid(text: &str, key: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim().parse().map_err(|_| Error::Config {
                detail: format!("invalid {key} entry `{t}`"),
            })
        })
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let cfg = build_train_config(&a.flags, false)?;
    let grid: Vec<(f64, f64)> = match (&a.lambda1_grid, &a.lambda2_grid) {
        (None, None) => default_sweep_grid(),
        (l1, l2) => {
            let l1 = l1.as_deref().map(|t| parse_grid(t, "lambda1-grid")).transpose()?
                .unwrap_or_else(|| vec![1e-4, 1e-3, 1e-2]);
            let l2 = l2.as_deref().map(|t| parse_grid(t, "lambda2-grid")).transpose()?
                .unwrap_or_else(|| vec![10.0, 100.0, 1000.0]);
            l1.iter().flat_map(|&a| l2.iter().map(move |&b| (a, b))).collect()
        }
    };
    print_config(
        "sweep",
        &[
            ("data", a.flags.data.display().to_string()),
            ("teacher", a.teacher.display().to_string()),
            ("out", a.flags.out.display().to_string()),
            ("grid_points", grid.len().to_string()),
            ("train", format!("\n{}", cfg.resolved())),
        ],
    );
    let (train, val, _test, provider) = load_split_items(&a.flags, &cfg)?;
    let mut teacher = load_teacher(&a.teacher)?;
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let rows = lambda_sweep(&train, &val, &provider, &teacher, &phi, &cfg, &grid)?;
    let csv = sweep_csv(&rows);
    if let Some(parent) = a.flags.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    std::fs::write(&a.flags.out, &csv).map_err(io_err(&a.flags.out))?;
    print!("{csv}");
    let best = rows
        .iter()
        .max_by(|x, y| x.psnr.partial_cmp(&y.psnr).expect("finite metrics"))
        .expect("non-empty grid");
    println!(
        "best: lambda1={} lambda2={} (psnr {:.3} dB, ssim {:.4})",
        best.lambda1, best.lambda2, best.psnr, best.ssim
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    print_config(
        "gradcheck",
        &[("seed", a.seed.to_string()), ("instances", a.instances.to_string())],
    );
    let reports = gradcheck::run_suite(a.seed, a.instances)?;
    let mut all_passed = true;
    for r in &reports {
        println!(
            "{:<18} max_rel_error {:>12.3e}  ({} checked, {} skipped at kinks)  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
        all_passed &= r.passed();
    }
    if !all_passed {
        return Err(Error::Config { detail: "gradient check failed".into() });
    }
    println!("all {} operations within {:.0e}", reports.len(), gradcheck::TOLERANCE);
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> Result<()> {
    print_config(
        "demo",
        &[
            ("out", a.out.display().to_string()),
            ("seed", a.seed.to_string()),
            ("pairs", a.pairs.to_string()),
            ("size", a.size.to_string()),
            ("epochs1", a.epochs1.to_string()),
            ("epochs2", a.epochs2.to_string()),
            ("force", a.force.to_string()),
        ],
    );
    if a.out.exists() && std::fs::read_dir(&a.out).map_err(io_err(&a.out))?.next().is_some() {
        if !a.force {
            return Err(Error::Config {
                detail: format!("working directory {} is not empty (use --force)", a.out.display()),
            });
        }
        std::fs::remove_dir_all(&a.out).map_err(io_err(&a.out))?;
    }
    ensure_dir(&a.out)?;

    let mut cfg = TrainConfig::desk(a.seed);
    cfg.epochs_stage1 = a.epochs1;
    cfg.epochs_stage2 = a.epochs2;
    std::fs::write(a.out.join("config.txt"), cfg.resolved()).map_err(io_err(&a.out))?;

    // 1. synthesize the dataset on disk: clean/degraded/mask per pair
    let provider = MaskProvider::synthetic(cfg.k_regions);
    let data_dir = a.out.join("data");
    ensure_dir(&data_dir)?;
    let items = train::synth_items(
        a.pairs,
        a.size,
        a.size,
        a.seed,
        &DegradationConfig::default(),
        &provider,
    )?;
    let mut entries = Vec::with_capacity(items.len());
    for item in &items {
        let degraded = data_dir.join(format!("{}_lq.pgm", item.id));
        let reference = data_dir.join(format!("{}_hq.pgm", item.id));
        let mask = data_dir.join(format!("{}_mask.pgm", item.id));
        item.degraded.write_pgm(&degraded, PgmDepth::Sixteen)?;
        item.reference.write_pgm(&reference, PgmDepth::Sixteen)?;
        item.mask.write_pgm(&mask)?;
        entries.push(PairEntry { degraded, reference, mask: Some(mask) });
    }
    write_manifest(&a.out.join("manifest.txt"), &entries)?;

    // 2. split
    let spec = SplitSpec::default().with_seed(rng::mix(a.seed, "dataset-split"));
    let (train_items, val_items, test_items) = crate::data::split_dataset(items, &spec)?;
    println!(
        "dataset: {} train / {} val / {} test",
        train_items.len(),
        val_items.len(),
        test_items.len()
    );

    // 3. registration self-check on copies of validation items
    let reg_csv = registration_check(&val_items, a.seed)?;
    std::fs::write(a.out.join("registration_check.csv"), &reg_csv).map_err(io_err(&a.out))?;

    // 4. stage 1
    let t0 = std::time::Instant::now();
    let (mut teacher, report) = pretrain_teacher(&train_items, &val_items, &cfg)?;
    report.write_csv(&a.out.join("train_teacher.csv"))?;
    save_teacher(&a.out.join("teacher.spdc"), &teacher)?;
    println!("stage 1 done in {:.1}s", t0.elapsed().as_secs_f64());
    teacher.freeze();

    // 5. stage 2, full and baseline configs from the same seed
    let t0 = std::time::Instant::now();
    let phi = FeatureExtractor::fixed();
    let (student_full, report_full) =
        train_student(&train_items, &val_items, &provider, &teacher, &phi, &cfg)?;
    report_full.write_csv(&a.out.join("train_student_full.csv"))?;
    save_student(&a.out.join("student_full.spdc"), &student_full)?;
    let base_cfg = TrainConfig { lambda1: 0.0, lambda2: 0.0, ..cfg.clone() };
    let (student_base, report_base) =
        train_student(&train_items, &val_items, &provider, &teacher, &phi, &base_cfg)?;
    report_base.write_csv(&a.out.join("train_student_baseline.csv"))?;
    save_student(&a.out.join("student_baseline.spdc"), &student_base)?;
    println!("stage 2 (full + baseline) done in {:.1}s", t0.elapsed().as_secs_f64());

    // 6. comparison on the held-out test split
    let (in_psnr, in_ssim) = input_baseline(&test_items)?;
    let (base_psnr, base_ssim) = validate_student(&student_base, &test_items, cfg.batch_size)?;
    let (full_psnr, full_ssim) = validate_student(&student_full, &test_items, cfg.batch_size)?;
    let (t_psnr, t_ssim) = validate_teacher(&teacher, &test_items, cfg.batch_size)?;
    let mut comparison = String::from("variant,psnr_db,ssim\n");
    comparison.push_str(&format!("input,{in_psnr:.6},{in_ssim:.6}\n"));
    comparison.push_str(&format!("baseline_student,{base_psnr:.6},{base_ssim:.6}\n"));
    comparison.push_str(&format!("distilled_student,{full_psnr:.6},{full_ssim:.6}\n"));
    comparison.push_str(&format!("teacher,{t_psnr:.6},{t_ssim:.6}\n"));
    std::fs::write(a.out.join("comparison.csv"), &comparison).map_err(io_err(&a.out))?;
    print!("{comparison}");

    // 7. restored samples from the test split
    let samples = a.out.join("samples");
    ensure_dir(&samples)?;
    for item in test_items.iter().take(2) {
        let x = item.degraded.to_tensor();
        let full = GrayImage::from_tensor(&student_full.restore(&x)?, 0).clamp01();
        let base = GrayImage::from_tensor(&student_base.restore(&x)?, 0).clamp01();
        item.degraded.write_pgm(&samples.join(format!("{}_input.pgm", item.id)), PgmDepth::Sixteen)?;
        item.reference
            .write_pgm(&samples.join(format!("{}_reference.pgm", item.id)), PgmDepth::Sixteen)?;
        base.write_pgm(&samples.join(format!("{}_baseline.pgm", item.id)), PgmDepth::Sixteen)?;
        full.write_pgm(&samples.join(format!("{}_distilled.pgm", item.id)), PgmDepth::Sixteen)?;
    }

    // 8. inference-path purity: run the student in a directory holding
    // nothing but its checkpoint and one degraded input
    let iso = a.out.join("inference_only");
    ensure_dir(&iso)?;
    let probe = &test_items[0];
    probe.degraded.write_pgm(&iso.join("input.pgm"), PgmDepth::Sixteen)?;
    std::fs::copy(a.out.join("student_full.spdc"), iso.join("student.spdc"))
        .map_err(io_err(&iso))?;
    run_inference(&iso.join("student.spdc"), &iso.join("input.pgm"), &iso.join("restored.pgm"))?;
    let purity = iso.join("restored.pgm").exists();
    println!("inference-path purity: {}", if purity { "ok" } else { "FAILED" });

    let mut summary = String::new();
    summary.push_str(&format!("input_psnr={in_psnr:.6}\n"));
    summary.push_str(&format!("baseline_student_psnr={base_psnr:.6}\n"));
    summary.push_str(&format!("distilled_student_psnr={full_psnr:.6}\n"));
    summary.push_str(&format!("teacher_psnr={t_psnr:.6}\n"));
    summary.push_str(&format!("teacher_gain_db={:.6}\n", t_psnr - in_psnr));
    summary.push_str(&format!("distill_gain_db={:.6}\n", full_psnr - base_psnr));
    summary.push_str(&format!("inference_path_pure={purity}\n"));
    std::fs::write(a.out.join("report.txt"), summary).map_err(io_err(&a.out))?;
    println!("demo artifacts in {}", a.out.display());
    Ok(())
}

/// Injects known integer shifts into degraded copies and recovers them.
fn registration_check(items: &[TrainItem], seed: u64) -> Result<String> {
    use rand::Rng;
    let mut csv = String::from("id,shift_row,shift_col,recovered_row,recovered_col,exact\n");
    let mut rng = rng::stream(seed, "registration-check");
    for item in items.iter().take(10) {
        let du = rng.gen_range(-3i32..=3);
        let dv = rng.gen_range(-3i32..=3);
        let h = item.degraded.height() as i32;
        let w = item.degraded.width() as i32;
        let shifted = GrayImage::from_fn(item.degraded.height(), item.degraded.width(), |y, x| {
            let sy = (y as i32 - du).clamp(0, h - 1);
            let sx = (x as i32 - dv).clamp(0, w - 1);
            item.degraded.get(sy as usize, sx as usize)
        });
        let reg = register_patch(&shifted, &item.reference, 4)?;
        let exact = reg.shift_row == -du && reg.shift_col == -dv;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            item.id, -du, -dv, reg.shift_row, reg.shift_col, exact
        ));
    }
    Ok(csv)
}
