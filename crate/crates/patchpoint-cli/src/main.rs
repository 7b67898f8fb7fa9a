//! Command line front end for the full pipeline: design previews, dataset
//! synthesis, training, inference, validation and sweeps.
//!
//! Progress and diagnostics go to standard error; machine-readable output
//! goes to files (or stdout where a command explicitly prints JSON). Every
//! command that writes an output directory drops a frozen copy of its
//! effective configuration there. Exit codes: 0 success, 2 configuration
//! error, 3 data error, 4 runtime failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use patchpoint_core::backgrounds::{BackgroundSource, DirCorpus, ProceduralCorpus};
use patchpoint_core::dataset::generate_dataset;
use patchpoint_core::eval::{self, SweepAxis, SweepSpec};
use patchpoint_core::model::load_checkpoint;
use patchpoint_core::patch::canonical_designs;
use patchpoint_core::train;
use patchpoint_core::{
    render_patch, Dataset, Error, KeypointInstance, ModelConfig, Result, SuperPointNet,
    SynthConfig, TrainConfig,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::ConstraintInfeasible(_) => EXIT_CONFIG,
        Error::EmptyCorpus(_)
        | Error::RecordCorrupt { .. }
        | Error::UnsupportedFormat(_)
        | Error::WeightMismatch(_)
        | Error::AnnotationInconsistent(_)
        | Error::Io(_)
        | Error::Image(_)
        | Error::Json(_) => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// Top-level configuration document. Sections mirror the library configs;
/// omitted sections fall back to their published defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    /// Master seed for synthesis, validation degradation, and sweeps.
    seed: u64,
    /// Default location for command outputs when --out is not given.
    output_root: PathBuf,
    dataset: DatasetConfig,
    synth: SynthConfig,
    train: TrainConfig,
    model: ModelConfig,
    sweep: Option<SweepSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_root: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            sweep: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DatasetConfig {
    /// Number of training images to synthesize.
    count: u64,
    /// Number of images in a validation split.
    validation_count: u64,
    /// Directory of background photographs. Procedural textures are used
    /// when absent.
    background_dir: Option<PathBuf>,
    /// Size of the procedural background pool.
    procedural_backgrounds: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 20_000,
            validation_count: 2_000,
            background_dir: None,
            procedural_backgrounds: 200,
        }
    }
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
    })?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    cfg.synth.validate()?;
    cfg.train.validate()?;
    cfg.model.validate()?;
    if let Some(sweep) = cfg.sweep.take() {
        let sweep = sweep.with_default_levels();
        sweep.validate()?;
        cfg.sweep = Some(sweep);
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "patchpoint",
    version,
    about = "Circular fiducial patch pipeline: render, synthesize, train, detect, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the four canonical patch designs as PNG previews.
    Render(RenderArgs),
    /// Synthesize a labeled dataset.
    Generate(GenerateArgs),
    /// Train the detector/identifier network.
    Train(TrainArgs),
    /// Detect keypoints in images and write them as JSON.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset, clean and deteriorated.
    Validate(ValidateArgs),
    /// Sweep one scene or degradation axis on hexagon-board scenes.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RenderArgs {
    /// Output directory for previews and the design document.
    #[arg(long)]
    out: PathBuf,
    /// Patch radius in pixels (minimum 5).
    #[arg(long, default_value_t = 64)]
    radius: u32,
    /// In-plane rotation in degrees.
    #[arg(long, default_value_t = 0.0)]
    rotation: f64,
}

#[derive(Args)]
struct GenerateArgs {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dataset root directory.
    #[arg(long)]
    out: PathBuf,
    /// Override dataset.count from the config.
    #[arg(long)]
    count: Option<u64>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Training dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Backbone weights to import before training.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out: PathBuf,
    /// Validation dataset root, scored every few epochs.
    #[arg(long)]
    validation_data: Option<PathBuf>,
    /// Cap on validation images per pass.
    #[arg(long)]
    validation_limit: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    /// Checkpoint to load.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image path or glob over file names, e.g. 'shots/*.png'.
    #[arg(long)]
    images: String,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
    /// Detection confidence threshold override.
    #[arg(long)]
    threshold: Option<f64>,
    /// Non-maximum suppression radius override, px.
    #[arg(long)]
    nms: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Checkpoint to load.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root to score.
    #[arg(long)]
    data: PathBuf,
    /// Seed for the deterioration stack.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on evaluated images.
    #[arg(long)]
    limit: Option<usize>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepAxisArg {
    Scale,
    Pitch,
    Blur,
    Dimming,
    Noise,
}

impl SweepAxisArg {
    fn to_axis(self) -> SweepAxis {
        match self {
            SweepAxisArg::Scale => SweepAxis::Scale,
            SweepAxisArg::Pitch => SweepAxis::Pitch,
            SweepAxisArg::Blur => SweepAxis::Blur,
            SweepAxisArg::Dimming => SweepAxis::Dimming,
            SweepAxisArg::Noise => SweepAxis::GaussianNoise,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Checkpoint to load.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Axis to sweep.
    #[arg(long, value_enum)]
    axis: SweepAxisArg,
    /// Levels along the axis; defaults to the published levels.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    levels: Vec<f64>,
    /// Optional run configuration supplying the sweep section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for reports.json and table.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for scene synthesis.
    #[arg(long)]
    seed: Option<u64>,
    /// Scenes per level.
    #[arg(long)]
    images_per_level: Option<u32>,
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).map_err(|e| {
        Error::InvalidArgument(format!("cannot create {}: {e}", args.out.display()))
    })?;
    let designs = canonical_designs();
    let rotation = args.rotation.to_radians();
    for spec in &designs {
        let raster = render_patch(spec, args.radius, 0, 255, rotation)?;
        let path = args.out.join(format!("design-{}.png", spec.type_id));
        raster.pixels.save(&path).map_err(|e| {
            Error::InvalidArgument(format!("cannot write {}: {e}", path.display()))
        })?;
        eprintln!("wrote {}", path.display());
    }
    let doc = serde_json::json!({
        "radius_px": args.radius,
        "rotation_deg": args.rotation,
        "designs": designs,
    });
    write_json(&args.out.join("designs.json"), &doc)
}

fn open_backgrounds(cfg: &DatasetConfig, seed: u64) -> Result<Box<dyn BackgroundSource>> {
    match &cfg.background_dir {
        Some(dir) => Ok(Box::new(DirCorpus::open(dir)?)),
        None => {
            if cfg.procedural_backgrounds == 0 {
                return Err(Error::EmptyCorpus(
                    "dataset.procedural_backgrounds is 0 and no background_dir is set".into(),
                ));
            }
            Ok(Box::new(ProceduralCorpus::new(
                cfg.procedural_backgrounds,
                seed,
            )))
        }
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(count) = args.count {
        cfg.dataset.count = count;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let backgrounds = open_backgrounds(&cfg.dataset, cfg.seed)?;
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;

    let total = cfg.dataset.count;
    let t0 = Instant::now();
    let dataset = generate_dataset(
        &args.out,
        &cfg.synth,
        cfg.seed,
        total,
        backgrounds.as_ref(),
        |index| {
            let done = index + 1;
            if done % 500 == 0 || done == total {
                eprintln!("synthesized {done}/{total}");
            }
        },
    )?;
    eprintln!(
        "dataset ready: {} images at {} ({:.0?})",
        dataset.len(),
        args.out.display(),
        t0.elapsed()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_run_config(&args.config)?;
    let dataset = Dataset::open(&args.data)?;
    let validation = match &args.validation_data {
        Some(path) => Some((Dataset::open(path)?, args.validation_limit)),
        None => None,
    };
    std::fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("config.json"), &cfg)?;

    let net = SuperPointNet::new(cfg.model.clone(), cfg.train.seed)?;
    let t0 = Instant::now();
    let (_net, records) = train::train(
        cfg.train.clone(),
        dataset,
        net,
        args.pretrained.as_deref(),
        &args.out,
        validation,
        |stats| {
            let r = &stats.record;
            eprintln!(
                "epoch {:>3} lr {:.2e} loss {:.4} (detector {:.4} descriptor {:.4}){}{}",
                r.epoch,
                r.lr,
                r.loss_total,
                r.loss_detector,
                r.loss_descriptor,
                if stats.frozen { " [frozen]" } else { "" },
                if stats.augmented { " [augmented]" } else { "" },
            );
            if let (Some(d), Some(i), Some(f)) = (r.val_detection, r.val_id, r.val_false_alarm) {
                eprintln!("  validation: detection {d:.3} id {i:.3} false-alarm {f:.3}");
            }
        },
    )?;
    eprintln!(
        "trained {} epochs in {:.0?}; checkpoints in {}",
        records.len(),
        t0.elapsed(),
        args.out.display()
    );
    Ok(())
}

/// `*` and `?` wildcard match over a file name.
fn glob_match(pattern: &str, name: &str) -> bool {
    fn rec(p: &[u8], n: &[u8]) -> bool {
        match (p.first(), n.first()) {
            (None, None) => true,
            (Some(b'*'), _) => rec(&p[1..], n) || (!n.is_empty() && rec(p, &n[1..])),
            (Some(b'?'), Some(_)) => rec(&p[1..], &n[1..]),
            (Some(&c), Some(&d)) => c == d && rec(&p[1..], &n[1..]),
            _ => false,
        }
    }
    rec(pattern.as_bytes(), name.as_bytes())
}

/// Expands a literal path or a wildcard over file names within one directory.
fn expand_images(pattern: &str) -> Result<Vec<PathBuf>> {
    let path = Path::new(pattern);
    let not_found = |what: &str| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            what.to_string(),
        ))
    };
    let name = match path.file_name().and_then(|n| n.to_str()) {
        Some(n) => n,
        None => return Err(not_found(&format!("bad image pattern {pattern}"))),
    };
    if !name.contains(['*', '?']) {
        if path.is_file() {
            return Ok(vec![path.to_path_buf()]);
        }
        return Err(not_found(&format!("no such image: {pattern}")));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        if let Some(n) = entry.file_name().to_str() {
            if glob_match(name, n) {
                out.push(entry.path());
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(not_found(&format!("no images match {pattern}")));
    }
    Ok(out)
}

/// Crops to the largest cell-aligned size; keypoint coordinates are
/// unaffected because the crop keeps the origin.
fn crop_to_cells(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    let (cw, ch) = (w - w % 8, h - h % 8);
    if cw == 0 || ch == 0 {
        return Err(Error::UnsupportedFormat(format!(
            "image {w}x{h} is smaller than one 8x8 cell"
        )));
    }
    if (cw, ch) == (w, h) {
        return Ok(img.clone());
    }
    Ok(image::imageops::crop_imm(img, 0, 0, cw, ch).to_image())
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    let (mut net, _) = load_checkpoint(&args.checkpoint)?;
    if args.threshold.is_some() || args.nms.is_some() {
        net.set_detection_params(args.threshold, args.nms)?;
    }
    let paths = expand_images(&args.images)?;
    let mut records = Vec::with_capacity(paths.len());
    for path in &paths {
        let img = image::open(path)?.to_rgb8();
        let img = crop_to_cells(&img)?;
        let detections = net.detect(&img)?;
        eprintln!("{}: {} detections", path.display(), detections.len());
        records.push(serde_json::json!({
            "image": path.display().to_string(),
            "detections": detections,
        }));
    }
    write_json(&args.out, &records)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::open(&args.data)?;
    let (clean, deteriorated) = eval::run_validation(&net, &dataset, args.seed, args.limit)?;
    for report in [&clean, &deteriorated] {
        eprintln!(
            "{:>12}: detection {:.3} id {:.3} false-alarm {:.3} over {} images",
            report.condition,
            report.detection_score,
            report.id_matching_score,
            report.average_false_alarm,
            report.n_images
        );
    }
    let doc = serde_json::json!({ "clean": clean, "deteriorated": deteriorated });
    match &args.out {
        Some(path) => {
            write_json(path, &doc)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let axis = args.axis.to_axis();
    let (mut spec, config_seed, output_root) = match &args.config {
        Some(path) => {
            let cfg = load_run_config(path)?;
            let spec = match cfg.sweep {
                Some(s) if s.axis == axis => s,
                _ => SweepSpec::for_axis(axis),
            };
            (spec, cfg.seed, cfg.output_root)
        }
        None => (
            SweepSpec::for_axis(axis),
            0,
            RunConfig::default().output_root,
        ),
    };
    if !args.levels.is_empty() {
        spec.levels = args.levels.clone();
    }
    if let Some(n) = args.images_per_level {
        spec.images_per_level = n;
    }
    let spec = spec.with_default_levels();
    spec.validate()?;
    let seed = args.seed.unwrap_or(config_seed);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| output_root.join(format!("sweep-{}", axis.name())));
    std::fs::create_dir_all(&out)?;
    write_json(
        &out.join("config.json"),
        &serde_json::json!({ "seed": seed, "sweep": &spec }),
    )?;

    let backgrounds = ProceduralCorpus::new(
        spec.levels.len() * spec.images_per_level as usize,
        seed,
    );
    let detect = |img: &RgbImage, _gts: &[KeypointInstance]| net.detect(img);
    let mut reports = Vec::with_capacity(spec.levels.len());
    let t0 = Instant::now();
    for index in 0..spec.levels.len() {
        let report = eval::run_sweep_level(&spec, index, seed, &backgrounds, &detect)?;
        eprintln!(
            "{}: detection {:.3} id {:.3} false-alarm {:.3}",
            report.condition,
            report.detection_score,
            report.id_matching_score,
            report.average_false_alarm
        );
        reports.push(report);
    }
    write_json(&out.join("reports.json"), &reports)?;
    std::fs::write(out.join("table.csv"), eval::sweep_reports_csv(&reports))?;
    eprintln!(
        "swept {} levels in {:.0?}; reports in {}",
        reports.len(),
        t0.elapsed(),
        out.display()
    );
    Ok(())
}

fn init_workers() -> Result<()> {
    let Ok(value) = std::env::var("PATCHPOINT_WORKERS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().map_err(|_| {
        Error::InvalidArgument(format!("PATCHPOINT_WORKERS={value} is not a worker count"))
    })?;
    if n == 0 {
        return Err(Error::InvalidArgument(
            "PATCHPOINT_WORKERS must be at least 1".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("cannot configure {n} workers: {e}")))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }
    let result = match &cli.command {
        Command::Render(args) => cmd_render(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
