use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use isd4l::dataset::{generate_synthetic, load_dataset, read_png, save_dataset, SynthConfig};
use isd4l::evaluation::{run_loo, LooConfig};
use isd4l::model::{train, LossKind, LossParams, ModelState, TrainConfig};
use isd4l::predictor::{
    default_window_size, localization_map, predict_image, write_pgm, write_window_csv, CoverMode,
    DEFAULT_THRESHOLD,
};
use isd4l::sampler::{generate_patchset, load_patchset, save_patchset, SamplerConfig, ZoomRange};

/// Late-blight detection from rotated, zoomed patches of high-resolution
/// field images.
#[derive(Debug, Parser)]
#[command(name = "isd4l", version)]
struct Cli {
    /// Worker threads for sampling, folds and windows (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Default set for unset flags: `full` uses full-resolution settings,
    /// `desk` a CPU-minutes scale.
    #[arg(long, global = true, value_enum, default_value_t = Profile::Full)]
    profile: Profile,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Profile {
    Full,
    Desk,
}

struct ProfileDefaults {
    rho: usize,
    input_size: usize,
    epochs: usize,
    batch_size: usize,
    rows: usize,
    cols: usize,
}

/// Training epochs of the desk profile.
const DESK_EPOCHS: usize = 12;

impl Profile {
    fn defaults(self) -> ProfileDefaults {
        match self {
            Profile::Full => ProfileDefaults {
                rho: 200,
                input_size: 380,
                epochs: 100,
                batch_size: 32,
                rows: 4000,
                cols: 6000,
            },
            Profile::Desk => ProfileDefaults {
                rho: 40,
                input_size: 64,
                epochs: DESK_EPOCHS,
                batch_size: 8,
                rows: 1000,
                cols: 1500,
            },
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic annotated dataset (PNG images, masks, manifest).
    Synth(SynthArgs),
    /// Draw labeled rotated patches from every image of a dataset.
    Sample(SampleArgs),
    /// Train a patch classifier on a patch-set archive.
    Train(TrainArgs),
    /// Classify one image by sliding windows and write a heatmap.
    Predict(PredictArgs),
    /// Leave-one-out validation over a dataset.
    Loo(LooArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of images
    #[arg(long, default_value_t = 22)]
    images: usize,
    /// Number of diseased images
    #[arg(long, default_value_t = 9)]
    diseased: usize,
    /// Image rows n [default: 4000; desk 1000]
    #[arg(long)]
    rows: Option<usize>,
    /// Image columns m [default: 6000; desk 1500]
    #[arg(long)]
    cols: Option<usize>,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Patches per image rho [default: 200; desk 40]
    #[arg(long)]
    rho: Option<usize>,
    /// Smallest patch side as a fraction of min(n, m)
    #[arg(long, default_value_t = 0.15)]
    zoom_min: f64,
    /// Largest patch side as a fraction of min(n, m)
    #[arg(long, default_value_t = 0.25)]
    zoom_max: f64,
    /// Symptom pixels needed to label a patch late blight
    #[arg(long, default_value_t = 1)]
    min_symptom_pixels: usize,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the patch-set archive.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Debug, Args)]
struct TrainingArgs {
    /// Network input side [default: 380; desk 64]
    #[arg(long)]
    input_size: Option<usize>,
    /// Training epochs [default: 100; desk 12]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: 32; desk 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Loss function
    #[arg(long, value_enum, default_value_t = LossArg::Focal)]
    loss: LossArg,
    /// Focal-loss class weight alpha
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Focal-loss focusing exponent gamma
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Focal,
    CrossEntropy,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// Sliding-window side t [default: n/5]
    #[arg(long)]
    window: Option<usize>,
    /// Whole-image decision threshold on the maximum window probability
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Add windows flush with the right and bottom edges when t does not
    /// tile the image.
    #[arg(long)]
    edge_cover: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Patch-set archive directory.
    #[arg(long)]
    patches: PathBuf,
    /// Output directory for model.isd4l.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Weight file.
    #[arg(long)]
    model: PathBuf,
    /// RGB PNG image.
    #[arg(long)]
    image: PathBuf,
    /// Output directory for prediction.json, heatmap.pgm and windows.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Debug, Args)]
struct LooArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for loo_report.json and loo_report.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[command(flatten)]
    window: WindowArgs,
}

impl SamplingArgs {
    fn config(&self, profile: Profile, seed: u64) -> Result<SamplerConfig> {
        let rho = self.rho.unwrap_or(profile.defaults().rho);
        if rho == 0 {
            return Err(usage("--rho must be at least 1"));
        }
        let zoom = ZoomRange {
            min_fraction: self.zoom_min,
            max_fraction: self.zoom_max,
        };
        if !(0.0 < zoom.min_fraction
            && zoom.min_fraction <= zoom.max_fraction
            && zoom.max_fraction <= 1.0)
        {
            return Err(usage(format!(
                "zoom fractions must satisfy 0 < min <= max <= 1, got {} and {}",
                zoom.min_fraction, zoom.max_fraction
            )));
        }
        Ok(SamplerConfig {
            rho,
            seed,
            zoom,
            min_symptom_pixels: self.min_symptom_pixels,
        })
    }
}

impl TrainingArgs {
    fn config(&self, profile: Profile, seed: u64) -> Result<TrainConfig> {
        let d = profile.defaults();
        let cfg = TrainConfig {
            input_size: self.input_size.unwrap_or(d.input_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate,
            seed,
            loss: match self.loss {
                LossArg::Focal => LossKind::Focal,
                LossArg::CrossEntropy => LossKind::CrossEntropy,
            },
            loss_params: LossParams {
                alpha: self.alpha,
                gamma: self.gamma,
            },
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

impl WindowArgs {
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(usage(format!(
                "--threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.window == Some(0) {
            return Err(usage("--window must be at least 1"));
        }
        Ok(())
    }

    fn size_for(&self, rows: usize) -> Result<usize> {
        match self.window {
            Some(t) => Ok(t),
            None => default_window_size(rows).context("predictor"),
        }
    }

    fn cover(&self) -> CoverMode {
        if self.edge_cover {
            CoverMode::EdgeCover
        } else {
            CoverMode::Lattice
        }
    }
}

/// Invalid flag value; reported with exit status 2 like parse errors.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let d = cli.profile.defaults();
    let config = SynthConfig {
        image_count: args.images,
        diseased_count: args.diseased,
        seed: cli.seed,
        ..SynthConfig::with_size(args.rows.unwrap_or(d.rows), args.cols.unwrap_or(d.cols))
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    create_dir(&args.out)?;
    let started = Instant::now();
    let synthetic = generate_synthetic(&config).context("dataset")?;
    info!(
        "generated {} images in {:.1}s",
        synthetic.dataset.len(),
        started.elapsed().as_secs_f64()
    );
    let started = Instant::now();
    let manifest = save_dataset(&synthetic.dataset, &args.out).context("dataset")?;
    info!(
        "wrote {} in {:.1}s",
        manifest.display(),
        started.elapsed().as_secs_f64()
    );
    info!("dataset digest {}", synthetic.dataset.digest());
    Ok(())
}

fn sample(cli: &Cli, args: &SampleArgs) -> Result<()> {
    let config = args.sampling.config(cli.profile, cli.seed)?;
    let started = Instant::now();
    let dataset = load_dataset(&args.manifest).context("dataset")?;
    info!(
        "loaded {} images in {:.1}s",
        dataset.len(),
        started.elapsed().as_secs_f64()
    );
    let started = Instant::now();
    let set = generate_patchset(&dataset, config).context("sampler")?;
    info!(
        "sampled {} patches ({} late blight) in {:.1}s",
        set.len(),
        set.positives(),
        started.elapsed().as_secs_f64()
    );
    create_dir(&args.out)?;
    let index = save_patchset(&set, &args.out).context("sampler")?;
    info!("wrote {}", index.display());
    info!("patch-set digest {}", set.digest());
    Ok(())
}

fn train_cmd(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let config = args.training.config(cli.profile, cli.seed)?;
    let started = Instant::now();
    let set = load_patchset(&args.patches).context("sampler")?;
    info!(
        "loaded {} patches in {:.1}s",
        set.len(),
        started.elapsed().as_secs_f64()
    );
    let started = Instant::now();
    let model = train(&set, &config).context("model")?;
    info!("trained in {:.1}s", started.elapsed().as_secs_f64());
    create_dir(&args.out)?;
    let path = args.out.join("model.isd4l");
    model.save(&path).context("model")?;
    info!("wrote {}", path.display());
    info!("weight digest {}", model.weight_digest());
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    args.window.check()?;
    let model = ModelState::load(&args.model).context("model")?;
    let image = read_png(&args.image, 3).context("dataset")?;
    let t = args.window.size_for(image.height())?;
    let started = Instant::now();
    let prediction = predict_image(
        &model,
        &image,
        t,
        args.window.threshold,
        args.window.cover(),
    )
    .context("predictor")?;
    info!(
        "{} windows of side {} scored in {:.1}s",
        prediction.grid.len(),
        t,
        started.elapsed().as_secs_f64()
    );
    info!(
        "verdict {} (max probability {:.4}, {} windows at or above {})",
        prediction.verdict,
        prediction.max_prob,
        prediction.positive_windows.len(),
        prediction.threshold
    );
    if let Some(out) = &args.out {
        create_dir(out)?;
        let json = serde_json::to_string_pretty(&prediction).context("predictor")?;
        write_text(&out.join("prediction.json"), &(json + "\n"))?;
        let (heatmap, _) = localization_map(&prediction);
        write_pgm(&out.join("heatmap.pgm"), &heatmap).context("predictor")?;
        write_window_csv(&out.join("windows.csv"), &prediction).context("predictor")?;
        info!(
            "wrote prediction.json, heatmap.pgm and windows.csv to {}",
            out.display()
        );
    }
    println!("{}", prediction.verdict);
    Ok(())
}

fn loo(cli: &Cli, args: &LooArgs) -> Result<()> {
    args.window.check()?;
    let sampler = args.sampling.config(cli.profile, cli.seed)?;
    let train = args.training.config(cli.profile, cli.seed)?;
    let started = Instant::now();
    let dataset = load_dataset(&args.manifest).context("dataset")?;
    info!(
        "loaded {} images in {:.1}s",
        dataset.len(),
        started.elapsed().as_secs_f64()
    );
    let rows = dataset.images().iter().map(|i| i.rows()).min().unwrap_or(0);
    let config = LooConfig {
        sampler,
        train,
        window: args.window.size_for(rows)?,
        threshold: args.window.threshold,
        cover: args.window.cover(),
    };
    let started = Instant::now();
    let run = run_loo(&dataset, &config).context("evaluation")?;
    info!("leave-one-out took {:.1}s", started.elapsed().as_secs_f64());
    let report = &run.report;
    create_dir(&args.out)?;
    write_text(&args.out.join("loo_report.json"), &report.to_json())?;
    let text = report.to_text();
    write_text(&args.out.join("loo_report.txt"), &text)?;
    info!("patch-set digest {}", report.patchset_digest);
    info!("fold weights digest {}", report.weights_digest());
    info!("report digest {}", report.digest());
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Predict(a) => predict(a),
        Command::Loo(a) => loo(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
