//! The `adar` command line: dataset generation, training, inference,
//! evaluation and gradient checks.
//!
//! Exit codes: 0 success, 1 failed gradient check or other error, 2 bad
//! flags or configuration, 3 I/O or unreadable input, 4 non-finite loss,
//! 5 resolution mismatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::batch::PairSet;
use crate::checkpoint::Checkpoint;
use crate::config::{parse_pairs, RunConfig};
use crate::detector::SpriteDetector;
use crate::gradsuite::{run_suite, Scale};
use crate::imageio::{load_png, save_png_with_text};
use crate::metrics::{evaluate_dataset, EchoReference, IdentityModel, ImageModel, MetricsReport};
use crate::net::{ModelKind, PoseRenderer};
use crate::posemap::{default_radius, denormalize_image, normalize_image, rasterize_posemap, Keypoints};
use crate::sprites::{build_dataset, DatasetConfig, Split, SpriteDataset};
use crate::tensor::Fault;
use crate::trainer::{CycleMetrics, Trainer};
use crate::workflow::{comment_block, preview_batch, run_training, RunDir, CONFIG_KEYWORD};
use crate::{Error, Result};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_RESOLUTION: i32 = 5;

/// Environment variable capping internal worker threads.
pub const THREADS_VAR: &str = "ADAR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "adar", version, about = "Pose-guided image generation with appearance-adaptive filters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sprite dataset with a train/test split by identity.
    MakeDataset(MakeDatasetArgs),
    /// Train a model, writing a loss log, sample grids and checkpoints.
    Train(TrainArgs),
    /// Render one image, or one frame per keypoint file of a directory.
    Generate(GenerateArgs),
    /// Score a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    CheckGrad(CheckGradArgs),
    /// Print every configuration key with its default.
    Config,
}

#[derive(Debug, Args)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub identities: usize,
    #[arg(long, default_value_t = 4)]
    pub poses_per_id: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of identities assigned to the training split.
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` configuration file (see `adar config`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory or manifest written by `make-dataset`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_parser = ["fashion", "volleyball", "custom"])]
    pub preset: Option<String>,
    /// Checkpoint to continue from; only `cycles`, `sample_every` and
    /// `checkpoint_every` may change.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Configuration override, `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Suppress per-cycle progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Keypoint JSON file, or a directory of them (one frame each).
    #[arg(long)]
    pub pose: PathBuf,
    /// Appearance reference image.
    #[arg(long)]
    pub appearance: PathBuf,
    /// Output PNG, or a directory when `--pose` is a directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    None,
    Concat,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "debug_identity")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Baseline::None)]
    pub baseline: Baseline,
    /// Checkpoint of the concatenation baseline.
    #[arg(long)]
    pub baseline_checkpoint: Option<PathBuf>,
    /// Directory for `report_<model>.json` and `summary.csv`.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Score a model that returns the ground truth instead of a checkpoint.
    #[arg(long, hide = true)]
    pub debug_identity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Micro,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    Conv2dBackward,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Micro)]
    pub scale: ScaleArg,
    /// Corrupt an adjoint to confirm the suite catches it.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<FaultArg>,
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Image { .. } | Error::Json(_) | Error::Checkpoint(_) => EXIT_IO,
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) => EXIT_NON_FINITE,
        Error::Resolution(_) => EXIT_RESOLUTION,
        Error::Tensor(_) | Error::Invalid(_) => EXIT_FAILURE,
    }
}

/// Validated value of [`THREADS_VAR`]. Work runs on the calling thread, so
/// any positive cap is satisfied.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{THREADS_VAR}={v}: expected a positive integer"))),
        },
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match thread_cap().and_then(|_| dispatch(cli.command, out)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::MakeDataset(a) => make_dataset(a, out).map(|_| 0),
        Command::Train(a) => train(a, out).map(|_| 0),
        Command::Generate(a) => generate(a, out).map(|_| 0),
        Command::Eval(a) => eval(a, out).map(|_| 0),
        Command::CheckGrad(a) => check_grad(a, out),
        Command::Config => {
            say(out, &RunConfig::schema())?;
            Ok(0)
        }
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn make_dataset(a: MakeDatasetArgs, out: &mut dyn Write) -> Result<()> {
    let config = DatasetConfig {
        identities: a.identities,
        poses_per_identity: a.poses_per_id,
        resolution: a.resolution,
        train_fraction: a.train_fraction,
    };
    config.validate()?;
    let m = build_dataset(&config, a.seed, &a.out)?;
    say(
        out,
        &format!(
            "{}\n{} pairs ({} train, {} test) from {} images\n",
            a.out.join("manifest.json").display(),
            m.pair_count,
            m.train_pairs,
            m.test_pairs,
            m.sample_count
        ),
    )
}

fn split_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set {s}: expected key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Keys a resumed run may change.
const RESUMABLE: [&str; 3] = ["cycles", "sample_every", "checkpoint_every"];

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut pairs = match &a.config {
        Some(p) => parse_pairs(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => Vec::new(),
    };
    if let Some(p) = &a.preset {
        pairs.push(("preset".into(), p.clone()));
    }
    for s in &a.set {
        pairs.push(split_override(s)?);
    }

    let (run, mut trainer) = match &a.resume {
        None => {
            let run = RunConfig::resolve(&pairs)?;
            let trainer = Trainer::new(run.train.clone())?;
            (run, trainer)
        }
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut base = parse_pairs(&ck.run_config()?.to_text())?;
            base.extend(pairs);
            let run = RunConfig::resolve(&base)?;
            let previous = ck.run_config()?;
            let mut fixed = run.train.clone();
            fixed.total_cycles = previous.train.total_cycles;
            if fixed != previous.train {
                return Err(Error::Config(format!(
                    "a resumed run may only change {}",
                    RESUMABLE.join(", ")
                )));
            }
            (run, Trainer::from_checkpoint(&ck)?)
        }
    };

    let dataset = SpriteDataset::load(&a.dataset)?;
    if dataset.resolution() != run.train.resolution {
        return Err(Error::Resolution(format!(
            "dataset is {0}x{0}, configuration expects {1}x{1}",
            dataset.resolution(),
            run.train.resolution
        )));
    }
    let train_set = PairSet::new(&dataset, Split::Train)?;
    let preview = preview_batch(&PairSet::new(&dataset, Split::Test)?)?;

    let t = &run.train;
    say(
        out,
        &format!(
            "{}# schedule g:d = {}:{}, alpha = {:?}, beta = {:?}, gamma = {:?}\n# starting after cycle {}\n",
            comment_block(&run.to_text()),
            t.g_steps_per_cycle,
            t.d_steps_per_cycle,
            t.loss_weights.alpha,
            t.loss_weights.beta,
            t.loss_weights.gamma,
            trainer.counters().cycle
        ),
    )?;
    if !a.quiet {
        say(out, &format!("{}\n", CycleMetrics::CSV_HEADER))?;
    }
    let dir = RunDir::new(&a.out);
    let mut write_err = None;
    run_training(&mut trainer, &run, &train_set, &preview, &dir, |m| {
        if !a.quiet {
            if let Err(e) = say(out, &format!("{}\n", m.csv_row())) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let c = trainer.counters();
    say(
        out,
        &format!(
            "done: {} cycles, {} generator and {} discriminator updates\ncheckpoint {}\n",
            c.cycle,
            c.g_steps,
            c.d_steps,
            dir.latest_checkpoint().display()
        ),
    )
}

fn load_renderer(path: &Path) -> Result<(PoseRenderer<f32>, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    let run = ck.run_config()?;
    let trainer = Trainer::from_checkpoint(&ck)?;
    Ok((trainer.renderer, run))
}

fn keypoint_files(pose: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(pose)
        .map_err(|e| Error::io(pose, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(pose, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("{}: no keypoint .json files", pose.display())));
    }
    Ok(files)
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let (mut renderer, run) = load_renderer(&a.checkpoint)?;
    let res = renderer.config().resolution;
    let app = load_png(&a.appearance)?;
    if app.shape() != [3, res, res] {
        return Err(Error::Resolution(format!(
            "{}: {}x{}, model expects {res}x{res}",
            a.appearance.display(),
            app.shape()[2],
            app.shape()[1]
        )));
    }
    let app = normalize_image(&app)?.reshape([1, 3, res, res])?;
    let frames: Vec<(PathBuf, PathBuf)> = if a.pose.is_dir() {
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        keypoint_files(&a.pose)?
            .into_iter()
            .map(|f| {
                let name = format!("{}.png", f.file_stem().unwrap_or_default().to_string_lossy());
                let dst = a.out.join(name);
                (f, dst)
            })
            .collect()
    } else {
        vec![(a.pose.clone(), a.out.clone())]
    };
    let text = run.to_text();
    for (src, dst) in &frames {
        let kp = Keypoints::load(src)?;
        let pose = rasterize_posemap(&kp, res, res, default_radius(res)).reshape([1, 1, res, res])?;
        let img = renderer.render(&pose, &app)?;
        let img = denormalize_image(&img.reshape([3, res, res])?);
        save_png_with_text(dst, &img, &[(CONFIG_KEYWORD, &text)])?;
        say(out, &format!("{}\n", dst.display()))?;
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    if a.batch_size == 0 {
        return Err(Error::Config("--batch-size must be positive".into()));
    }
    if a.baseline == Baseline::Concat && a.baseline_checkpoint.is_none() {
        return Err(Error::Config("--baseline concat needs --baseline-checkpoint".into()));
    }
    let dataset = SpriteDataset::load(&a.dataset)?;
    let mut models: Vec<(Box<dyn ImageModel>, String)> = Vec::new();
    if a.debug_identity {
        models.push((Box::new(IdentityModel), String::new()));
    }
    if let Some(path) = &a.checkpoint {
        models.push(checkpoint_model(path, None, dataset.resolution())?);
    }
    if a.baseline == Baseline::Concat {
        let path = a.baseline_checkpoint.as_deref().expect("checked above");
        models.push(checkpoint_model(path, Some(ModelKind::Concat), dataset.resolution())?);
    }
    models.push((Box::new(EchoReference), String::new()));

    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let det = SpriteDetector;
    let mut reports = Vec::new();
    for (model, config) in &mut models {
        let meta = serde_json::json!({
            "config": config,
            "dataset": a.dataset.display().to_string(),
            "split": "test",
        });
        let report = evaluate_dataset(model.as_mut(), &dataset, Split::Test, &det, a.batch_size, meta)?;
        let path = a.out.join(format!("report_{}.json", report.model));
        std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
        reports.push(report);
    }
    let refs: Vec<&MetricsReport> = reports.iter().collect();
    let mut csv = String::new();
    for (r, (_, config)) in reports.iter().zip(&models) {
        for line in config.lines() {
            csv.push_str(&format!("# {}: {line}\n", r.model));
        }
    }
    csv.push_str(&MetricsReport::csv_table(&refs));
    let path = a.out.join("summary.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    say(
        out,
        &format!(
            "test split, {} pairs; PSNR peak 2 on [-1, 1]; pose score normalized by the image diagonal\n{}",
            reports.first().map_or(0, |r| r.summary.count),
            MetricsReport::text_table(&refs)
        ),
    )
}

fn checkpoint_model(path: &Path, expect: Option<ModelKind>, res: usize) -> Result<(Box<dyn ImageModel>, String)> {
    let (renderer, run) = load_renderer(path)?;
    if let Some(kind) = expect {
        if renderer.kind() != kind {
            return Err(Error::Config(format!(
                "{}: expected a {kind:?} checkpoint, found {:?}",
                path.display(),
                renderer.kind()
            )));
        }
    }
    if renderer.config().resolution != res {
        return Err(Error::Resolution(format!(
            "{}: model is {1}x{1}, dataset is {res}x{res}",
            path.display(),
            renderer.config().resolution
        )));
    }
    Ok((Box::new(renderer), run.to_text()))
}

fn check_grad(a: CheckGradArgs, out: &mut dyn Write) -> Result<i32> {
    let scale = match a.scale {
        ScaleArg::Micro => Scale::Micro,
        ScaleArg::Small => Scale::Small,
    };
    let fault = a.inject_fault.map(|f| match f {
        FaultArg::Conv2dBackward => Fault::Conv2dBackward,
    });
    let report = run_suite(scale, fault)?;
    for o in &report.outcomes {
        say(out, &format!("{}\n", o.line()))?;
    }
    let failed = report.failures().len();
    say(
        out,
        &format!(
            "{} checks, {failed} failed, {:.1}s\n",
            report.outcomes.len(),
            report.seconds
        ),
    )?;
    Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
}
